//! Central finite-difference checks of the analytic gradients.
//!
//! Hard spikes are piecewise constant, so their numerical derivative is zero
//! almost everywhere. The SNN check therefore runs the smooth spike function
//! (the primitive of the surrogate) with the reset kept in the graph, where
//! backpropagation is exact and must agree with finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::reconstruction::{Cvae, CvaeConfig, PARAM_NAMES};
use crate::representation::InputClip;
use crate::snn::{ForwardMode, Network, NetworkSpec, SpikeFn};

/// Denominator floor for relative errors of near-zero gradient entries.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub entries: usize,
    pub max_relative_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
}

impl GradCheck {
    fn new() -> Self {
        Self {
            entries: 0,
            max_relative_error: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, name: &str, i: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.entries += 1;
        if e > self.max_relative_error || self.worst.is_empty() {
            self.max_relative_error = self.max_relative_error.max(e);
            self.worst = format!("{name}[{i}]");
        }
    }
}

/// Input 2x4x4, three timesteps, one conv block, one FC block, two classes.
pub fn tiny_snn(seed: u64) -> (Network, Vec<InputClip>) {
    let spec = NetworkSpec::conv_plif(2, 4, &[3], &[20], 2, 0.0).expect("tiny spec");
    let mut net = Network::new(spec, seed).expect("tiny network");
    net.set_neuron_params(|p| p.detach_reset = false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let clips = (0..2)
        .map(|label| {
            let data = (0..3 * 32).map(|_| rng.random_range(0.0..3.0)).collect();
            InputClip::new(3, 4, data, label).expect("clip shape")
        })
        .collect();
    (net, clips)
}

pub fn snn_gradient_check(seed: u64, h: f64) -> GradCheck {
    let (mut net, clips) = tiny_snn(seed);
    let refs: Vec<&InputClip> = clips.iter().collect();
    let mode = ForwardMode {
        train: true,
        spike: SpikeFn::Smooth,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, grads, _) = net.loss_and_gradients(&refs, mode, &mut rng).expect("tiny backward");
    let names = net.param_names();
    let mut check = GradCheck::new();
    for t in 0..grads.values.len() {
        for i in 0..grads.values[t].len() {
            let at = |delta: f64, net: &mut Network| {
                let orig = net.params_mut()[t][i];
                net.params_mut()[t][i] = orig + delta;
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let (loss, _, _) = net.loss_and_gradients(&refs, mode, &mut rng).expect("tiny forward");
                net.params_mut()[t][i] = orig;
                loss
            };
            let numeric = (at(h, &mut net) - at(-h, &mut net)) / (2.0 * h);
            check.record(&names[t], i, grads.values[t][i], numeric);
        }
    }
    check
}

/// 8x8 frames, latent 2, small encoder and decoder.
pub fn tiny_cvae_config() -> CvaeConfig {
    CvaeConfig {
        latent_dim: 2,
        input_side: 8,
        condition_channels: 2,
        target_channels: 1,
        encoder_channels: [3, 4],
        decoder_channels: [4, 3],
        condition_pool: 2,
        kl_weight: 1.0,
    }
}

pub fn cvae_gradient_check(seed: u64, h: f64) -> GradCheck {
    let cfg = tiny_cvae_config();
    let mut model = Cvae::new(cfg, seed).expect("tiny cvae");
    let n = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xcafe);
    // Zero biases put ReLU inputs exactly on the kink wherever all incoming
    // activations are dead; move them to a generic point.
    for (t, name) in model.params.tensors_mut().into_iter().zip(PARAM_NAMES) {
        if name.ends_with("bias") {
            t.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let x: Vec<f64> = (0..n * cfg.target_len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let c: Vec<f64> = (0..n * cfg.condition_len()).map(|_| rng.random_range(0.0..2.0)).collect();
    let eps: Vec<f64> = (0..n * cfg.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
    let (_, grads) = model.loss_and_gradients(&x, &c, &eps, n).expect("tiny backward");
    let mut check = GradCheck::new();
    for (t, g) in grads.iter().enumerate() {
        for (i, &analytic) in g.iter().enumerate() {
            let mut at = |delta: f64| {
                let orig = model.params.tensors_mut()[t][i];
                model.params.tensors_mut()[t][i] = orig + delta;
                let loss = model.batch_loss(&x, &c, &eps, n).expect("tiny forward").total;
                model.params.tensors_mut()[t][i] = orig;
                loss
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            check.record(PARAM_NAMES[t], i, analytic, numeric);
        }
    }
    check
}
