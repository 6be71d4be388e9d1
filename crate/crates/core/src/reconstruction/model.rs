//! Conditional VAE: architecture, forward pass and exact gradients.
//!
//! Encoder: `[x; c]` -> conv(3, s2) -> ReLU -> conv(3, s2) -> ReLU -> two FC
//! heads for `mu` and `logvar`. Decoder: `[z; pool(c)]` -> FC -> ReLU ->
//! deconv(4, s2) -> ReLU -> deconv(4, s2) -> sigmoid. `pool` averages the
//! condition over `condition_pool`² blocks before flattening.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::CvaeError;
use crate::nn::conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward,
};
use crate::nn::{kaiming_uniform, linear_backward, linear_forward, sigmoid, ConvGeom};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    pub latent_dim: usize,
    pub input_side: usize,
    pub condition_channels: usize,
    pub target_channels: usize,
    pub encoder_channels: [usize; 2],
    pub decoder_channels: [usize; 2],
    pub condition_pool: usize,
    pub kl_weight: f64,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            input_side: 64,
            condition_channels: 2,
            target_channels: 1,
            encoder_channels: [16, 32],
            decoder_channels: [32, 16],
            condition_pool: 4,
            kl_weight: 1.0,
        }
    }
}

impl CvaeConfig {
    pub fn validate(&self) -> Result<(), CvaeError> {
        let bad = |m: String| Err(CvaeError::InvalidConfig(m));
        let s = self.input_side;
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1".into());
        }
        if s < 8 || !s.is_multiple_of(4) {
            return bad(format!("input side {s} must be >= 8 and divisible by 4"));
        }
        if self.condition_pool == 0 || !s.is_multiple_of(self.condition_pool) {
            return bad(format!("condition pool {} must divide the side {s}", self.condition_pool));
        }
        if self.condition_channels == 0 || self.target_channels != 1 {
            return bad("need >= 1 condition channel and exactly 1 target channel".into());
        }
        if self.encoder_channels.contains(&0) || self.decoder_channels.contains(&0) {
            return bad("layer widths must be >= 1".into());
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad(format!("kl_weight {} must be finite and >= 0", self.kl_weight));
        }
        Ok(())
    }

    fn enc1(&self) -> ConvGeom {
        ConvGeom {
            in_c: self.target_channels + self.condition_channels,
            out_c: self.encoder_channels[0],
            k: 3,
            stride: 2,
            pad: 1,
            in_h: self.input_side,
            in_w: self.input_side,
        }
    }

    fn enc2(&self) -> ConvGeom {
        ConvGeom {
            in_c: self.encoder_channels[0],
            out_c: self.encoder_channels[1],
            k: 3,
            stride: 2,
            pad: 1,
            in_h: self.input_side / 2,
            in_w: self.input_side / 2,
        }
    }

    // Transposed layers are described by the convolution they invert.
    fn dec1(&self) -> ConvGeom {
        ConvGeom {
            in_c: self.decoder_channels[1],
            out_c: self.decoder_channels[0],
            k: 4,
            stride: 2,
            pad: 1,
            in_h: self.input_side / 2,
            in_w: self.input_side / 2,
        }
    }

    fn dec2(&self) -> ConvGeom {
        ConvGeom {
            in_c: self.target_channels,
            out_c: self.decoder_channels[1],
            k: 4,
            stride: 2,
            pad: 1,
            in_h: self.input_side,
            in_w: self.input_side,
        }
    }

    pub fn target_len(&self) -> usize {
        self.target_channels * self.input_side * self.input_side
    }

    pub fn condition_len(&self) -> usize {
        self.condition_channels * self.input_side * self.input_side
    }

    pub fn pooled_len(&self) -> usize {
        let s = self.input_side / self.condition_pool;
        self.condition_channels * s * s
    }

    fn flat_len(&self) -> usize {
        self.enc2().out_len()
    }

    fn decoder_in(&self) -> usize {
        self.latent_dim + self.pooled_len()
    }

    fn grid_len(&self) -> usize {
        self.dec1().out_len()
    }

    /// Lengths of the parameter tensors, in [`PARAM_NAMES`] order.
    pub fn param_shapes(&self) -> [usize; 14] {
        let (e1, e2, d1, d2) = (self.enc1(), self.enc2(), self.dec1(), self.dec2());
        let (flat, l) = (self.flat_len(), self.latent_dim);
        [
            e1.weight_len(),
            e1.out_c,
            e2.weight_len(),
            e2.out_c,
            l * flat,
            l,
            l * flat,
            l,
            self.grid_len() * self.decoder_in(),
            self.grid_len(),
            d1.weight_len(),
            d1.in_c,
            d2.weight_len(),
            d2.in_c,
        ]
    }
}

pub const PARAM_NAMES: [&str; 14] = [
    "enc1.weight",
    "enc1.bias",
    "enc2.weight",
    "enc2.bias",
    "mu.weight",
    "mu.bias",
    "logvar.weight",
    "logvar.bias",
    "dec_fc.weight",
    "dec_fc.bias",
    "dec1.weight",
    "dec1.bias",
    "dec2.weight",
    "dec2.bias",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeParams {
    pub enc1_w: Vec<f64>,
    pub enc1_b: Vec<f64>,
    pub enc2_w: Vec<f64>,
    pub enc2_b: Vec<f64>,
    pub mu_w: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub logvar_w: Vec<f64>,
    pub logvar_b: Vec<f64>,
    pub dec_fc_w: Vec<f64>,
    pub dec_fc_b: Vec<f64>,
    pub dec1_w: Vec<f64>,
    pub dec1_b: Vec<f64>,
    pub dec2_w: Vec<f64>,
    pub dec2_b: Vec<f64>,
}

impl CvaeParams {
    fn from_tensors(mut t: Vec<Vec<f64>>) -> Self {
        let mut next = || t.remove(0);
        Self {
            enc1_w: next(),
            enc1_b: next(),
            enc2_w: next(),
            enc2_b: next(),
            mu_w: next(),
            mu_b: next(),
            logvar_w: next(),
            logvar_b: next(),
            dec_fc_w: next(),
            dec_fc_b: next(),
            dec1_w: next(),
            dec1_b: next(),
            dec2_w: next(),
            dec2_b: next(),
        }
    }

    pub fn zeros(config: &CvaeConfig) -> Self {
        Self::from_tensors(config.param_shapes().iter().map(|&n| vec![0.0; n]).collect())
    }

    /// Kaiming-uniform weights (fan-in), zero biases.
    pub fn init(config: &CvaeConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config);
        let (e1, e2, d1, d2) = (config.enc1(), config.enc2(), config.dec1(), config.dec2());
        let flat = config.flat_len();
        p.enc1_w = kaiming_uniform(&mut rng, e1.patch_len(), p.enc1_w.len());
        p.enc2_w = kaiming_uniform(&mut rng, e2.patch_len(), p.enc2_w.len());
        p.mu_w = kaiming_uniform(&mut rng, flat, p.mu_w.len());
        p.logvar_w = kaiming_uniform(&mut rng, flat, p.logvar_w.len());
        p.dec_fc_w = kaiming_uniform(&mut rng, config.decoder_in(), p.dec_fc_w.len());
        // Each output pixel of a stride-2, kernel-4 deconv sees 2x2 taps per input channel.
        p.dec1_w = kaiming_uniform(&mut rng, d1.out_c * 4, p.dec1_w.len());
        p.dec2_w = kaiming_uniform(&mut rng, d2.out_c * 4, p.dec2_w.len());
        p
    }

    pub fn tensors(&self) -> [&[f64]; 14] {
        [
            &self.enc1_w,
            &self.enc1_b,
            &self.enc2_w,
            &self.enc2_b,
            &self.mu_w,
            &self.mu_b,
            &self.logvar_w,
            &self.logvar_b,
            &self.dec_fc_w,
            &self.dec_fc_b,
            &self.dec1_w,
            &self.dec1_b,
            &self.dec2_w,
            &self.dec2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 14] {
        [
            &mut self.enc1_w,
            &mut self.enc1_b,
            &mut self.enc2_w,
            &mut self.enc2_b,
            &mut self.mu_w,
            &mut self.mu_b,
            &mut self.logvar_w,
            &mut self.logvar_b,
            &mut self.dec_fc_w,
            &mut self.dec_fc_b,
            &mut self.dec1_w,
            &mut self.dec1_b,
            &mut self.dec2_w,
            &mut self.dec2_b,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Loss terms, each averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over latent dimensions.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Pixel MSE plus `kl_weight` times the KL term, for one sample.
pub fn elbo_loss(x: &[f64], x_hat: &[f64], mu: &[f64], logvar: &[f64], kl_weight: f64) -> ElboTerms {
    let recon = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    let kl = kl_divergence(mu, logvar);
    ElboTerms {
        total: recon + kl_weight * kl,
        recon,
        kl,
    }
}

pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (lv / 2.0).exp() * e)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructMode {
    /// Decode the prior mean, `z = 0`.
    Mean,
    /// Decode a draw from the prior.
    Sample,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn relu_back(grad: &mut [f64], pre: &[f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

struct EncoderTape {
    input: Vec<f64>,
    a1: Vec<f64>,
    r1: Vec<f64>,
    a2: Vec<f64>,
    r2: Vec<f64>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
}

struct DecoderTape {
    input: Vec<f64>,
    h: Vec<f64>,
    rh: Vec<f64>,
    a3: Vec<f64>,
    r3: Vec<f64>,
    x_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cvae {
    config: CvaeConfig,
    pub params: CvaeParams,
}

impl Cvae {
    pub fn new(config: CvaeConfig, seed: u64) -> Result<Self, CvaeError> {
        config.validate()?;
        Ok(Self {
            config,
            params: CvaeParams::init(&config, seed),
        })
    }

    pub fn from_params(config: CvaeConfig, params: CvaeParams) -> Result<Self, CvaeError> {
        config.validate()?;
        for ((name, t), want) in PARAM_NAMES.iter().zip(params.tensors()).zip(config.param_shapes()) {
            if t.len() != want {
                return Err(CvaeError::ShapeMismatch(format!("{name}: {} values, expected {want}", t.len())));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &CvaeConfig {
        &self.config
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<(), CvaeError> {
        if got != want {
            return Err(CvaeError::ShapeMismatch(format!("{what}: {got} values, expected {want}")));
        }
        Ok(())
    }

    fn pool_condition(&self, c: &[f64], n: usize) -> Vec<f64> {
        let cfg = &self.config;
        let (s, p) = (cfg.input_side, cfg.condition_pool);
        let q = s / p;
        let scale = 1.0 / (p * p) as f64;
        let mut out = vec![0.0; n * cfg.pooled_len()];
        for plane in 0..n * cfg.condition_channels {
            let src = &c[plane * s * s..(plane + 1) * s * s];
            let dst = &mut out[plane * q * q..(plane + 1) * q * q];
            for y in 0..s {
                for x in 0..s {
                    dst[(y / p) * q + x / p] += src[y * s + x] * scale;
                }
            }
        }
        out
    }

    fn encode_batch(&self, x: &[f64], c: &[f64], n: usize) -> EncoderTape {
        let cfg = &self.config;
        let p = &self.params;
        let (tl, cl) = (cfg.target_len(), cfg.condition_len());
        let mut input = Vec::with_capacity(n * (tl + cl));
        for i in 0..n {
            input.extend_from_slice(&x[i * tl..(i + 1) * tl]);
            input.extend_from_slice(&c[i * cl..(i + 1) * cl]);
        }
        let a1 = conv2d_forward(&cfg.enc1(), &p.enc1_w, &p.enc1_b, &input, n);
        let r1 = relu(&a1);
        let a2 = conv2d_forward(&cfg.enc2(), &p.enc2_w, &p.enc2_b, &r1, n);
        let r2 = relu(&a2);
        let (flat, l) = (cfg.flat_len(), cfg.latent_dim);
        let mu = linear_forward(&p.mu_w, &p.mu_b, &r2, n, flat, l);
        let logvar = linear_forward(&p.logvar_w, &p.logvar_b, &r2, n, flat, l);
        EncoderTape {
            input,
            a1,
            r1,
            a2,
            r2,
            mu,
            logvar,
        }
    }

    fn decode_batch(&self, z: &[f64], c: &[f64], n: usize) -> DecoderTape {
        let cfg = &self.config;
        let p = &self.params;
        let pooled = self.pool_condition(c, n);
        let (l, pl) = (cfg.latent_dim, cfg.pooled_len());
        let mut input = Vec::with_capacity(n * (l + pl));
        for i in 0..n {
            input.extend_from_slice(&z[i * l..(i + 1) * l]);
            input.extend_from_slice(&pooled[i * pl..(i + 1) * pl]);
        }
        let h = linear_forward(&p.dec_fc_w, &p.dec_fc_b, &input, n, cfg.decoder_in(), cfg.grid_len());
        let rh = relu(&h);
        let a3 = conv_transpose2d_forward(&cfg.dec1(), &p.dec1_w, &p.dec1_b, &rh, n);
        let r3 = relu(&a3);
        let a4 = conv_transpose2d_forward(&cfg.dec2(), &p.dec2_w, &p.dec2_b, &r3, n);
        let x_hat = a4.into_iter().map(sigmoid).collect();
        DecoderTape {
            input,
            h,
            rh,
            a3,
            r3,
            x_hat,
        }
    }

    /// `(mu, logvar)` for one target frame and its condition.
    pub fn encode(&self, x: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>), CvaeError> {
        self.check_len("target", x.len(), self.config.target_len())?;
        self.check_len("condition", c.len(), self.config.condition_len())?;
        let tape = self.encode_batch(x, c, 1);
        if !tape.mu.iter().chain(&tape.logvar).all(|v| v.is_finite()) {
            return Err(CvaeError::NonFiniteActivation("encoder".into()));
        }
        Ok((tape.mu, tape.logvar))
    }

    pub fn decode(&self, z: &[f64], c: &[f64]) -> Result<Vec<f64>, CvaeError> {
        self.check_len("latent", z.len(), self.config.latent_dim)?;
        self.check_len("condition", c.len(), self.config.condition_len())?;
        Ok(self.decode_batch(z, c, 1).x_hat)
    }

    /// Decode `n` conditions at once with `z = 0`.
    pub fn reconstruct_batch(&self, c: &[f64], n: usize) -> Result<Vec<f64>, CvaeError> {
        self.check_len("conditions", c.len(), n * self.config.condition_len())?;
        let z = vec![0.0; n * self.config.latent_dim];
        Ok(self.decode_batch(&z, c, n).x_hat)
    }

    pub fn reconstruct<R: Rng>(&self, c: &[f64], mode: ReconstructMode, rng: &mut R) -> Result<Vec<f64>, CvaeError> {
        let z = match mode {
            ReconstructMode::Mean => vec![0.0; self.config.latent_dim],
            ReconstructMode::Sample => (0..self.config.latent_dim).map(|_| rng.sample(StandardNormal)).collect(),
        };
        self.decode(&z, c)
    }

    fn check_batch(&self, x: &[f64], c: &[f64], eps: &[f64], n: usize) -> Result<(), CvaeError> {
        if n == 0 {
            return Err(CvaeError::EmptyDataset);
        }
        self.check_len("targets", x.len(), n * self.config.target_len())?;
        self.check_len("conditions", c.len(), n * self.config.condition_len())?;
        self.check_len("noise", eps.len(), n * self.config.latent_dim)
    }

    fn batch_terms(&self, x: &[f64], enc: &EncoderTape, dec: &DecoderTape, n: usize) -> ElboTerms {
        let (tl, l) = (self.config.target_len(), self.config.latent_dim);
        let mut sum = ElboTerms {
            total: 0.0,
            recon: 0.0,
            kl: 0.0,
        };
        for i in 0..n {
            let t = elbo_loss(
                &x[i * tl..(i + 1) * tl],
                &dec.x_hat[i * tl..(i + 1) * tl],
                &enc.mu[i * l..(i + 1) * l],
                &enc.logvar[i * l..(i + 1) * l],
                self.config.kl_weight,
            );
            sum.total += t.total;
            sum.recon += t.recon;
            sum.kl += t.kl;
        }
        let k = n as f64;
        ElboTerms {
            total: sum.total / k,
            recon: sum.recon / k,
            kl: sum.kl / k,
        }
    }

    /// Batch-mean loss with fixed reparameterisation noise `eps`.
    pub fn batch_loss(&self, x: &[f64], c: &[f64], eps: &[f64], n: usize) -> Result<ElboTerms, CvaeError> {
        self.check_batch(x, c, eps, n)?;
        let enc = self.encode_batch(x, c, n);
        let z = reparameterize(&enc.mu, &enc.logvar, eps);
        let dec = self.decode_batch(&z, c, n);
        Ok(self.batch_terms(x, &enc, &dec, n))
    }

    /// Batch-mean loss and its gradient for every parameter tensor
    /// ([`PARAM_NAMES`] order).
    pub fn loss_and_gradients(
        &self,
        x: &[f64],
        c: &[f64],
        eps: &[f64],
        n: usize,
    ) -> Result<(ElboTerms, Vec<Vec<f64>>), CvaeError> {
        self.check_batch(x, c, eps, n)?;
        let cfg = &self.config;
        let p = &self.params;
        let enc = self.encode_batch(x, c, n);
        let z = reparameterize(&enc.mu, &enc.logvar, eps);
        let dec = self.decode_batch(&z, c, n);
        let terms = self.batch_terms(x, &enc, &dec, n);
        if !terms.total.is_finite() {
            return Err(CvaeError::NonFiniteActivation("loss".into()));
        }
        let shapes = cfg.param_shapes();
        let mut g: Vec<Vec<f64>> = shapes.iter().map(|&k| vec![0.0; k]).collect();
        let [e1w, e1b, e2w, e2b, muw, mub, lvw, lvb, fcw, fcb, d1w, d1b, d2w, d2b] = &mut g[..] else {
            unreachable!("fourteen tensors")
        };
        let (tl, l, flat) = (cfg.target_len(), cfg.latent_dim, cfg.flat_len());

        // d(mean pixel MSE)/d x_hat through the sigmoid.
        let scale = 2.0 / (tl * n) as f64;
        let da4: Vec<f64> = dec
            .x_hat
            .iter()
            .zip(x)
            .map(|(&y, &t)| scale * (y - t) * y * (1.0 - y))
            .collect();
        let mut dr3 = conv_transpose2d_backward(&cfg.dec2(), &p.dec2_w, &dec.r3, &da4, n, d2w, d2b, true)
            .expect("input grad requested");
        relu_back(&mut dr3, &dec.a3);
        let mut drh = conv_transpose2d_backward(&cfg.dec1(), &p.dec1_w, &dec.rh, &dr3, n, d1w, d1b, true)
            .expect("input grad requested");
        relu_back(&mut drh, &dec.h);
        let d_in = linear_backward(
            &p.dec_fc_w,
            &dec.input,
            &drh,
            n,
            cfg.decoder_in(),
            cfg.grid_len(),
            fcw,
            fcb,
            true,
        )
        .expect("input grad requested");

        // Through z = mu + exp(logvar / 2) * eps, plus the KL term.
        let beta = cfg.kl_weight / n as f64;
        let mut dmu = vec![0.0; n * l];
        let mut dlv = vec![0.0; n * l];
        let din = cfg.decoder_in();
        for i in 0..n {
            for j in 0..l {
                let k = i * l + j;
                let dz = d_in[i * din + j];
                let (m, lv) = (enc.mu[k], enc.logvar[k]);
                let sd = (lv / 2.0).exp();
                dmu[k] = dz + beta * m;
                dlv[k] = dz * eps[k] * sd / 2.0 + beta * (lv.exp() - 1.0) / 2.0;
            }
        }
        let mut dr2 = linear_backward(&p.mu_w, &enc.r2, &dmu, n, flat, l, muw, mub, true)
            .expect("input grad requested");
        let dr2_lv = linear_backward(&p.logvar_w, &enc.r2, &dlv, n, flat, l, lvw, lvb, true)
            .expect("input grad requested");
        for (a, b) in dr2.iter_mut().zip(&dr2_lv) {
            *a += b;
        }
        relu_back(&mut dr2, &enc.a2);
        let mut dr1 = conv2d_backward(&cfg.enc2(), &p.enc2_w, &enc.r1, &dr2, n, e2w, e2b, true)
            .expect("input grad requested");
        relu_back(&mut dr1, &enc.a1);
        conv2d_backward(&cfg.enc1(), &p.enc1_w, &enc.input, &dr1, n, e1w, e1b, false);
        Ok((terms, g))
    }
}
