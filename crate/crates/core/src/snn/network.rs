//! Parameters, batched forward pass with a recorded tape, and BPTT.
//!
//! A batch is processed layer by layer over all of its frames at once
//! (`N = sum of clip lengths`, clip-major). Stateless layers run on every
//! frame independently; batch norm pools statistics over clips, time and
//! space; PLIF layers run their recurrence along each clip's own timeline.
//! Clips of different lengths are never padded in memory: the frames a
//! padded batch would add contribute nothing to the scores, so they are
//! simply not computed, and they do not enter batch-norm statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::neuron::{plif_backward_clip, plif_forward_clip, NeuronParams, PlifTrace, SpikeFn};
use super::spec::{LayerSpec, NetworkSpec, Shape};
use super::SnnError;
use crate::nn::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use crate::nn::{
    batchnorm_backward, batchnorm_eval_forward, batchnorm_train_forward, kaiming_uniform,
    linear_backward, linear_forward, maxpool2d_backward, maxpool2d_forward, sigmoid,
    BatchNormCache, BN_MOMENTUM,
};
use crate::representation::InputClip;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        geom: ConvGeom,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    BatchNorm {
        channels: usize,
        plane: usize,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Plif {
        /// Single shared `w`, stored as a one-element tensor.
        w: Vec<f64>,
        neuron: NeuronParams,
        features: usize,
    },
    MaxPool {
        c: usize,
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
        features: usize,
    },
    Fc {
        in_f: usize,
        out_f: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Voting {
        group: usize,
        in_f: usize,
    },
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::BatchNorm { .. } => "bn",
            Layer::Plif { .. } => "plif",
            Layer::MaxPool { .. } => "pool",
            Layer::Dropout { .. } => "dropout",
            Layer::Fc { .. } => "fc",
            Layer::Voting { .. } => "voting",
        }
    }

    fn params(&self) -> Vec<(&'static str, &Vec<f64>)> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Fc { weight, bias, .. } => {
                vec![("weight", weight), ("bias", bias)]
            }
            Layer::BatchNorm { gamma, beta, .. } => vec![("gamma", gamma), ("beta", beta)],
            Layer::Plif { w, .. } => vec![("w", w)],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Fc { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            Layer::Plif { w, .. } => vec![w],
            _ => Vec::new(),
        }
    }
}

/// One gradient tensor per learnable parameter, in [`Network::param_names`]
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            names: net.param_names(),
            values: net.param_tensors().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().flatten().for_each(|g| *g *= c);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardMode {
    /// Batch statistics in batch norm and active dropout.
    pub train: bool,
    pub spike: SpikeFn,
}

impl ForwardMode {
    pub const EVAL: ForwardMode = ForwardMode {
        train: false,
        spike: SpikeFn::Heaviside,
    };
    pub const TRAIN: ForwardMode = ForwardMode {
        train: true,
        spike: SpikeFn::Heaviside,
    };
}

#[derive(Debug)]
enum Tape {
    Conv { input: Vec<f64> },
    BatchNorm { cache: Option<BatchNormCache> },
    Plif { traces: Vec<PlifTrace> },
    Pool { argmax: Vec<u32>, in_len: usize },
    Dropout { masks: Option<Vec<Vec<f64>>> },
    Fc { input: Vec<f64> },
    Voting,
}

/// Result of a forward pass over a batch of clips.
#[derive(Debug)]
pub struct ForwardPass {
    /// `[clips][n_classes]`, time-averaged voting outputs.
    pub scores: Vec<f64>,
    pub steps: Vec<usize>,
    pub mode: ForwardMode,
    tape: Option<Vec<Tape>>,
}

impl ForwardPass {
    pub fn clip_scores(&self, i: usize, n_classes: usize) -> &[f64] {
        &self.scores[i * n_classes..(i + 1) * n_classes]
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    /// Batch statistics of each batch-norm layer: `(layer, mean, var, count)`.
    fn batch_stats(&self) -> Vec<(usize, &BatchNormCache)> {
        self.tape
            .iter()
            .flatten()
            .enumerate()
            .filter_map(|(i, t)| match t {
                Tape::BatchNorm { cache: Some(c) } => Some((i, c)),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// Mean squared error between class scores and a one-hot target.
pub fn mse_loss(scores: &[f64], target: &[f64]) -> f64 {
    scores
        .iter()
        .zip(target)
        .map(|(s, t)| (s - t) * (s - t))
        .sum::<f64>()
        / scores.len() as f64
}

pub fn one_hot(label: usize, n_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_classes];
    v[label] = 1.0;
    v
}

impl Network {
    /// Kaiming-uniform conv/FC weights with zero biases, identity batch norm,
    /// `w` from the spec.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, SnnError> {
        let shapes = spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (layer, shape) in spec.layers.iter().zip(&shapes) {
            let built = match (*layer, *shape) {
                (
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    Shape::Spatial { h, w, .. },
                ) => {
                    let geom = ConvGeom {
                        in_c: in_channels,
                        out_c: out_channels,
                        k: kernel,
                        stride,
                        pad: padding,
                        in_h: h,
                        in_w: w,
                    };
                    Layer::Conv {
                        weight: kaiming_uniform(&mut rng, geom.patch_len(), geom.weight_len()),
                        bias: vec![0.0; out_channels],
                        geom,
                    }
                }
                (LayerSpec::BatchNorm { channels }, Shape::Spatial { h, w, .. }) => Layer::BatchNorm {
                    channels,
                    plane: h * w,
                    gamma: vec![1.0; channels],
                    beta: vec![0.0; channels],
                    running_mean: vec![0.0; channels],
                    running_var: vec![1.0; channels],
                },
                (LayerSpec::Plif { init_w, neuron }, s) => Layer::Plif {
                    w: vec![init_w],
                    neuron,
                    features: s.len(),
                },
                (LayerSpec::MaxPool2d { kernel, stride }, Shape::Spatial { c, h, w }) => Layer::MaxPool {
                    c,
                    h,
                    w,
                    kernel,
                    stride,
                },
                (LayerSpec::Dropout { rate }, s) => Layer::Dropout {
                    rate,
                    features: s.len(),
                },
                (
                    LayerSpec::FullyConnected {
                        in_features,
                        out_features,
                    },
                    _,
                ) => Layer::Fc {
                    in_f: in_features,
                    out_f: out_features,
                    weight: kaiming_uniform(&mut rng, in_features, in_features * out_features),
                    bias: vec![0.0; out_features],
                },
                (LayerSpec::VotingPool { group }, s) => Layer::Voting {
                    group,
                    in_f: s.len(),
                },
                (l, s) => return Err(SnnError::InvalidSpec(format!("{l:?} at {s:?}"))),
            };
            layers.push(built);
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_channels * self.spec.input_side * self.spec.input_side
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(name, _)| format!("{i}.{}.{name}", l.kind()))
            })
            .collect()
    }

    pub fn param_tensors(&self) -> Vec<&Vec<f64>> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().map(|(_, p)| p))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Running statistics of every batch-norm layer, `[mean, var]` pairs.
    pub fn buffers(&self) -> Vec<&Vec<f64>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => vec![running_mean, running_var],
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => vec![running_mean, running_var],
                _ => Vec::new(),
            })
            .collect()
    }

    /// Learned leak `sigmoid(w)` of every PLIF layer.
    pub fn decays(&self) -> Vec<f64> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Plif { w, .. } => Some(sigmoid(w[0])),
                _ => None,
            })
            .collect()
    }

    pub fn set_dropout(&mut self, new_rate: f64) {
        for l in &mut self.layers {
            if let Layer::Dropout { rate, .. } = l {
                *rate = new_rate;
            }
        }
        for l in &mut self.spec.layers {
            if let LayerSpec::Dropout { rate } = l {
                *rate = new_rate;
            }
        }
    }

    /// Apply a closure to every neuron configuration.
    pub fn set_neuron_params(&mut self, f: impl Fn(&mut NeuronParams)) {
        for l in &mut self.layers {
            if let Layer::Plif { neuron, .. } = l {
                f(neuron);
            }
        }
        for l in &mut self.spec.layers {
            if let LayerSpec::Plif { neuron, .. } = l {
                f(neuron);
            }
        }
    }

    fn check_clips(&self, clips: &[&InputClip]) -> Result<(), SnnError> {
        if clips.is_empty() {
            return Err(SnnError::EmptyDataset);
        }
        for c in clips {
            if c.frame_len() != self.input_len() {
                return Err(SnnError::ShapeMismatch(format!(
                    "clip frames have {} values, network expects {}",
                    c.frame_len(),
                    self.input_len()
                )));
            }
            if c.label >= self.n_classes() {
                return Err(SnnError::ShapeMismatch(format!(
                    "label {} outside {} classes",
                    c.label,
                    self.n_classes()
                )));
            }
        }
        Ok(())
    }

    /// Inference scores for one clip (`n_classes` values in `[0, 1]`).
    pub fn forward_clip(&self, clip: &InputClip) -> Result<Vec<f64>, SnnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(&[clip], ForwardMode::EVAL, false, &mut rng)?.scores)
    }

    /// Forward a batch. `record` keeps what backward needs.
    pub fn forward<R: Rng>(
        &self,
        clips: &[&InputClip],
        mode: ForwardMode,
        record: bool,
        rng: &mut R,
    ) -> Result<ForwardPass, SnnError> {
        self.check_clips(clips)?;
        let steps: Vec<usize> = clips.iter().map(|c| c.steps()).collect();
        let offsets: Vec<usize> = steps
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let n: usize = steps.iter().sum();
        let mut x: Vec<f64> = Vec::with_capacity(n * self.input_len());
        for c in clips {
            x.extend_from_slice(c.data());
        }
        let mut tape = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, entry) = match layer {
                Layer::Conv { geom, weight, bias } => {
                    let y = conv2d_forward(geom, weight, bias, &x, n);
                    (y, Tape::Conv { input: x })
                }
                Layer::BatchNorm {
                    channels,
                    plane,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    if mode.train {
                        let (y, cache) = batchnorm_train_forward(&x, n, *channels, *plane, gamma, beta);
                        (y, Tape::BatchNorm { cache: Some(cache) })
                    } else {
                        let y = batchnorm_eval_forward(
                            &x,
                            n,
                            *channels,
                            *plane,
                            gamma,
                            beta,
                            running_mean,
                            running_var,
                        );
                        (y, Tape::BatchNorm { cache: None })
                    }
                }
                Layer::Plif { w, neuron, features } => {
                    let decay = sigmoid(w[0]);
                    let traces: Vec<PlifTrace> = offsets
                        .par_iter()
                        .zip(&steps)
                        .map(|(&o, &t)| {
                            plif_forward_clip(
                                decay,
                                neuron,
                                mode.spike,
                                &x[o * features..(o + t) * features],
                                *features,
                            )
                        })
                        .collect();
                    let mut y = Vec::with_capacity(x.len());
                    for tr in &traces {
                        y.extend_from_slice(&tr.s);
                    }
                    (y, Tape::Plif { traces })
                }
                Layer::MaxPool {
                    c,
                    h,
                    w,
                    kernel,
                    stride,
                } => {
                    let (y, argmax) = maxpool2d_forward(&x, n, *c, *h, *w, *kernel, *stride);
                    (y, Tape::Pool { argmax, in_len: x.len() })
                }
                Layer::Dropout { rate, features } => {
                    if mode.train && *rate > 0.0 {
                        let keep = 1.0 / (1.0 - rate);
                        let masks: Vec<Vec<f64>> = steps
                            .iter()
                            .map(|_| {
                                (0..*features)
                                    .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                                    .collect()
                            })
                            .collect();
                        let mut y = x;
                        for ((&o, &t), m) in offsets.iter().zip(&steps).zip(&masks) {
                            for frame in y[o * features..(o + t) * features].chunks_mut(*features) {
                                frame.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                            }
                        }
                        (y, Tape::Dropout { masks: Some(masks) })
                    } else {
                        (x, Tape::Dropout { masks: None })
                    }
                }
                Layer::Fc {
                    in_f,
                    out_f,
                    weight,
                    bias,
                } => {
                    let y = linear_forward(weight, bias, &x, n, *in_f, *out_f);
                    (y, Tape::Fc { input: x })
                }
                Layer::Voting { group, .. } => {
                    let y = x
                        .chunks(*group)
                        .map(|g| g.iter().sum::<f64>() / *group as f64)
                        .collect();
                    (y, Tape::Voting)
                }
            };
            x = y;
            if record {
                tape.push(entry);
            }
        }
        let k = self.n_classes();
        let mut scores = vec![0.0; clips.len() * k];
        for (b, (&o, &t)) in offsets.iter().zip(&steps).enumerate() {
            let dst = &mut scores[b * k..(b + 1) * k];
            for frame in x[o * k..(o + t) * k].chunks(k) {
                dst.iter_mut().zip(frame).for_each(|(d, v)| *d += v);
            }
            dst.iter_mut().for_each(|d| *d /= t as f64);
        }
        Ok(ForwardPass {
            scores,
            steps,
            mode,
            tape: record.then_some(tape),
        })
    }

    /// Gradients of a scalar loss given `dL/dscores` (`[clips][n_classes]`).
    pub fn backward(&self, pass: &ForwardPass, grad_scores: &[f64]) -> Result<GradientSet, SnnError> {
        let tape = pass.tape.as_ref().ok_or(SnnError::NoRecordedForward)?;
        let k = self.n_classes();
        if grad_scores.len() != pass.steps.len() * k {
            return Err(SnnError::ShapeMismatch(format!(
                "{} score gradients for {} clips",
                grad_scores.len(),
                pass.steps.len()
            )));
        }
        let steps = &pass.steps;
        let n: usize = steps.iter().sum();
        let offsets: Vec<usize> = steps
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let mut grads = GradientSet::zeros_like(self);
        let mut pi = grads.values.len();
        let mut g = Vec::with_capacity(n * k);
        for (b, &t) in steps.iter().enumerate() {
            let row: Vec<f64> = grad_scores[b * k..(b + 1) * k].iter().map(|v| v / t as f64).collect();
            for _ in 0..t {
                g.extend_from_slice(&row);
            }
        }
        for (li, (layer, entry)) in self.layers.iter().zip(tape).enumerate().rev() {
            let need_input = li > 0;
            g = match (layer, entry) {
                (Layer::Voting { group, .. }, Tape::Voting) => g
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v / *group as f64, *group))
                    .collect(),
                (
                    Layer::Fc {
                        in_f,
                        out_f,
                        weight,
                        ..
                    },
                    Tape::Fc { input },
                ) => {
                    pi -= 2;
                    let (gw, gb) = split_pair(&mut grads.values, pi);
                    linear_backward(weight, input, &g, n, *in_f, *out_f, gw, gb, need_input)
                        .unwrap_or_default()
                }
                (Layer::Dropout { features, .. }, Tape::Dropout { masks }) => {
                    if let Some(masks) = masks {
                        for ((&o, &t), m) in offsets.iter().zip(steps).zip(masks) {
                            for frame in g[o * features..(o + t) * features].chunks_mut(*features) {
                                frame.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                            }
                        }
                    }
                    g
                }
                (Layer::MaxPool { .. }, Tape::Pool { argmax, in_len }) => {
                    maxpool2d_backward(&g, argmax, *in_len)
                }
                (Layer::Plif { w, neuron, features }, Tape::Plif { traces }) => {
                    pi -= 1;
                    let decay = sigmoid(w[0]);
                    let parts: Vec<(Vec<f64>, f64)> = offsets
                        .par_iter()
                        .zip(steps)
                        .zip(traces)
                        .map(|((&o, &t), tr)| {
                            plif_backward_clip(
                                decay,
                                neuron,
                                pass.mode.spike,
                                tr,
                                &g[o * features..(o + t) * features],
                                *features,
                            )
                        })
                        .collect();
                    let mut gx = Vec::with_capacity(g.len());
                    let mut g_decay = 0.0;
                    for (part, gd) in parts {
                        gx.extend(part);
                        g_decay += gd;
                    }
                    grads.values[pi][0] += g_decay * decay * (1.0 - decay);
                    gx
                }
                (
                    Layer::BatchNorm {
                        channels,
                        plane,
                        gamma,
                        ..
                    },
                    Tape::BatchNorm { cache },
                ) => {
                    pi -= 2;
                    let cache = cache.as_ref().ok_or(SnnError::NoRecordedForward)?;
                    let (gg, gb) = split_pair(&mut grads.values, pi);
                    batchnorm_backward(cache, &g, n, *channels, *plane, gamma, gg, gb)
                }
                (Layer::Conv { geom, weight, .. }, Tape::Conv { input }) => {
                    pi -= 2;
                    let (gw, gb) = split_pair(&mut grads.values, pi);
                    conv2d_backward(geom, weight, input, &g, n, gw, gb, need_input).unwrap_or_default()
                }
                _ => return Err(SnnError::NoRecordedForward),
            };
        }
        debug_assert_eq!(pi, 0);
        Ok(grads)
    }

    /// Mean per-clip MSE against one-hot targets, with its gradients.
    pub fn loss_and_gradients<R: Rng>(
        &self,
        clips: &[&InputClip],
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<(f64, GradientSet, ForwardPass), SnnError> {
        let pass = self.forward(clips, mode, true, rng)?;
        let k = self.n_classes();
        let b = clips.len() as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(pass.scores.len());
        for (i, clip) in clips.iter().enumerate() {
            let target = one_hot(clip.label, k);
            let s = pass.clip_scores(i, k);
            loss += mse_loss(s, &target) / b;
            grad.extend(s.iter().zip(&target).map(|(s, t)| 2.0 * (s - t) / (k as f64 * b)));
        }
        let grads = self.backward(&pass, &grad)?;
        Ok((loss, grads, pass))
    }

    /// Fold a training pass's batch statistics into the running averages.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        let stats: Vec<(usize, Vec<f64>, Vec<f64>, usize)> = pass
            .batch_stats()
            .into_iter()
            .map(|(i, c)| (i, c.mean.clone(), c.var.clone(), c.count))
            .collect();
        for (i, mean, var, count) in stats {
            if let Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } = &mut self.layers[i]
            {
                let unbias = if count > 1 {
                    count as f64 / (count - 1) as f64
                } else {
                    1.0
                };
                for c in 0..mean.len() {
                    running_mean[c] = (1.0 - BN_MOMENTUM) * running_mean[c] + BN_MOMENTUM * mean[c];
                    running_var[c] = (1.0 - BN_MOMENTUM) * running_var[c] + BN_MOMENTUM * var[c] * unbias;
                }
            }
        }
    }
}

fn split_pair(values: &mut [Vec<f64>], at: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = values[at..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Network {
        Network::new(NetworkSpec::conv_plif(2, 4, &[3], &[20], 2, 0.0).unwrap(), 7).unwrap()
    }

    fn clip(steps: usize, fill: impl Fn(usize) -> f64, label: usize) -> InputClip {
        InputClip::new(steps, 4, (0..steps * 32).map(fill).collect(), label).unwrap()
    }

    #[test]
    fn param_names_follow_layers() {
        let net = tiny();
        let names = net.param_names();
        assert_eq!(names[0], "0.conv.weight");
        assert_eq!(names.len(), net.param_tensors().len());
        assert!(names.iter().any(|n| n.ends_with("plif.w")));
    }

    #[test]
    fn voting_of_ones() {
        let mut net = tiny();
        // Make every output neuron fire every step: huge FC bias.
        for l in net.layers_mut() {
            if let Layer::Fc { bias, .. } = l {
                bias.iter_mut().for_each(|b| *b = 10.0);
            }
        }
        let s = net.forward_clip(&clip(3, |_| 0.0, 0)).unwrap();
        assert_eq!(s, vec![1.0, 1.0]);
    }

    #[test]
    fn quiescent_on_zero_input() {
        let net = tiny();
        let s = net.forward_clip(&clip(3, |_| 0.0, 0)).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = clip(3, |_| 0.0, 0);
        let pass = net.forward(&[&c], ForwardMode::TRAIN, true, &mut rng).unwrap();
        assert_eq!(pass.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn stationary_point_gives_zero_gradient() {
        let net = tiny();
        let c = clip(3, |_| 0.0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pass = net.forward(&[&c], ForwardMode::TRAIN, true, &mut rng).unwrap();
        // target == scores, so dL/dscores = 0.
        let g = net.backward(&pass, &[0.0, 0.0]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn backward_without_tape() {
        let net = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = clip(2, |i| (i % 3) as f64, 1);
        let pass = net.forward(&[&c], ForwardMode::TRAIN, false, &mut rng).unwrap();
        assert_eq!(net.backward(&pass, &[0.1, 0.1]), Err(SnnError::NoRecordedForward));
    }

    #[test]
    fn gradient_is_linear_in_loss_scale() {
        let net = tiny();
        let c = clip(3, |i| ((i * 7) % 5) as f64 * 0.8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pass = net.forward(&[&c], ForwardMode::TRAIN, true, &mut rng).unwrap();
        let g1 = net.backward(&pass, &[0.3, -0.2]).unwrap();
        let mut g3 = net.backward(&pass, &[0.9, -0.6]).unwrap();
        g3.scale(1.0 / 3.0);
        let scale = g1.max_abs().max(1e-300);
        assert!(scale > 0.0);
        for (a, b) in g1.values.iter().flatten().zip(g3.values.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn mixed_lengths_are_independent_in_eval() {
        let net = tiny();
        let a = clip(2, |i| ((i * 3) % 4) as f64, 0);
        let b = clip(5, |i| ((i * 5) % 3) as f64, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = net.forward(&[&a, &b], ForwardMode::EVAL, false, &mut rng).unwrap();
        assert_eq!(pass.clip_scores(0, 2), net.forward_clip(&a).unwrap().as_slice());
        assert_eq!(pass.clip_scores(1, 2), net.forward_clip(&b).unwrap().as_slice());
    }

    #[test]
    fn wrong_frame_size_rejected() {
        let net = tiny();
        let c = InputClip::new(1, 3, vec![0.0; 18], 0).unwrap();
        assert!(matches!(net.forward_clip(&c), Err(SnnError::ShapeMismatch(_))));
    }

    #[test]
    fn mse_examples() {
        let t = one_hot(3, 21);
        assert_eq!(mse_loss(&t, &t), 0.0);
        assert!((mse_loss(&[0.0; 21], &t) - 1.0 / 21.0).abs() < 1e-15);
    }
}
