//! Parametric leaky integrate-and-fire neurons and the arctangent surrogate.
//!
//! Charge: `H[t] = V[t-1] - k * (V[t-1] - V_rest) + X[t]`, with the leak
//! `k = 1/tau = sigmoid(w)` learnable and shared by every neuron of a layer.
//! Fire: `S[t] = step(H[t] - V_th)`. Reset: `V[t] = V_reset` where a spike
//! fired, else `H[t]`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::SnnError;
use crate::nn::sigmoid;

/// Surrogate sharpness.
pub const DEFAULT_ALPHA: f64 = 2.0;

/// Derivative of the arctangent surrogate, `alpha / (2 (1 + (pi/2 alpha x)^2))`.
pub fn surrogate_arctan(x: f64, alpha: f64) -> f64 {
    let u = FRAC_PI_2 * alpha * x;
    alpha / (2.0 * (1.0 + u * u))
}

/// The smooth step whose derivative is [`surrogate_arctan`].
pub fn surrogate_step(x: f64, alpha: f64) -> f64 {
    (FRAC_PI_2 * alpha * x).atan() / PI + 0.5
}

/// Forward spike nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SpikeFn {
    /// Binary spikes; the surrogate is used only in backward.
    #[default]
    Heaviside,
    /// Spikes replaced by the surrogate's primitive. Used to verify BPTT
    /// against finite differences, where the forward must be smooth.
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub v_th: f64,
    pub v_rest: f64,
    pub v_reset: f64,
    pub alpha: f64,
    /// Treat the reset branch as a constant in backward.
    pub detach_reset: bool,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            v_th: 1.0,
            v_rest: 0.0,
            v_reset: 0.0,
            alpha: DEFAULT_ALPHA,
            detach_reset: true,
        }
    }
}

impl NeuronParams {
    #[inline]
    fn fire(&self, h: f64, spike: SpikeFn) -> f64 {
        match spike {
            SpikeFn::Heaviside => {
                if h >= self.v_th {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFn::Smooth => surrogate_step(h - self.v_th, self.alpha),
        }
    }

    #[inline]
    fn reset(&self, h: f64, s: f64, spike: SpikeFn) -> f64 {
        match spike {
            SpikeFn::Heaviside => {
                if s > 0.0 {
                    self.v_reset
                } else {
                    h
                }
            }
            SpikeFn::Smooth => h * (1.0 - s) + self.v_reset * s,
        }
    }
}

/// Membrane state of one PLIF layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PlifState {
    pub w: f64,
    pub params: NeuronParams,
    pub v: Vec<f64>,
}

impl PlifState {
    /// Neurons start at `V_rest`.
    pub fn new(w: f64, params: NeuronParams, neurons: usize) -> Self {
        Self {
            w,
            params,
            v: vec![params.v_rest; neurons],
        }
    }

    /// `1/tau`.
    pub fn decay(&self) -> f64 {
        sigmoid(self.w)
    }

    pub fn tau(&self) -> f64 {
        1.0 / self.decay()
    }

    /// Advance one timestep in place, returning the binary spikes.
    pub fn step(&mut self, input: &[f64]) -> Result<Vec<f64>, SnnError> {
        if input.len() != self.v.len() {
            return Err(SnnError::ShapeMismatch(format!(
                "PLIF input has {} values for {} neurons",
                input.len(),
                self.v.len()
            )));
        }
        let k = self.decay();
        let p = self.params;
        Ok(self
            .v
            .iter_mut()
            .zip(input)
            .map(|(v, &x)| {
                let h = *v - k * (*v - p.v_rest) + x;
                let s = p.fire(h, SpikeFn::Heaviside);
                *v = p.reset(h, s, SpikeFn::Heaviside);
                s
            })
            .collect())
    }
}

/// Functional form of [`PlifState::step`].
pub fn plif_step(state: &PlifState, input: &[f64]) -> Result<(Vec<f64>, PlifState), SnnError> {
    let mut next = state.clone();
    let spikes = next.step(input)?;
    Ok((spikes, next))
}

/// Recorded charge and spikes of one clip through one PLIF layer,
/// `[steps][neurons]` each.
#[derive(Debug, Clone)]
pub struct PlifTrace {
    pub h: Vec<f64>,
    pub s: Vec<f64>,
}

/// Run a whole clip (`[steps][neurons]`) through a freshly reset layer.
pub fn plif_forward_clip(
    decay: f64,
    p: &NeuronParams,
    spike: SpikeFn,
    input: &[f64],
    neurons: usize,
) -> PlifTrace {
    let mut v = vec![p.v_rest; neurons];
    let mut h = vec![0.0; input.len()];
    let mut s = vec![0.0; input.len()];
    for ((x_t, h_t), s_t) in input
        .chunks(neurons)
        .zip(h.chunks_mut(neurons))
        .zip(s.chunks_mut(neurons))
    {
        for i in 0..neurons {
            let hi = v[i] - decay * (v[i] - p.v_rest) + x_t[i];
            let si = p.fire(hi, spike);
            h_t[i] = hi;
            s_t[i] = si;
            v[i] = p.reset(hi, si, spike);
        }
    }
    PlifTrace { h, s }
}

/// Backpropagation through time for one clip. Returns the input gradient and
/// the gradient with respect to the decay `k` (not `w`).
pub fn plif_backward_clip(
    decay: f64,
    p: &NeuronParams,
    spike: SpikeFn,
    trace: &PlifTrace,
    grad_spikes: &[f64],
    neurons: usize,
) -> (Vec<f64>, f64) {
    let steps = trace.h.len() / neurons;
    let mut grad_x = vec![0.0; trace.h.len()];
    let mut grad_v = vec![0.0; neurons];
    let mut grad_decay = 0.0;
    for t in (0..steps).rev() {
        let row = t * neurons..(t + 1) * neurons;
        let (h, s) = (&trace.h[row.clone()], &trace.s[row.clone()]);
        let gs = &grad_spikes[row.clone()];
        let gx = &mut grad_x[row];
        for i in 0..neurons {
            let sg = surrogate_arctan(h[i] - p.v_th, p.alpha);
            let mut dv_dh = 1.0 - s[i];
            if !p.detach_reset {
                dv_dh += (p.v_reset - h[i]) * sg;
            }
            let gh = gs[i] * sg + grad_v[i] * dv_dh;
            gx[i] = gh;
            let v_prev = if t == 0 {
                p.v_rest
            } else {
                let j = (t - 1) * neurons + i;
                p.reset(trace.h[j], trace.s[j], spike)
            };
            grad_decay -= gh * (v_prev - p.v_rest);
            grad_v[i] = gh * (1.0 - decay);
        }
    }
    (grad_x, grad_decay)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(v: f64, w: f64) -> PlifState {
        let mut s = PlifState::new(w, NeuronParams::default(), 1);
        s.v[0] = v;
        s
    }

    #[test]
    fn charge_without_spike() {
        let (spk, next) = plif_step(&state(0.5, 0.0), &[0.3]).unwrap();
        assert_eq!(spk, vec![0.0]);
        assert!((next.v[0] - 0.55).abs() < 1e-15);
    }

    #[test]
    fn threshold_and_hard_reset() {
        let (spk, next) = plif_step(&state(0.5, 0.0), &[0.8]).unwrap();
        assert_eq!(spk, vec![1.0]);
        assert_eq!(next.v[0], 0.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            plif_step(&state(0.0, 0.0), &[1.0, 2.0]),
            Err(SnnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn free_decay_is_geometric() {
        let w = 0.3;
        let mut s = state(1.0 - 1e-6, w);
        let ratio = 1.0 - sigmoid(w);
        let mut expected = 1.0 - 1e-6;
        for _ in 0..50 {
            s.step(&[0.0]).unwrap();
            expected *= ratio;
            assert!((s.v[0] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn surrogate_values() {
        assert_eq!(surrogate_arctan(0.0, 2.0), 1.0);
        assert!(surrogate_arctan(1e9, 2.0) < 1e-15);
        assert!(surrogate_arctan(-1e9, 2.0) < 1e-15);
        assert_eq!(surrogate_step(0.0, 2.0), 0.5);
    }

    #[test]
    fn default_tau_is_two() {
        assert_eq!(state(0.0, 0.0).tau(), 2.0);
    }

    #[test]
    fn clip_trace_matches_stepwise_state() {
        let p = NeuronParams::default();
        let inputs: Vec<f64> = (0..30).map(|i| ((i * 7 % 5) as f64) * 0.35).collect();
        let trace = plif_forward_clip(sigmoid(0.2), &p, SpikeFn::Heaviside, &inputs, 3);
        let mut st = PlifState::new(0.2, p, 3);
        for (t, x) in inputs.chunks(3).enumerate() {
            let spk = st.step(x).unwrap();
            assert_eq!(spk, trace.s[t * 3..t * 3 + 3]);
        }
    }

    #[test]
    fn smooth_bptt_matches_finite_difference() {
        let p = NeuronParams {
            detach_reset: false,
            ..NeuronParams::default()
        };
        let n = 2;
        let x: Vec<f64> = (0..12).map(|i| 0.2 + ((i * 5 % 7) as f64) * 0.15).collect();
        let gs: Vec<f64> = (0..12).map(|i| ((i * 3 % 4) as f64) - 1.5).collect();
        let loss = |k: f64, x: &[f64]| -> f64 {
            let tr = plif_forward_clip(k, &p, SpikeFn::Smooth, x, n);
            tr.s.iter().zip(&gs).map(|(a, b)| a * b).sum()
        };
        let k = 0.4;
        let tr = plif_forward_clip(k, &p, SpikeFn::Smooth, &x, n);
        let (gx, gk) = plif_backward_clip(k, &p, SpikeFn::Smooth, &tr, &gs, n);
        let h = 1e-6;
        let fd = (loss(k + h, &x) - loss(k - h, &x)) / (2.0 * h);
        assert!((fd - gk).abs() < 1e-7, "{fd} vs {gk}");
        for i in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(k, &a) - loss(k, &b)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-7);
        }
    }
}
