//! Adam and the cosine-annealed learning rate.

use serde::{Deserialize, Serialize};

use crate::blob::{BlobError, BlobReader, BlobWriter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("parameter {index}: {params} values but {grads} gradients")]
pub struct ShapeMismatch {
    pub index: usize,
    pub params: usize,
    pub grads: usize,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<(), ShapeMismatch> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(ShapeMismatch {
                index: params.len().min(grads.len()),
                params: params.len(),
                grads: grads.len(),
            });
        }
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[index].len() {
                return Err(ShapeMismatch {
                    index,
                    params: p.len(),
                    grads: g.len(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr_max * (1 + cos(pi * epoch / total)) / 2`, never negative.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr_max: f64) -> f64 {
    if total_epochs == 0 {
        return lr_max;
    }
    let e = epoch.min(total_epochs) as f64;
    let lr = lr_max * (1.0 + (std::f64::consts::PI * e / total_epochs as f64).cos()) / 2.0;
    lr.max(0.0)
}

/// Optional optimiser state: `u8` flag, then step, betas, eps and moments.
pub fn write_adam(w: &mut BlobWriter, adam: Option<&Adam>) {
    match adam {
        Some(adam) => {
            w.u8(1);
            w.u64(adam.step);
            w.f64(adam.config.beta1);
            w.f64(adam.config.beta2);
            w.f64(adam.config.eps);
            for m in &adam.m {
                w.f32_tensor(m);
            }
            for v in &adam.v {
                w.f32_tensor(v);
            }
        }
        None => w.u8(0),
    }
}

pub fn read_adam(r: &mut BlobReader, shapes: &[usize]) -> Result<Option<Adam>, BlobError> {
    match r.u8()? {
        0 => Ok(None),
        1 => {
            let step = r.u64()?;
            let config = AdamConfig {
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let mut adam = Adam::new(config, shapes);
            adam.step = step;
            for (i, m) in adam.m.iter_mut().enumerate() {
                r.f32_tensor_into(m, &format!("first moment {i}"))?;
            }
            for (i, v) in adam.v.iter_mut().enumerate() {
                r.f32_tensor_into(v, &format!("second moment {i}"))?;
            }
            Ok(Some(adam))
        }
        other => Err(BlobError::Invalid(format!("bad optimizer flag {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        adam.update(&mut [&mut p[..]], &[vec![0.0, 0.0]], 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = vec![0.0, 0.0, 0.0];
        let mut adam = Adam::new(AdamConfig::default(), &[3]);
        adam.update(&mut [&mut p[..]], &[vec![3.0, -0.01, 250.0]], 1e-3).unwrap();
        for (v, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - s * 1e-3).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        assert!(adam.update(&mut [&mut p[..]], &[vec![0.0; 3]], 1e-3).is_err());
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_adam() {
        // Hand-coded scalar Adam on f(x) = (x - 3)^2.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            expected.push(x);
        }
        let mut p = vec![0.0];
        let mut adam = Adam::new(AdamConfig::default(), &[1]);
        for e in expected {
            let g = vec![2.0 * (p[0] - 3.0)];
            adam.update(&mut [&mut p[..]], &[g], lr).unwrap();
            assert!((p[0] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 1e-3), 1e-3);
        assert!(cosine_lr(100, 100, 1e-3).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3) - 5e-4).abs() < 1e-15);
        let lrs: Vec<f64> = (0..=10).map(|e| cosine_lr(e, 10, 1.0)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
