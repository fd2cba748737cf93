//! Bias-corrected Adam over flat parameter groups, serializable for resume.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient at group {group}, index {index}")]
    NonFiniteGradient { group: usize, index: usize },
    #[error("group {group}: parameter length {param} != gradient length {grad}")]
    ShapeMismatch {
        group: usize,
        param: usize,
        grad: usize,
    },
    #[error("optimizer state has {expected} groups, got {got}")]
    GroupCountMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, group_sizes: &[usize]) -> Self {
        AdamState {
            cfg,
            t: 0,
            m: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over all groups. Gradients must be finite; the step
    /// counter advances only when every check passes, so a failed call
    /// leaves the state untouched.
    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<(), OptimError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(OptimError::GroupCountMismatch {
                expected: self.m.len(),
                got: params.len().max(grads.len()),
            });
        }
        for (gi, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[gi].len() {
                return Err(OptimError::ShapeMismatch {
                    group: gi,
                    param: p.len(),
                    grad: g.len(),
                });
            }
            if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                return Err(OptimError::NonFiniteGradient { group: gi, index });
            }
        }
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (gi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[gi];
            let v = &mut self.v[gi];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut state = AdamState::new(AdamConfig::with_lr(0.01), &[3]);
        let mut params = vec![vec![0.5, -0.5, 0.0]];
        state
            .step(&mut params, &[vec![2.0, -3.0, 0.4]])
            .unwrap();
        // m_hat / (sqrt(v_hat) + eps) ~ sign(g) on the first step.
        assert!((params[0][0] - (0.5 - 0.01)).abs() < 1e-6);
        assert!((params[0][1] - (-0.5 + 0.01)).abs() < 1e-6);
        assert!((params[0][2] - (0.0 - 0.01)).abs() < 1e-6);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_means_no_motion() {
        let mut state = AdamState::new(AdamConfig::with_lr(0.1), &[2]);
        let mut params = vec![vec![0.3, -0.2]];
        for _ in 0..5 {
            state.step(&mut params, &[vec![0.0, 0.0]]).unwrap();
        }
        assert_eq!(params[0], vec![0.3, -0.2]);
    }

    #[test]
    fn nan_gradient_rejected_without_advancing() {
        let mut state = AdamState::new(AdamConfig::with_lr(0.1), &[2]);
        let mut params = vec![vec![0.0, 0.0]];
        let err = state.step(&mut params, &[vec![1.0, f64::NAN]]);
        assert!(matches!(
            err,
            Err(OptimError::NonFiniteGradient { group: 0, index: 1 })
        ));
        assert_eq!(state.step_count(), 0);
        assert_eq!(params[0], vec![0.0, 0.0]);
    }

    #[test]
    fn state_serde_round_trip_preserves_trajectory() {
        let cfg = AdamConfig::with_lr(0.05);
        let mut a = AdamState::new(cfg, &[2]);
        let mut pa = vec![vec![1.0, -1.0]];
        a.step(&mut pa, &[vec![0.5, 0.25]]).unwrap();

        let json = serde_json::to_string(&a).unwrap();
        let mut b: AdamState = serde_json::from_str(&json).unwrap();
        let mut pb = pa.clone();

        a.step(&mut pa, &[vec![-0.1, 0.7]]).unwrap();
        b.step(&mut pb, &[vec![-0.1, 0.7]]).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = AdamState::new(AdamConfig::with_lr(0.1), &[2]);
        let mut params = vec![vec![0.0, 0.0]];
        assert!(matches!(
            state.step(&mut params, &[vec![1.0]]),
            Err(OptimError::ShapeMismatch { .. })
        ));
    }
}
