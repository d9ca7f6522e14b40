//! Adam with bias correction.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Parameter};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient of the network weights. The
    /// mask and the graph temperature and threshold are never decayed.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
}

impl AdamState {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            m: Matrix::zeros(shape),
            v: Matrix::zeros(shape),
        }
    }
}

/// One Adam update. `step` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    param: &mut Matrix,
    grad: &Matrix,
    state: &mut AdamState,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.dim() != grad.dim() || param.dim() != state.m.dim() || param.dim() != state.v.dim() {
        return Err(Error::Dimension {
            op: "adam_step",
            left: param.dim(),
            right: grad.dim(),
        });
    }
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    Zip::from(param)
        .and(grad)
        .and(&mut state.m)
        .and(&mut state.v)
        .for_each(|p, &g, m, v| {
            let g = g + weight_decay * *p;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    Ok(())
}

/// Per-parameter step size and L2 penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamGroup {
    pub lr: f64,
    pub weight_decay: f64,
}

/// Adam over an ordered parameter list.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
    groups: Vec<ParamGroup>,
    step: u64,
}

impl Adam {
    /// Same learning rate for every parameter; weight decay from `config`.
    pub fn new(config: AdamConfig, params: &[&Parameter], lr: f64) -> Self {
        let group = ParamGroup {
            lr,
            weight_decay: config.weight_decay,
        };
        Self::with_groups(config, params, vec![group; params.len()])
    }

    pub fn with_groups(config: AdamConfig, params: &[&Parameter], groups: Vec<ParamGroup>) -> Self {
        assert_eq!(params.len(), groups.len());
        Self {
            config,
            states: params.iter().map(|p| AdamState::zeros(p.value.dim())).collect(),
            groups,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut Parameter>, grads: &[Matrix]) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::Contract("optimizer parameter count changed".into()));
        }
        self.step += 1;
        let c = self.config;
        for ((p, g), (s, gr)) in params
            .into_iter()
            .zip(grads)
            .zip(self.states.iter_mut().zip(&self.groups))
        {
            adam_step(&mut p.value, g, s, self.step, gr.lr, c.beta1, c.beta2, c.eps, gr.weight_decay)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = array![[1.0, -2.0, 0.5]];
        let g = array![[0.3, -4.0, 1e-3]];
        let mut s = AdamState::zeros((1, 3));
        let before = p.clone();
        adam_step(&mut p, &g, &mut s, 1, 0.01, 0.9, 0.999, 1e-8, 0.0).unwrap();
        for ((a, b), g) in p.iter().zip(before.iter()).zip(g.iter()) {
            let delta = a - b;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-7, "{delta}");
        }
    }

    #[test]
    fn zero_gradients_are_a_fixed_point() {
        let mut p = array![[0.7, -0.1]];
        let before = p.clone();
        let mut s = AdamState::zeros((1, 2));
        for t in 1..=50 {
            adam_step(&mut p, &Matrix::zeros((1, 2)), &mut s, t, 0.1, 0.9, 0.999, 1e-8, 0.0).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Matrix::zeros((1, 2));
        let mut s = AdamState::zeros((1, 2));
        assert!(adam_step(&mut p, &Matrix::zeros((2, 1)), &mut s, 1, 0.1, 0.9, 0.999, 1e-8, 0.0).is_err());
    }
}
