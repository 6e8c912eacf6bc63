use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CcrError, Result};
use crate::scalar::Scalar;

/// A set of trainable tensors. Gradients use the same container type.
pub trait Parameters<T> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;
    /// A gradient buffer of matching shape filled with zeros.
    fn zeros_like(&self) -> Self;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OptimizerState<T> {
    pub step: u64,
    pub config: AdamWConfig,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new<P: Parameters<T>>(params: &P, config: AdamWConfig) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            step: 0,
            config,
            first_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
pub fn adamw_step<T: Scalar, P: Parameters<T>>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(CcrError::InvalidArgument(format!("learning rate {lr} < 0")));
    }
    let grad_tensors = grads.tensors();
    if grad_tensors.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(CcrError::TrainingAborted(format!(
            "non-finite gradient at optimizer step {}",
            state.step + 1
        )));
    }
    let mut tensors = params.tensors_mut();
    check_dim("adamw tensor count", state.first_moment.len(), tensors.len())?;
    check_dim("adamw gradient count", tensors.len(), grad_tensors.len())?;
    for ((p, g), m) in tensors.iter().zip(&grad_tensors).zip(&state.first_moment) {
        check_dim("adamw gradient shape", p.len(), g.len())?;
        check_dim("adamw moment shape", p.len(), m.len())?;
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = T::lit(1.0 - c.beta1.powi(t));
    let bc2 = T::lit(1.0 - c.beta2.powi(t));
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let (lr_t, eps) = (T::lit(lr), T::lit(c.eps));
    let decay = T::lit(1.0 - lr * c.weight_decay);

    for (k, p) in tensors.iter_mut().enumerate() {
        let g = grad_tensors[k];
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
