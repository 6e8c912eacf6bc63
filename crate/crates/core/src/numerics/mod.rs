//! Differentiable primitives shared by the adapter, router and objectives.

mod gradcheck;
mod optim;
mod schedule;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use optim::{adamw_step, AdamWConfig, OptimizerState, Parameters};
pub use schedule::{lr_at, Schedule};

use crate::error::{check_dim, CcrError, Result};
use crate::linalg::{dot, norm};
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Cached statistics of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: T,
}

/// Gradients of [`layer_norm`]. Summing several of these gives batch gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormGrads<T> {
    pub grad_x: Vec<T>,
    pub grad_gain: Vec<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Scalar> LayerNormGrads<T> {
    pub fn accumulate(&mut self, other: &LayerNormGrads<T>) {
        for (a, b) in self.grad_x.iter_mut().zip(&other.grad_x) {
            *a += *b;
        }
        for (a, b) in self.grad_gain.iter_mut().zip(&other.grad_gain) {
            *a += *b;
        }
        for (a, b) in self.grad_bias.iter_mut().zip(&other.grad_bias) {
            *a += *b;
        }
    }
}

fn layer_norm_stats<T: Scalar>(x: &[T], eps: T) -> Result<LayerNormCache<T>> {
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let denom = var + eps;
    if !(denom > T::zero()) {
        return Err(CcrError::DegenerateInput(
            "layer norm of a constant vector with eps = 0".into(),
        ));
    }
    let inv_std = T::one() / denom.sqrt();
    let normalized = x.iter().map(|&v| (v - mean) * inv_std).collect();
    Ok(LayerNormCache {
        normalized,
        inv_std,
    })
}

/// Affine layer normalisation with population variance.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Result<Vec<T>> {
    Ok(layer_norm_with_cache(x, gain, bias, eps)?.0)
}

pub fn layer_norm_with_cache<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    eps: T,
) -> Result<(Vec<T>, LayerNormCache<T>)> {
    check_dim("layer_norm gain", x.len(), gain.len())?;
    check_dim("layer_norm bias", x.len(), bias.len())?;
    if x.is_empty() {
        return Err(CcrError::DegenerateInput("layer norm of an empty vector".into()));
    }
    if eps < T::zero() {
        return Err(CcrError::InvalidArgument("layer norm eps must be >= 0".into()));
    }
    let cache = layer_norm_stats(x, eps)?;
    let out = cache
        .normalized
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&n, (&g, &b))| g * n + b)
        .collect();
    Ok((out, cache))
}

/// Backward pass of [`layer_norm`] for a single sample.
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    eps: T,
    upstream: &[T],
) -> Result<LayerNormGrads<T>> {
    let (_, cache) = layer_norm_with_cache(x, gain, bias, eps)?;
    check_dim("layer_norm upstream", x.len(), upstream.len())?;
    Ok(layer_norm_backward_cached(&cache, gain, upstream))
}

pub(crate) fn layer_norm_backward_cached<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &[T],
    upstream: &[T],
) -> LayerNormGrads<T> {
    let n = T::from_usize(upstream.len()).unwrap();
    let xhat = &cache.normalized;
    let dxhat: Vec<T> = upstream.iter().zip(gain).map(|(&u, &g)| u * g).collect();
    let sum_dxhat = dxhat.iter().copied().sum::<T>();
    let sum_dxhat_xhat = dot(&dxhat, xhat);
    let grad_x = dxhat
        .iter()
        .zip(xhat)
        .map(|(&d, &xh)| cache.inv_std / n * (n * d - sum_dxhat - xh * sum_dxhat_xhat))
        .collect();
    let grad_gain = upstream.iter().zip(xhat).map(|(&u, &xh)| u * xh).collect();
    LayerNormGrads {
        grad_x,
        grad_gain,
        grad_bias: upstream.to_vec(),
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `sigmoid(a) ⊙ b`
pub fn swiglu_gate<T: Scalar>(a: &[T], b: &[T]) -> Result<Vec<T>> {
    check_dim("swiglu_gate", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(&x, &y)| sigmoid(x) * y).collect())
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total = exps.iter().copied().sum::<T>();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln()
}

pub fn l2_normalize<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    let n = norm(x);
    if !(n > T::zero()) || !n.is_finite() {
        return Err(CcrError::DegenerateInput(
            "cannot normalise a zero or non-finite vector".into(),
        ));
    }
    Ok(x.iter().map(|&v| v / n).collect())
}

/// Gradient of `x / ‖x‖` given the normalised output and the input norm.
pub fn l2_normalize_backward<T: Scalar>(unit: &[T], input_norm: T, upstream: &[T]) -> Vec<T> {
    let proj = dot(unit, upstream);
    unit.iter()
        .zip(upstream)
        .map(|(&u, &g)| (g - u * proj) / input_norm)
        .collect()
}

pub fn cosine_sim<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    check_dim("cosine_sim", u.len(), v.len())?;
    let (nu, nv) = (norm(u), norm(v));
    if !(nu > T::zero()) || !(nv > T::zero()) {
        return Err(CcrError::DegenerateInput("cosine of a zero vector".into()));
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Gradients of `cos(u, v)` with respect to `u` and `v`.
pub fn cosine_sim_backward<T: Scalar>(u: &[T], v: &[T], upstream: T) -> (Vec<T>, Vec<T>) {
    let (nu, nv) = (norm(u), norm(v));
    let c = dot(u, v) / (nu * nv);
    let gu = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| upstream * (vi / (nu * nv) - c * ui / (nu * nu)))
        .collect();
    let gv = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| upstream * (ui / (nu * nv) - c * vi / (nv * nv)))
        .collect();
    (gu, gv)
}

pub fn all_finite<T: Scalar>(x: &[T]) -> bool {
    x.iter().all(|v| v.is_finite())
}
