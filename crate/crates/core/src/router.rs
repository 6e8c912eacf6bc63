//! Script-aware hard routing: a one-hidden-layer MLP over the frozen visual
//! feature that picks exactly one adapter.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CcrError, Result};
use crate::linalg::Matrix;
use crate::numerics::{softmax, Parameters};
use crate::scalar::Scalar;
use crate::seed::rng_for;

pub const DEFAULT_HIDDEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RouterParams<T> {
    pub dim: usize,
    pub hidden: usize,
    pub num_scripts: usize,
    /// `hidden x dim`
    pub trunk_w: Matrix<T>,
    pub trunk_b: Vec<T>,
    /// `num_scripts x hidden`
    pub head_w: Matrix<T>,
    pub head_b: Vec<T>,
}

fn gaussian<T: Scalar>(rows: usize, cols: usize, scale: f64, rng: &mut crate::seed::Rng) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v * scale)
    })
}

fn fresh_head<T: Scalar>(hidden: usize, num_scripts: usize, seed: u64) -> Matrix<T> {
    let mut rng = rng_for(seed, "router-head", &[num_scripts as u64, hidden as u64]);
    gaussian(num_scripts, hidden, 1.0 / (hidden as f64).sqrt(), &mut rng)
}

impl<T: Scalar> RouterParams<T> {
    pub fn new(dim: usize, hidden: usize, num_scripts: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 || num_scripts == 0 {
            return Err(CcrError::InvalidArgument(
                "router needs dim, hidden width and script count > 0".into(),
            ));
        }
        let mut rng = rng_for(seed, "router-trunk", &[dim as u64, hidden as u64]);
        Ok(Self {
            dim,
            hidden,
            num_scripts,
            trunk_w: gaussian(hidden, dim, 1.0 / (dim as f64).sqrt(), &mut rng),
            trunk_b: vec![T::zero(); hidden],
            head_w: fresh_head(hidden, num_scripts, seed),
            head_b: vec![T::zero(); num_scripts],
        })
    }

    fn hidden_activations(&self, e: &[T]) -> Vec<T> {
        self.trunk_w
            .matvec(e)
            .into_iter()
            .zip(&self.trunk_b)
            .map(|(x, &b)| (x + b).tanh())
            .collect()
    }

    pub fn logits(&self, e: &[T]) -> Result<Vec<T>> {
        check_dim("router input", self.dim, e.len())?;
        let hid = self.hidden_activations(e);
        Ok(self
            .head_w
            .matvec(&hid)
            .into_iter()
            .zip(&self.head_b)
            .map(|(x, &b)| x + b)
            .collect())
    }
}

pub fn route_probs<T: Scalar>(e: &[T], params: &RouterParams<T>) -> Result<Vec<T>> {
    Ok(softmax(&params.logits(e)?))
}

/// Index of the largest probability; ties go to the lowest index.
pub fn route_select<T: Scalar>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn route<T: Scalar>(e: &[T], params: &RouterParams<T>) -> Result<usize> {
    // argmax over logits equals argmax over softmax
    Ok(route_select(&params.logits(e)?))
}

/// Cross-entropy on the script label. Gradients are accumulated into
/// `grads`; nothing flows back into the input.
pub fn router_ce_loss_into<T: Scalar>(
    e: &[T],
    true_script: usize,
    params: &RouterParams<T>,
    grads: &mut RouterParams<T>,
    weight: T,
) -> Result<T> {
    if true_script >= params.num_scripts {
        return Err(CcrError::InvalidArgument(format!(
            "script index {true_script} out of range for {} scripts",
            params.num_scripts
        )));
    }
    check_dim("router input", params.dim, e.len())?;
    let hid = params.hidden_activations(e);
    let logits: Vec<T> = params
        .head_w
        .matvec(&hid)
        .into_iter()
        .zip(&params.head_b)
        .map(|(x, &b)| x + b)
        .collect();
    let p = softmax(&logits);
    let loss = -p[true_script].max(T::min_positive_value()).ln();

    let mut dlogits = p;
    dlogits[true_script] -= T::one();
    dlogits.iter_mut().for_each(|d| *d *= weight);
    grads.head_w.add_outer(&dlogits, &hid, T::one());
    for (g, d) in grads.head_b.iter_mut().zip(&dlogits) {
        *g += *d;
    }
    let dhid = params.head_w.matvec_t(&dlogits);
    let dpre: Vec<T> = dhid
        .iter()
        .zip(&hid)
        .map(|(&d, &h)| d * (T::one() - h * h))
        .collect();
    grads.trunk_w.add_outer(&dpre, e, T::one());
    for (g, d) in grads.trunk_b.iter_mut().zip(&dpre) {
        *g += *d;
    }
    Ok(loss)
}

pub fn router_ce_loss<T: Scalar>(
    e: &[T],
    true_script: usize,
    params: &RouterParams<T>,
) -> Result<(T, RouterParams<T>)> {
    let mut grads = params.zeros_like();
    let loss = router_ce_loss_into(e, true_script, params, &mut grads, T::one())?;
    Ok((loss, grads))
}

/// Keeps the trunk and draws a fresh head with one more output.
pub fn router_grow<T: Scalar>(params: &RouterParams<T>, new_t: usize, seed: u64) -> Result<RouterParams<T>> {
    if new_t != params.num_scripts + 1 {
        return Err(CcrError::InvalidArgument(format!(
            "router can only grow by one script ({} -> {new_t})",
            params.num_scripts
        )));
    }
    Ok(RouterParams {
        dim: params.dim,
        hidden: params.hidden,
        num_scripts: new_t,
        trunk_w: params.trunk_w.clone(),
        trunk_b: params.trunk_b.clone(),
        head_w: fresh_head(params.hidden, new_t, seed),
        head_b: vec![T::zero(); new_t],
    })
}

impl<T: Scalar> Parameters<T> for RouterParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![&self.trunk_w.data, &self.trunk_b, &self.head_w.data, &self.head_b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.trunk_w.data,
            &mut self.trunk_b,
            &mut self.head_w.data,
            &mut self.head_b,
        ]
    }

    fn zeros_like(&self) -> Self {
        RouterParams {
            dim: self.dim,
            hidden: self.hidden,
            num_scripts: self.num_scripts,
            trunk_w: Matrix::zeros(self.hidden, self.dim),
            trunk_b: vec![T::zero(); self.hidden],
            head_w: Matrix::zeros(self.num_scripts, self.hidden),
            head_b: vec![T::zero(); self.num_scripts],
        }
    }
}

impl<T: Scalar> RouterParams<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn unflatten(&mut self, flat: &[T]) -> Result<()> {
        check_dim("router flat parameters", self.param_count(), flat.len())?;
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::Rng as _;

    #[test]
    fn single_script_router_is_certain() {
        let r = RouterParams::<f64>::new(6, 8, 1, 3).unwrap();
        assert_eq!(route_probs(&[0.1, -2.0, 3.0, 0.0, 1.0, 0.5], &r).unwrap(), vec![1.0]);
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut r = RouterParams::<f64>::new(4, 5, 4, 3).unwrap();
        r.head_w = Matrix::zeros(4, 5);
        let p = route_probs(&[1.0, 2.0, 3.0, 4.0], &r).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let (loss, _) = router_ce_loss(&[1.0, 2.0, 3.0, 4.0], 2, &r).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn select_examples() {
        assert_eq!(route_select(&[0.2, 0.7, 0.1]), 1);
        assert_eq!(route_select(&[0.5, 0.5]), 0);
        assert_eq!(route_select(&[1.0]), 0);
    }

    #[test]
    fn certain_prediction_has_zero_loss() {
        let mut r = RouterParams::<f64>::new(2, 3, 2, 0).unwrap();
        r.head_w = Matrix::zeros(2, 3);
        r.head_b = vec![0.0, 1e4];
        let (loss, _) = router_ce_loss(&[0.3, 0.4], 1, &r).unwrap();
        assert_eq!(loss, 0.0);
        assert!(router_ce_loss(&[0.3, 0.4], 2, &r).is_err());
    }

    #[test]
    fn ce_gradients_match_finite_differences() {
        let mut rng = rng_for(2, "test", &[]);
        let mut r = RouterParams::<f64>::new(6, 7, 3, 1).unwrap();
        r.trunk_b.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        r.head_b.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        let e: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (_, g) = router_ce_loss(&e, 1, &r).unwrap();
        let f = |flat: &[f64]| {
            let mut q = r.clone();
            q.unflatten(flat).unwrap();
            router_ce_loss(&e, 1, &q).unwrap().0
        };
        let rep = finite_diff_check(f, &r.flatten(), &g.flatten(), 1e-5);
        assert!(rep.passes(1e-4), "{rep:?}");
    }

    #[test]
    fn grow_keeps_trunk_and_is_seeded() {
        let r = RouterParams::<f32>::new(4, 6, 1, 0).unwrap();
        let a = router_grow(&r, 2, 17).unwrap();
        let b = router_grow(&r, 2, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trunk_w, r.trunk_w);
        assert_eq!(route_probs(&[1.0, 0.0, 0.0, 0.0], &a).unwrap().len(), 2);
        assert!(router_grow(&r, 3, 0).is_err());
    }
}
