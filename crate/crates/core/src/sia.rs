//! Script-interface adapter: a per-script low-rank gated residual correction
//! applied between the frozen feature extractor and the frozen post map.
//!
//! ```text
//! h  = LN(e)
//! a  = W1 h,  b = W2 h            (D -> r)
//! z  = sigmoid(a) ⊙ b
//! Δe = W_up z                     (r -> D)
//! e' = e + α Δe
//! ```

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CcrError, Result};
use crate::linalg::{dot, Matrix};
use crate::numerics::{
    layer_norm_backward_cached, layer_norm_with_cache, sigmoid, LayerNormCache, Parameters,
    LAYER_NORM_EPS,
};
use crate::scalar::Scalar;
use crate::seed::rng_for;

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SiaParams<T> {
    pub script_id: usize,
    pub dim: usize,
    pub rank: usize,
    pub ln_gain: Vec<T>,
    pub ln_bias: Vec<T>,
    /// Gate projection, `rank x dim`.
    pub w1: Matrix<T>,
    /// Value projection, `rank x dim`.
    pub w2: Matrix<T>,
    /// Up projection, `dim x rank`.
    pub w_up: Matrix<T>,
    pub alpha: T,
}

/// Intermediates of one forward call, consumed by [`sia_backward`].
#[derive(Debug)]
pub struct SiaTape<T> {
    script_id: usize,
    ln: LayerNormCache<T>,
    h: Vec<T>,
    b: Vec<T>,
    gate: Vec<T>,
    z: Vec<T>,
    delta: Vec<T>,
}

impl<T: Scalar> SiaTape<T> {
    /// The residual correction `Δe` before scaling.
    pub fn delta(&self) -> &[T] {
        &self.delta
    }
}

pub fn sia_init<T: Scalar>(dim: usize, rank: usize, seed: u64) -> Result<SiaParams<T>> {
    sia_init_for_script(dim, rank, seed, 0)
}

/// Seeded initialisation. `W_up` is zero so a fresh adapter is the identity.
pub fn sia_init_for_script<T: Scalar>(
    dim: usize,
    rank: usize,
    seed: u64,
    script_id: usize,
) -> Result<SiaParams<T>> {
    if rank == 0 || rank >= dim {
        return Err(CcrError::InvalidArgument(format!(
            "adapter rank must satisfy 0 < r < D (got r={rank}, D={dim})"
        )));
    }
    let mut rng = rng_for(seed, "sia-init", &[dim as u64, rank as u64]);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut draw = |rows, cols| {
        Matrix::from_fn(rows, cols, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::lit(v * scale)
        })
    };
    let w1 = draw(rank, dim);
    let w2 = draw(rank, dim);
    Ok(SiaParams {
        script_id,
        dim,
        rank,
        ln_gain: vec![T::one(); dim],
        ln_bias: vec![T::zero(); dim],
        w1,
        w2,
        w_up: Matrix::zeros(dim, rank),
        alpha: T::lit(DEFAULT_ALPHA),
    })
}

pub fn sia_forward<T: Scalar>(e: &[T], params: &SiaParams<T>) -> Result<(Vec<T>, SiaTape<T>)> {
    check_dim("sia_forward input", params.dim, e.len())?;
    let (h, ln) = layer_norm_with_cache(e, &params.ln_gain, &params.ln_bias, T::lit(LAYER_NORM_EPS))?;
    let a = params.w1.matvec(&h);
    let b = params.w2.matvec(&h);
    let gate: Vec<T> = a.iter().map(|&x| sigmoid(x)).collect();
    let z: Vec<T> = gate.iter().zip(&b).map(|(&g, &v)| g * v).collect();
    let delta = params.w_up.matvec(&z);
    let out = e
        .iter()
        .zip(&delta)
        .map(|(&x, &d)| x + params.alpha * d)
        .collect();
    Ok((
        out,
        SiaTape {
            script_id: params.script_id,
            ln,
            h,
            b,
            gate,
            z,
            delta,
        },
    ))
}

/// Forward without keeping the tape.
pub fn sia_apply<T: Scalar>(e: &[T], params: &SiaParams<T>) -> Result<Vec<T>> {
    Ok(sia_forward(e, params)?.0)
}

/// Gradients with respect to the input and every adapter parameter.
pub fn sia_backward<T: Scalar>(
    upstream: &[T],
    tape: SiaTape<T>,
    params: &SiaParams<T>,
) -> Result<(Vec<T>, SiaParams<T>)> {
    let mut grads = params.zeros_like();
    let grad_e = sia_backward_into(upstream, tape, params, &mut grads)?;
    Ok((grad_e, grads))
}

/// Like [`sia_backward`] but accumulates parameter gradients into `grads`.
pub fn sia_backward_into<T: Scalar>(
    upstream: &[T],
    tape: SiaTape<T>,
    params: &SiaParams<T>,
    grads: &mut SiaParams<T>,
) -> Result<Vec<T>> {
    check_dim("sia_backward upstream", params.dim, upstream.len())?;
    if tape.script_id != params.script_id || tape.h.len() != params.dim || tape.z.len() != params.rank {
        return Err(CcrError::Protocol(format!(
            "tape recorded for adapter {} replayed against adapter {}",
            tape.script_id, params.script_id
        )));
    }
    grads.alpha += dot(upstream, &tape.delta);
    let d_delta: Vec<T> = upstream.iter().map(|&g| g * params.alpha).collect();
    grads.w_up.add_outer(&d_delta, &tape.z, T::one());
    let dz = params.w_up.matvec_t(&d_delta);
    let db: Vec<T> = dz.iter().zip(&tape.gate).map(|(&d, &s)| d * s).collect();
    let da: Vec<T> = dz
        .iter()
        .zip(tape.b.iter().zip(&tape.gate))
        .map(|(&d, (&b, &s))| d * b * s * (T::one() - s))
        .collect();
    grads.w1.add_outer(&da, &tape.h, T::one());
    grads.w2.add_outer(&db, &tape.h, T::one());
    let mut dh = params.w1.matvec_t(&da);
    for (x, y) in dh.iter_mut().zip(params.w2.matvec_t(&db)) {
        *x += y;
    }
    let ln = layer_norm_backward_cached(&tape.ln, &params.ln_gain, &dh);
    for (g, d) in grads.ln_gain.iter_mut().zip(&ln.grad_gain) {
        *g += *d;
    }
    for (g, d) in grads.ln_bias.iter_mut().zip(&ln.grad_bias) {
        *g += *d;
    }
    Ok(upstream
        .iter()
        .zip(&ln.grad_x)
        .map(|(&u, &g)| u + g)
        .collect())
}

impl<T: Scalar> Parameters<T> for SiaParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            &self.ln_gain,
            &self.ln_bias,
            &self.w1.data,
            &self.w2.data,
            &self.w_up.data,
            std::slice::from_ref(&self.alpha),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.ln_gain,
            &mut self.ln_bias,
            &mut self.w1.data,
            &mut self.w2.data,
            &mut self.w_up.data,
            std::slice::from_mut(&mut self.alpha),
        ]
    }

    fn zeros_like(&self) -> Self {
        SiaParams {
            script_id: self.script_id,
            dim: self.dim,
            rank: self.rank,
            ln_gain: vec![T::zero(); self.dim],
            ln_bias: vec![T::zero(); self.dim],
            w1: Matrix::zeros(self.rank, self.dim),
            w2: Matrix::zeros(self.rank, self.dim),
            w_up: Matrix::zeros(self.dim, self.rank),
            alpha: T::zero(),
        }
    }
}

impl<T: Scalar> SiaParams<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn unflatten(&mut self, flat: &[T]) -> Result<()> {
        check_dim("sia flat parameters", self.param_count(), flat.len())?;
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::Rng as _;

    fn hand_params() -> SiaParams<f64> {
        let mut p = sia_init::<f64>(4, 2, 0).unwrap();
        p.w1 = Matrix::from_rows(2, 4, vec![0.5, -0.2, 0.1, 0.0, 0.3, 0.3, -0.4, 0.2]).unwrap();
        p.w2 = Matrix::from_rows(2, 4, vec![-0.1, 0.6, 0.2, 0.1, 0.4, -0.5, 0.0, 0.3]).unwrap();
        p.w_up = Matrix::from_rows(4, 2, vec![1.0, 0.0, 0.5, -0.5, 0.0, 2.0, -1.0, 1.0]).unwrap();
        p.ln_gain = vec![1.0, 0.8, 1.2, 1.0];
        p.ln_bias = vec![0.0, 0.1, 0.0, -0.1];
        p.alpha = 0.5;
        p
    }

    /// Scalar-by-scalar evaluation, independent of the matrix helpers.
    fn scalar_oracle(e: &[f64], p: &SiaParams<f64>) -> Vec<f64> {
        let d = e.len();
        let mean = e.iter().sum::<f64>() / d as f64;
        let var = e.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
        let mut h = vec![0.0; d];
        for i in 0..d {
            h[i] = p.ln_gain[i] * (e[i] - mean) / (var + 1e-5).sqrt() + p.ln_bias[i];
        }
        let mut z = vec![0.0; p.rank];
        for k in 0..p.rank {
            let mut a = 0.0;
            let mut b = 0.0;
            for i in 0..d {
                a += p.w1.data[k * d + i] * h[i];
                b += p.w2.data[k * d + i] * h[i];
            }
            z[k] = b / (1.0 + (-a).exp());
        }
        let mut out = e.to_vec();
        for i in 0..d {
            let mut acc = 0.0;
            for k in 0..p.rank {
                acc += p.w_up.data[i * p.rank + k] * z[k];
            }
            out[i] += p.alpha * acc;
        }
        out
    }

    #[test]
    fn zero_up_projection_is_identity() {
        let mut p = hand_params();
        p.w_up = Matrix::zeros(4, 2);
        let e = [0.3, -2.0, 1.5, 0.25];
        assert_eq!(sia_apply(&e, &p).unwrap(), e.to_vec());
    }

    #[test]
    fn zero_alpha_is_identity() {
        let mut p = hand_params();
        p.alpha = 0.0;
        let e = [0.3, -2.0, 1.5, 0.25];
        assert_eq!(sia_apply(&e, &p).unwrap(), e.to_vec());
    }

    #[test]
    fn hand_filled_case_matches_scalar_oracle() {
        let p = hand_params();
        let e = [1.0, 0.0, 0.0, 0.0];
        let got = sia_apply(&e, &p).unwrap();
        let want = scalar_oracle(&e, &p);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
        }
        assert!(got.iter().zip(&e).any(|(g, x)| (g - x).abs() > 1e-3));
    }

    #[test]
    fn init_is_deterministic_and_validates_rank() {
        let a = sia_init::<f32>(16, 4, 9).unwrap();
        let b = sia_init::<f32>(16, 4, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.alpha, 0.5);
        assert!(a.w_up.data.iter().all(|&v| v == 0.0));
        assert!(sia_init::<f32>(64, 64, 0).is_err());
        assert!(sia_init::<f32>(8, 0, 0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = hand_params();
        let (_, tape) = sia_forward(&[0.5, 1.0, -1.0, 2.0], &p).unwrap();
        let (ge, gp) = sia_backward(&[0.0; 4], tape, &p).unwrap();
        assert!(ge.iter().all(|&v| v == 0.0));
        assert!(gp.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alpha_gradient_is_inner_product_with_delta() {
        let p = hand_params();
        let e = [0.5, 1.0, -1.0, 2.0];
        let up = [0.3, -0.7, 0.2, 1.1];
        let (_, tape) = sia_forward(&e, &p).unwrap();
        let delta = tape.delta().to_vec();
        let (_, g) = sia_backward(&up, tape, &p).unwrap();
        let want: f64 = up.iter().zip(&delta).map(|(u, d)| u * d).sum();
        assert!((g.alpha - want).abs() < 1e-14);
        // the same quantity from the forward map directly
        let f = |alpha: f64| {
            let mut q = p.clone();
            q.alpha = alpha;
            dot(&sia_apply(&e, &q).unwrap(), &up)
        };
        let fd = (f(0.5 + 1e-6) - f(0.5 - 1e-6)) / 2e-6;
        assert!((fd - want).abs() < 1e-8);
    }

    #[test]
    fn mismatched_tape_is_a_protocol_error() {
        let p = hand_params();
        let mut other = p.clone();
        other.script_id = 3;
        let (_, tape) = sia_forward(&[0.5, 1.0, -1.0, 2.0], &p).unwrap();
        assert!(matches!(
            sia_backward(&[1.0; 4], tape, &other),
            Err(CcrError::Protocol(_))
        ));
    }

    #[test]
    fn randomized_gradients_match_finite_differences() {
        let mut rng = rng_for(11, "test", &[]);
        let (d, r) = (8, 3);
        let mut p = sia_init::<f64>(d, r, 5).unwrap();
        p.w_up = Matrix::from_fn(d, r, |_, _| rng.random_range(-0.5..0.5));
        p.ln_gain.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
        p.ln_bias.iter_mut().for_each(|g| *g = rng.random_range(-0.2..0.2));
        let e: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let up: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();

        let (_, tape) = sia_forward(&e, &p).unwrap();
        let (ge, gp) = sia_backward(&up, tape, &p).unwrap();

        let f_e = |x: &[f64]| dot(&sia_apply(x, &p).unwrap(), &up);
        assert!(finite_diff_check(f_e, &e, &ge, 1e-5).passes(1e-4));

        let f_p = |flat: &[f64]| {
            let mut q = p.clone();
            q.unflatten(flat).unwrap();
            dot(&sia_apply(&e, &q).unwrap(), &up)
        };
        let report = finite_diff_check(f_p, &p.flatten(), &gp.flatten(), 1e-5);
        assert!(report.passes(1e-4), "{report:?}");
    }
}
