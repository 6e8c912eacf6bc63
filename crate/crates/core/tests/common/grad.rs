//! Finite-difference checks of every hand-written backward pass.

use glyphret::data::Modality;
use glyphret::linalg::Matrix;
use glyphret::numerics::{finite_diff_check, layer_norm, layer_norm_backward, Parameters, LAYER_NORM_EPS};
use glyphret::objectives::{infonce_loss, ContrastiveBatch};
use glyphret::provider::{PostMap, PostMapSpec};
use glyphret::router::{router_ce_loss, RouterParams};
use glyphret::seed::{rng_for, Rng};
use glyphret::sia::{sia_apply, sia_backward, sia_backward_into, sia_forward, sia_init_for_script, SiaParams};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn vector(n: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| scale * normal(rng)).collect()
}

fn unit(n: usize, rng: &mut Rng) -> Vec<f64> {
    let v = vector(n, 1.0, rng);
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / s).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative error with a floor on the denominator, so that near-zero
/// gradients are compared absolutely.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

fn check(f: impl Fn(&[f64]) -> f64, params: &[f64], analytic: &[f64]) -> f64 {
    let r = finite_diff_check(f, params, analytic, STEP);
    rel_error(analytic, &r.numeric)
}

/// A SIA with every parameter group perturbed away from its initial value.
fn random_sia(dim: usize, rank: usize, seed: u64, rng: &mut Rng) -> SiaParams<f64> {
    let mut p = sia_init_for_script::<f64>(dim, rank, seed, 0).unwrap();
    p.ln_gain = p.ln_gain.iter().map(|g| g + 0.3 * normal(rng)).collect();
    p.ln_bias = vector(dim, 0.3, rng);
    p.w_up = Matrix::from_fn(dim, rank, |_, _| 0.5 * normal(rng));
    p.alpha = 0.2 + rng.random::<f64>();
    p
}

pub fn layer_norm_case(seed: u64) -> f64 {
    let mut rng = rng_for(seed, "grad-ln", &[]);
    let n = 3 + (seed % 10) as usize;
    let x = vector(n, 2.0, &mut rng);
    let gain: Vec<f64> = (0..n).map(|_| 1.0 + 0.3 * normal(&mut rng)).collect();
    let bias = vector(n, 0.3, &mut rng);
    let w = vector(n, 1.0, &mut rng);
    let g = layer_norm_backward(&x, &gain, &bias, LAYER_NORM_EPS, &w).unwrap();
    let params = [x.clone(), gain.clone(), bias.clone()].concat();
    let analytic = [g.grad_x, g.grad_gain, g.grad_bias].concat();
    check(
        |p| {
            let out = layer_norm(&p[..n], &p[n..2 * n], &p[2 * n..], LAYER_NORM_EPS).unwrap();
            dot(&out, &w)
        },
        &params,
        &analytic,
    )
}

pub fn sia_case(seed: u64) -> f64 {
    let mut rng = rng_for(seed, "grad-sia", &[]);
    let dim = 5 + (seed % 6) as usize;
    let rank = 1 + (seed as usize) % (dim - 1);
    let base = random_sia(dim, rank, seed, &mut rng);
    let e = vector(dim, 1.0, &mut rng);
    let w = vector(dim, 1.0, &mut rng);
    let (_, tape) = sia_forward(&e, &base).unwrap();
    let (ge, gp) = sia_backward(&w, tape, &base).unwrap();
    let params = [e.clone(), base.flatten()].concat();
    let analytic = [ge, gp.flatten()].concat();
    check(
        |p| {
            let mut s = base.clone();
            s.unflatten(&p[dim..]).unwrap();
            dot(&sia_apply(&p[..dim], &s).unwrap(), &w)
        },
        &params,
        &analytic,
    )
}

pub fn router_case(seed: u64) -> f64 {
    let mut rng = rng_for(seed, "grad-router", &[]);
    let dim = 4 + (seed % 5) as usize;
    let hidden = 3 + (seed % 7) as usize;
    let t = 1 + (seed % 5) as usize;
    let mut r = RouterParams::<f64>::new(dim, hidden, t, seed).unwrap();
    r.trunk_b = vector(hidden, 0.3, &mut rng);
    r.head_b = vector(t, 0.3, &mut rng);
    let e = vector(dim, 1.0, &mut rng);
    let label = rng.random_range(0..t);
    let (_, g) = router_ce_loss(&e, label, &r).unwrap();
    check(
        |p| {
            let mut s = r.clone();
            s.unflatten(p).unwrap();
            router_ce_loss(&e, label, &s).unwrap().0
        },
        &r.flatten(),
        &g.flatten(),
    )
}

/// Loss of the Phase-I chain: SIA, fixed post map, normalisation and
/// InfoNCE, with some image candidates trainable and some text constant.
fn chain_loss(
    sia: &SiaParams<f64>,
    post: &PostMap<f64>,
    anchors: &[Vec<f64>],
    cands: &[(Vec<f64>, Modality)],
    tau: f64,
) -> f64 {
    let a: Vec<Vec<f64>> = anchors.iter().map(|e| post.apply(&sia_apply(e, sia).unwrap()).unwrap()).collect();
    let c: Vec<Vec<f64>> = cands
        .iter()
        .map(|(v, k)| match k {
            Modality::Image => post.apply(&sia_apply(v, sia).unwrap()).unwrap(),
            _ => v.clone(),
        })
        .collect();
    let kinds = cands.iter().map(|c| c.1).collect();
    let trainable = cands.iter().map(|c| c.1 == Modality::Image).collect();
    infonce_loss(&ContrastiveBatch::new(a, c, kinds, trainable).unwrap(), tau).unwrap().loss
}

pub fn chain_case(seed: u64) -> f64 {
    let mut rng = rng_for(seed, "grad-chain", &[]);
    let dim = 6 + (seed % 4) as usize;
    let rank = 2 + (seed % 3) as usize;
    let b = 3 + (seed % 3) as usize;
    let tau = 0.1 + 0.4 * rng.random::<f64>();
    let sia = random_sia(dim, rank, seed, &mut rng);
    let post = PostMap::<f64>::new(PostMapSpec::Orthogonal { seed }, dim);
    let anchors: Vec<Vec<f64>> = (0..b).map(|_| vector(dim, 1.0, &mut rng)).collect();
    let cands: Vec<(Vec<f64>, Modality)> = (0..b)
        .map(|j| match j % 3 {
            0 => (unit(dim, &mut rng), Modality::Meaning),
            1 => (vector(dim, 1.0, &mut rng), Modality::Image),
            _ => (unit(dim, &mut rng), Modality::Shape),
        })
        .collect();

    // analytic gradient
    let mut grads = sia.zeros_like();
    let mut fwd_a = Vec::new();
    for e in &anchors {
        let (x, tape) = sia_forward(e, &sia).unwrap();
        let (u, cache) = post.forward(&x).unwrap();
        fwd_a.push((u, cache, tape));
    }
    let mut fwd_c = Vec::new();
    for (v, k) in &cands {
        if *k == Modality::Image {
            let (x, tape) = sia_forward(v, &sia).unwrap();
            let (u, cache) = post.forward(&x).unwrap();
            fwd_c.push(Some((u, cache, tape)));
        } else {
            fwd_c.push(None);
        }
    }
    let batch = ContrastiveBatch::new(
        fwd_a.iter().map(|f| f.0.clone()).collect(),
        cands
            .iter()
            .zip(&fwd_c)
            .map(|((v, _), f)| f.as_ref().map_or(v.clone(), |f| f.0.clone()))
            .collect(),
        cands.iter().map(|c| c.1).collect(),
        cands.iter().map(|c| c.1 == Modality::Image).collect(),
    )
    .unwrap();
    let out = infonce_loss(&batch, tau).unwrap();
    let mut grad_inputs = Vec::new();
    for ((u, cache, tape), g) in fwd_a.into_iter().zip(&out.anchor_grads) {
        let gx = post.backward(&u, &cache, g);
        grad_inputs.extend(sia_backward_into(&gx, tape, &sia, &mut grads).unwrap());
    }
    for (f, g) in fwd_c.into_iter().zip(&out.candidate_grads) {
        if let (Some((u, cache, tape)), Some(g)) = (f, g) {
            let gx = post.backward(&u, &cache, g);
            sia_backward_into(&gx, tape, &sia, &mut grads).unwrap();
        }
    }

    let params = [anchors.concat(), sia.flatten()].concat();
    let analytic = [grad_inputs, grads.flatten()].concat();
    let n_in = b * dim;
    check(
        |p| {
            let mut s = sia.clone();
            s.unflatten(&p[n_in..]).unwrap();
            let a: Vec<Vec<f64>> = p[..n_in].chunks(dim).map(|c| c.to_vec()).collect();
            chain_loss(&s, &post, &a, &cands, tau)
        },
        &params,
        &analytic,
    )
}

/// Worst relative error of each check family over `seeds` seeds.
pub fn gradient_suite(seeds: u64) -> Vec<(&'static str, f64)> {
    let families: [(&'static str, fn(u64) -> f64); 4] = [
        ("layer_norm", layer_norm_case),
        ("sia", sia_case),
        ("router_ce", router_case),
        ("sia_postmap_infonce", chain_case),
    ];
    families
        .iter()
        .map(|(name, f)| (*name, (0..seeds).map(f).fold(0.0, f64::max)))
        .collect()
}
