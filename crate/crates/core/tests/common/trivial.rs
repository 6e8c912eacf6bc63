//! Closed-form values the engine must hit exactly.

use glyphret::data::Modality;
use glyphret::engine::{compute_aa, compute_fgt, AccuracyMatrix};
use glyphret::objectives::{infonce_loss, ContrastiveBatch};
use glyphret::router::route_select;
use glyphret::seed::rng_for;
use glyphret::sia::{sia_apply, sia_init};
use rand_distr::{Distribution, StandardNormal};

pub const EXACT: f64 = 1e-9;

fn image_batch(anchors: Vec<Vec<f64>>, cands: Vec<Vec<f64>>) -> ContrastiveBatch<f64> {
    let b = anchors.len();
    ContrastiveBatch::new(anchors, cands, vec![Modality::Image; b], vec![true; b]).unwrap()
}

/// A batch of one has nothing to contrast against.
pub fn single_pair_loss() -> f64 {
    let a = vec![0.6, 0.8];
    let c = vec![1.0, 0.0];
    infonce_loss(&image_batch(vec![a], vec![c]), 0.1).unwrap().loss
}

/// With every similarity equal the loss is `ln B` for any temperature.
pub fn uniform_similarity_gap(b: usize, tau: f64) -> f64 {
    let v = vec![1.0, 0.0, 0.0];
    let batch = image_batch(vec![v.clone(); b], vec![v; b]);
    (infonce_loss(&batch, tau).unwrap().loss - (b as f64).ln()).abs()
}

/// Largest coordinate change a freshly initialised adapter makes.
pub fn fresh_sia_max_change(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let dim = 4 + (seed % 13) as usize;
        let p = sia_init::<f64>(dim, 1 + (seed as usize) % (dim - 1), seed).unwrap();
        let mut rng = rng_for(seed, "fresh-sia", &[]);
        let e: Vec<f64> = (0..dim).map(|_| { let x: f64 = StandardNormal.sample(&mut rng); 3.0 * x }).collect();
        let out = sia_apply(&e, &p).unwrap();
        for (x, y) in e.iter().zip(&out) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

pub fn tie_break_ok() -> bool {
    route_select(&[0.25f64, 0.5, 0.5, 0.25]) == 1
        && route_select(&[0.5f64, 0.5]) == 0
        && route_select(&[1.0f64 / 3.0; 3]) == 0
        && route_select(&[0.1f64, 0.2, 0.7]) == 2
}

/// AA and FGT of hand-worked matrices: (matrix, t, expected AA_t, expected FGT_t).
pub fn metric_cases() -> Vec<(Vec<Vec<f64>>, usize, f64, Option<f64>)> {
    vec![
        (vec![vec![1.0], vec![0.5, 1.0]], 2, 0.75, Some(0.5)),
        (vec![vec![0.8]], 1, 0.8, None),
        (
            vec![vec![0.9], vec![0.6, 0.8], vec![0.3, 0.7, 0.5]],
            3,
            0.5,
            // stage 1 drops 0.9 -> 0.3, stage 2 drops 0.8 -> 0.7
            Some((0.6 + 0.1) / 2.0),
        ),
        // a stage that improves later yields a negative term
        (vec![vec![0.4], vec![0.9, 0.6]], 2, 0.75, Some(-0.5)),
    ]
}

pub fn metric_errors() -> Vec<String> {
    let mut errs = Vec::new();
    for (rows, t, aa, fgt) in metric_cases() {
        let m = AccuracyMatrix::from_rows(rows.clone()).unwrap();
        let got = compute_aa(&m, t).unwrap();
        if (got - aa).abs() > EXACT {
            errs.push(format!("AA_{t} of {rows:?} is {got}, expected {aa}"));
        }
        match (fgt, compute_fgt(&m, t)) {
            (Some(f), Ok(g)) if (g - f).abs() <= EXACT => {}
            (None, Err(_)) => {}
            (f, g) => errs.push(format!("FGT_{t} of {rows:?} is {g:?}, expected {f:?}")),
        }
    }
    errs
}

/// Every check of the suite as (name, passed, detail).
pub fn trivial_suite() -> Vec<(&'static str, bool, String)> {
    let single = single_pair_loss();
    let gaps: f64 = [(2, 0.1), (7, 0.05), (32, 1.0), (128, 0.07)]
        .into_iter()
        .map(|(b, t)| uniform_similarity_gap(b, t))
        .fold(0.0, f64::max);
    let fresh = fresh_sia_max_change(50);
    let metrics = metric_errors();
    vec![
        ("infonce_single_pair", single.abs() <= EXACT, format!("loss {single:e}")),
        ("infonce_uniform_ln_b", gaps <= EXACT, format!("max gap {gaps:e}")),
        ("fresh_sia_identity", fresh == 0.0, format!("max change {fresh:e}")),
        ("route_tie_break", tie_break_ok(), String::new()),
        ("aa_fgt_hand_matrices", metrics.is_empty(), metrics.join("; ")),
    ]
}
