//! The seeded synthetic benchmark and its committed oracle.

use std::collections::BTreeMap;
use std::time::Instant;

use glyphret::engine::{load_data, run_continual, AblationMode, RunConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Scores {
    pub aa6_top1: f64,
    pub fgt_top1: f64,
    pub zs_at1: f64,
}

#[derive(Debug, Deserialize)]
pub struct Margins {
    pub a_full_vs_frozen_aa6: f64,
    pub b_seq_single_vs_full_fgt: f64,
    pub c_gold_vs_full_aa6: f64,
    pub d_autok_vs_mean_and_rs_aa6: f64,
    pub e_text_vs_image_only_zs1: f64,
}

#[derive(Debug, Deserialize)]
pub struct Oracle {
    pub seeds: Vec<u64>,
    pub required_seeds: usize,
    pub margins: Margins,
    pub max_run_seconds: f64,
    /// seed -> mode name -> scores
    pub oracle: BTreeMap<String, BTreeMap<String, Scores>>,
}

pub fn oracle() -> Oracle {
    let text = include_str!("../fixtures/benchmark_oracle.json");
    serde_json::from_str(text).expect("benchmark oracle fixture parses")
}

/// Scores and wall-clock seconds of every mode for one seed.
pub fn run_seed(seed: u64) -> glyphret::Result<BTreeMap<AblationMode, (Scores, f64)>> {
    let base = RunConfig::desk(seed);
    let data = load_data::<f32>(&base.data)?;
    let mut out = BTreeMap::new();
    for mode in AblationMode::ALL {
        let t = Instant::now();
        let r = run_continual(&base.clone().with_mode(mode), data.provider.as_ref(), &data.manifest)?.report;
        let scores = Scores {
            aa6_top1: r.final_aa_top1(),
            fgt_top1: r.fgt_top1.unwrap_or(f64::NAN),
            zs_at1: r.zs_at1.unwrap_or(f64::NAN),
        };
        out.insert(mode, (scores, t.elapsed().as_secs_f64()));
    }
    Ok(out)
}

/// The five orderings, each as a per-seed predicate on the mode scores.
pub fn directions(m: &Margins) -> Vec<(&'static str, Box<dyn Fn(&BTreeMap<AblationMode, Scores>) -> bool + '_>)> {
    use AblationMode::*;
    vec![
        (
            "a: full AA6 > frozen AA6",
            Box::new(move |s| s[&Full].aa6_top1 > s[&Frozen].aa6_top1 + m.a_full_vs_frozen_aa6),
        ),
        (
            "b: full FGT < seq_single FGT",
            Box::new(move |s| s[&Full].fgt_top1 + m.b_seq_single_vs_full_fgt < s[&SeqSingleAdapter].fgt_top1),
        ),
        (
            "c: gold AA6 >= full AA6",
            Box::new(move |s| s[&GoldRouting].aa6_top1 >= s[&Full].aa6_top1 + m.c_gold_vs_full_aa6),
        ),
        (
            "d: Auto-K AA6 > mean and rs(8) AA6",
            Box::new(move |s| {
                let full = s[&Full].aa6_top1 - m.d_autok_vs_mean_and_rs_aa6;
                full > s[&MeanProto].aa6_top1 && full > s[&RsProto].aa6_top1
            }),
        ),
        (
            "e: text ZS@1 > image_only ZS@1",
            Box::new(move |s| s[&Full].zs_at1 > s[&ImageOnlyPhase1].zs_at1 + m.e_text_vs_image_only_zs1),
        ),
    ]
}
