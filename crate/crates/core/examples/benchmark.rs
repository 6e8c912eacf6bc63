//! Runs every mode of the synthetic benchmark and prints the headline
//! numbers. Usage: `cargo run --release --example benchmark -- [seeds...]`
//!
//! `BENCH_RUN` and `BENCH_SYNTH` may hold JSON objects whose fields
//! override the run config and the generator config.

use glyphret::engine::{load_data, run_continual, select_adapter, AblationMode, RunConfig, Routing};
use serde_json::Value;

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn config(seed: u64) -> RunConfig {
    let mut v = serde_json::to_value(RunConfig::desk(seed)).unwrap();
    if let Ok(s) = std::env::var("BENCH_RUN") {
        merge(&mut v, serde_json::from_str(&s).expect("BENCH_RUN is JSON"));
    }
    if let Ok(s) = std::env::var("BENCH_SYNTH") {
        merge(&mut v["data"], serde_json::from_str(&s).expect("BENCH_SYNTH is JSON"));
    }
    serde_json::from_value(v).expect("valid overrides")
}

fn main() -> glyphret::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: Vec<u64> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    let modes: Vec<AblationMode> = match std::env::var("BENCH_MODES") {
        Ok(s) => s.split(',').map(|m| m.parse()).collect::<glyphret::Result<_>>()?,
        Err(_) => AblationMode::ALL.to_vec(),
    };
    println!(
        "{:<20} {:>4} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>6}",
        "mode", "seed", "AA6@1", "AA6@10", "FGT@1", "ZS@1", "ZS@20", "route", "secs"
    );
    for seed in seeds {
        let base = config(seed);
        let data = load_data::<f32>(&base.data)?;
        for &mode in &modes {
            let cfg = base.clone().with_mode(mode);
            let t = std::time::Instant::now();
            let out = run_continual(&cfg, data.provider.as_ref(), &data.manifest)?;
            let r = &out.report;
            let state = out.final_state();
            let (mut ok, mut n) = (0, 0);
            if state.router.is_some() {
                for (i, s) in out.stages.iter().enumerate() {
                    for rec in &s.test {
                        let e = data.provider.visual_features(&rec.id)?;
                        ok += usize::from(select_adapter(state, e, rec, Routing::Router)? == Some(i));
                        n += 1;
                    }
                }
            }
            println!(
                "{:<20} {:>4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>6.1}",
                mode.name(),
                seed,
                r.final_aa_top1(),
                r.aa_top10.last().unwrap(),
                r.fgt_top1.unwrap_or(f64::NAN),
                r.zs_at1.unwrap_or(f64::NAN),
                r.zs_at20.unwrap_or(f64::NAN),
                if n > 0 { ok as f64 / n as f64 } else { f64::NAN },
                t.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
