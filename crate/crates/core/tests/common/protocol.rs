//! Contract scans over small staged runs and generated datasets.

use std::collections::{BTreeMap, BTreeSet};

use glyphret::data::{DatasetManifest, Modality, Record, Split};
use glyphret::engine::{
    load_data, run_continual, run_stage, script_quotas, AblationMode, DataSource, PhaseConfig, RunConfig, RunOutcome,
    StageData, StageState,
};
use glyphret::synth::{generate, SynthConfig};
use glyphret::{CcrError, Scalar};

/// Three scripts at D = 16; a full run takes well under a second.
pub fn small_config(seed: u64) -> RunConfig {
    let phase = |epochs, lr| PhaseConfig {
        epochs,
        batch_size: 32,
        lr,
        ..PhaseConfig::default()
    };
    let scripts: Vec<String> = ["CS", "WSC", "SAC"].iter().map(|s| s.to_string()).collect();
    RunConfig {
        seed,
        stage_order: scripts.clone(),
        enforce_canonical_order: false,
        router_hidden: 32,
        buffer_capacity: 60,
        phase1: phase(3, 3e-3),
        phase2: phase(2, 1e-3),
        router: phase(5, 1e-2),
        data: DataSource::Synth(SynthConfig {
            dim: 16,
            scripts,
            char_pool: 12,
            char_families: 0,
            chars_per_script: 8,
            max_images_per_class: 10,
            zero_shot_chars: 6,
            script_rotation_dim: 4,
            nuisance_rank: 2,
            seed,
            ..SynthConfig::default()
        }),
        ..RunConfig::default()
    }
}

pub fn run<T: Scalar>(cfg: &RunConfig) -> glyphret::Result<(RunOutcome<T>, DatasetManifest)> {
    let data = load_data::<T>(&cfg.data)?;
    let out = run_continual(cfg, data.provider.as_ref(), &data.manifest)?;
    Ok((out, data.manifest))
}

/// With replay off, no stage may touch an earlier stage's adapter.
pub fn freeze_contract(seed: u64) -> Result<(), String> {
    let cfg = RunConfig {
        phase2_replay: false,
        ..small_config(seed)
    };
    let (out, _) = run::<f64>(&cfg).map_err(|e| e.to_string())?;
    for w in out.checkpoints.windows(2) {
        let (before, after) = (&w[0].state.adapters, &w[1].state.adapters);
        if after.len() != before.len() + 1 || after[..before.len()] != before[..] {
            return Err(format!("stage {} changed an earlier adapter", w[1].stage));
        }
    }
    Ok(())
}

fn index(manifest: &DatasetManifest) -> BTreeMap<&str, &Record> {
    manifest.records.iter().map(|r| (r.id.as_str(), r)).collect()
}

/// Every id a stage logged belongs to an onboarded script, and each part
/// of the stage reads only the split it is entitled to.
pub fn access_contract(out: &RunOutcome<impl Scalar>, manifest: &DatasetManifest) -> Result<(), String> {
    let by_id = index(manifest);
    for (t, log) in out.access.iter().enumerate() {
        let seen: BTreeSet<&str> = out.stages[..=t].iter().map(|s| s.script.as_str()).collect();
        let current = out.stages[t].script.as_str();
        let trained: BTreeSet<&str> = out.stages[..=t]
            .iter()
            .flat_map(|s| s.train.iter().filter_map(|r| r.character.as_deref()))
            .collect();
        let parts = [
            ("phase1", &log.phase1, Split::Train, Some(current)),
            ("phase2", &log.phase2, Split::Train, None),
            ("bank", &log.bank, Split::Train, None),
            ("eval", &log.eval, Split::Test, None),
        ];
        for (part, ids, split, only) in parts {
            for id in ids {
                let r = by_id.get(id.as_str()).ok_or_else(|| format!("stage {}: unknown id `{id}`", t + 1))?;
                let ok = match r.kind {
                    Modality::Meaning => part == "phase1" && r.character.as_deref().is_some_and(|c| trained.contains(c)),
                    _ => {
                        let script = r.script.as_deref().unwrap_or("");
                        r.split == split && seen.contains(script) && only.is_none_or(|s| s == script)
                    }
                };
                if !ok {
                    return Err(format!("stage {} {part} read `{id}`", t + 1));
                }
            }
        }
        if log.eval.is_empty() || log.bank.is_empty() {
            return Err(format!("stage {} logged no bank or eval reads", t + 1));
        }
    }
    Ok(())
}

/// Per-script buffer counts equal `min(quota, supply)`, so scripts with
/// enough images differ by at most one.
pub fn buffer_balance(out: &RunOutcome<impl Scalar>) -> Result<(), String> {
    for (t, ck) in out.checkpoints.iter().enumerate() {
        let buf = &ck.state.buffer;
        let n = t + 1;
        let counts = buf.script_counts(n);
        let quotas = script_quotas(buf.capacity, n);
        let mut saturated = Vec::new();
        for i in 0..n {
            let supply = out.stages[i].train.len();
            if counts[i] != quotas[i].min(supply) {
                return Err(format!("after stage {n} script {i} holds {} (quota {}, supply {supply})", counts[i], quotas[i]));
            }
            if supply >= quotas[i] {
                saturated.push(counts[i]);
            }
        }
        let spread = saturated.iter().max().unwrap_or(&0) - saturated.iter().min().unwrap_or(&0);
        if spread > 1 || buf.len() > buf.capacity {
            return Err(format!("after stage {n} counts {counts:?} exceed capacity or differ by {spread}"));
        }
    }
    Ok(())
}

/// Test classes are seen in training for their script; zero-shot
/// characters never are and stay below the image threshold.
pub fn dataset_scan(manifest: &DatasetManifest, threshold: usize) -> Result<(), String> {
    let mut train = BTreeSet::new();
    let mut per_char: BTreeMap<&str, (usize, BTreeSet<Split>)> = BTreeMap::new();
    for r in manifest.images() {
        let c = r.character.as_deref().unwrap_or("");
        if r.split == Split::Train {
            train.insert((r.script.as_deref().unwrap_or(""), c));
        }
        let e = per_char.entry(c).or_default();
        e.0 += 1;
        e.1.insert(r.split);
    }
    for r in manifest.images().filter(|r| r.split == Split::Test) {
        let key = (r.script.as_deref().unwrap_or(""), r.character.as_deref().unwrap_or(""));
        if !train.contains(&key) {
            return Err(format!("test image `{}` has no training class", r.id));
        }
    }
    let mut zero = 0;
    for (c, (n, splits)) in &per_char {
        if splits.contains(&Split::ZeroShot) {
            zero += 1;
            if splits.len() != 1 || *n >= threshold {
                return Err(format!("zero-shot character `{c}` has {n} images in splits {splits:?}"));
            }
        }
    }
    for (c, r) in manifest.meanings(Split::ZeroShot) {
        if per_char.get(c.as_str()).is_none_or(|(_, s)| !s.contains(&Split::ZeroShot)) || r.kind != Modality::Meaning {
            return Err(format!("zero-shot meaning `{c}` has no zero-shot images"));
        }
    }
    if zero == 0 {
        return Err("no zero-shot characters generated".into());
    }
    Ok(())
}

pub fn scan_generated(seeds: u64) -> Result<(), String> {
    for seed in 0..seeds {
        let cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let ds = generate::<f32>(&cfg).map_err(|e| e.to_string())?;
        dataset_scan(&ds.manifest, cfg.zero_shot_threshold).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok(())
}

/// Two runs of one config serialise to the same report bytes.
pub fn deterministic(seed: u64) -> Result<(), String> {
    let cfg = small_config(seed);
    let a = run::<f32>(&cfg).map_err(|e| e.to_string())?.0.report;
    let b = run::<f32>(&cfg).map_err(|e| e.to_string())?.0.report;
    let (a, b) = (serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    if a != b {
        return Err("reports differ between identical runs".into());
    }
    Ok(())
}

/// Supplying a later stage's data early, or skipping a stage, is refused.
pub fn order_violations_rejected(seed: u64) -> Result<(), String> {
    let cfg = small_config(seed);
    let data = load_data::<f32>(&cfg.data).map_err(|e| e.to_string())?;
    let stage = |s: &str| StageData::from_manifest(&data.manifest, s);
    let fresh = || StageState::<f32>::new(AblationMode::Full, cfg.buffer_capacity);

    let skipped = run_stage(&mut fresh(), &[stage("WSC")], data.provider.as_ref(), &cfg);
    if !matches!(skipped, Err(CcrError::Protocol(_))) {
        return Err(format!("onboarding WSC first gave {skipped:?}"));
    }
    let ahead = run_stage(&mut fresh(), &[stage("CS"), stage("WSC")], data.provider.as_ref(), &cfg);
    if !matches!(ahead, Err(CcrError::ContractViolation { .. } | CcrError::Protocol(_))) {
        return Err(format!("future stage data gave {ahead:?}"));
    }
    let mut leaky = stage("CS");
    leaky.train.extend(stage("WSC").train.into_iter().take(1));
    let leak = run_stage(&mut fresh(), &[leaky], data.provider.as_ref(), &cfg);
    if !matches!(leak, Err(CcrError::ContractViolation { .. })) {
        return Err(format!("foreign training image gave {leak:?}"));
    }
    let reordered = RunConfig {
        enforce_canonical_order: true,
        ..cfg.clone()
    };
    if !matches!(run_continual(&reordered, data.provider.as_ref(), &data.manifest), Err(CcrError::Protocol(_))) {
        return Err("non-canonical order accepted under enforcement".into());
    }
    Ok(())
}

/// Every check of the suite as (name, result).
pub fn protocol_suite() -> Vec<(&'static str, Result<(), String>)> {
    let full = run::<f32>(&small_config(1)).map_err(|e| e.to_string());
    let access = full.as_ref().map_err(Clone::clone).and_then(|(o, m)| access_contract(o, m));
    let balance = full.as_ref().map_err(Clone::clone).and_then(|(o, _)| buffer_balance(o));
    vec![
        ("freeze", freeze_contract(2)),
        ("data_access", access),
        ("buffer_balance", balance),
        ("closed_set_and_zero_shot_scan", scan_generated(5)),
        ("determinism", deterministic(4)),
        ("order_violations", order_violations_rejected(5)),
    ]
}
