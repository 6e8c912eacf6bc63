use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DataSource, RunConfig};
use super::metrics::{AccuracyMatrix, MetricsReport, StageTiming};
use super::stage::{
    evaluate_stage, run_stage, run_zero_shot, zero_shot_dictionary, AccessLog, StageData, StageState,
    ZeroShotResult,
};
use crate::data::{DatasetManifest, Modality, Split};
use crate::dictionary::TextDictionary;
use crate::error::{CcrError, Result};
use crate::io::{config_digest, read_embeddings, read_json, read_manifest, write_json, write_manifest};
use crate::provider::{load_file_provider, EmbedProvider};
use crate::scalar::Scalar;
use crate::synth::generate;

pub const CHECKPOINT_FORMAT: &str = "glyphret-checkpoint/1";

/// Snapshot after a stage: enough to re-run evaluation exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub format: String,
    pub stage: usize,
    pub config_digest: String,
    pub config: RunConfig,
    pub state: StageState<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Self = read_json(path)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CcrError::Parse(format!("unsupported checkpoint format `{}`", ck.format)));
        }
        if ck.stage != ck.state.stage || ck.state.scripts.len() != ck.stage {
            return Err(CcrError::Parse("checkpoint header disagrees with its state".into()));
        }
        if let Some(bank) = &ck.state.bank {
            bank.validate()?;
        }
        Ok(ck)
    }
}

/// Manifest plus the provider that resolves its ids.
pub struct LoadedData<T: Scalar> {
    pub manifest: DatasetManifest,
    pub provider: Box<dyn EmbedProvider<T>>,
}

pub fn load_data<T: Scalar>(source: &DataSource) -> Result<LoadedData<T>> {
    match source {
        DataSource::Synth(cfg) => {
            let ds = generate::<T>(cfg)?;
            Ok(LoadedData {
                provider: Box::new(ds.provider()?),
                manifest: ds.manifest,
            })
        }
        DataSource::Files {
            manifest,
            embeddings,
            post_map,
        } => {
            let manifest = read_manifest(manifest)?;
            let provider = load_file_provider::<T>(embeddings, *post_map, None)?;
            for r in &manifest.records {
                let found = match r.kind {
                    Modality::Image => provider.visual_features(&r.id).is_ok(),
                    _ => provider.has_text(&r.id),
                };
                if !found {
                    return Err(CcrError::UnknownId(format!("manifest id `{}` has no embedding", r.id)));
                }
            }
            Ok(LoadedData {
                manifest,
                provider: Box::new(provider),
            })
        }
    }
}

/// Reads just the embeddings dimension of a data source without building it.
pub fn data_dim(source: &DataSource) -> Result<usize> {
    match source {
        DataSource::Synth(cfg) => Ok(cfg.dim),
        DataSource::Files { embeddings, .. } => Ok(read_embeddings::<f64>(embeddings)?.first().map_or(0, |r| r.dim)),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub report: MetricsReport,
    pub timings: Vec<StageTiming>,
    pub access: Vec<AccessLog>,
    pub checkpoints: Vec<Checkpoint<T>>,
    pub stages: Vec<StageData>,
}

impl<T: Scalar> RunOutcome<T> {
    pub fn final_state(&self) -> &StageState<T> {
        &self.checkpoints.last().expect("a run has at least one stage").state
    }
}

/// Every character with training images in the given stages.
pub fn training_characters(stages: &[StageData]) -> BTreeSet<String> {
    stages
        .iter()
        .flat_map(|s| s.train.iter().filter_map(|r| r.character.clone()))
        .collect()
}

/// Runs the full staged protocol in memory.
pub fn run_continual<T: Scalar>(
    cfg: &RunConfig,
    provider: &dyn EmbedProvider<T>,
    manifest: &DatasetManifest,
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    let digest = config_digest(&cfg.canonical())?;
    let scripts = manifest.scripts();
    if let Some(missing) = cfg.stage_order.iter().find(|s| !scripts.contains(*s)) {
        return Err(CcrError::Protocol(format!("script `{missing}` has no images in the manifest")));
    }
    let mut state = StageState::new(cfg.mode, cfg.buffer_capacity);
    let (mut top1, mut top10) = (AccuracyMatrix::new(), AccuracyMatrix::new());
    let mut observed = Vec::new();
    let (mut timings, mut access, mut checkpoints) = (Vec::new(), Vec::new(), Vec::new());
    for script in &cfg.stage_order {
        observed.push(StageData::from_manifest(manifest, script));
        let out = run_stage(&mut state, &observed, provider, cfg).map_err(|e| match e {
            CcrError::ContractViolation { .. } => e,
            other => match other {
                CcrError::Protocol(m) => CcrError::Protocol(format!("stage {} ({script}): {m}", state.stage + 1)),
                o => o,
            },
        })?;
        log::info!(
            "stage {} ({script}) [{}]: top-1 {:?} phase-I loss {:?} phase-II loss {:?}",
            state.stage,
            cfg.mode,
            out.top1,
            out.phase1_loss,
            out.phase2_loss
        );
        top1.push_row(out.top1)?;
        top10.push_row(out.top10)?;
        timings.push(out.timing);
        access.push(out.access);
        checkpoints.push(Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            stage: state.stage,
            config_digest: digest.clone(),
            config: cfg.canonical(),
            state: state.clone(),
        });
    }
    let mut report = MetricsReport::new(cfg.seed, cfg.mode, digest, cfg.stage_order.clone(), top1, top10)?;
    let queries: Vec<_> = manifest
        .images()
        .filter(|r| r.split == Split::ZeroShot && r.script.as_ref().is_some_and(|s| cfg.stage_order.contains(s)))
        .cloned()
        .collect();
    if !queries.is_empty() {
        let dict = zero_shot_dictionary(manifest, provider)?;
        let zs = run_zero_shot(&state, provider, &queries, &dict, &training_characters(&observed))?;
        report.zs_at1 = Some(zs.at1);
        report.zs_at20 = Some(zs.at20);
        report.zs_queries = zs.queries;
        report.zs_candidates = zs.candidates;
    }
    report.verify()?;
    Ok(RunOutcome {
        report,
        timings,
        access,
        checkpoints,
        stages: observed,
    })
}

/// Files written by [`run_to_dir`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report_json: PathBuf,
    pub report_csv: PathBuf,
    pub timings: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("stage{stage}.ckpt.json"))
}

pub fn test_manifest_path(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("stage{stage}.test.jsonl"))
}

/// Runs and writes the report, timings, per-stage checkpoints, the union
/// of test splits seen by each stage, and the zero-shot manifest.
pub fn run_to_dir<T: Scalar>(cfg: &RunConfig, dir: &Path) -> Result<(RunOutcome<T>, RunArtifacts)> {
    let data = load_data::<T>(&cfg.data)?;
    let outcome = run_continual(cfg, data.provider.as_ref(), &data.manifest)?;
    std::fs::create_dir_all(dir).map_err(|e| CcrError::io(dir, e))?;
    write_json(dir.join("config.json"), &cfg.canonical())?;
    let mut checkpoints = Vec::new();
    for (i, ck) in outcome.checkpoints.iter().enumerate() {
        let path = checkpoint_path(dir, ck.stage);
        write_json(&path, ck)?;
        checkpoints.push(path);
        let records = outcome.stages[..=i].iter().flat_map(|s| s.test.iter().cloned()).collect();
        write_manifest(test_manifest_path(dir, ck.stage), &DatasetManifest { records })?;
    }
    let zs_records = data
        .manifest
        .records
        .iter()
        .filter(|r| r.split == Split::ZeroShot && r.kind != Modality::Shape)
        .cloned()
        .collect();
    write_manifest(dir.join("zero_shot.jsonl"), &DatasetManifest { records: zs_records })?;
    let artifacts = RunArtifacts {
        report_json: dir.join("report.json"),
        report_csv: dir.join("report.csv"),
        timings: dir.join("timings.json"),
        checkpoints,
    };
    write_json(&artifacts.report_json, &outcome.report)?;
    crate::io::write_atomic(&artifacts.report_csv, outcome.report.to_csv().as_bytes())?;
    write_json(&artifacts.timings, &outcome.timings)?;
    Ok((outcome, artifacts))
}

/// Re-evaluates a checkpoint on a test manifest. Every test script must
/// already be onboarded in the checkpoint.
pub fn eval_checkpoint<T: Scalar>(
    ck: &Checkpoint<T>,
    provider: &dyn EmbedProvider<T>,
    tests: &DatasetManifest,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let state = &ck.state;
    for r in tests.images() {
        let script = r.script.as_deref().unwrap_or("");
        if state.script_index(script).is_none() {
            return Err(CcrError::ContractViolation {
                stage: ck.stage,
                message: format!("test image `{}` is from script `{script}`, not onboarded by stage {}", r.id, ck.stage),
            });
        }
    }
    let observed: Vec<StageData> = state
        .scripts
        .iter()
        .map(|s| StageData {
            script: s.clone(),
            train: Vec::new(),
            test: tests.images_in(s, Split::Test).into_iter().cloned().collect(),
        })
        .collect();
    evaluate_stage(state, provider, &observed, &mut AccessLog::default())
}

/// Zero-shot scores of a checkpoint. Without `dict`, the dictionary is
/// built from the manifest's zero-shot meaning records; with one, only
/// queries whose character it lists are scored.
pub fn zero_shot_checkpoint<T: Scalar>(
    ck: &Checkpoint<T>,
    provider: &dyn EmbedProvider<T>,
    manifest: &DatasetManifest,
    dict: Option<TextDictionary<T>>,
) -> Result<ZeroShotResult> {
    let bank = ck
        .state
        .bank
        .as_ref()
        .ok_or_else(|| CcrError::Protocol("checkpoint has no dictionary".into()))?;
    let trained: BTreeSet<String> = bank.class_keys.iter().map(|k| k.character.clone()).collect();
    let mut queries: Vec<_> = manifest.images().filter(|r| r.split == Split::ZeroShot).cloned().collect();
    let dict = match dict {
        Some(d) => {
            let known: BTreeSet<&str> = d.characters().collect();
            queries.retain(|q| q.character.as_deref().is_some_and(|c| known.contains(c)));
            d
        }
        None => zero_shot_dictionary(manifest, provider)?,
    };
    run_zero_shot(&ck.state, provider, &queries, &dict, &trained)
}
