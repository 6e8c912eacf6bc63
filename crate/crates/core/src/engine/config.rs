use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::CANONICAL_SCRIPTS;
use crate::dictionary::{AutoKConfig, BankStrategy};
use crate::error::{CcrError, Result};
use crate::numerics::AdamWConfig;
use crate::objectives::{PositiveSpec, DEFAULT_BATCH_SIZE, DEFAULT_TAU};
use crate::provider::PostMapSpec;
use crate::router::DEFAULT_HIDDEN;
use crate::synth::SynthConfig;

pub const DEFAULT_BUFFER_CAPACITY: usize = 10_000;
pub const DEFAULT_RS_PROTOTYPES: usize = 8;

/// Which variant of the method a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    /// No adapters and no router; raw provider embeddings.
    Frozen,
    /// One shared adapter fine-tuned on each new script, no replay, no routing.
    SeqSingleAdapter,
    /// Ground-truth script picks the adapter at inference.
    GoldRouting,
    MeanProto,
    RsProto,
    ImageOnlyPhase1,
}

impl AblationMode {
    pub const ALL: [AblationMode; 7] = [
        AblationMode::Full,
        AblationMode::Frozen,
        AblationMode::SeqSingleAdapter,
        AblationMode::GoldRouting,
        AblationMode::MeanProto,
        AblationMode::RsProto,
        AblationMode::ImageOnlyPhase1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::Frozen => "frozen",
            AblationMode::SeqSingleAdapter => "seq_single_adapter",
            AblationMode::GoldRouting => "gold_routing",
            AblationMode::MeanProto => "mean_proto",
            AblationMode::RsProto => "rs_proto",
            AblationMode::ImageOnlyPhase1 => "image_only_phase1",
        }
    }

    pub fn trains(self) -> bool {
        self != AblationMode::Frozen
    }

    /// Per-script adapters with a router and replay.
    pub fn uses_adapter_bank(self) -> bool {
        !matches!(self, AblationMode::Frozen | AblationMode::SeqSingleAdapter)
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = CcrError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| CcrError::InvalidArgument(format!("unknown mode `{s}`")))
    }
}

/// Optimisation settings of one training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
}

impl PhaseConfig {
    pub fn with_epochs(epochs: usize) -> Self {
        Self {
            epochs,
            ..Self::default()
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            base_lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            epochs: 6,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: 1e-4,
            weight_decay: 0.1,
            warmup_ratio: 0.01,
        }
    }
}

/// Where the manifest and vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated in memory from a synthetic config.
    Synth(SynthConfig),
    /// A manifest plus an embeddings file on disk.
    Files {
        manifest: PathBuf,
        embeddings: PathBuf,
        #[serde(default)]
        post_map: PostMapSpec,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: AblationMode,
    pub stage_order: Vec<String>,
    /// Reject any order other than the canonical one.
    pub enforce_canonical_order: bool,
    /// Adapter rank; `None` means `min(64, D / 4)`.
    pub rank: Option<usize>,
    pub router_hidden: usize,
    pub tau: f64,
    pub positives: PositiveSpec,
    pub buffer_capacity: usize,
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub router: PhaseConfig,
    /// When false, Phase-II trains the router only and leaves adapters alone.
    pub phase2_replay: bool,
    pub auto_k: AutoKConfig,
    pub rs_prototypes: usize,
    pub data: DataSource,
    /// Not part of the config digest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: AblationMode::Full,
            stage_order: CANONICAL_SCRIPTS.iter().map(|s| s.to_string()).collect(),
            enforce_canonical_order: true,
            rank: None,
            router_hidden: DEFAULT_HIDDEN,
            tau: DEFAULT_TAU,
            positives: PositiveSpec::default(),
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            phase1: PhaseConfig::with_epochs(6),
            phase2: PhaseConfig::with_epochs(5),
            router: PhaseConfig::with_epochs(5),
            phase2_replay: true,
            auto_k: AutoKConfig::default(),
            rs_prototypes: DEFAULT_RS_PROTOTYPES,
            data: DataSource::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Settings for the default synthetic benchmark. The standard
    /// hyperparameters take too few optimizer steps on a few hundred images
    /// per script, so learning rates and epochs are raised.
    pub fn desk(seed: u64) -> Self {
        let phase = |epochs, lr| PhaseConfig {
            epochs,
            batch_size: 64,
            lr,
            weight_decay: 0.01,
            warmup_ratio: 0.05,
        };
        Self {
            seed,
            phase1: phase(20, 3e-3),
            phase2: phase(8, 1e-3),
            router: phase(30, 1e-2),
            data: DataSource::Synth(SynthConfig {
                seed,
                ..SynthConfig::default()
            }),
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: AblationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn adapter_rank(&self, dim: usize) -> usize {
        self.rank.unwrap_or((dim / 4).clamp(1, 64))
    }

    pub fn bank_strategy(&self) -> BankStrategy {
        match self.mode {
            AblationMode::MeanProto => BankStrategy::Mean,
            AblationMode::RsProto => BankStrategy::RandomSample { m: self.rs_prototypes },
            _ => BankStrategy::AutoK(self.auto_k),
        }
    }

    pub fn phase1_positives(&self) -> PositiveSpec {
        match self.mode {
            AblationMode::ImageOnlyPhase1 => PositiveSpec::image_only(),
            _ => self.positives,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CcrError::InvalidArgument(format!("run config: {m}")));
        if self.stage_order.is_empty() {
            return bad("stage_order is empty".into());
        }
        let canonical: Vec<String> = CANONICAL_SCRIPTS.iter().map(|s| s.to_string()).collect();
        if self.enforce_canonical_order && self.stage_order != canonical {
            return Err(CcrError::Protocol(format!(
                "stage order {:?} differs from the canonical order {:?}",
                self.stage_order, canonical
            )));
        }
        let mut seen = self.stage_order.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.stage_order.len() {
            return bad("stage_order repeats a script".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be > 0 (got {})", self.tau));
        }
        for (name, p) in [("phase1", &self.phase1), ("phase2", &self.phase2), ("router", &self.router)] {
            if p.batch_size == 0 {
                return bad(format!("{name}.batch_size must be > 0"));
            }
            if !(p.lr >= 0.0) || !(p.weight_decay >= 0.0) || !(0.0..=1.0).contains(&p.warmup_ratio) {
                return bad(format!("{name} has an invalid lr, weight decay or warmup ratio"));
            }
        }
        if self.phase2.batch_size != self.router.batch_size {
            return bad("router and phase2 batch sizes must match; both consume the replay batches".into());
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be > 0".into());
        }
        if self.rs_prototypes == 0 {
            return bad("rs_prototypes must be >= 1".into());
        }
        let w = self.positives;
        if [w.image, w.meaning, w.shape].iter().any(|v| !(*v >= 0.0)) || w.image + w.meaning + w.shape <= 0.0 {
            return bad("positive weights must be non-negative with a positive sum".into());
        }
        Ok(())
    }

    /// Config without run-local fields, as hashed into reports.
    pub fn canonical(&self) -> Self {
        Self {
            output_dir: None,
            ..self.clone()
        }
    }
}
