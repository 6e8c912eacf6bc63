//! The staged onboarding protocol: Phase-I adapter training on the new
//! script, replay buffer update, Phase-II replay and router training,
//! dictionary rebuild and evaluation, plus the metrics that summarise a run.

mod buffer;
mod config;
mod metrics;
mod run;
mod stage;

pub use buffer::{buffer_update, script_quotas, BufferEntry, MemoryBuffer};
pub use config::{
    AblationMode, DataSource, PhaseConfig, RunConfig, DEFAULT_BUFFER_CAPACITY, DEFAULT_RS_PROTOTYPES,
};
pub use metrics::{compute_aa, compute_fgt, AccuracyMatrix, MetricsReport, StageTiming, METRIC_DEFINITIONS};
pub use run::{
    checkpoint_path, data_dim, eval_checkpoint, load_data, run_continual, run_to_dir, test_manifest_path,
    training_characters, zero_shot_checkpoint, Checkpoint, LoadedData, RunArtifacts, RunOutcome,
    CHECKPOINT_FORMAT,
};
pub use stage::{
    build_stage_bank, embed_image, evaluate_stage, run_stage, run_zero_shot, select_adapter,
    zero_shot_dictionary, AccessLog, Routing, StageData, StageOutcome, StageState, ZeroShotResult,
};
