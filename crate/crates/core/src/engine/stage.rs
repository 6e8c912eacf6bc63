use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::buffer::{buffer_update, MemoryBuffer};
use super::config::{AblationMode, RunConfig};
use super::metrics::StageTiming;
use crate::data::{meaning_id, shape_id, ClassKey, DatasetManifest, Modality, Record, Split};
use crate::dictionary::{build_bank, class_rank, BankConfig, ClassGroups, PrototypeBank, TextDictionary};
use crate::error::{CcrError, Result};
use crate::numerics::{adamw_step, lr_at, OptimizerState, Parameters, Schedule};
use crate::objectives::{infonce_loss, phase2_pair_sampler, ContrastiveBatch, PositiveSampler, PositiveSource};
use crate::provider::{EmbedProvider, PostMapCache};
use crate::router::{route, router_ce_loss_into, router_grow, RouterParams};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_for};
use crate::sia::{sia_apply, sia_backward_into, sia_forward, sia_init_for_script, SiaParams, SiaTape};

/// Everything a continual run carries from one stage to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StageState<T> {
    pub mode: AblationMode,
    /// Number of completed stages.
    pub stage: usize,
    /// Onboarded scripts; position is the script index.
    pub scripts: Vec<String>,
    pub adapters: Vec<SiaParams<T>>,
    pub router: Option<RouterParams<T>>,
    pub buffer: MemoryBuffer,
    pub bank: Option<PrototypeBank<T>>,
}

impl<T: Scalar> StageState<T> {
    pub fn new(mode: AblationMode, buffer_capacity: usize) -> Self {
        Self {
            mode,
            stage: 0,
            scripts: Vec::new(),
            adapters: Vec::new(),
            router: None,
            buffer: MemoryBuffer::new(buffer_capacity),
            bank: None,
        }
    }

    pub fn script_index(&self, script: &str) -> Option<usize> {
        self.scripts.iter().position(|s| s == script)
    }

    pub fn routing(&self) -> Routing {
        if self.mode == AblationMode::GoldRouting {
            Routing::Gold
        } else {
            Routing::Router
        }
    }
}

/// How inference picks an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    Router,
    Gold,
}

/// One stage's records: the script's training and test images.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub script: String,
    pub train: Vec<Record>,
    pub test: Vec<Record>,
}

impl StageData {
    pub fn from_manifest(manifest: &DatasetManifest, script: &str) -> Self {
        let pick = |split| manifest.images_in(script, split).into_iter().cloned().collect();
        Self {
            script: script.to_string(),
            train: pick(Split::Train),
            test: pick(Split::Test),
        }
    }
}

/// Ids touched by each part of a stage, for contract assertions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessLog {
    pub phase1: BTreeSet<String>,
    pub phase2: BTreeSet<String>,
    pub bank: BTreeSet<String>,
    pub eval: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub top1: Vec<f64>,
    pub top10: Vec<f64>,
    pub phase1_loss: Option<f64>,
    pub phase2_loss: Option<f64>,
    pub timing: StageTiming,
    pub access: AccessLog,
}

fn violation(stage: usize, message: String) -> CcrError {
    CcrError::ContractViolation { stage, message }
}

/// Admits only the current stage's training images and their texts.
struct Phase1Guard {
    stage: usize,
    allowed: HashSet<String>,
}

impl Phase1Guard {
    fn new(stage: usize, train: &[Record]) -> Self {
        let mut allowed = HashSet::new();
        for r in train {
            allowed.insert(r.id.clone());
            allowed.insert(shape_id(&r.id));
            if let Some(c) = &r.character {
                allowed.insert(meaning_id(c));
            }
        }
        Self { stage, allowed }
    }

    fn check(&self, id: &str, log: &mut AccessLog) -> Result<()> {
        if !self.allowed.contains(id) {
            return Err(violation(
                self.stage,
                format!("Phase-I attempted to read `{id}`, which is not current-stage training data"),
            ));
        }
        log.phase1.insert(id.to_string());
        Ok(())
    }
}

fn script_of<T: Scalar>(state: &StageState<T>, record: &Record) -> Result<usize> {
    let name = record.script.as_deref().unwrap_or("");
    state.script_index(name).ok_or_else(|| {
        violation(
            state.stage,
            format!("`{}` belongs to script `{name}`, which has not been onboarded", record.id),
        )
    })
}

/// Adapter used for a query, or `None` when the mode has no adapters.
pub fn select_adapter<T: Scalar>(
    state: &StageState<T>,
    features: &[T],
    record: &Record,
    routing: Routing,
) -> Result<Option<usize>> {
    match state.mode {
        AblationMode::Frozen => Ok(None),
        AblationMode::SeqSingleAdapter => Ok((!state.adapters.is_empty()).then_some(0)),
        _ => match routing {
            Routing::Gold => Ok(Some(script_of(state, record)?)),
            Routing::Router => {
                let router = state
                    .router
                    .as_ref()
                    .ok_or_else(|| CcrError::Protocol("router used before the first stage".into()))?;
                Ok(Some(route(features, router)?))
            }
        },
    }
}

/// Final unit-norm embedding of an image through the inference path.
pub fn embed_image<T: Scalar>(
    state: &StageState<T>,
    provider: &dyn EmbedProvider<T>,
    record: &Record,
    routing: Routing,
) -> Result<Vec<T>> {
    let e = provider.visual_features(&record.id)?;
    let post = provider.post_map();
    match select_adapter(state, e, record, routing)? {
        None => post.apply(e),
        Some(k) => post.apply(&sia_apply(e, &state.adapters[k])?),
    }
}

struct Forward<T> {
    unit: Vec<T>,
    cache: PostMapCache<T>,
    tape: SiaTape<T>,
}

fn forward_train<T: Scalar>(e: &[T], adapter: &SiaParams<T>, provider: &dyn EmbedProvider<T>) -> Result<Forward<T>> {
    let (x, tape) = sia_forward(e, adapter)?;
    let (unit, cache) = provider.post_map().forward(&x)?;
    Ok(Forward { unit, cache, tape })
}

fn backward_train<T: Scalar>(
    fwd: Forward<T>,
    upstream: &[T],
    adapter: &SiaParams<T>,
    grads: &mut SiaParams<T>,
    provider: &dyn EmbedProvider<T>,
) -> Result<()> {
    let gx = provider.post_map().backward(&fwd.unit, &fwd.cache, upstream);
    sia_backward_into(&gx, fwd.tape, adapter, grads)?;
    Ok(())
}

fn schedule_for(epochs: usize, batches_per_epoch: usize, warmup: f64) -> Result<Option<Schedule>> {
    let total = (epochs * batches_per_epoch) as u64;
    if total == 0 {
        return Ok(None);
    }
    Schedule::new(warmup, total).map(Some)
}

/// Phase-I: trains only adapter `slot` on the current stage's pairs.
fn phase1<T: Scalar>(
    state: &mut StageState<T>,
    slot: usize,
    data: &StageData,
    provider: &dyn EmbedProvider<T>,
    cfg: &RunConfig,
    log: &mut AccessLog,
) -> Result<Option<f64>> {
    let stage = state.stage + 1;
    let guard = Phase1Guard::new(stage, &data.train);
    let records: Vec<&Record> = data.train.iter().collect();
    let sampler = PositiveSampler::new(records.clone(), cfg.phase1_positives())?;
    let pc = cfg.phase1;
    let per_epoch = records.len().div_ceil(pc.batch_size);
    let Some(schedule) = schedule_for(pc.epochs, per_epoch, pc.warmup_ratio)? else {
        return Ok(None);
    };
    let adapter = &mut state.adapters[slot];
    let mut opt = OptimizerState::new(&*adapter, pc.adamw());
    let (mut step, mut loss_sum) = (0u64, 0.0);

    for epoch in 0..pc.epochs {
        let mut rng = rng_for(cfg.seed, "phase1", &[stage as u64, epoch as u64]);
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(pc.batch_size) {
            let mut anchors = Vec::with_capacity(chunk.len());
            let mut cands: Vec<(Vec<T>, Option<Forward<T>>, Modality)> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let rec = records[i];
                guard.check(&rec.id, log)?;
                anchors.push(forward_train(provider.visual_features(&rec.id)?, adapter, provider)?);
                let pos = sampler.sample(i, &mut rng, |id| guard.allowed.contains(id) && provider.has_text(id));
                guard.check(&pos.reference, log)?;
                match pos.source {
                    PositiveSource::SameClassImage => {
                        let f = forward_train(provider.visual_features(&pos.reference)?, adapter, provider)?;
                        cands.push((f.unit.clone(), Some(f), Modality::Image));
                    }
                    src => {
                        let kind = if src == PositiveSource::MeaningText { Modality::Meaning } else { Modality::Shape };
                        cands.push((provider.text_embedding(&pos.reference)?.to_vec(), None, kind));
                    }
                }
            }
            let batch = ContrastiveBatch::new(
                anchors.iter().map(|f| f.unit.clone()).collect(),
                cands.iter().map(|c| c.0.clone()).collect(),
                cands.iter().map(|c| c.2).collect(),
                cands.iter().map(|c| c.1.is_some()).collect(),
            )?;
            let out = infonce_loss(&batch, cfg.tau)?;
            loss_sum += out.loss.as_f64();
            let mut grads = adapter.zeros_like();
            for (f, g) in anchors.into_iter().zip(&out.anchor_grads) {
                backward_train(f, g, adapter, &mut grads, provider)?;
            }
            for ((_, f, _), g) in cands.into_iter().zip(&out.candidate_grads) {
                if let (Some(f), Some(g)) = (f, g) {
                    backward_train(f, g, adapter, &mut grads, provider)?;
                }
            }
            step += 1;
            adamw_step(adapter, &grads, &mut opt, lr_at(&schedule, step, pc.lr)?)?;
        }
    }
    Ok(Some(loss_sum / step as f64))
}

/// Phase-II: replay InfoNCE over the buffer for every adapter, and script
/// cross-entropy for the router on the frozen features.
fn phase2<T: Scalar>(
    state: &mut StageState<T>,
    provider: &dyn EmbedProvider<T>,
    cfg: &RunConfig,
    log: &mut AccessLog,
) -> Result<Option<f64>> {
    let stage = state.stage + 1;
    let entries = state.buffer.entries.clone();
    let classes = state.buffer.class_keys();
    let b = cfg.phase2.batch_size;
    let per_epoch = entries.len().div_ceil(b);
    let adapter_epochs = if cfg.phase2_replay { cfg.phase2.epochs } else { 0 };
    let router_epochs = cfg.router.epochs;
    let adapter_sched = schedule_for(adapter_epochs, per_epoch, cfg.phase2.warmup_ratio)?;
    let router_sched = schedule_for(router_epochs, per_epoch, cfg.router.warmup_ratio)?;
    let mut adapter_opts: Vec<OptimizerState<T>> = state
        .adapters
        .iter()
        .map(|a| OptimizerState::new(a, cfg.phase2.adamw()))
        .collect();
    let router = state
        .router
        .as_mut()
        .ok_or_else(|| CcrError::Protocol("Phase-II needs a router".into()))?;
    let mut router_opt = OptimizerState::new(&*router, cfg.router.adamw());
    let (mut a_step, mut r_step, mut loss_sum) = (0u64, 0u64, 0.0);

    for epoch in 0..adapter_epochs.max(router_epochs) {
        let mut rng = rng_for(cfg.seed, "phase2", &[stage as u64, epoch as u64]);
        for batch in phase2_pair_sampler(&classes, b, &mut rng)? {
            for &(a, p) in &batch {
                log.phase2.insert(entries[a].id.clone());
                log.phase2.insert(entries[p].id.clone());
            }
            if let (true, Some(sched)) = (epoch < adapter_epochs, &adapter_sched) {
                let mut anchors = Vec::with_capacity(batch.len());
                let mut cands = Vec::with_capacity(batch.len());
                for &(a, p) in &batch {
                    let (ea, ep) = (&entries[a], &entries[p]);
                    anchors.push((ea.script, forward_train(provider.visual_features(&ea.id)?, &state.adapters[ea.script], provider)?));
                    cands.push((ep.script, forward_train(provider.visual_features(&ep.id)?, &state.adapters[ep.script], provider)?));
                }
                let contrastive = ContrastiveBatch::new(
                    anchors.iter().map(|f| f.1.unit.clone()).collect(),
                    cands.iter().map(|f| f.1.unit.clone()).collect(),
                    vec![Modality::Image; batch.len()],
                    vec![true; batch.len()],
                )?;
                let out = infonce_loss(&contrastive, cfg.tau)?;
                loss_sum += out.loss.as_f64();
                let mut grads: Vec<SiaParams<T>> = state.adapters.iter().map(|a| a.zeros_like()).collect();
                for ((k, f), g) in anchors.into_iter().zip(&out.anchor_grads) {
                    backward_train(f, g, &state.adapters[k], &mut grads[k], provider)?;
                }
                for ((k, f), g) in cands.into_iter().zip(&out.candidate_grads) {
                    let g = g.as_ref().expect("image candidates are trainable");
                    backward_train(f, g, &state.adapters[k], &mut grads[k], provider)?;
                }
                a_step += 1;
                let lr = lr_at(sched, a_step, cfg.phase2.lr)?;
                for ((adapter, g), opt) in state.adapters.iter_mut().zip(&grads).zip(&mut adapter_opts) {
                    adamw_step(adapter, g, opt, lr)?;
                }
            }
            if let (true, Some(sched)) = (epoch < router_epochs, &router_sched) {
                let mut grads = router.zeros_like();
                let w = T::lit(1.0 / batch.len() as f64);
                for &(a, _) in &batch {
                    let e = &entries[a];
                    router_ce_loss_into(provider.visual_features(&e.id)?, e.script, router, &mut grads, w)?;
                }
                r_step += 1;
                adamw_step(router, &grads, &mut router_opt, lr_at(sched, r_step, cfg.router.lr)?)?;
            }
        }
    }
    Ok((a_step > 0).then(|| loss_sum / a_step as f64))
}

/// Builds the dictionary from every observed training image, embedded
/// through the inference path.
pub fn build_stage_bank<T: Scalar>(
    state: &StageState<T>,
    provider: &dyn EmbedProvider<T>,
    observed: &[StageData],
    cfg: &RunConfig,
    log: &mut AccessLog,
) -> Result<PrototypeBank<T>> {
    let routing = state.routing();
    let mut groups: ClassGroups<T> = BTreeMap::new();
    for (i, data) in observed.iter().enumerate() {
        for r in &data.train {
            log.bank.insert(r.id.clone());
            let key = ClassKey::new(i, r.character.clone().unwrap_or_default());
            groups.entry(key).or_default().push(embed_image(state, provider, r, routing)?);
        }
    }
    build_bank(
        &groups,
        BankConfig {
            strategy: cfg.bank_strategy(),
            seed: derive_seed(cfg.seed, "bank", &[]),
        },
    )
}

/// Top-1 and Top-10 accuracy on each observed stage's test split.
pub fn evaluate_stage<T: Scalar>(
    state: &StageState<T>,
    provider: &dyn EmbedProvider<T>,
    observed: &[StageData],
    log: &mut AccessLog,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let bank = state
        .bank
        .as_ref()
        .ok_or_else(|| CcrError::Protocol("evaluation before the bank was built".into()))?;
    if bank.dim != provider.dim() {
        return Err(CcrError::DimensionMismatch {
            context: "bank vs provider",
            expected: bank.dim,
            got: provider.dim(),
        });
    }
    if observed.len() > state.stage {
        return Err(violation(
            state.stage,
            format!("{} test splits requested after {} stages", observed.len(), state.stage),
        ));
    }
    let routing = state.routing();
    let (mut top1, mut top10) = (Vec::new(), Vec::new());
    for (i, data) in observed.iter().enumerate() {
        if state.scripts.get(i) != Some(&data.script) {
            return Err(violation(state.stage, format!("test split of `{}` is not stage {}", data.script, i + 1)));
        }
        if data.test.is_empty() {
            return Err(CcrError::Protocol(format!("missing test split for stage {} ({})", i + 1, data.script)));
        }
        let (mut hit1, mut hit10) = (0usize, 0usize);
        for r in &data.test {
            if r.split != Split::Test || r.script.as_deref() != Some(data.script.as_str()) {
                return Err(violation(state.stage, format!("`{}` is not a stage-{} test image", r.id, i + 1)));
            }
            log.eval.insert(r.id.clone());
            let q = embed_image(state, provider, r, routing)?;
            let scores = bank.class_scores(&q)?;
            let key = ClassKey::new(i, r.character.clone().unwrap_or_default());
            match bank.class_index(&key) {
                Some(c) => {
                    let rank = class_rank(&scores, c);
                    hit1 += usize::from(rank < 1);
                    hit10 += usize::from(rank < 10);
                }
                None => log::warn!("test class {key} has no training images"),
            }
        }
        let n = data.test.len() as f64;
        top1.push(hit1 as f64 / n);
        top10.push(hit10 as f64 / n);
    }
    Ok((top1, top10))
}

/// Runs one onboarding stage. `observed` holds every stage so far, the
/// current one last.
pub fn run_stage<T: Scalar>(
    state: &mut StageState<T>,
    observed: &[StageData],
    provider: &dyn EmbedProvider<T>,
    cfg: &RunConfig,
) -> Result<StageOutcome> {
    let stage = state.stage + 1;
    if state.mode != cfg.mode {
        return Err(CcrError::Protocol(format!("state is in mode {} but config says {}", state.mode, cfg.mode)));
    }
    let expected = cfg.stage_order.get(state.stage).ok_or_else(|| {
        CcrError::Protocol(format!("stage {stage} is beyond the configured order of {}", cfg.stage_order.len()))
    })?;
    let data = observed
        .last()
        .ok_or_else(|| CcrError::Protocol("run_stage needs the current stage's data".into()))?;
    if &data.script != expected {
        return Err(CcrError::Protocol(format!(
            "stage {stage} must onboard `{expected}`, got `{}`",
            data.script
        )));
    }
    if observed.len() != stage {
        return Err(violation(stage, format!("{} stage datasets supplied at stage {stage}", observed.len())));
    }
    for (i, d) in observed[..state.stage].iter().enumerate() {
        if d.script != state.scripts[i] {
            return Err(violation(stage, format!("history entry {} is `{}`, expected `{}`", i + 1, d.script, state.scripts[i])));
        }
    }
    for r in &data.train {
        if r.kind != Modality::Image || r.split != Split::Train || r.script.as_deref() != Some(data.script.as_str()) {
            return Err(violation(stage, format!("`{}` is not a stage-{stage} training image", r.id)));
        }
    }
    if data.train.is_empty() {
        return Err(CcrError::Protocol(format!("stage {stage} ({}) has no training images", data.script)));
    }

    let script_idx = state.scripts.len();
    state.scripts.push(data.script.clone());
    let dim = provider.dim();
    let mut log = AccessLog::default();
    let mut timing = StageTiming {
        stage,
        script: data.script.clone(),
        ..StageTiming::default()
    };

    let clock = Instant::now();
    let mut phase1_loss = None;
    if cfg.mode.trains() {
        let slot = if cfg.mode == AblationMode::SeqSingleAdapter && !state.adapters.is_empty() {
            0
        } else {
            let seed = derive_seed(cfg.seed, "sia", &[script_idx as u64]);
            state.adapters.push(sia_init_for_script(dim, cfg.adapter_rank(dim), seed, script_idx)?);
            state.adapters.len() - 1
        };
        phase1_loss = phase1(state, slot, data, provider, cfg, &mut log)?;
    }
    timing.phase1_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let mut phase2_loss = None;
    if cfg.mode.uses_adapter_bank() {
        let mut rng = rng_for(cfg.seed, "buffer", &[stage as u64]);
        let train: Vec<&Record> = data.train.iter().collect();
        state.buffer = buffer_update(&state.buffer, &train, script_idx, &mut rng)?;
        state.router = Some(match &state.router {
            None => RouterParams::new(dim, cfg.router_hidden, 1, derive_seed(cfg.seed, "router", &[]))?,
            Some(r) => router_grow(r, script_idx + 1, derive_seed(cfg.seed, "router-head", &[script_idx as u64]))?,
        });
        phase2_loss = phase2(state, provider, cfg, &mut log)?;
    }
    timing.phase2_s = clock.elapsed().as_secs_f64();
    state.stage = stage;

    let clock = Instant::now();
    state.bank = Some(build_stage_bank(state, provider, observed, cfg, &mut log)?);
    timing.bank_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let (top1, top10) = evaluate_stage(state, provider, observed, &mut log)?;
    timing.eval_s = clock.elapsed().as_secs_f64();

    Ok(StageOutcome {
        top1,
        top10,
        phase1_loss,
        phase2_loss,
        timing,
        access: log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResult {
    pub at1: f64,
    pub at20: f64,
    pub queries: usize,
    pub candidates: usize,
}

/// Ranks each zero-shot image against the meaning-text dictionary.
/// `training_chars` are all characters with training images; any overlap
/// with the queries is a contract violation.
pub fn run_zero_shot<T: Scalar>(
    state: &StageState<T>,
    provider: &dyn EmbedProvider<T>,
    queries: &[Record],
    dict: &TextDictionary<T>,
    training_chars: &BTreeSet<String>,
) -> Result<ZeroShotResult> {
    if let Some(q) = queries
        .iter()
        .find(|q| q.character.as_deref().is_some_and(|c| training_chars.contains(c)))
    {
        return Err(violation(
            state.stage,
            format!("zero-shot character `{}` also appears in training data", q.character.as_deref().unwrap_or("")),
        ));
    }
    if dict.is_empty() {
        return Err(CcrError::InvalidArgument("zero-shot text dictionary is empty".into()));
    }
    if queries.is_empty() {
        return Err(CcrError::InvalidArgument("no zero-shot queries".into()));
    }
    let routing = state.routing();
    let (mut hit1, mut hit20) = (0usize, 0usize);
    for q in queries {
        let ch = q.character.as_deref().unwrap_or("");
        if q.kind != Modality::Image {
            return Err(CcrError::InvalidArgument(format!("zero-shot query `{}` is not an image", q.id)));
        }
        let truth = dict
            .position(ch)
            .ok_or_else(|| CcrError::InvalidArgument(format!("character `{ch}` is missing from the text dictionary")))?;
        let v = embed_image(state, provider, q, routing)?;
        let rank = class_rank(&dict.scores(&v)?, truth);
        hit1 += usize::from(rank < 1);
        hit20 += usize::from(rank < 20);
    }
    let n = queries.len() as f64;
    Ok(ZeroShotResult {
        at1: hit1 as f64 / n,
        at20: hit20 as f64 / n,
        queries: queries.len(),
        candidates: dict.len(),
    })
}

/// Meaning-text dictionary over the manifest's zero-shot characters.
pub fn zero_shot_dictionary<T: Scalar>(
    manifest: &DatasetManifest,
    provider: &dyn EmbedProvider<T>,
) -> Result<TextDictionary<T>> {
    let entries = manifest
        .meanings(Split::ZeroShot)
        .into_iter()
        .map(|(c, r)| Ok((c, provider.text_embedding(&r.id)?.to_vec())))
        .collect::<Result<Vec<_>>>()?;
    TextDictionary::new(entries)
}
