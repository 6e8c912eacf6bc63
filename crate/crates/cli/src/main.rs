use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use glyphret::data::{default_script_order, script_order_index, ClassKey, Modality};
use glyphret::dictionary::{build_bank, group_by_class, AutoKConfig, BankConfig, BankStrategy, TextDictionary};
use glyphret::engine::{
    eval_checkpoint, load_data, run_to_dir, zero_shot_checkpoint, AblationMode, Checkpoint, DataSource, MetricsReport,
    RunConfig,
};
use glyphret::io::{read_embeddings, read_json, read_manifest, write_embeddings, write_json, write_manifest};
use glyphret::provider::{load_file_provider, EmbedProvider};
use glyphret::synth::{generate, summarize, SynthConfig};
use glyphret::{CcrError, Result, Scalar};
use serde_json::json;

#[derive(Parser)]
#[command(name = "glyphret", version, about = "Continual cross-script glyph retrieval")]
struct Cli {
    /// Floating-point precision for all numeric work.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: manifest, embeddings and a summary table.
    Gen {
        /// Generator config (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the staged protocol and write the report and checkpoints.
    Run {
        /// Run config (JSON). Without one, the desk preset is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the run seed, and the generator seed for synthetic data.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<AblationMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate a checkpoint on a test manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Embeddings file; defaults to the checkpoint's own data source.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Zero-shot scores of a checkpoint against a meaning-text dictionary.
    Zs {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Embeddings file whose meaning records form the dictionary.
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a prototype bank over the image records of an embeddings file.
    DictBuild {
        #[arg(long)]
        embeddings: PathBuf,
        /// Bank strategy (JSON); defaults to Auto-K.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretty-print a metrics report.
    Report {
        path: PathBuf,
        #[arg(long)]
        csv: bool,
    },
}

/// Writes to stdout; a closed pipe (as with `| head`) ends the process quietly.
fn emit(args: fmt::Arguments, newline: bool) {
    let mut out = io::stdout().lock();
    let res = out.write_fmt(args).and_then(|()| if newline { out.write_all(b"\n") } else { Ok(()) });
    if let Err(e) = res.and_then(|()| out.flush()) {
        if e.kind() != io::ErrorKind::BrokenPipe {
            eprintln!("error[io]: writing to stdout: {e}");
            std::process::exit(1);
        }
        std::process::exit(0);
    }
}

macro_rules! say {
    ($($arg:tt)*) => { emit(format_args!($($arg)*), true) };
}

macro_rules! say_raw {
    ($($arg:tt)*) => { emit(format_args!($($arg)*), false) };
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            say_raw!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("bad usage");
            eprintln!("error[usage]: {}", line.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let res = match cli.precision {
        Precision::F32 => dispatch::<f32>(cli.command),
        Precision::F64 => dispatch::<f64>(cli.command),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn dispatch<T: Scalar>(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { config, seed, out } => gen::<T>(config.as_deref(), seed, &out),
        Command::Run {
            config,
            seed,
            mode,
            out,
        } => run::<T>(config.as_deref(), seed, mode, out),
        Command::Eval {
            checkpoint,
            manifest,
            embeddings,
            out,
        } => eval::<T>(&checkpoint, &manifest, embeddings.as_deref(), out.as_deref()),
        Command::Zs {
            checkpoint,
            manifest,
            dictionary,
            embeddings,
            out,
        } => zs::<T>(&checkpoint, &manifest, dictionary.as_deref(), embeddings.as_deref(), out.as_deref()),
        Command::DictBuild {
            embeddings,
            config,
            seed,
            out,
        } => dict_build::<T>(&embeddings, config.as_deref(), seed, out.as_deref()),
        Command::Report { path, csv } => {
            let report: MetricsReport = read_json(&path)?;
            report.verify()?;
            if csv {
                say_raw!("{}", report.to_csv());
            } else {
                say!("{report}");
            }
            Ok(())
        }
    }
}

fn gen<T: Scalar>(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = generate::<T>(&cfg)?;
    write_json(out.join("synth_config.json"), &cfg)?;
    write_manifest(out.join("manifest.jsonl"), &ds.manifest)?;
    write_embeddings(out.join("embeddings.jsonl"), &ds.embeddings)?;
    let summary = summarize(&ds.manifest);
    glyphret::io::write_atomic(out.join("summary.csv"), summary.to_csv().as_bytes())?;
    say!("{summary}");
    Ok(())
}

fn run<T: Scalar>(config: Option<&Path>, seed: Option<u64>, mode: Option<AblationMode>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg: RunConfig = match config {
        Some(p) => read_json(p)?,
        None => RunConfig::desk(seed.unwrap_or(0)),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        if let DataSource::Synth(sc) = &mut cfg.data {
            sc.seed = s;
        }
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CcrError::InvalidArgument("no output directory: pass --out or set output_dir".into()))?;
    let (outcome, artifacts) = run_to_dir::<T>(&cfg, &dir)?;
    say!("{}", outcome.report);
    say!("report written to {}", artifacts.report_json.display());
    Ok(())
}

fn provider_for<T: Scalar>(cfg: &RunConfig, embeddings: Option<&Path>) -> Result<Box<dyn EmbedProvider<T>>> {
    match embeddings {
        Some(path) => {
            let post_map = match &cfg.data {
                DataSource::Synth(s) => s.post_map,
                DataSource::Files { post_map, .. } => *post_map,
            };
            Ok(Box::new(load_file_provider::<T>(path, post_map, None)?))
        }
        None => Ok(load_data::<T>(&cfg.data)?.provider),
    }
}

fn eval<T: Scalar>(checkpoint: &Path, manifest: &Path, embeddings: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::<T>::load(checkpoint)?;
    let tests = read_manifest(manifest)?;
    let provider = provider_for::<T>(&ck.config, embeddings)?;
    let (top1, top10) = eval_checkpoint(&ck, provider.as_ref(), &tests)?;
    let row = json!({ "stage": ck.stage, "scripts": ck.state.scripts, "top1": top1, "top10": top10 });
    say!("{row}");
    if let Some(p) = out {
        write_json(p, &row)?;
    }
    Ok(())
}

fn zs<T: Scalar>(
    checkpoint: &Path,
    manifest: &Path,
    dictionary: Option<&Path>,
    embeddings: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let ck = Checkpoint::<T>::load(checkpoint)?;
    let queries = read_manifest(manifest)?;
    let provider = provider_for::<T>(&ck.config, embeddings)?;
    let dict = match dictionary {
        Some(p) => {
            let entries = read_embeddings::<T>(p)?
                .into_iter()
                .filter(|r| r.kind == Modality::Meaning)
                .map(|r| {
                    let c = r.character.ok_or_else(|| CcrError::Parse(format!("meaning record `{}` has no char", r.id)))?;
                    Ok((c, r.values))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(TextDictionary::new(entries)?)
        }
        None => None,
    };
    let res = zero_shot_checkpoint(&ck, provider.as_ref(), &queries, dict)?;
    if res.at1 > res.at20 {
        return Err(CcrError::Protocol(format!("ZS@1 {} exceeds ZS@20 {}", res.at1, res.at20)));
    }
    let doc = json!({
        "stage": ck.stage,
        "zs_at1": res.at1,
        "zs_at20": res.at20,
        "queries": res.queries,
        "candidates": res.candidates,
    });
    say!("ZS@1 {:.4}  ZS@20 {:.4}  ({} queries, {} candidates)", res.at1, res.at20, res.queries, res.candidates);
    if let Some(p) = out {
        write_json(p, &doc)?;
    }
    Ok(())
}

fn dict_build<T: Scalar>(embeddings: &Path, config: Option<&Path>, seed: u64, out: Option<&Path>) -> Result<()> {
    let strategy: BankStrategy = match config {
        Some(p) => read_json(p)?,
        None => BankStrategy::AutoK(AutoKConfig::default()),
    };
    let records: Vec<_> = read_embeddings::<T>(embeddings)?
        .into_iter()
        .filter(|r| r.kind == Modality::Image)
        .collect();
    let names: Vec<String> = records.iter().filter_map(|r| r.script.clone()).collect();
    let order = script_order_index(&default_script_order(&names));
    let mut items = Vec::with_capacity(records.len());
    for r in records {
        let (Some(script), Some(c)) = (r.script.as_ref(), r.character.clone()) else {
            return Err(CcrError::Parse(format!("image record `{}` lacks a script or char", r.id)));
        };
        items.push((ClassKey::new(order[script], c), r.values));
    }
    if items.is_empty() {
        return Err(CcrError::InvalidArgument("embeddings file has no image records".into()));
    }
    let bank = build_bank(&group_by_class(items), BankConfig { strategy, seed })?;
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for w in bank.pointers.windows(2) {
        *histogram.entry(w[1] - w[0]).or_default() += 1;
    }
    say!("{} classes, {} prototypes", bank.num_classes(), bank.num_prototypes());
    for (k, n) in &histogram {
        say!("  K={k}: {n} classes");
    }
    if let Some(p) = out {
        write_json(p, &bank)?;
    }
    Ok(())
}
