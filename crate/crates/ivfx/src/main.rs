use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ivfx::checkpoint::{load_adapter, load_checkpoint, read_json, save_adapter, save_checkpoint};
use ivfx::config::{resolve, write_effective};
use ivfx::dataset::{self, DatasetKind};
use ivfx::experiment::{self, Recipe};
use ivfx::profile::{self, ProfileConfig, ProfileShape};
use ivfx::{checks, eval, format, preview, threads, Error, Result};
use ivfx_core::ablation::Axis;
use ivfx_core::lora;
use ivfx_core::metrics::MetricConfig;
use ivfx_core::model::{Model, ModelConfig};
use ivfx_core::pipeline::EditConfig;
use ivfx_core::rng::derive_seed;
use ivfx_core::sampler::{sample, SampleConfig};
use ivfx_core::synth::{Effect, SynthConfig};
use ivfx_core::train::{self, StepRecord, TrainConfig, TrainReport, EFFECT_ADAPTER};
use serde::{Deserialize, Serialize};

/// In-context video effect editing at desk scale.
///
/// Every subcommand accepts `--config <file.json>` and repeated
/// `--set dotted.key=value` overrides (applied in that order over the
/// defaults) and writes `effective-config.json` next to its outputs.
/// IVFX_THREADS caps the worker count.
#[derive(Parser)]
#[command(name = "ivfx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON file overriding the defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set train.lr=3e-4`; beats the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic triplet dataset.
    GenData {
        /// general or vfx.
        #[arg(long, value_parser = parse_kind)]
        kind: DatasetKind,
        /// Effect id for `--kind vfx`, e.g. GLOW_OUTLINE.
        #[arg(long, value_parser = parse_effect)]
        effect: Option<Effect>,
        #[arg(long)]
        count: usize,
        /// Root seed [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Stage 1: train the general editor from a random base and merge it.
    TrainEditor {
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Root seed [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Stage 2: train an effect adapter on a merged editor.
    TrainEffect {
        /// Merged editor checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Root seed [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory: checkpoint with the adapter attached, plus
        /// the adapter alone under `adapter/`.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fold adapters into the base weights.
    MergeLora {
        #[arg(long)]
        ckpt: PathBuf,
        /// Adapter directory to install before merging.
        #[arg(long)]
        adapter: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edit one clip.
    Edit {
        /// Source clip (.ivfx).
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Guidance scale.
        #[arg(long)]
        cfg: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output clip (.ivfx).
        #[arg(long)]
        out: PathBuf,
        /// Also dump PNG frames into this directory.
        #[arg(long)]
        png_dir: Option<PathBuf>,
        /// Also write an animated GIF preview.
        #[arg(long)]
        gif: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Sample and score every triplet of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Root seed [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for eval.csv and eval.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and evaluate the full method and one variant per axis.
    Ablate {
        /// Comma-separated axes: STST, Z_I, PRETRAIN, EFFECT_LORA, PEC, CATTN.
        /// [default: STST,Z_I,PRETRAIN,EFFECT_LORA,PEC]
        #[arg(long, value_delimiter = ',', value_parser = parse_axis)]
        axes: Vec<Axis>,
        /// Root seed [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Time forward passes per token layout (single-threaded).
    Profile {
        /// JSON list of {name, target, sparse, frame}; defaults to the
        /// sparse, full-condition and target-only shapes.
        #[arg(long)]
        shapes: Option<PathBuf>,
        /// report.json; report.md is written beside it.
        #[arg(long)]
        out: PathBuf,
        /// Exit 1 when timings are too noisy or the ratio misses its band.
        #[arg(long)]
        ci: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the invariant suite.
    Selftest,
}

const DEFAULT_AXES: [Axis; 5] = [Axis::Stst, Axis::FirstFrame, Axis::Pretrain, Axis::EffectLora, Axis::PositionCorrection];

fn parse_kind(s: &str) -> std::result::Result<DatasetKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|_| format!("unknown dataset kind '{s}'"))
}

fn parse_effect(s: &str) -> std::result::Result<Effect, String> {
    s.parse().map_err(|e: ivfx_core::Error| e.to_string())
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    s.parse().map_err(|e: ivfx_core::Error| e.to_string())
}

#[derive(Serialize, Deserialize)]
struct GenDataRun {
    kind: DatasetKind,
    effect: Option<Effect>,
    count: usize,
    seed: u64,
    synth: SynthConfig,
}

#[derive(Serialize, Deserialize)]
struct EditorRun {
    seed: u64,
    model: ModelConfig,
    edit: EditConfig,
    train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct EffectRun {
    seed: u64,
    train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct EvalRun {
    seed: u64,
    sample: SampleConfig,
    metric: MetricConfig,
}

#[derive(Serialize, Deserialize)]
struct EditRun {
    source: PathBuf,
    prompt: String,
    ckpt: PathBuf,
    sample: SampleConfig,
}

#[derive(Serialize, Deserialize)]
struct AblateRun {
    axes: Vec<Axis>,
    recipe: Recipe,
}

#[derive(Serialize, Deserialize)]
struct ProfileRun {
    shapes: Vec<ProfileShape>,
    profile: ProfileConfig,
}

/// Defaults, then the config file, then explicit flags, then `--set`.
fn resolved<T: Serialize + for<'de> Deserialize<'de>>(
    defaults: T,
    args: &ConfigArgs,
    flags: &[(&str, Option<serde_json::Value>)],
) -> Result<T> {
    let mut overrides: Vec<String> = flags.iter().filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v}"))).collect();
    overrides.extend(args.overrides.iter().cloned());
    resolve(&defaults, args.config.as_deref(), &overrides)
}

fn flag(v: Option<impl Serialize>) -> Option<serde_json::Value> {
    v.map(|v| serde_json::to_value(v).expect("flag values serialize"))
}

fn progress(tag: &'static str, every: usize) -> impl FnMut(&StepRecord) {
    move |r: &StepRecord| {
        if (r.step + 1).is_multiple_of(every) {
            eprintln!("{tag} step {} loss {:.5} lr {:.2e}", r.step + 1, r.loss, r.lr);
        }
    }
}

fn write_train_outputs(dir: &Path, report: &TrainReport) -> Result<()> {
    let csv = dir.join("loss.csv");
    fs::write(&csv, report.curve_csv()).map_err(|source| Error::Io { path: csv, source })?;
    let json = dir.join("train-report.json");
    let s = serde_json::to_string_pretty(report).map_err(|source| Error::Json { path: json.clone(), source })?;
    fs::write(&json, s + "\n").map_err(|source| Error::Io { path: json, source })
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::GenData { kind, effect, count, seed, out, cfg } => {
            let defaults = GenDataRun { kind, effect: None, count, seed: 0, synth: SynthConfig::default() };
            let flags = [("kind", flag(Some(kind))), ("effect", flag(effect)), ("count", flag(Some(count))), ("seed", flag(seed))];
            let run = resolved(defaults, &cfg, &flags)?;
            let triplets = dataset::generate(run.kind, run.effect, run.seed, run.count, &run.synth)?;
            dataset::save_dataset(&out, &triplets, run.kind, run.effect, run.seed, &run.synth)?;
            write_effective(&out, &run)?;
            eprintln!("wrote {} triplets to {}", triplets.len(), out.display());
        }
        Command::TrainEditor { data, seed, out, cfg } => {
            let mut run = resolved(
                EditorRun { seed: 0, model: ModelConfig::default(), edit: EditConfig::default(), train: TrainConfig::editor() },
                &cfg,
                &[("seed", flag(seed))],
            )?;
            run.train.seed = derive_seed(run.seed, 1);
            let (_, triplets) = dataset::load_dataset(&data)?;
            let mut model = Model::<f32>::init(run.model, derive_seed(run.seed, 0))?;
            let ex = experiment::examples(&model, &run.edit, &triplets)?;
            let every = (run.train.steps / 20).max(1);
            let report = train::train_stage(&mut model, &ex, &run.train, &mut progress("editor", every))?;
            train::finish_editor(&mut model)?;
            save_checkpoint(&out, &model, &run.edit)?;
            write_train_outputs(&out, &report)?;
            write_effective(&out, &run)?;
            eprintln!("probe loss {:.5} -> {:.5}", report.probe_initial, report.probe_final);
        }
        Command::TrainEffect { ckpt, data, seed, out, cfg } => {
            let mut run = resolved(EffectRun { seed: 0, train: TrainConfig::effect() }, &cfg, &[("seed", flag(seed))])?;
            run.train.seed = derive_seed(run.seed, 2);
            let ck = load_checkpoint(&ckpt)?;
            let (_, triplets) = dataset::load_dataset(&data)?;
            let mut model = ck.model;
            let ex = experiment::examples(&model, &ck.edit, &triplets)?;
            let every = (run.train.steps / 20).max(1);
            let report = train::train_stage(&mut model, &ex, &run.train, &mut progress("effect", every))?;
            save_checkpoint(&out, &model, &ck.edit)?;
            save_adapter(&out.join("adapter"), &lora::extract(&model, EFFECT_ADAPTER)?)?;
            write_train_outputs(&out, &report)?;
            write_effective(&out, &run)?;
            eprintln!("probe loss {:.5} -> {:.5}", report.probe_initial, report.probe_final);
        }
        Command::MergeLora { ckpt, adapter, out } => {
            let mut ck = load_checkpoint(&ckpt)?;
            if let Some(dir) = &adapter {
                lora::install(&mut ck.model, &load_adapter(dir)?, false)?;
            }
            let mut prefixes: Vec<String> = Vec::new();
            for s in ck.model.adapters.clone() {
                let prefix = adapter_prefix(&s.a);
                if !prefixes.contains(&prefix) {
                    prefixes.push(prefix);
                }
            }
            if prefixes.is_empty() {
                return Err(Error::Config("checkpoint carries no adapters to merge".into()));
            }
            for p in &prefixes {
                lora::merge(&mut ck.model, p)?;
            }
            save_checkpoint(&out, &ck.model, &ck.edit)?;
            write_effective(&out, &serde_json::json!({ "ckpt": ckpt, "adapter": adapter, "merged": prefixes }))?;
        }
        Command::Edit { source, prompt, ckpt, steps, cfg, seed, out, png_dir, gif, config } => {
            let flags = [("sample.steps", flag(steps)), ("sample.guidance_scale", flag(cfg)), ("sample.seed", flag(seed))];
            let run = resolved(EditRun { source, prompt, ckpt, sample: SampleConfig::default() }, &config, &flags)?;
            let ck = load_checkpoint(&run.ckpt)?;
            let clip = format::load_clip(&run.source)?;
            let edited = sample(&ck.model, &ck.edit, &clip, &run.prompt, &run.sample)?;
            format::save_clip(&out, &edited)?;
            if let Some(d) = &png_dir {
                preview::write_png_frames(d, &edited)?;
            }
            if let Some(g) = &gif {
                preview::write_gif(g, &edited, 4)?;
            }
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            write_effective(dir, &run)?;
        }
        Command::Eval { ckpt, data, seed, out, cfg } => {
            let mut run = resolved(
                EvalRun { seed: 0, sample: SampleConfig::default(), metric: MetricConfig::default() },
                &cfg,
                &[("seed", flag(seed))],
            )?;
            run.sample.seed = run.seed;
            let ck = load_checkpoint(&ckpt)?;
            let (_, triplets) = dataset::load_dataset(&data)?;
            let report = eval::evaluate(&ck.model, &ck.edit, &triplets, &run.sample, &run.metric);
            report.write(&out)?;
            write_effective(&out, &run)?;
            let s = &report.summary;
            println!(
                "psnr {:.2} dB  iou {:.3}  temporal {:.4}  ({} triplets, {} failed)",
                s.psnr.mean,
                s.iou.mean,
                s.temporal.mean,
                report.rows.len(),
                report.failures
            );
        }
        Command::Ablate { axes, seed, out, cfg } => {
            let defaults = AblateRun { axes: DEFAULT_AXES.to_vec(), recipe: Recipe::default() };
            let axes = (!axes.is_empty()).then_some(axes);
            let mut run = resolved(defaults, &cfg, &[("axes", flag(axes)), ("recipe.seed", flag(seed))])?;
            run.axes.dedup();
            let every = (run.recipe.editor.steps / 10).max(1);
            let report = experiment::run_ablation(&run.recipe, &run.axes, &mut |label, phase, r| {
                if (r.step + 1) % every == 0 {
                    eprintln!("{label} {phase:?} step {} loss {:.5}", r.step + 1, r.loss);
                }
            })?;
            fs::create_dir_all(&out).map_err(|source| Error::Io { path: out.clone(), source })?;
            write_text(&out.join("ablation.md"), &report.markdown())?;
            write_text(&out.join("ablation.csv"), &report.csv())?;
            let json = serde_json::to_string_pretty(&report).map_err(|source| Error::Json { path: out.join("ablation.json"), source })?;
            write_text(&out.join("ablation.json"), &(json + "\n"))?;
            write_effective(&out, &run)?;
            print!("{}", report.markdown());
        }
        Command::Profile { shapes, out, ci, cfg } => {
            let shapes = match &shapes {
                Some(p) => read_json(p)?,
                None => profile::default_shapes(),
            };
            let run = resolved(ProfileRun { shapes, profile: ProfileConfig::default() }, &cfg, &[])?;
            let report = threads::with_pool(1, || profile::profile(&run.shapes, &run.profile))??;
            let json = serde_json::to_string_pretty(&report).map_err(|source| Error::Json { path: out.clone(), source })?;
            write_text(&out, &(json + "\n"))?;
            write_text(&out.with_extension("md"), &report.markdown())?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            write_effective(dir, &run)?;
            print!("{}", report.markdown());
            if ci && !report.ok() {
                eprintln!("profile check failed: noisy timings or ratio outside its band");
                return Ok(false);
            }
        }
        Command::Selftest => {
            let results = checks::invariant_suite();
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.pass).count();
            println!("{} of {} checks passed", results.len() - failed, results.len());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

/// `lora.effect.blocks.0.attn.q.a` -> `lora.effect`.
fn adapter_prefix(tensor: &str) -> String {
    tensor.splitn(3, '.').take(2).collect::<Vec<_>>().join(".")
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = threads::worker_count().and_then(|n| threads::with_pool(n, || dispatch(cli.command))?);
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
