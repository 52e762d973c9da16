//! `hpvit` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error. Outputs go to `--out`, or to a per-command directory under the
//! output root (`--out-root`, environment `HPVIT_OUT`, default `runs`).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hpvit_core::blur::{blur_image, BlurSchedule};
use hpvit_core::train::{Precision, TrainError};
use hpvit_core::vit::predict_proba;
use hpvit_core::{CurriculumMode, Image, Real, RunLog, Trainer};
use sha2::{Digest, Sha256};

use crate::cache::{self, write_json, CurriculumManifest, PrepareOptions, MANIFEST_FILE};
use crate::checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::dataset::{
    decode, hex, load_samples, save_png, scan_folder, stratified_split, DatasetManifest, Split,
};
use crate::report::{self, ScoredSample};
use crate::runlog::{self, CurriculumInfo, RunSummary};
use crate::synth::{self, SynthConfig};

/// Marks a directory as written by `hpvit`; only such directories are
/// cleared by `--force`.
pub const OUTPUT_MARKER: &str = ".hpvit-output";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const SOURCE_MANIFEST: &str = "source.json";
pub const TEST_MANIFEST: &str = "test.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation, configuration or input contract (exit 2).
    Usage(String),
    /// Failure while doing the work (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_)
            | TrainError::EmptyCurriculum
            | TrainError::BatchExceedsGroup { .. }
            | TrainError::TooFewEpochs { .. }
            | TrainError::Label { .. }
            | TrainError::Model(_) => usage(e),
            _ => runtime(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hpvit",
    version,
    about = "Blur-curriculum Vision Transformer: prepare, train, evaluate, compare"
)]
pub struct Cli {
    /// Root for default output directories.
    #[arg(long, global = true, env = "HPVIT_OUT", default_value = "runs")]
    pub out_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the two-class synthetic dataset (blobs vs stripes).
    Synth(SynthArgs),
    /// Blur a folder dataset into a k-level curriculum cache.
    Prepare(PrepareArgs),
    /// Train a ViT on a prepared curriculum.
    Train(TrainArgs),
    /// Evaluate a checkpoint on unblurred test data.
    Eval(EvalArgs),
    /// Compare two evaluation reports side by side.
    Compare(CompareArgs),
    /// Write one image at every blur level as a horizontal strip.
    PreviewBlur(PreviewArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Images per class.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    /// 1 (gray) or 3 (RGB).
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output folder [default: <out-root>/synth-seed<seed>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing hpvit output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Dataset folder (`<root>/<class>/<image>`) or a dataset manifest JSON.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of blur levels.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Seed of the group partition and the train/test split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of every class held out as the test split (0 keeps all).
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 224)]
    pub height: usize,
    #[arg(long, default_value_t = 224)]
    pub width: usize,
    /// 1 (gray) or 3 (RGB).
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Output directory [default: <out-root>/curriculum-k<k>-seed<seed>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing hpvit output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Staged,
    OrderedEpoch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Curriculum directory written by `prepare`.
    #[arg(long)]
    pub curriculum: PathBuf,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set model.patch=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub curriculum_mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Write `checkpoints/epoch-<n>.bin` every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Image loading threads; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Run identifier recorded in the checkpoint [default: k<k>-seed<seed>].
    #[arg(long)]
    pub run_id: Option<String>,
    /// Continue from a checkpoint; logs in the output directory are kept
    /// up to the checkpoint's epoch.
    #[arg(long, conflicts_with = "force")]
    pub resume: Option<PathBuf>,
    /// Output directory [default: <out-root>/train-<run-id>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing hpvit output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test folder or dataset manifest JSON (e.g. `test.json` from prepare).
    #[arg(long)]
    pub data: PathBuf,
    /// Identifier in the report [default: the checkpoint's run id].
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Image loading threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Output directory [default: <out-root>/eval-<model-id>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing hpvit output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Evaluation directory or report.json of model A.
    pub a: PathBuf,
    /// Evaluation directory or report.json of model B.
    pub b: PathBuf,
    /// Output directory [default: <out-root>/compare-<A>-vs-<B>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing hpvit output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    /// PNG or PPM image.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Resize before blurring [default: native size].
    #[arg(long, requires = "width")]
    pub height: Option<usize>,
    #[arg(long, requires = "height")]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Output PNG [default: <out-root>/preview-blur-k<k>.png].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing file.
    #[arg(long)]
    pub force: bool,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let root = cli.out_root;
    match cli.command {
        Command::Synth(a) => cmd_synth(&root, a),
        Command::Prepare(a) => cmd_prepare(&root, a),
        Command::Train(a) => cmd_train(&root, a),
        Command::Eval(a) => cmd_eval(&root, a),
        Command::Compare(a) => cmd_compare(&root, a),
        Command::PreviewBlur(a) => cmd_preview(&root, a),
    }
}

/// Makes `dir` an empty, marked output directory. A non-empty directory is
/// only cleared with `force`, and only if it carries the marker.
pub fn claim_output(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(usage(format!(
                "{} exists and is not a directory",
                dir.display()
            )));
        }
        let non_empty = fs::read_dir(dir).map_err(runtime)?.next().is_some();
        if non_empty {
            if !force {
                return Err(usage(format!(
                    "output directory {} is not empty; pass --force to replace it",
                    dir.display()
                )));
            }
            if !dir.join(OUTPUT_MARKER).exists() {
                return Err(usage(format!(
                    "refusing to clear {}: it was not created by hpvit",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(runtime)?;
        }
    }
    fs::create_dir_all(dir).map_err(runtime)?;
    fs::write(dir.join(OUTPUT_MARKER), b"").map_err(runtime)
}

fn check_channels(channels: usize) -> Result<(), CliError> {
    if channels == 1 || channels == 3 {
        Ok(())
    } else {
        Err(usage(format!("--channels must be 1 or 3, got {channels}")))
    }
}

fn cmd_synth(root: &Path, a: SynthArgs) -> Result<(), CliError> {
    check_channels(a.channels)?;
    if a.per_class == 0 || a.height == 0 || a.width == 0 {
        return Err(usage("--per-class, --height and --width must be positive"));
    }
    let out = a
        .out
        .unwrap_or_else(|| root.join(format!("synth-seed{}", a.seed)));
    claim_output(&out, a.force)?;
    let config = SynthConfig {
        per_class: a.per_class,
        height: a.height,
        width: a.width,
        channels: a.channels,
        seed: a.seed,
    };
    synth::write_folder(&config, &out).map_err(runtime)?;
    let acc = synth::mean_threshold_accuracy(&synth::generate(&config));
    println!(
        "wrote {} images per class ({}) to {}",
        a.per_class,
        synth::CLASS_NAMES.join(", "),
        out.display()
    );
    println!("best mean-brightness threshold accuracy: {acc:.3}");
    Ok(())
}

/// Dataset manifest from a folder scan or a manifest file. Skipped files
/// are reported on stderr.
fn load_dataset(path: &Path) -> Result<DatasetManifest, CliError> {
    if !path.exists() {
        return Err(usage(format!("{} does not exist", path.display())));
    }
    if path.is_file() {
        return DatasetManifest::read(path).map_err(usage);
    }
    if path.join(MANIFEST_FILE).is_file() {
        return Err(usage(format!(
            "{} is a prepared curriculum (blurred images); pass the original dataset instead",
            path.display()
        )));
    }
    let scan = scan_folder(path).map_err(usage)?;
    for s in &scan.skipped {
        eprintln!("warning: skipped {}: {}", s.path.display(), s.reason);
    }
    Ok(scan.manifest)
}

fn cmd_prepare(root: &Path, a: PrepareArgs) -> Result<(), CliError> {
    check_channels(a.channels)?;
    if a.height == 0 || a.width == 0 {
        return Err(usage("--height and --width must be positive"));
    }
    let source = load_dataset(&a.data)?;
    let (train, test) = if a.test_fraction > 0.0 {
        let (train, test) = stratified_split(&source, a.test_fraction, a.seed).map_err(usage)?;
        (train, Some(test))
    } else if a.test_fraction == 0.0 {
        (source, None)
    } else {
        return Err(usage("--test-fraction must lie in [0, 1)"));
    };
    if a.k == 0 || a.k > train.len() {
        return Err(usage(format!(
            "--k must lie in 1..={} (the number of training samples)",
            train.len()
        )));
    }
    let out = a
        .out
        .unwrap_or_else(|| root.join(format!("curriculum-k{}-seed{}", a.k, a.seed)));
    claim_output(&out, a.force)?;
    write_json(&out.join(SOURCE_MANIFEST), &train).map_err(runtime)?;
    if let Some(test) = &test {
        write_json(&out.join(TEST_MANIFEST), test).map_err(runtime)?;
    }
    let opts = PrepareOptions {
        k: a.k,
        seed: a.seed,
        height: a.height,
        width: a.width,
        channels: a.channels,
        threads: a.threads,
    };
    let manifest = cache::prepare(&train, &opts, &out).map_err(runtime)?;
    println!(
        "prepared {} training samples in {} blur groups at {}",
        manifest.samples.len(),
        manifest.k,
        out.display()
    );
    if let Some(test) = &test {
        println!(
            "held out {} test samples: {}",
            test.len(),
            out.join(TEST_MANIFEST).display()
        );
    }
    println!("{:>4} {:>4} {:>6} {:>8}", "b", "y", "sigma", "samples");
    for l in manifest.levels.iter().rev() {
        println!("{:>4} {:>4} {:>6.1} {:>8}", l.b, l.y, l.sigma, l.count);
    }
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut c = RunConfig::resolve(a.config.as_deref(), &a.sets).map_err(usage)?;
    let t = &mut c.train;
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.curriculum_mode {
        t.curriculum_mode = match v {
            ModeArg::Staged => CurriculumMode::Staged,
            ModeArg::OrderedEpoch => CurriculumMode::OrderedEpoch,
        };
    }
    if let Some(v) = a.precision {
        t.precision = match v {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if let Some(v) = a.threads {
        c.threads = v;
    }
    c.train.validate()?;
    Ok(c)
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(runtime)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

struct TrainPlan {
    out: PathBuf,
    run_id: String,
    manifest: CurriculumManifest,
    config: RunConfig,
    model: hpvit_core::ViTConfig,
    resume: Option<Checkpoint>,
}

fn cmd_train(root: &Path, a: TrainArgs) -> Result<(), CliError> {
    let config = resolve_train_config(&a)?;
    if !a.curriculum.join(MANIFEST_FILE).is_file() {
        return Err(usage(format!(
            "no {MANIFEST_FILE} in {}; run `hpvit prepare` to create a curriculum first",
            a.curriculum.display()
        )));
    }
    let manifest = CurriculumManifest::read(&a.curriculum).map_err(usage)?;
    let model = config.model.clone();
    let model = RunConfig {
        model,
        ..config.clone()
    }
    .model_config(
        manifest.height,
        manifest.width,
        manifest.channels,
        manifest.classes.len(),
    )
    .map_err(usage)?;
    let t = &config.train;
    let smallest = manifest.levels.iter().map(|l| l.count).min().unwrap_or(0);
    if t.curriculum_mode == CurriculumMode::Staged {
        if t.epochs < manifest.k {
            return Err(TrainError::TooFewEpochs {
                epochs: t.epochs,
                groups: manifest.k,
            }
            .into());
        }
        if t.batch_size > smallest {
            return Err(TrainError::BatchExceedsGroup {
                batch: t.batch_size,
                smallest,
            }
            .into());
        }
    }
    let run_id = a
        .run_id
        .clone()
        .unwrap_or_else(|| format!("k{}-seed{}", manifest.k, t.seed));
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| root.join(format!("train-{run_id}")));
    let resume = match &a.resume {
        Some(path) => Some(check_resume(path, &manifest, &model, &config, &run_id)?),
        None => None,
    };
    match &resume {
        Some(ck) => {
            if out.exists() && fs::read_dir(&out).map_err(runtime)?.next().is_some() {
                if !out.join(OUTPUT_MARKER).exists() {
                    return Err(usage(format!(
                        "refusing to resume into {}: it was not created by hpvit",
                        out.display()
                    )));
                }
            } else {
                claim_output(&out, false)?;
            }
            runlog::truncate_to(&out, ck.header.epochs_done).map_err(runtime)?;
        }
        None => claim_output(&out, a.force)?,
    }
    let plan = TrainPlan {
        out,
        run_id,
        manifest,
        config,
        model,
        resume,
    };
    eprintln!("loading curriculum from {}", a.curriculum.display());
    let (_, data) = cache::load(&a.curriculum, plan.config.threads).map_err(runtime)?;
    match plan.config.train.precision {
        Precision::F64 => train_with::<f64>(&plan, &data),
        Precision::F32 => train_with::<f32>(&plan, &data),
    }
}

fn check_resume(
    path: &Path,
    manifest: &CurriculumManifest,
    model: &hpvit_core::ViTConfig,
    config: &RunConfig,
    run_id: &str,
) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(usage(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    let ck = Checkpoint::load(path).map_err(runtime)?;
    let h = &ck.header;
    if h.train_data_hash != manifest.hash {
        return Err(usage("checkpoint was trained on a different curriculum"));
    }
    if &h.model != model {
        return Err(usage(
            "checkpoint model configuration differs from the requested one",
        ));
    }
    if h.run_id != run_id {
        return Err(usage(format!(
            "checkpoint belongs to run `{}`; pass --run-id {} to resume it",
            h.run_id, h.run_id
        )));
    }
    let mut saved = h.train.clone();
    saved.checkpoint_every = config.train.checkpoint_every;
    if config.train.curriculum_mode == CurriculumMode::OrderedEpoch {
        saved.epochs = config.train.epochs;
    }
    if saved != config.train {
        return Err(usage(
            "training configuration differs from the checkpoint (only epochs in ordered-epoch mode and checkpoint_every may change)",
        ));
    }
    if h.epochs_done > config.train.epochs {
        return Err(usage(format!(
            "checkpoint already has {} epochs, more than the requested {}",
            h.epochs_done, config.train.epochs
        )));
    }
    Ok(ck)
}

fn fingerprint(model: &hpvit_core::ViTConfig, config: &RunConfig) -> String {
    let text = serde_json::to_string(&(model, &config.train)).expect("config serializes");
    hex(&Sha256::digest(text.as_bytes()))
}

fn train_with<T: Real>(
    plan: &TrainPlan,
    data: &hpvit_core::CurriculumDataset,
) -> Result<(), CliError> {
    let train = plan.config.train.clone();
    let mut trainer = match &plan.resume {
        Some(ck) => {
            let (params, optimizer) = ck.to_state::<T>();
            Trainer::resume(
                plan.model.clone(),
                train.clone(),
                params,
                optimizer,
                ck.header.epochs_done,
            )?
        }
        None => Trainer::<T>::new(plan.model.clone(), train.clone())?,
    };
    write_json(&plan.out.join(CONFIG_FILE), &plan.config).map_err(runtime)?;
    let header = |t: &Trainer<T>| CheckpointHeader {
        format: FORMAT_VERSION,
        run_id: plan.run_id.clone(),
        model: plan.model.clone(),
        train: train.clone(),
        classes: plan.manifest.classes.clone(),
        train_data_hash: plan.manifest.hash.clone(),
        source_data_hash: plan.manifest.source_hash.clone(),
        epochs_done: t.epochs_done,
        step: t.steps_done,
    };
    let ck_dir = plan.out.join("checkpoints");
    let mut log = RunLog {
        fingerprint: fingerprint(&plan.model, &plan.config),
        ..RunLog::default()
    };
    eprintln!(
        "training {} for epochs {}..{} ({} parameters, {} samples)",
        plan.run_id,
        trainer.epochs_done + 1,
        train.epochs,
        trainer.params.num_scalars(),
        data.len()
    );
    trainer.fit(data, &mut log, |t, steps, epoch| {
        runlog::append_epoch(&plan.out, steps, epoch).map_err(runtime)?;
        eprintln!(
            "epoch {:>4}/{}  loss {:.4}  train acc {:.3}",
            epoch.epoch + 1,
            train.epochs,
            epoch.mean_loss,
            epoch.train_accuracy
        );
        let every = train.checkpoint_every;
        if every > 0 && t.epochs_done % every == 0 && t.epochs_done < train.epochs {
            fs::create_dir_all(&ck_dir).map_err(runtime)?;
            Checkpoint::from_state(header(t), &t.params, &t.optimizer)
                .save(&ck_dir.join(format!("epoch-{:04}.bin", t.epochs_done)))
                .map_err(runtime)?;
        }
        Ok::<(), CliError>(())
    })?;
    let ck_path = plan.out.join(CHECKPOINT_FILE);
    Checkpoint::from_state(header(&trainer), &trainer.params, &trainer.optimizer)
        .save(&ck_path)
        .map_err(runtime)?;
    let epochs = runlog::read_epochs(&plan.out).map_err(runtime)?;
    let last = epochs.last();
    let summary = RunSummary {
        fingerprint: log.fingerprint.clone(),
        model: plan.model.clone(),
        train: train.clone(),
        classes: plan.manifest.classes.clone(),
        curriculum: CurriculumInfo {
            k: plan.manifest.k,
            seed: plan.manifest.seed,
            hash: plan.manifest.hash.clone(),
            source_hash: plan.manifest.source_hash.clone(),
        },
        epochs_done: trainer.epochs_done,
        steps: trainer.steps_done,
        final_loss: last.map_or(f64::NAN, |e| e.mean_loss),
        final_train_accuracy: last.map_or(0.0, |e| e.train_accuracy),
        checkpoint: CHECKPOINT_FILE.to_string(),
        checkpoint_sha256: sha256_file(&ck_path)?,
    };
    write_json(&plan.out.join(runlog::SUMMARY_FILE), &summary).map_err(runtime)?;
    println!("wrote {}", ck_path.display());
    Ok(())
}

const BANNER_WIDTH: usize = 72;

fn warning_banner(lines: &[&str]) -> String {
    let bar = "!".repeat(BANNER_WIDTH);
    let mut s = format!("{bar}\n");
    for l in lines {
        s.push_str(&format!("!! {:<w$} !!\n", l, w = BANNER_WIDTH - 6));
    }
    s.push_str(&bar);
    s
}

fn cmd_eval(root: &Path, a: EvalArgs) -> Result<(), CliError> {
    if !a.checkpoint.is_file() {
        return Err(usage(format!(
            "checkpoint {} does not exist",
            a.checkpoint.display()
        )));
    }
    let ck = Checkpoint::load(&a.checkpoint).map_err(runtime)?;
    let h = &ck.header;
    let data = load_dataset(&a.data)?;
    if data.classes != h.classes {
        return Err(usage(format!(
            "class mismatch: checkpoint has [{}], data has [{}]",
            h.classes.join(", "),
            data.classes.join(", ")
        )));
    }
    if data.split == Some(Split::Train) || data.hash == h.source_data_hash {
        eprintln!(
            "{}",
            warning_banner(&[
                "WARNING: evaluating on the TRAINING data of this checkpoint.",
                "These metrics do not measure generalization.",
            ])
        );
    }
    let model_id = a.model_id.clone().unwrap_or_else(|| h.run_id.clone());
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| root.join(format!("eval-{model_id}")));
    claim_output(&out, a.force)?;
    let m = &h.model;
    let images = load_samples(&data, m.height, m.width, m.channels, a.threads).map_err(runtime)?;
    let refs: Vec<&Image> = images.iter().map(|(img, _)| img).collect();
    let probs = predict_proba(&ck.params, m, &refs, a.batch_size).map_err(runtime)?;
    let samples: Vec<ScoredSample> = data
        .samples
        .iter()
        .zip(probs)
        .map(|(s, probs)| ScoredSample {
            source: s.path.clone(),
            label: s.label,
            probs,
        })
        .collect();
    let (report, curve) =
        report::evaluate(&samples, m.n_classes, &model_id, &data.hash).map_err(runtime)?;
    report::write_eval(&out, &report, curve.as_ref(), &samples).map_err(runtime)?;
    println!("model {model_id} on {} samples", report.n_samples);
    println!("  accuracy  {:.4}", report.accuracy);
    println!("  precision {:.4}", report.precision);
    println!("  recall    {:.4}", report.recall);
    println!("  f1        {:.4}", report.f1);
    match report.auroc {
        Some(v) => println!("  auroc     {v:.4}"),
        None => println!("  auroc     n/a (single-class test set)"),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_compare(root: &Path, a: CompareArgs) -> Result<(), CliError> {
    for p in [&a.a, &a.b] {
        if !p.exists() {
            return Err(usage(format!("{} does not exist", p.display())));
        }
    }
    let (ra, _, _) = report::read_eval(&a.a).map_err(usage)?;
    let (rb, _, _) = report::read_eval(&a.b).map_err(usage)?;
    if ra.test_set_id != rb.test_set_id {
        return Err(usage(format!(
            "reports were computed on different test sets ({} vs {})",
            ra.test_set_id, rb.test_set_id
        )));
    }
    let out = a
        .out
        .unwrap_or_else(|| root.join(format!("compare-{}-vs-{}", ra.model_id, rb.model_id)));
    claim_output(&out, a.force)?;
    report::write_comparison(&a.a, &a.b, &out).map_err(runtime)?;
    let text = fs::read_to_string(out.join(report::COMPARE_TXT)).map_err(runtime)?;
    print!("{text}");
    println!("wrote {}", out.display());
    Ok(())
}

/// Blurred copies of `img` at every level, most blurred first, joined left
/// to right with a white gap.
pub fn blur_strip(img: &Image, k: usize) -> Result<Image, CliError> {
    const GAP: usize = 2;
    let schedule = BlurSchedule::linear(k).map_err(usage)?;
    let tiles: Vec<Image> = schedule
        .consumption_order()
        .into_iter()
        .map(|b| blur_image(img, &schedule.levels()[b].kernel()))
        .collect();
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let total_w = k * w + (k - 1) * GAP;
    let mut pixels = vec![1.0; h * total_w * c];
    for (t, tile) in tiles.iter().enumerate() {
        let x0 = t * (w + GAP);
        for y in 0..h {
            let dst = (y * total_w + x0) * c;
            let src = y * w * c;
            pixels[dst..dst + w * c].copy_from_slice(&tile.pixels()[src..src + w * c]);
        }
    }
    Image::new(h, total_w, c, pixels).map_err(runtime)
}

fn cmd_preview(root: &Path, a: PreviewArgs) -> Result<(), CliError> {
    check_channels(a.channels)?;
    if !a.image.is_file() {
        return Err(usage(format!("{} does not exist", a.image.display())));
    }
    let out = a
        .out
        .unwrap_or_else(|| root.join(format!("preview-blur-k{}.png", a.k)));
    if out.exists() && !a.force {
        return Err(usage(format!(
            "{} exists; pass --force to overwrite",
            out.display()
        )));
    }
    let mut img = decode(&a.image, a.channels).map_err(usage)?;
    if let (Some(h), Some(w)) = (a.height, a.width) {
        img = img.resize_bilinear(h, w).map_err(usage)?;
    }
    let strip = blur_strip(&img, a.k)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(runtime)?;
    }
    save_png(&strip, &out, 8).map_err(runtime)?;
    println!(
        "wrote {} ({} levels, most blurred on the left)",
        out.display(),
        a.k
    );
    Ok(())
}
