//! `ramannet preprocess | train | eval | embed`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ramannet_core::data::{filter_min_class_size, LabeledDataset, SampleSource, SplitPlan, SplitVariant, TripletStrategy};
use ramannet_core::model::{Checkpoint, ModelConfig, RamanNet};
use ramannet_core::numerics::Matrix;
use ramannet_core::preprocess::align_spectra;
use ramannet_core::rng::derive_seed;
use ramannet_core::train::{
    evaluate, predict, run_protocol, ProtocolData, ProtocolEvent, ProtocolHooks, ProtocolReport, Samples, Selection,
    Sequential, TestMetrics, TrainConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::exec::RayonExecutor;
use crate::files::{load_checkpoint, load_dataset, save_checkpoint, write_json, write_jsonl};
use crate::io::{read_spectra, write_atomically, write_matrix, MatrixFile};
use crate::manifest::RunManifest;

const SPLIT_STREAM: u64 = 0x5B17;

#[derive(Debug, Parser)]
#[command(name = "ramannet", version, about = "RamanNet spectrum classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align raw spectra onto a common grid and min-max normalize them.
    Preprocess(PreprocessArgs),
    /// Train and evaluate under one of the published protocols.
    Train(TrainArgs),
    /// Evaluate a checkpoint on an aligned dataset.
    Eval(EvalArgs),
    /// Export inference-mode embeddings.
    Embed(EmbedArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw spectrum files (matrix or pairs form).
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Grid points; defaults to the densest input's point count inside the common range.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub min_class_size: Option<usize>,
    /// Preprocessing report (JSON); defaults to `<output>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    HoldoutRepeat,
    Kfold,
    PretrainFinetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionArg {
    BestValidation,
    FinalEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    BatchHard,
    Random,
}

/// Every training setting. Flags and config-file keys share these names
/// (config files use the kebab-case flag names without dashes in front).
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainOptions {
    /// Aligned dataset (holdout-repeat, kfold).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Pretraining set (pretrain-finetune).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Fine-tuning set (pretrain-finetune).
    #[arg(long)]
    pub finetune: Option<PathBuf>,
    /// Test set evaluated once (pretrain-finetune).
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolKind>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub unstratified: Option<bool>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub triplet_weight: Option<f64>,
    #[arg(long)]
    pub ce_weight: Option<f64>,
    #[arg(long, value_enum)]
    pub triplet_strategy: Option<StrategyArg>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_epsilon: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub freeze_batchnorm: Option<bool>,

    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub block_units: Option<usize>,
    #[arg(long)]
    pub summary_units: Option<usize>,
    #[arg(long)]
    pub embed_units: Option<usize>,
    #[arg(long)]
    pub dropout_concat: Option<f64>,
    #[arg(long)]
    pub dropout_summary: Option<f64>,
    #[arg(long)]
    pub dropout_embedding: Option<f64>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
    #[arg(long)]
    pub bn_momentum: Option<f64>,
    #[arg(long)]
    pub bn_epsilon: Option<f64>,

    /// Comma-separated k values for top-k accuracy.
    #[arg(long, value_delimiter = ',')]
    pub top_k: Option<Vec<usize>>,
    /// Positive class name for sensitivity/specificity on two-class data.
    #[arg(long)]
    pub positive_class: Option<String>,
    /// Splits trained in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with any of the training flags as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: TrainOptions,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub top_k: Vec<usize>,
    #[arg(long)]
    pub positive_class: Option<String>,
    /// Confusion matrix CSV; printed to stdout when omitted.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Metrics as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

/// Parse `args` and run; returns the process exit code. Failures print one
/// `error:<kind>: <message>` line on stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.report_line());
            return err.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", err.report_line());
            err.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Embed(a) => embed(a),
    }
}

#[derive(Debug, Serialize)]
struct PreprocessReport {
    inputs: Vec<PathBuf>,
    spectra_read: usize,
    spectra_written: usize,
    range: (f64, f64),
    num_points: usize,
    /// Output rows whose spectrum was constant (normalized to zeros).
    constant_rows: Vec<usize>,
    dropped_classes: Vec<(String, usize)>,
    manifest: RunManifest,
}

fn preprocess(args: PreprocessArgs) -> Result<()> {
    let inputs: Vec<&Path> = args.inputs.iter().map(PathBuf::as_path).collect();
    let manifest = RunManifest::new(
        "preprocess",
        serde_json::json!({
            "inputs": &args.inputs,
            "output": &args.output,
            "points": args.points,
            "min-class-size": args.min_class_size,
        }),
        None,
        &inputs,
    )?;
    let per_file: Vec<_> = args.inputs.par_iter().map(|p| read_spectra(p)).collect::<Result<_>>()?;
    let records: Vec<_> = per_file.into_iter().flatten().collect();
    let spectra: Vec<_> = records.iter().map(|r| r.spectrum.clone()).collect();
    let aligned = align_spectra(&spectra, args.points)?;
    let labels: Vec<String> = records.iter().map(|r| r.label.clone()).collect();

    let mut keep: Vec<usize> = (0..records.len()).collect();
    let mut dropped = Vec::new();
    if let Some(min) = args.min_class_size {
        let ds = LabeledDataset::from_named(aligned.features.clone(), &labels, Some(aligned.grid))?;
        let filtered = filter_min_class_size(&ds, min)?;
        dropped = filtered.dropped;
        keep.retain(|&i| !dropped.iter().any(|(name, _)| *name == labels[i]));
    }

    let mut meta_columns: Vec<String> = Vec::new();
    for r in &records {
        for (k, _) in &r.metadata {
            if !meta_columns.contains(k) {
                meta_columns.push(k.clone());
            }
        }
    }
    let metadata = keep
        .iter()
        .map(|&i| {
            meta_columns
                .iter()
                .map(|c| {
                    records[i]
                        .metadata
                        .iter()
                        .find(|(k, _)| k == c)
                        .map_or(String::new(), |(_, v)| v.clone())
                })
                .collect()
        })
        .collect();
    let out = MatrixFile {
        shifts: aligned.grid.points(),
        labels: keep.iter().map(|&i| labels[i].clone()).collect(),
        meta_columns,
        metadata,
        features: aligned.features.select_rows(&keep),
    };
    write_matrix(&args.output, &out)?;

    let report = PreprocessReport {
        inputs: args.inputs.clone(),
        spectra_read: records.len(),
        spectra_written: keep.len(),
        range: (aligned.grid.min_shift, aligned.grid.max_shift),
        num_points: aligned.grid.num_points,
        constant_rows: keep
            .iter()
            .enumerate()
            .filter(|(_, i)| aligned.constant_rows.contains(i))
            .map(|(r, _)| r)
            .collect(),
        dropped_classes: dropped,
        manifest,
    };
    let report_path = args.report.unwrap_or_else(|| sibling(&args.output, ".report.json"));
    write_json(&report_path, &report)?;
    println!(
        "wrote {} spectra x {} points over [{}, {}] to {}",
        report.spectra_written,
        report.num_points,
        report.range.0,
        report.range.1,
        args.output.display()
    );
    for (name, n) in &report.dropped_classes {
        println!("dropped class {name:?} ({n} samples)");
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

/// Flag values override config-file values, which override defaults.
pub fn merge_options(flags: &TrainOptions, file: Option<&Path>) -> Result<TrainOptions> {
    let Some(path) = file else {
        return Ok(flags.clone());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let from_file: TrainOptions = toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.message().to_string(),
    })?;
    let mut merged = serde_json::to_value(from_file)?;
    let serde_json::Value::Object(flag_map) = serde_json::to_value(flags)? else {
        unreachable!("options serialize to a map")
    };
    let target = merged.as_object_mut().expect("options serialize to a map");
    for (k, v) in flag_map {
        if !v.is_null() {
            target.insert(k, v);
        }
    }
    Ok(serde_json::from_value(merged)?)
}

/// Fully resolved training run, as recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedTrain {
    pub protocol: ProtocolKind,
    pub plan: SplitPlan,
    pub train: TrainConfig,
    /// Model settings without the data-dependent input length and class count.
    pub model: ModelOverrides,
    pub jobs: usize,
    pub data: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub finetune: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub positive_class: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ModelOverrides {
    pub window: Option<usize>,
    pub step: Option<usize>,
    pub block_units: Option<usize>,
    pub summary_units: Option<usize>,
    pub embed_units: Option<usize>,
    pub dropout_concat: Option<f64>,
    pub dropout_summary: Option<f64>,
    pub dropout_embedding: Option<f64>,
    pub leaky_slope: Option<f64>,
    pub bn_momentum: Option<f64>,
    pub bn_epsilon: Option<f64>,
}

impl ModelOverrides {
    pub fn apply(&self, input_len: usize, num_classes: usize) -> ModelConfig {
        let mut c = ModelConfig::new(input_len, num_classes);
        c.window_len = self.window.unwrap_or(c.window_len);
        c.window_step = self.step.unwrap_or(c.window_step);
        c.block_units = self.block_units.unwrap_or(c.block_units);
        c.summary_units = self.summary_units.unwrap_or(c.summary_units);
        c.embed_units = self.embed_units.unwrap_or(c.embed_units);
        c.dropout_concat = self.dropout_concat.unwrap_or(c.dropout_concat);
        c.dropout_summary = self.dropout_summary.unwrap_or(c.dropout_summary);
        c.dropout_embedding = self.dropout_embedding.unwrap_or(c.dropout_embedding);
        c.leaky_slope = self.leaky_slope.unwrap_or(c.leaky_slope);
        c.bn_momentum = self.bn_momentum.unwrap_or(c.bn_momentum);
        c.bn_epsilon = self.bn_epsilon.unwrap_or(c.bn_epsilon);
        c
    }
}

/// Check flag combinations and fill in protocol defaults. Runs before any
/// data is read.
pub fn resolve(o: &TrainOptions) -> Result<ResolvedTrain> {
    let Some(protocol) = o.protocol else {
        return usage("--protocol is required (holdout-repeat, kfold or pretrain-finetune)".into());
    };
    let flag_name = |s: &str| format!("--{}", s.replace('_', "-"));
    let forbid = |present: &[(&str, bool)]| -> Result<()> {
        match present.iter().find(|(_, p)| *p) {
            Some((name, _)) => usage(format!(
                "{} cannot be used with --protocol {}",
                flag_name(name),
                protocol.to_possible_value().expect("named").get_name()
            )),
            None => Ok(()),
        }
    };
    let pretrain_sets = [
        ("reference", o.reference.is_some()),
        ("finetune", o.finetune.is_some()),
        ("test", o.test.is_some()),
    ];
    match protocol {
        ProtocolKind::HoldoutRepeat => {
            forbid(&[("folds", o.folds.is_some())])?;
        }
        ProtocolKind::Kfold => {
            forbid(&[("repeats", o.repeats.is_some()), ("test_fraction", o.test_fraction.is_some())])?;
        }
        ProtocolKind::PretrainFinetune => {
            forbid(&[
                ("data", o.data.is_some()),
                ("repeats", o.repeats.is_some()),
                ("test_fraction", o.test_fraction.is_some()),
            ])?;
            if let Some((name, _)) = pretrain_sets.iter().find(|(_, p)| !p) {
                return usage(format!("--protocol pretrain-finetune requires {}", flag_name(name)));
            }
        }
    }
    if protocol != ProtocolKind::PretrainFinetune {
        forbid(&pretrain_sets)?;
        forbid(&[
            ("finetune_epochs", o.finetune_epochs.is_some()),
            ("freeze_batchnorm", o.freeze_batchnorm.is_some()),
        ])?;
        if o.data.is_none() {
            return usage(format!(
                "--protocol {} requires --data",
                protocol.to_possible_value().expect("named").get_name()
            ));
        }
    }
    let Some(out_dir) = o.out_dir.clone() else {
        return usage("--out-dir is required".into());
    };
    let jobs = o.jobs.unwrap_or(1);
    if jobs == 0 {
        return usage("--jobs must be at least 1".into());
    }

    let seed = o.seed.unwrap_or(0);
    let stratified = !o.unstratified.unwrap_or(false);
    let validation_fraction = o.validation_fraction.unwrap_or(0.1);
    let variant = match protocol {
        ProtocolKind::HoldoutRepeat => SplitVariant::RepeatedHoldout {
            repeats: o.repeats.unwrap_or(50),
            test_fraction: o.test_fraction.unwrap_or(0.3),
            validation_fraction,
        },
        ProtocolKind::Kfold => SplitVariant::KFold {
            folds: o.folds.unwrap_or(5),
            validation_fraction,
        },
        ProtocolKind::PretrainFinetune => SplitVariant::PretrainFinetune {
            folds: o.folds.unwrap_or(5),
            finetune_validation_fraction: validation_fraction,
        },
    };
    let plan = SplitPlan {
        variant,
        stratified,
        seed: derive_seed(seed, SPLIT_STREAM),
    };
    plan.validate()?;

    let defaults = TrainConfig::default();
    let pretrain = protocol == ProtocolKind::PretrainFinetune;
    let mut optimizer = defaults.optimizer;
    optimizer.learning_rate = o.learning_rate.unwrap_or(optimizer.learning_rate);
    optimizer.beta1 = o.beta1.unwrap_or(optimizer.beta1);
    optimizer.beta2 = o.beta2.unwrap_or(optimizer.beta2);
    optimizer.epsilon = o.adam_epsilon.unwrap_or(optimizer.epsilon);
    let train = TrainConfig {
        epochs: o.epochs.unwrap_or(if pretrain { 100 } else { 1000 }),
        finetune_epochs: o.finetune_epochs.unwrap_or(defaults.finetune_epochs),
        batch_size: o.batch_size.unwrap_or(defaults.batch_size),
        optimizer,
        margin: o.margin.unwrap_or(defaults.margin),
        ce_weight: o.ce_weight.unwrap_or(defaults.ce_weight),
        triplet_weight: o.triplet_weight.unwrap_or(defaults.triplet_weight),
        triplet_strategy: match o.triplet_strategy {
            Some(StrategyArg::Random) => TripletStrategy::Random,
            Some(StrategyArg::BatchHard) => TripletStrategy::BatchHard,
            None => defaults.triplet_strategy,
        },
        patience: o.patience.or(defaults.patience),
        selection: match o.selection {
            Some(SelectionArg::FinalEpoch) => Selection::FinalEpoch,
            Some(SelectionArg::BestValidation) => Selection::BestValidation,
            None => defaults.selection,
        },
        seed,
        freeze_batchnorm_on_finetune: o.freeze_batchnorm.unwrap_or(false),
        positive_class: defaults.positive_class,
        top_k: o.top_k.clone().unwrap_or_default(),
    };
    train.validate()?;
    if train.top_k.contains(&0) {
        return usage("--top-k values must be at least 1".into());
    }
    Ok(ResolvedTrain {
        protocol,
        plan,
        train,
        model: ModelOverrides {
            window: o.window,
            step: o.step,
            block_units: o.block_units,
            summary_units: o.summary_units,
            embed_units: o.embed_units,
            dropout_concat: o.dropout_concat,
            dropout_summary: o.dropout_summary,
            dropout_embedding: o.dropout_embedding,
            leaky_slope: o.leaky_slope,
            bn_momentum: o.bn_momentum,
            bn_epsilon: o.bn_epsilon,
        },
        jobs,
        data: o.data.clone(),
        reference: o.reference.clone(),
        finetune: o.finetune.clone(),
        test: o.test.clone(),
        out_dir,
        positive_class: o.positive_class.clone(),
    })
}

fn usage<T>(message: String) -> Result<T> {
    Err(CliError::Usage(message))
}

fn class_index(class_names: &[String], name: Option<&str>, default: usize) -> Result<usize> {
    match name {
        None => Ok(default),
        Some(n) => class_names
            .iter()
            .position(|c| c == n)
            .ok_or_else(|| CliError::Usage(format!("unknown positive class {n:?} (classes: {class_names:?})"))),
    }
}

struct CliHooks {
    start: Instant,
    checkpoint_dir: PathBuf,
    class_names: Vec<String>,
}

impl ProtocolHooks for CliHooks {
    fn now(&self) -> Option<f64> {
        Some(self.start.elapsed().as_secs_f64())
    }

    fn on_event(&self, event: &ProtocolEvent<'_>) {
        match event {
            ProtocolEvent::SplitStarted { split_id } => eprintln!("{split_id}: training"),
            ProtocolEvent::TestAccess { .. } => {}
            ProtocolEvent::SplitFinished {
                split_id,
                test_accuracy,
            } => eprintln!("{split_id}: test accuracy {}", fmt_metric(*test_accuracy)),
            ProtocolEvent::SplitFailed { split_id, error } => eprintln!("{split_id}: failed: {error}"),
        }
    }

    fn checkpoint(&self, split_id: &str, model: &RamanNet) -> std::result::Result<Option<String>, String> {
        let path = self.checkpoint_dir.join(format!("{split_id}.ckpt"));
        let ck = Checkpoint {
            model: model.clone(),
            class_names: self.class_names.clone(),
        };
        save_checkpoint(&path, &ck).map_err(|e| e.to_string())?;
        Ok(Some(path.display().to_string()))
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    protocol: ProtocolKind,
    class_names: &'a [String],
    parameter_count: usize,
    /// Trailing spectrum points not covered by any window.
    dropped_tail: usize,
    #[serde(flatten)]
    report: &'a ProtocolReport,
}

fn train(args: TrainArgs) -> Result<()> {
    let options = merge_options(&args.options, args.config.as_deref())?;
    let resolved = resolve(&options)?;

    // class table comes from the training (or reference) set
    let (primary, others) = match resolved.protocol {
        ProtocolKind::PretrainFinetune => (
            resolved.reference.clone().expect("checked"),
            vec![resolved.finetune.clone().expect("checked"), resolved.test.clone().expect("checked")],
        ),
        _ => (resolved.data.clone().expect("checked"), Vec::new()),
    };
    let (main_set, _) = load_dataset(&primary, None)?;
    let class_names = main_set.class_names().to_vec();
    let extra: Vec<LabeledDataset> = others
        .iter()
        .map(|p| {
            let (d, _) = load_dataset(p, Some(&class_names))?;
            if d.input_len() != main_set.input_len() {
                return Err(CliError::core_in(
                    p.display(),
                    ramannet_core::Error::Shape {
                        what: "spectrum length relative to the reference set",
                        expected: main_set.input_len(),
                        actual: d.input_len(),
                    },
                ));
            }
            Ok(d)
        })
        .collect::<Result<_>>()?;

    let model_cfg = resolved.model.apply(main_set.input_len(), main_set.num_classes());
    model_cfg.validate()?;
    let mut train_cfg = resolved.train.clone();
    train_cfg.positive_class = class_index(&class_names, resolved.positive_class.as_deref(), 1)?;

    let ckpt_dir = resolved.out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::io(&ckpt_dir, e))?;
    let input_paths: Vec<&Path> = std::iter::once(primary.as_path()).chain(others.iter().map(PathBuf::as_path)).collect();
    let manifest = RunManifest::new(
        "train",
        serde_json::json!({ "resolved": &resolved, "model": &model_cfg, "class_names": &class_names }),
        Some(train_cfg.seed),
        &input_paths,
    )?;
    manifest.write(&resolved.out_dir.join("manifest.json"))?;
    if model_cfg.dropped_tail() > 0 {
        eprintln!(
            "note: the last {} of {} points are not covered by any window and are ignored",
            model_cfg.dropped_tail(),
            model_cfg.input_len
        );
    }

    let hooks = CliHooks {
        start: Instant::now(),
        checkpoint_dir: ckpt_dir,
        class_names: class_names.clone(),
    };
    let data = match resolved.protocol {
        ProtocolKind::PretrainFinetune => ProtocolData::PretrainFinetune {
            reference: &main_set,
            finetune: &extra[0],
            test: &extra[1],
        },
        _ => ProtocolData::Single(&main_set),
    };
    let report = if resolved.jobs == 1 {
        run_protocol(data, &resolved.plan, &model_cfg, &train_cfg, &Sequential, &hooks)?
    } else {
        let pool = RayonExecutor::new(resolved.jobs).map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
        run_protocol(data, &resolved.plan, &model_cfg, &train_cfg, &pool, &hooks)?
    };

    write_jsonl(&resolved.out_dir.join("records.jsonl"), &report.records)?;
    write_json(
        &resolved.out_dir.join("report.json"),
        &TrainReport {
            protocol: resolved.protocol,
            class_names: &class_names,
            parameter_count: ramannet_core::model::count_parameters(&model_cfg),
            dropped_tail: model_cfg.dropped_tail(),
            report: &report,
        },
    )?;

    let agg = &report.aggregate;
    println!("parameters: {}", ramannet_core::model::count_parameters(&model_cfg));
    println!("splits: {} ok, {} failed", report.records.len(), report.failures.len());
    if let Some(sel) = &report.selected {
        println!("selected: {sel}");
    }
    println!("accuracy: {}", fmt_summary(&agg.accuracy));
    if let (Some(se), Some(sp)) = (&agg.sensitivity, &agg.specificity) {
        println!("sensitivity: {}", fmt_summary(se));
        println!("specificity: {}", fmt_summary(sp));
    }
    for (k, s) in &agg.top_k {
        println!("top-{k}: {}", fmt_summary(s));
    }
    if let Some(first) = report.failures.first() {
        return Err(CliError::SplitsFailed {
            failed: report.failures.len(),
            total: report.failures.len() + report.records.len(),
            first: format!("{}: {}", first.split_id, first.error),
        });
    }
    Ok(())
}

fn fmt_summary(s: &ramannet_core::metrics::MetricSummary) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(sd)) => format!("{m:.4} ± {sd:.4} (n={}, undefined={})", s.count, s.undefined),
        _ => format!("undefined (n=0, undefined={})", s.undefined),
    }
}

/// Checkpoint plus a dataset mapped through its class table.
fn model_and_data(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, LabeledDataset, MatrixFile)> {
    let ck = load_checkpoint(checkpoint)?;
    let (ds, file) = load_dataset(data, Some(&ck.class_names))?;
    let expected = ck.model.config().input_len;
    if ds.input_len() != expected {
        return Err(CliError::core_in(
            format!("{} does not fit {}", data.display(), checkpoint.display()),
            ramannet_core::Error::Shape {
                what: "spectrum length (checkpoint input_len vs data columns)",
                expected,
                actual: ds.input_len(),
            },
        ));
    }
    Ok((ck, ds, file))
}

fn samples_of(ds: &LabeledDataset) -> Samples {
    Samples {
        features: ds.features().clone(),
        labels: ds.labels().to_vec(),
    }
}

fn eval(args: EvalArgs) -> Result<()> {
    let (ck, ds, _) = model_and_data(&args.checkpoint, &args.data)?;
    let classes = ck.class_names.len();
    if let Some(&k) = args.top_k.iter().find(|&&k| k == 0 || k > classes) {
        return Err(ramannet_core::Error::TopKOutOfRange { k, num_classes: classes }.into());
    }
    let positive = class_index(&ck.class_names, args.positive_class.as_deref(), 1)?;
    let metrics: TestMetrics = evaluate(&ck.model, &samples_of(&ds), positive, &args.top_k)?;

    println!("samples: {}", metrics.samples);
    println!("accuracy: {}", fmt_metric(metrics.accuracy));
    if let Some(b) = metrics.binary {
        println!("positive class: {}", ck.class_names[positive]);
        println!("sensitivity: {}", fmt_metric(b.sensitivity));
        println!("specificity: {}", fmt_metric(b.specificity));
    }
    for (k, v) in &metrics.top_k {
        println!("top-{k}: {v:.4}");
    }
    let csv = metrics.confusion.to_csv(&ck.class_names);
    match &args.confusion {
        Some(path) => write_atomically(path, |out| out.write_all(csv.as_bytes()))?,
        None => print!("{csv}"),
    }
    if let Some(path) = &args.report {
        write_json(path, &metrics)?;
    }
    Ok(())
}

fn embed(args: EmbedArgs) -> Result<()> {
    let (ck, ds, _) = model_and_data(&args.checkpoint, &args.data)?;
    let (_, embeddings): (Matrix, Matrix) = predict(&ck.model, ds.features())?;
    write_atomically(&args.output, |out| {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        header.extend((0..embeddings.cols()).map(|j| format!("e{j}")));
        w.write_record(&header)?;
        for (r, &label) in ds.labels().iter().enumerate() {
            let mut row = vec![ck.class_names[label].clone()];
            row.extend(embeddings.row(r).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()
    })?;
    println!(
        "wrote {} embeddings x {} to {}",
        embeddings.rows(),
        embeddings.cols(),
        args.output.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(args: &[&str]) -> TrainOptions {
        let mut full = vec!["ramannet", "train"];
        full.extend_from_slice(args);
        match Cli::try_parse_from(full).unwrap().command {
            Command::Train(t) => t.options,
            _ => unreachable!(),
        }
    }

    #[test]
    fn conflicting_protocol_flags_are_usage_errors() {
        for args in [
            &["--protocol", "kfold", "--repeats", "3", "--data", "x", "--out-dir", "o"][..],
            &["--protocol", "holdout-repeat", "--folds", "3", "--data", "x", "--out-dir", "o"],
            &["--protocol", "kfold", "--reference", "r", "--data", "x", "--out-dir", "o"],
            &["--protocol", "pretrain-finetune", "--data", "x", "--out-dir", "o"],
            &["--protocol", "pretrain-finetune", "--reference", "r", "--finetune", "f", "--out-dir", "o"],
            &["--data", "x", "--out-dir", "o"],
            &["--protocol", "kfold", "--out-dir", "o"],
        ] {
            let err = resolve(&opts(args)).unwrap_err();
            assert_eq!(err.kind(), "usage", "{args:?}: {err}");
        }
    }

    #[test]
    fn protocol_defaults() {
        let r = resolve(&opts(&["--protocol", "holdout-repeat", "--data", "x", "--out-dir", "o"])).unwrap();
        assert_eq!(r.train.epochs, 1000);
        assert!(matches!(
            r.plan.variant,
            SplitVariant::RepeatedHoldout { repeats: 50, test_fraction, validation_fraction }
                if test_fraction == 0.3 && validation_fraction == 0.1
        ));
        let r = resolve(&opts(&[
            "--protocol", "pretrain-finetune", "--reference", "r", "--finetune", "f", "--test", "t", "--out-dir", "o",
        ]))
        .unwrap();
        assert_eq!((r.train.epochs, r.train.finetune_epochs), (100, 250));
        assert!(matches!(r.plan.variant, SplitVariant::PretrainFinetune { folds: 5, .. }));
    }

    #[test]
    fn flags_override_config_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "protocol = \"kfold\"\nfolds = 4\nepochs = 7\nmargin = 0.5\ntop-k = [1, 3]\n").unwrap();
        let flags = opts(&["--epochs", "9", "--data", "x", "--out-dir", "o"]);
        let merged = merge_options(&flags, Some(&path)).unwrap();
        let r = resolve(&merged).unwrap();
        assert_eq!(r.train.epochs, 9);
        assert_eq!(r.train.margin, 0.5);
        assert_eq!(r.train.top_k, vec![1, 3]);
        assert_eq!(r.train.batch_size, 64);
        assert!(matches!(r.plan.variant, SplitVariant::KFold { folds: 4, .. }));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "epochz = 3\n").unwrap();
        let err = merge_options(&TrainOptions::default(), Some(&path)).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn model_overrides_apply_on_top_of_defaults() {
        let o = ModelOverrides {
            window: Some(20),
            embed_units: Some(8),
            ..Default::default()
        };
        let c = o.apply(100, 3);
        assert_eq!((c.window_len, c.window_step, c.embed_units, c.summary_units), (20, 25, 8, 512));
    }
}
