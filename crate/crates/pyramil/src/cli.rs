//! Command-line surface. Every subcommand reads and validates all of its
//! inputs before writing anything, writes all outputs under `--out-dir`
//! (including a `config.json` echo of the parsed invocation), and is
//! byte-identical across reruns with the same flags and seed.

use crate::bench::{
    count_flops, mark_pareto, measure_throughput, CostMode, FrontierPoint, ThroughputReport,
};
use crate::heatmap::{attention_csv, render_attention};
use crate::io::{
    load_checkpoint, load_dataset_index, load_patch_pyramid, save_checkpoint, DatasetIndex, Split,
};
use crate::metrics::{accuracy, weighted_f1};
use crate::model::{
    full_grid_infer, infer, AttentionMode, Aggregation, InferInput, PatchEncoder, SelectionMode,
    ZoomConfig, ZoomModel,
};
use crate::pyramid::PatchPyramid;
use crate::synth::{
    encode_dataset, generate_dataset, load_generator_config, save_dataset, SynthConfig,
    SynthEncoder,
};
use crate::train::{
    ablate, evaluate, fit, format_ablation_table, write_epoch_log, Arm, FeatureDataset,
    SelectionMetric, TrainConfig,
};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "pyramil",
    about = "Attention-driven multi-magnification patch selection for MIL classification",
    version
)]
pub struct Cli {
    /// Base seed for all randomness in this run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Directory all outputs are written under.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic multi-magnification dataset.
    Generate(GenerateArgs),
    /// Train a model and save the best checkpoint plus an epoch log.
    Train(TrainArgs),
    /// Run deterministic inference over a split, with work accounting.
    Infer(InferArgs),
    /// Measure inference cost: analytic FLOPs and wall-clock throughput.
    Bench(BenchArgs),
    /// Train and compare experimental arms under identical seeds.
    Ablate(AblateArgs),
    /// Export per-level attention maps (CSV + portable graymap).
    Attnmap(AttnmapArgs),
    /// Train across a range of selection widths K and tabulate accuracy.
    SweepK(SweepKArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Magnification levels in each pyramid.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Number of classes.
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Patches at the coarsest level.
    #[arg(long, default_value_t = 16)]
    pub first_level_rows: usize,
    #[arg(long, default_value_t = 600)]
    pub train_samples: usize,
    #[arg(long, default_value_t = 100)]
    pub val_samples: usize,
    #[arg(long, default_value_t = 300)]
    pub test_samples: usize,
    /// Amplitude of the class-agnostic localization cue at the coarsest level.
    #[arg(long, default_value_t = 3.0)]
    pub cue_strength: f64,
    /// Amplitude of the class motif at the finest level.
    #[arg(long, default_value_t = 3.0)]
    pub motif_strength: f64,
    /// Background texture standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub noise_std: f64,
    /// Encoder output width.
    #[arg(long, default_value_t = 64)]
    pub feature_dim: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory produced by `generate`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated K per zoom step, e.g. `3,12`.
    #[arg(long, default_value = "3,12")]
    pub schedule: String,
    /// Noise scale of the smoothed top-K.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Monte-Carlo samples of the smoothed top-K.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Per-level feature aggregation.
    #[arg(long, value_enum, default_value_t = AggArg::Sum)]
    pub agg: AggArg,
    /// Attention architecture.
    #[arg(long, value_enum, default_value_t = AttentionArg::Dual)]
    pub attention: AttentionArg,
    /// Zoom selection mode.
    #[arg(long, value_enum, default_value_t = SelectionArg::DiffTopk)]
    pub selection: SelectionArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Model-selection metric on the validation split.
    #[arg(long, value_enum, default_value_t = MetricArg::Loss)]
    pub metric: MetricArg,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint directory produced by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Override the checkpoint's zoom schedule (heads are schedule-free).
    #[arg(long)]
    pub schedule: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint to benchmark; omitted = freshly initialized weights.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Schedule for a freshly initialized model (ignored with --checkpoint).
    #[arg(long, default_value = "12,12")]
    pub schedule: String,
    /// Restrict to one mode; default benchmarks both and marks the frontier.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Timed runs per mode (first is warm-up; median of the rest reported).
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated arm names.
    #[arg(long, default_value = "diff_topk,random_k,nondiff_topk")]
    pub arms: String,
    /// Comma-separated training seeds applied to every arm.
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    #[arg(long, default_value = "3,12")]
    pub schedule: String,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct AttnmapArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Magnification level to export, 1-based (1 = coarsest).
    #[arg(long, default_value_t = 1)]
    pub level: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Restrict to one sample id.
    #[arg(long)]
    pub sample: Option<String>,
    /// Pixel replication factor for the graymap.
    #[arg(long, default_value_t = 16)]
    pub scale: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepKArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated first-step selection widths to sweep.
    #[arg(long, default_value = "1,2,3,4,8,16")]
    pub ks: String,
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AggArg {
    Sum,
    Concat,
    Highest,
}

impl From<AggArg> for Aggregation {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Sum => Aggregation::Sum,
            AggArg::Concat => Aggregation::Concat,
            AggArg::Highest => Aggregation::HighestOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionArg {
    Dual,
    Single,
}

impl From<AttentionArg> for AttentionMode {
    fn from(a: AttentionArg) -> Self {
        match a {
            AttentionArg::Dual => AttentionMode::Dual,
            AttentionArg::Single => AttentionMode::Single,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionArg {
    DiffTopk,
    NondiffTopk,
    RandomK,
}

impl From<SelectionArg> for SelectionMode {
    fn from(a: SelectionArg) -> Self {
        match a {
            SelectionArg::DiffTopk => SelectionMode::DiffTopK,
            SelectionArg::NondiffTopk => SelectionMode::NonDiffTopK,
            SelectionArg::RandomK => SelectionMode::RandomK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    Loss,
    Wf1,
}

impl From<MetricArg> for SelectionMetric {
    fn from(a: MetricArg) -> Self {
        match a {
            MetricArg::Loss => SelectionMetric::ValLoss,
            MetricArg::Wf1 => SelectionMetric::ValWeightedF1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Zoom,
    FullGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(a: SplitArg) -> Self {
        match a {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Parses argv, executes, and maps any failure to a single-line stderr
/// message with a nonzero exit code.
pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        // Ignore the error if a pool already exists (e.g. repeated calls
        // within one test process); the explicit flag still wins on first use.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match &cli.command {
        Command::Generate(args) => cmd_generate(&cli, args),
        Command::Train(args) => cmd_train(&cli, args),
        Command::Infer(args) => cmd_infer(&cli, args),
        Command::Bench(args) => cmd_bench(&cli, args),
        Command::Ablate(args) => cmd_ablate(&cli, args),
        Command::Attnmap(args) => cmd_attnmap(&cli, args),
        Command::SweepK(args) => cmd_sweep_k(&cli, args),
    }
}

// ---- shared plumbing ----

fn write_config_echo(cli: &Cli) -> anyhow::Result<()> {
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let path = cli.out_dir.join("config.json");
    let text = serde_json::to_string_pretty(cli).context("serializing config echo")?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)
        .with_context(|| format!("serializing {name}"))?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, flag: &str) -> anyhow::Result<Vec<T>> {
    let parsed: Result<Vec<T>, _> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect();
    match parsed {
        Ok(values) if !values.is_empty() => Ok(values),
        _ => bail!("could not parse {flag} list {text:?}"),
    }
}

/// A dataset directory loaded in full: raw patches, the generator config,
/// and the encoder it implies.
struct LoadedData {
    index: DatasetIndex,
    patches: Vec<PatchPyramid>,
    encoder: SynthEncoder,
}

impl LoadedData {
    fn load(dir: &Path) -> anyhow::Result<Self> {
        let generator = load_generator_config(dir)
            .with_context(|| format!("reading generator config in {}", dir.display()))?;
        let index = load_dataset_index(dir)
            .with_context(|| format!("reading dataset index in {}", dir.display()))?;
        let mut patches = Vec::with_capacity(index.samples.len());
        for record in &index.samples {
            let pyramid = load_patch_pyramid(&dir.join(&record.id))
                .with_context(|| format!("loading sample {}", record.id))?;
            if pyramid.id() != record.id || pyramid.label() != record.label {
                bail!(
                    "sample {} disagrees with the index (manifest id {}, label {})",
                    record.id,
                    pyramid.id(),
                    pyramid.label()
                );
            }
            patches.push(pyramid);
        }
        let encoder = SynthEncoder::from_config(&generator);
        Ok(Self {
            index,
            patches,
            encoder,
        })
    }

    fn features(&self) -> anyhow::Result<FeatureDataset> {
        let features =
            encode_dataset(&self.patches, &self.encoder).context("encoding dataset")?;
        Ok(FeatureDataset::new(self.index.clone(), features)?)
    }

    fn num_levels(&self) -> usize {
        self.patches[0].num_levels()
    }

    fn first_level_rows(&self) -> usize {
        self.patches[0].level(0).nrows()
    }

    fn in_split(&self, split: Split) -> Vec<(&crate::io::SampleRecord, &PatchPyramid)> {
        self.index
            .samples
            .iter()
            .zip(&self.patches)
            .filter(|(r, _)| r.split == split)
            .collect()
    }
}

fn model_config_from(
    data: &LoadedData,
    schedule: &[usize],
    sigma: f64,
    samples: usize,
    selection: SelectionMode,
    attention: AttentionMode,
    aggregation: Aggregation,
) -> anyhow::Result<ZoomConfig> {
    let mut config = ZoomConfig::new(
        data.num_levels(),
        data.encoder.feature_dim(),
        data.index.num_classes,
        schedule.to_vec(),
    );
    config.sigma = sigma;
    config.noise_samples = samples;
    config.selection = selection;
    config.attention = attention;
    config.aggregation = aggregation;
    config.validate()?;
    if config.num_levels > 1 && config.schedule[0] > data.first_level_rows() {
        bail!(
            "schedule selects {} parents but the coarsest level has {}",
            config.schedule[0],
            data.first_level_rows()
        );
    }
    Ok(config)
}

// ---- generate ----

fn cmd_generate(cli: &Cli, args: &GenerateArgs) -> anyhow::Result<()> {
    let config = SynthConfig {
        first_level_rows: args.first_level_rows,
        num_levels: args.levels,
        num_classes: args.classes,
        feature_dim: args.feature_dim,
        cue_strength: args.cue_strength,
        motif_strength: args.motif_strength,
        noise_std: args.noise_std,
        train_samples: args.train_samples,
        val_samples: args.val_samples,
        test_samples: args.test_samples,
        seed: cli.seed,
        ..SynthConfig::default()
    };
    let dataset = generate_dataset(&config)?;
    write_config_echo(cli)?;
    save_dataset(&dataset, &cli.out_dir)?;
    println!(
        "wrote {} samples ({} levels, {} classes) to {}",
        dataset.index.samples.len(),
        config.num_levels,
        config.num_classes,
        cli.out_dir.display()
    );
    Ok(())
}

// ---- train ----

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    epochs: usize,
    val_loss: f64,
    val_accuracy: f64,
    val_weighted_f1: f64,
    test_loss: f64,
    test_accuracy: f64,
    test_weighted_f1: f64,
    num_params: usize,
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> anyhow::Result<()> {
    let schedule: Vec<usize> = parse_list(&args.schedule, "--schedule")?;
    let data = LoadedData::load(&args.dataset)?;
    let features = data.features()?;
    let model_config = model_config_from(
        &data,
        &schedule,
        args.sigma,
        args.samples,
        args.selection.into(),
        args.attention.into(),
        args.agg.into(),
    )?;
    let train_config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        selection: args.metric.into(),
        seed: cli.seed,
        ..TrainConfig::default()
    };
    train_config.validate()?;

    let result = fit(&model_config, &features, &train_config)?;
    let best_record = &result.log[result.best_epoch - 1];
    let test = evaluate(&result.best, &features, Split::Test)?;

    write_config_echo(cli)?;
    save_checkpoint(&result.best, &cli.out_dir.join("checkpoint"))?;
    write_epoch_log(&cli.out_dir.join("train_log.jsonl"), &result.log)?;
    write_json(
        &cli.out_dir,
        "train_summary.json",
        &TrainSummary {
            best_epoch: result.best_epoch,
            epochs: train_config.epochs,
            val_loss: best_record.val_loss,
            val_accuracy: best_record.val_accuracy,
            val_weighted_f1: best_record.val_weighted_f1,
            test_loss: test.loss,
            test_accuracy: test.accuracy,
            test_weighted_f1: test.weighted_f1,
            num_params: result.best.num_params(),
        },
    )?;
    println!(
        "best epoch {} of {} | val loss {:.4} acc {:.3} | test acc {:.3} wf1 {:.3}",
        result.best_epoch,
        train_config.epochs,
        best_record.val_loss,
        best_record.val_accuracy,
        test.accuracy,
        test.weighted_f1
    );
    Ok(())
}

// ---- infer ----

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    label: usize,
    predicted: usize,
    correct: bool,
    logits: &'a [f32],
    encoder_calls: u64,
    encoder_flops: u64,
    head_flops: u64,
}

#[derive(Serialize)]
struct InferSummary {
    split: String,
    samples: usize,
    accuracy: f64,
    weighted_f1: f64,
    encoder_calls_per_sample: u64,
    total_flops_per_sample: u64,
}

fn cmd_infer(cli: &Cli, args: &InferArgs) -> anyhow::Result<()> {
    let data = LoadedData::load(&args.dataset)?;
    let mut model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    if let Some(text) = &args.schedule {
        model.config.schedule = parse_list(text, "--schedule")?;
        model.config.validate()?;
    }
    let split: Split = args.split.into();
    let samples = data.in_split(split);
    if samples.is_empty() {
        bail!("dataset has no {split} samples");
    }

    let mut lines = String::new();
    let mut preds = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut calls = Vec::with_capacity(samples.len());
    let mut flops = Vec::with_capacity(samples.len());
    for (record, pyramid) in &samples {
        let inference = infer(
            &InferInput::Patches {
                pyramid,
                encoder: &data.encoder,
            },
            &model,
        )?;
        let row = PredictionRecord {
            id: &record.id,
            label: record.label,
            predicted: inference.predicted,
            correct: inference.predicted == record.label,
            logits: &inference.logits,
            encoder_calls: inference.ledger.encoder_calls(),
            encoder_flops: inference.ledger.encoder_flops,
            head_flops: inference.ledger.head_flops,
        };
        lines.push_str(&serde_json::to_string(&row)?);
        lines.push('\n');
        preds.push(inference.predicted);
        labels.push(record.label);
        calls.push(row.encoder_calls);
        flops.push(row.encoder_flops + row.head_flops);
    }

    // Zoomed inference does the same amount of work on every sample of a
    // fixed geometry; surface that single number.
    let per_sample_calls = calls[0];
    anyhow::ensure!(
        calls.iter().all(|&c| c == per_sample_calls),
        "encoder calls varied across samples of identical geometry"
    );
    let summary = InferSummary {
        split: split.to_string(),
        samples: samples.len(),
        accuracy: accuracy(&preds, &labels)?,
        weighted_f1: weighted_f1(&preds, &labels, data.index.num_classes)?,
        encoder_calls_per_sample: per_sample_calls,
        total_flops_per_sample: flops[0],
    };

    write_config_echo(cli)?;
    let path = cli.out_dir.join("predictions.jsonl");
    fs::write(&path, lines).with_context(|| format!("writing {}", path.display()))?;
    write_json(&cli.out_dir, "infer_summary.json", &summary)?;
    println!(
        "{} samples | accuracy {:.3} wf1 {:.3} | {} encoder calls/sample",
        summary.samples, summary.accuracy, summary.weighted_f1, summary.encoder_calls_per_sample
    );
    Ok(())
}

// ---- bench ----

#[derive(Serialize)]
struct BenchEntry {
    mode: String,
    analytic_encoder_calls: u64,
    analytic_encoder_flops: u64,
    analytic_head_flops: u64,
    analytic_total_flops: u64,
    measured_encoder_calls: u64,
    accuracy: f64,
    median_seconds: f64,
    samples_per_hour: f64,
    per_run_seconds: Vec<f64>,
    on_frontier: bool,
}

#[derive(Serialize)]
struct BenchReport {
    split: String,
    samples: usize,
    runs: usize,
    threads: usize,
    flop_ratio_zoom_over_full: Option<f64>,
    entries: Vec<BenchEntry>,
}

fn run_split_inference(
    mode: ModeArg,
    samples: &[(&crate::io::SampleRecord, &PatchPyramid)],
    encoder: &SynthEncoder,
    model: &ZoomModel<f32>,
) -> anyhow::Result<(Vec<usize>, Vec<usize>, u64)> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut calls = 0u64;
    for (record, pyramid) in samples {
        let input = InferInput::Patches { pyramid, encoder };
        let inference = match mode {
            ModeArg::Zoom => infer(&input, model)?,
            ModeArg::FullGrid => full_grid_infer(&input, model)?,
        };
        preds.push(inference.predicted);
        labels.push(record.label);
        calls += inference.ledger.encoder_calls();
    }
    Ok((preds, labels, calls))
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> anyhow::Result<()> {
    if args.runs < 3 {
        bail!("--runs must be at least 3 (first run is discarded as warm-up)");
    }
    let data = LoadedData::load(&args.dataset)?;
    let model = match &args.checkpoint {
        Some(dir) => {
            load_checkpoint(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?
        }
        None => {
            let schedule: Vec<usize> = parse_list(&args.schedule, "--schedule")?;
            let config = model_config_from(
                &data,
                &schedule,
                0.05,
                100,
                SelectionMode::DiffTopK,
                AttentionMode::Dual,
                Aggregation::Sum,
            )?;
            let mut rng = crate::rng::Seed(cli.seed).stream(crate::rng::StreamId::ModelInit);
            ZoomModel::init(config, &mut rng)?
        }
    };
    let split: Split = args.split.into();
    let samples = data.in_split(split);
    if samples.is_empty() {
        bail!("dataset has no {split} samples");
    }

    let modes: Vec<ModeArg> = match args.mode {
        Some(mode) => vec![mode],
        None => vec![ModeArg::Zoom, ModeArg::FullGrid],
    };

    let mut entries = Vec::new();
    for &mode in &modes {
        let cost_mode = match mode {
            ModeArg::Zoom => CostMode::Zoom,
            ModeArg::FullGrid => CostMode::FullGrid,
        };
        let analytic = count_flops(
            &model.config,
            data.first_level_rows(),
            data.encoder.flops_per_patch(),
            cost_mode,
        );
        let (preds, labels, measured_calls) =
            run_split_inference(mode, &samples, &data.encoder, &model)?;
        let acc = accuracy(&preds, &labels)?;
        let report: ThroughputReport = measure_throughput(
            || {
                run_split_inference(mode, &samples, &data.encoder, &model)
                    .expect("measured pass repeats a pass that already succeeded");
            },
            samples.len(),
            args.runs,
        )?;
        entries.push(BenchEntry {
            mode: match mode {
                ModeArg::Zoom => "zoom".to_string(),
                ModeArg::FullGrid => "full_grid".to_string(),
            },
            analytic_encoder_calls: analytic.encoder_calls(),
            analytic_encoder_flops: analytic.encoder_flops,
            analytic_head_flops: analytic.head_flops,
            analytic_total_flops: analytic.total_flops(),
            measured_encoder_calls: measured_calls / samples.len() as u64,
            accuracy: acc,
            median_seconds: report.median_seconds,
            samples_per_hour: report.samples_per_hour,
            per_run_seconds: report.per_run_seconds,
            on_frontier: false,
        });
    }

    let mut points: Vec<FrontierPoint> = entries
        .iter()
        .map(|e| FrontierPoint {
            label: e.mode.clone(),
            cost: e.analytic_total_flops as f64,
            value: e.accuracy,
            optimal: false,
        })
        .collect();
    mark_pareto(&mut points);
    for (entry, point) in entries.iter_mut().zip(&points) {
        entry.on_frontier = point.optimal;
    }

    let flop_ratio_zoom_over_full = match (
        entries.iter().find(|e| e.mode == "zoom"),
        entries.iter().find(|e| e.mode == "full_grid"),
    ) {
        (Some(zoom), Some(full)) => {
            Some(zoom.analytic_total_flops as f64 / full.analytic_total_flops as f64)
        }
        _ => None,
    };

    let report = BenchReport {
        split: split.to_string(),
        samples: samples.len(),
        runs: args.runs,
        threads: rayon::current_num_threads(),
        flop_ratio_zoom_over_full,
        entries,
    };

    write_config_echo(cli)?;
    write_json(&cli.out_dir, "bench.json", &report)?;
    let table = format_bench_table(&report);
    let path = cli.out_dir.join("bench.txt");
    fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    print!("{table}");
    Ok(())
}

fn format_bench_table(report: &BenchReport) -> String {
    let mut out = format!(
        "split {} | {} samples | {} timed runs\n{:<10} {:>14} {:>16} {:>10} {:>14} {:>9}\n",
        report.split,
        report.samples,
        report.runs,
        "mode",
        "encoder_calls",
        "total_flops",
        "accuracy",
        "samples/hour",
        "frontier"
    );
    for e in &report.entries {
        out.push_str(&format!(
            "{:<10} {:>14} {:>16} {:>10.3} {:>14.0} {:>9}\n",
            e.mode,
            e.analytic_encoder_calls,
            e.analytic_total_flops,
            e.accuracy,
            e.samples_per_hour,
            if e.on_frontier { "yes" } else { "no" }
        ));
    }
    if let Some(ratio) = report.flop_ratio_zoom_over_full {
        out.push_str(&format!("zoom / full-grid FLOP ratio: {ratio:.6}\n"));
    }
    out
}

// ---- ablate ----

fn cmd_ablate(cli: &Cli, args: &AblateArgs) -> anyhow::Result<()> {
    let arm_names: Vec<String> = parse_list(&args.arms, "--arms")?;
    let arms = arm_names
        .iter()
        .map(|name| Arm::parse(name))
        .collect::<Result<Vec<_>, _>>()?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "--seeds")?;
    let schedule: Vec<usize> = parse_list(&args.schedule, "--schedule")?;

    let data = LoadedData::load(&args.dataset)?;
    let features = data.features()?;
    let base = model_config_from(
        &data,
        &schedule,
        args.sigma,
        args.samples,
        SelectionMode::DiffTopK,
        AttentionMode::Dual,
        Aggregation::Sum,
    )?;
    let train_config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: cli.seed,
        ..TrainConfig::default()
    };
    train_config.validate()?;

    let reports = ablate(&base, &features, &train_config, &arms, &seeds)?;

    write_config_echo(cli)?;
    write_json(&cli.out_dir, "ablation.json", &reports)?;
    let table = format_ablation_table(&reports);
    let path = cli.out_dir.join("ablation.txt");
    fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    print!("{table}");
    Ok(())
}

// ---- attnmap ----

#[derive(Serialize)]
struct AttnmapSummary {
    level: usize,
    split: String,
    samples: usize,
    /// Fraction of samples whose maximum-attention patch descends from a
    /// planted informative parent.
    max_attention_in_informative: f64,
}

fn cmd_attnmap(cli: &Cli, args: &AttnmapArgs) -> anyhow::Result<()> {
    let data = LoadedData::load(&args.dataset)?;
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    if args.level == 0 || args.level > model.config.num_levels {
        bail!(
            "--level {} outside 1..={} (1 = coarsest)",
            args.level,
            model.config.num_levels
        );
    }
    let level = args.level - 1;
    let split: Split = args.split.into();
    let mut samples = data.in_split(split);
    if let Some(id) = &args.sample {
        samples.retain(|(r, _)| &r.id == id);
        if samples.is_empty() {
            bail!("sample {id:?} not found in the {split} split");
        }
    }
    if samples.is_empty() {
        bail!("dataset has no {split} samples");
    }

    let n1 = data.first_level_rows();
    // Render everything before writing anything.
    let mut outputs: Vec<(String, String, Vec<u8>)> = Vec::with_capacity(samples.len());
    let mut hits = 0usize;
    for (record, pyramid) in &samples {
        let inference = infer(
            &InferInput::Patches {
                pyramid,
                encoder: &data.encoder,
            },
            &model,
        )?;
        let attention = inference.attention_at(level)?;
        let weights: Vec<(usize, f32)> = attention
            .patch_indices
            .iter()
            .copied()
            .zip(attention.weights.iter().copied())
            .collect();
        let csv = attention_csv(n1, level, &weights)?;
        let pgm = render_attention(n1, level, &weights)?
            .scaled(args.scale)?
            .to_pgm();
        outputs.push((record.id.clone(), csv, pgm));

        let best = weights
            .iter()
            .copied()
            .reduce(|a, b| if b.1 > a.1 { b } else { a })
            .expect("working sets are never empty");
        let ancestor = best.0 >> (2 * level);
        hits += usize::from(record.informative_parents.contains(&ancestor));
    }

    write_config_echo(cli)?;
    let dir = cli.out_dir.join("attnmap");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (id, csv, pgm) in &outputs {
        let base = format!("{id}_level_{}", args.level);
        fs::write(dir.join(format!("{base}.csv")), csv)?;
        fs::write(dir.join(format!("{base}.pgm")), pgm)?;
    }
    let summary = AttnmapSummary {
        level: args.level,
        split: split.to_string(),
        samples: outputs.len(),
        max_attention_in_informative: hits as f64 / outputs.len() as f64,
    };
    write_json(&cli.out_dir, "attnmap_summary.json", &summary)?;
    println!(
        "wrote {} attention maps (level {}) | max-attention patch informative for {:.1}% of samples",
        summary.samples,
        args.level,
        100.0 * summary.max_attention_in_informative
    );
    Ok(())
}

// ---- sweep-k ----

#[derive(Serialize)]
struct SweepRow {
    k: usize,
    schedule: Vec<usize>,
    encoder_calls: u64,
    per_seed_accuracy: Vec<f64>,
    mean_accuracy: f64,
    std_accuracy: f64,
}

#[derive(Serialize)]
struct SweepReport {
    seeds: Vec<u64>,
    epochs: usize,
    rows: Vec<SweepRow>,
    best_k: usize,
}

fn cmd_sweep_k(cli: &Cli, args: &SweepKArgs) -> anyhow::Result<()> {
    let ks: Vec<usize> = parse_list(&args.ks, "--ks")?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "--seeds")?;
    let data = LoadedData::load(&args.dataset)?;
    let features = data.features()?;
    let levels = data.num_levels();
    if levels < 2 {
        bail!("the selection width sweep needs at least two levels");
    }

    let train_config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: cli.seed,
        ..TrainConfig::default()
    };
    train_config.validate()?;

    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        // Pass everything through after the first selection: K_j = 4^j * k.
        let schedule: Vec<usize> = (0..levels - 1)
            .map(|j| k << (2 * j))
            .collect();
        let config = model_config_from(
            &data,
            &schedule,
            0.05,
            100,
            SelectionMode::DiffTopK,
            AttentionMode::Dual,
            Aggregation::Sum,
        )?;
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let run = TrainConfig {
                seed,
                ..train_config.clone()
            };
            let result = fit(&config, &features, &run)?;
            let test = evaluate(&result.best, &features, Split::Test)?;
            per_seed.push(test.accuracy);
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let std = if per_seed.len() > 1 {
            (per_seed.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
                / (per_seed.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        let analytic = count_flops(
            &config,
            data.first_level_rows(),
            data.encoder.flops_per_patch(),
            CostMode::Zoom,
        );
        rows.push(SweepRow {
            k,
            schedule,
            encoder_calls: analytic.encoder_calls(),
            per_seed_accuracy: per_seed,
            mean_accuracy: mean,
            std_accuracy: std,
        });
    }

    let best_k = rows
        .iter()
        .max_by(|a, b| {
            a.mean_accuracy
                .partial_cmp(&b.mean_accuracy)
                .expect("accuracies are finite")
        })
        .expect("at least one K")
        .k;
    let report = SweepReport {
        seeds,
        epochs: args.epochs,
        rows,
        best_k,
    };

    write_config_echo(cli)?;
    write_json(&cli.out_dir, "sweep.json", &report)?;
    let mut table = format!(
        "{:>4} {:>14} {:>14} {:>8}  per-seed accuracy\n",
        "k", "encoder_calls", "mean_accuracy", "std"
    );
    for row in &report.rows {
        let per_seed = row
            .per_seed_accuracy
            .iter()
            .map(|a| format!("{a:.3}"))
            .collect::<Vec<_>>()
            .join(" ");
        table.push_str(&format!(
            "{:>4} {:>14} {:>14.4} {:>8.4}  {per_seed}\n",
            row.k, row.encoder_calls, row.mean_accuracy, row.std_accuracy
        ));
    }
    table.push_str(&format!("best k: {}\n", report.best_k));
    let path = cli.out_dir.join("sweep.txt");
    fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    print!("{table}");
    Ok(())
}
