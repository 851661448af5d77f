//! The `mhca` command line: synthetic data, training, evaluation, gradient
//! checks and baseline-vs-attention comparison.

pub mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mhca_core::attention::GateMode;
use mhca_core::data::{generate_synthetic_dataset, read_dataset_archive, stratified_split, write_dataset_archive};
use mhca_core::gradcheck_suite::{format_table, run_gradcheck_suite, DEFAULT_SEEDS};
use mhca_core::model::{build_xception_lite, load_checkpoint, save_checkpoint};
use mhca_core::train::{compare_models, evaluate_model, run_repeated, ComparisonRow, RepeatedReport};
use mhca_core::{Dataset, MetricsReport, Model, SplitIndices};

pub use config::{parse_config, CliConfig, DataSource, Overrides};

pub const CHECKPOINT_FILE: &str = "model.canw";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const RUNS_FILE: &str = "runs.json";
pub const DATASET_FILE: &str = "dataset.cads";

/// Run `i` of a repeated experiment uses seed `seed + i`.
const SEED_STRIDE: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "mhca", version, about = "Multi-head channel-attention CNN toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset archive.
    SynthData(SynthArgs),
    /// Train a model and write checkpoint, history and test metrics.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Train the baseline and the attention model with shared seeds.
    Compare(RunArgs),
}

/// Data, split and output settings shared by every config-driven command.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Seed for the split, initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Read images from a dataset archive.
    #[arg(long, conflicts_with_all = ["data_dir", "synthetic"])]
    pub archive: Option<PathBuf>,
    /// Read images from `DIR/<class>/*.pgm|*.ppm`.
    #[arg(long, conflicts_with = "synthetic")]
    pub data_dir: Option<PathBuf>,
    /// Generate N synthetic images per class.
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    /// Seed of the synthetic generator (with --synthetic).
    #[arg(long, requires = "synthetic")]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "epochs")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub freeze_fraction: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub reduction: Option<usize>,
    #[arg(long, value_enum)]
    pub gate_mode: Option<GateArg>,
    /// Comma-separated channel widths, e.g. 32,64,128.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long)]
    pub hidden_units: Option<usize>,
    /// Build the baseline without the attention block.
    #[arg(long)]
    pub no_attention: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GateArg {
    Pooled,
    Spatial,
}

impl From<GateArg> for GateMode {
    fn from(g: GateArg) -> Self {
        match g {
            GateArg::Pooled => GateMode::Pooled,
            GateArg::Spatial => GateMode::Spatial,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Archive path; defaults to `<output_dir>/dataset.cads`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum EvalSplit {
    #[default]
    Test,
    Train,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint path; defaults to `<output_dir>/model.canw`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub split: EvalSplit,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = DEFAULT_SEEDS)]
    pub seeds: usize,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        let data = if let Some(p) = &self.archive {
            Some(DataSource::Archive { path: p.clone() })
        } else if let Some(p) = &self.data_dir {
            Some(DataSource::Directory { path: p.clone() })
        } else {
            self.synthetic.map(|n| DataSource::Synthetic { n_per_class: n, seed: self.data_seed.unwrap_or(0) })
        };
        Overrides {
            seed: self.seed,
            input_size: self.input_size,
            test_fraction: self.test_fraction,
            output_dir: self.output_dir.clone(),
            data,
            ..Default::default()
        }
    }

    fn resolve(&self, extra: impl FnOnce(&mut Overrides)) -> Result<CliConfig> {
        let mut o = self.overrides();
        extra(&mut o);
        parse_config(self.config.as_deref(), &o)
    }
}

impl ModelArgs {
    fn apply(&self, o: &mut Overrides) {
        o.learning_rate = self.learning_rate;
        o.batch_size = self.batch_size;
        o.max_epochs = self.max_epochs;
        o.freeze_fraction = self.freeze_fraction;
        o.runs = self.runs;
        o.heads = self.heads;
        o.reduction = self.reduction;
        o.gate_mode = self.gate_mode.map(Into::into);
        o.widths = self.widths.clone();
        o.hidden_units = self.hidden_units;
        o.attention = self.no_attention.then_some(false);
    }
}

/// Executes one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(a) => synth_data(&a.common.resolve(|_| {})?, a.out.as_deref()),
        Command::Train(a) => train(&a.common.resolve(|o| a.model.apply(o))?).map(|_| ()),
        Command::Eval(a) => eval(&a.common.resolve(|_| {})?, a.checkpoint.as_deref(), a.split).map(|_| ()),
        Command::Gradcheck(a) => gradcheck(a.seeds),
        Command::Compare(a) => compare(&a.common.resolve(|o| a.model.apply(o))?),
    }
}

pub fn load_dataset(cfg: &CliConfig) -> Result<Dataset> {
    let ds = match &cfg.data {
        DataSource::Synthetic { n_per_class, seed } => generate_synthetic_dataset(*n_per_class, cfg.input_size, *seed)?,
        DataSource::Archive { path } => {
            read_dataset_archive(path).with_context(|| format!("reading dataset archive {}", path.display()))?
        }
        DataSource::Directory { path } => Dataset::from_directory(path, cfg.input_size)
            .with_context(|| format!("reading image directory {}", path.display()))?,
    };
    ensure!(ds.size() == cfg.input_size, "dataset images are {0}×{0} but input_size is {1}", ds.size(), cfg.input_size);
    Ok(ds)
}

fn split(cfg: &CliConfig, ds: &Dataset) -> Result<SplitIndices> {
    Ok(stratified_split(&ds.labels, ds.num_classes(), cfg.test_fraction, cfg.seed)?)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    write(path, serde_json::to_string_pretty(report)? + "\n")
}

pub fn synth_data(cfg: &CliConfig, out: Option<&Path>) -> Result<()> {
    let DataSource::Synthetic { .. } = cfg.data else {
        bail!("synth-data needs a synthetic data source (--synthetic N or \"data\": {{\"synthetic\": ...}})");
    };
    cfg.echo()?;
    let ds = load_dataset(cfg)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(DATASET_FILE));
    write_dataset_archive(&ds, &path).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} images ({}×{}) to {}", ds.len(), ds.size(), ds.size(), path.display());
    Ok(())
}

fn repeated(
    cfg: &CliConfig,
    ds: &Dataset,
    split: &SplitIndices,
    attention: bool,
) -> Result<(RepeatedReport, Model<f32>)> {
    let model_cfg = cfg.model_config(ds.num_classes(), ds.channels(), attention);
    Ok(run_repeated(|seed| build_xception_lite(&model_cfg, seed), ds, split, &cfg.train_config(), SEED_STRIDE)?)
}

/// Trains `cfg.runs` models and keeps the best one. With a single run,
/// `metrics.json` is that run's test report; otherwise it holds the mean and
/// `runs.json` has every run.
pub fn train(cfg: &CliConfig) -> Result<RepeatedReport> {
    cfg.echo()?;
    let ds = load_dataset(cfg)?;
    let split = split(cfg, &ds)?;
    let (report, model) = repeated(cfg, &ds, &split, cfg.attention)?;
    let dir = &cfg.output_dir;
    save_checkpoint(&model, &dir.join(CHECKPOINT_FILE)).context("writing checkpoint")?;
    write(&dir.join(HISTORY_FILE), report.runs[report.best].history.to_csv())?;
    write_metrics(&dir.join(METRICS_FILE), &report.mean)?;
    if report.runs.len() > 1 {
        write(&dir.join(RUNS_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    for r in &report.runs {
        println!("run seed {}: test accuracy {:.2}%", r.seed, r.report.accuracy_pct);
    }
    print!("{}", report.mean.to_text());
    Ok(report)
}

pub fn eval(cfg: &CliConfig, checkpoint: Option<&Path>, which: EvalSplit) -> Result<MetricsReport> {
    cfg.echo()?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE));
    let model = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let ds = load_dataset(cfg)?;
    let m = model.config();
    ensure!(
        (m.input_size, m.in_channels, m.num_classes) == (ds.size(), ds.channels(), ds.num_classes()),
        "checkpoint expects {}×{}×{} inputs and {} classes, dataset has {}×{}×{} and {}",
        m.input_size,
        m.input_size,
        m.in_channels,
        m.num_classes,
        ds.size(),
        ds.size(),
        ds.channels(),
        ds.num_classes()
    );
    let indices = match which {
        EvalSplit::Test => split(cfg, &ds)?.test,
        EvalSplit::Train => split(cfg, &ds)?.train,
        EvalSplit::All => (0..ds.len()).collect(),
    };
    let report = evaluate_model(&model, &ds, &indices)?;
    write_metrics(&cfg.output_dir.join(METRICS_FILE), &report)?;
    print!("{}", report.to_text());
    Ok(report)
}

pub fn gradcheck(seeds: usize) -> Result<()> {
    ensure!(seeds > 0, "seeds: must be at least 1");
    let results = run_gradcheck_suite(seeds)?;
    print!("{}", format_table(&results));
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    ensure!(failed.is_empty(), "gradient check failed for: {}", failed.join(", "));
    Ok(())
}

pub fn compare(cfg: &CliConfig) -> Result<()> {
    cfg.echo()?;
    let ds = load_dataset(cfg)?;
    let split = split(cfg, &ds)?;
    let mut rows = Vec::new();
    for (name, attention) in [("baseline", false), ("attention", true)] {
        let (report, _) = repeated(cfg, &ds, &split, attention)?;
        write_metrics(&cfg.output_dir.join(format!("{name}.{METRICS_FILE}")), &report.mean)?;
        let std = (report.runs.len() > 1).then_some(report.std.accuracy_pct);
        rows.push(ComparisonRow::from_report(name, &report.mean, std));
    }
    let table = compare_models(rows)?;
    let dir = &cfg.output_dir;
    write(&dir.join("comparison.txt"), table.to_text())?;
    write(&dir.join("comparison.csv"), table.to_csv())?;
    write(&dir.join("comparison.json"), table.to_json()? + "\n")?;
    print!("{}", table.to_text());
    Ok(())
}
