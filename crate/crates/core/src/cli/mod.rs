//! Command-line driver: `synth-data`, `search`, `derive`, `train`, `eval`
//! and `gradcheck`.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use config::{DatasetSource, Grid, RunConfig, CONFIG_SCHEMA};

use crate::diagnostics::{gradcheck_suite, GradcheckEntry, GRADCHECK_TOL};
use crate::error::{Error, Result};
use crate::graph::{generate_synthetic, save_dataset, Dataset, DatasetSummary, Split, SyntheticSpec, SyntheticTask};
use crate::ops::AggOp;
use crate::search::search;
use crate::supernet::{load_model, save_model, ArchEncoding, Layout, Mode};
use crate::trainer::{evaluate, train_discrete, EvalReport, Metric};

pub const REPORT_SCHEMA: &str = "gnas-report/1";

#[derive(Debug, Parser)]
#[command(name = "gnas", version, about = "Differentiable graph neural architecture search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic graph-classification dataset.
    SynthData(SynthArgs),
    /// Search an architecture on the configured dataset.
    Search(SearchArgs),
    /// Derive the discrete architecture from a saved supernet.
    Derive(DeriveArgs),
    /// Train an architecture from scratch.
    Train(TrainArgs),
    /// Evaluate a trained model.
    Eval(EvalArgs),
    /// Finite-difference check of every primitive, operator and the supernet.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    TriangleThreshold,
    DegreeParity,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "triangle-threshold")]
    pub task: TaskArg,
    #[arg(long, default_value_t = 500)]
    pub graphs: usize,
    #[arg(long)]
    pub min_nodes: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub edge_prob: Option<f64>,
    /// Triangle count at or above which a graph is positive.
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seeds of the config's search and train sections.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Reject hyper-parameters outside the config's `grid`.
    #[arg(long)]
    pub strict_grid: bool,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Search topology only, with this aggregator in every block.
    #[arg(long, value_parser = parse_agg)]
    pub fixed_agg: Option<AggOp>,
    #[arg(long)]
    pub blocks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DeriveArgs {
    /// Supernet manifest written by `search`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub arch: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model manifest written by `train` or `search`.
    #[arg(long)]
    pub model: PathBuf,
    /// Overrides the config's metric.
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<Metric>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

fn parse_agg(s: &str) -> std::result::Result<AggOp, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(output) => {
            print!("{output}");
            0
        }
        Err(CliError::Failed(output)) => {
            print!("{output}");
            1
        }
        Err(CliError::Error(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Error(Error),
    /// The command ran but its check failed; carries the printed report.
    Failed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Error(e)
    }
}

/// Run one command and return its console output.
pub fn execute(cmd: Command) -> std::result::Result<String, CliError> {
    Ok(match cmd {
        Command::SynthData(a) => synth_data(&a)?,
        Command::Search(a) => run_search(&a)?,
        Command::Derive(a) => derive(&a)?,
        Command::Train(a) => train(&a)?,
        Command::Eval(a) => eval(&a)?,
        Command::Gradcheck(a) => return gradcheck(&a),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth_data(a: &SynthArgs) -> Result<String> {
    let mut spec = match a.task {
        TaskArg::TriangleThreshold => SyntheticSpec::triangles(a.graphs),
        TaskArg::DegreeParity => SyntheticSpec::degree_parity(a.graphs),
    };
    spec.min_nodes = a.min_nodes.unwrap_or(spec.min_nodes);
    spec.max_nodes = a.max_nodes.unwrap_or(spec.max_nodes);
    spec.edge_prob = a.edge_prob.unwrap_or(spec.edge_prob);
    match (&mut spec.task, a.threshold) {
        (SyntheticTask::TriangleThreshold { threshold }, Some(t)) => *threshold = t,
        (SyntheticTask::DegreeParity, Some(_)) => {
            return Err(Error::InvalidArgument("--threshold only applies to triangle-threshold".into()))
        }
        _ => {}
    }
    let ds = generate_synthetic(&spec, a.seed)?;
    create_dir(&a.out)?;
    save_dataset(&ds, &a.out.join("graphs.jsonl"), &a.out.join("splits.json"))?;
    let summary = ds.summary();
    write_json(&a.out.join("summary.json"), &SynthSummary { spec, seed: a.seed, summary: summary.clone() })?;
    Ok(format!(
        "graphs {}  mean nodes {:.2}  mean edges {:.2}  splits {}/{}/{}\nwrote {}\n",
        summary.num_graphs,
        summary.mean_nodes,
        summary.mean_edges,
        summary.train,
        summary.valid,
        summary.test,
        a.out.display()
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct SynthSummary {
    spec: SyntheticSpec,
    seed: u64,
    summary: DatasetSummary,
}

/// Config, its directory, and the loaded dataset.
fn load_run(c: &Common) -> Result<(RunConfig, Dataset)> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.search.seed = s;
        cfg.train.seed = s;
    }
    let base = c.config.parent().unwrap_or(Path::new("."));
    let ds = cfg.dataset.load(base)?;
    Ok((cfg, ds))
}

fn run_search(a: &SearchArgs) -> Result<String> {
    let (mut cfg, ds) = load_run(&a.common)?;
    if let Some(op) = a.fixed_agg {
        cfg.search.fixed_aggregation = Some(op);
    }
    if let Some(l) = a.blocks {
        cfg.search.num_blocks = l;
    }
    let sc = &cfg.search;
    sc.validate()?;
    if a.common.strict_grid {
        cfg.grid_for_strict()?.check("search", sc.lr_weights, sc.batch_size, sc.hidden, sc.dropout)?;
    }
    let out = search(&ds, &cfg.search)?;
    let dir = &a.common.out;
    create_dir(dir)?;
    out.arch.save(&dir.join("arch.json"))?;
    out.history.save(&dir.join("history.jsonl"))?;
    save_model(&out.supernet, Some(out.lambda), &dir.join("model.bin"), &dir.join("model.manifest.json"))?;
    let mut s = String::new();
    for e in &out.history.epochs {
        let _ = writeln!(
            s,
            "epoch {:>3}  lambda {:.4}  train loss {:.4}  valid loss {:.4}  valid metric {:.4}",
            e.epoch, e.lambda, e.train_loss, e.valid_loss, e.valid_metric
        );
    }
    let _ = writeln!(s, "best epoch {}\n{}", out.best_epoch, out.arch.to_json());
    let _ = writeln!(s, "wrote {}", dir.display());
    Ok(s)
}

fn bin_path(manifest: &Path) -> PathBuf {
    let name = manifest.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let stem = name.strip_suffix(".manifest.json").unwrap_or("model");
    manifest.with_file_name(format!("{stem}.bin"))
}

fn derive(a: &DeriveArgs) -> Result<String> {
    let (net, _) = load_model(&bin_path(&a.model), &a.model)?;
    let arch = match &net.layout {
        Layout::Discrete { arch } => arch.clone(),
        Layout::Supernet { .. } => net.derive_architecture(),
    };
    create_dir(&a.out)?;
    arch.save(&a.out.join("arch.json"))?;
    Ok(format!("{}\nwrote {}\n", arch.to_json(), a.out.join("arch.json").display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub command: String,
    pub best_epoch: usize,
    pub reports: Vec<EvalReport>,
}

fn table(reports: &[EvalReport]) -> String {
    let mut s = format!("{:<6} {:<9} {:>8} {:>8}\n", "split", "metric", "value", "loss");
    for r in reports {
        let _ = writeln!(s, "{:<6} {:<9} {:>8.4} {:>8.4}", r.split.name(), r.metric.as_str(), r.value, r.loss);
    }
    s
}

fn train(a: &TrainArgs) -> Result<String> {
    let (cfg, ds) = load_run(&a.common)?;
    let hp = &cfg.train;
    if a.common.strict_grid {
        cfg.grid_for_strict()?.check("train", hp.learning_rate, hp.batch_size, hp.hidden_size, hp.dropout)?;
    }
    let arch = ArchEncoding::load(&a.arch)?;
    let out = train_discrete(&arch, &ds, hp)?;
    let dir = &a.common.out;
    create_dir(dir)?;
    save_model(&out.model, None, &dir.join("model.bin"), &dir.join("model.manifest.json"))?;
    let mut hist = String::new();
    for e in &out.history {
        hist.push_str(&serde_json::to_string(e)?);
        hist.push('\n');
    }
    let hist_path = dir.join("history.jsonl");
    std::fs::write(&hist_path, hist).map_err(|e| Error::io(&hist_path, e))?;
    let report = RunReport {
        schema: REPORT_SCHEMA.into(),
        command: "train".into(),
        best_epoch: out.best_epoch,
        reports: out.reports,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(format!("best epoch {}\n{}wrote {}\n", report.best_epoch, table(&report.reports), dir.display()))
}

fn eval(a: &EvalArgs) -> Result<String> {
    let (cfg, ds) = load_run(&a.common)?;
    let ds = if cfg.train.virtual_node { ds.with_virtual_nodes() } else { ds };
    let metric = match a.metric {
        Some(m) => {
            m.check_task(ds.task)?;
            m
        }
        None => cfg.train.metric_for(&ds)?,
    };
    let (net, manifest) = load_model(&bin_path(&a.model), &a.model)?;
    if net.config.in_dim != ds.feature_dim() || net.config.num_outputs != ds.task.num_outputs() {
        return Err(Error::Validation(format!(
            "model expects {} input features and {} outputs; dataset has {} and {}",
            net.config.in_dim,
            net.config.num_outputs,
            ds.feature_dim(),
            ds.task.num_outputs()
        )));
    }
    let arch;
    let mode = match &net.layout {
        Layout::Discrete { arch: a } => {
            arch = a.clone();
            Mode::Discrete(&arch)
        }
        Layout::Supernet { .. } => Mode::Relaxed { lambda: manifest.lambda.unwrap_or(1.0) },
    };
    let reports = Split::ALL
        .iter()
        .filter(|&&s| !ds.splits.get(s).is_empty())
        .map(|&s| evaluate(&net, mode, &ds, s, metric, cfg.train.batch_size, 0))
        .collect::<Result<Vec<_>>>()?;
    let report = RunReport { schema: REPORT_SCHEMA.into(), command: "eval".into(), best_epoch: 0, reports };
    let dir = &a.common.out;
    create_dir(dir)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(format!("{}wrote {}\n", table(&report.reports), dir.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct GradcheckReport {
    tolerance: f64,
    passed: bool,
    entries: Vec<GradcheckEntry>,
}

fn gradcheck(a: &GradcheckArgs) -> std::result::Result<String, CliError> {
    let entries = gradcheck_suite(a.inject_fault)?;
    let passed = entries.iter().all(|e| e.passed);
    let mut s = format!("{:<12} {:<14} {:>12}  status\n", "group", "op", "max error");
    for e in &entries {
        let _ = writeln!(
            s,
            "{:<12} {:<14} {:>12.3e}  {}",
            e.group,
            e.name,
            e.max_error,
            if e.passed { "ok" } else { "FAIL" }
        );
    }
    let failed = entries.iter().filter(|e| !e.passed).count();
    let _ = writeln!(s, "{} checks, {failed} failed (tolerance {GRADCHECK_TOL:e})", entries.len());
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("gradcheck.json"), &GradcheckReport { tolerance: GRADCHECK_TOL, passed, entries })?;
    }
    if passed {
        Ok(s)
    } else {
        Err(CliError::Failed(s))
    }
}
