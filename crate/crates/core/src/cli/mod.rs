//! The `lsdan` command line: dataset preparation, trials, sweeps, the
//! ablation grid, the per-hop attention report and split files.

mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

pub use config::{CommonArgs, ExperimentConfig};
pub use output::VERSION;

use crate::data::{load_split, make_pu_split, save_split};
use crate::data::{DataError, DatasetFiles, GraphDataset};
use crate::graph::{GraphError, HopMaskSet, WalkMode};
use crate::train::{
    self, ablation_suite, run_trials, single_hop_analysis, sweep, ResultRow, SweepAxis, TrainError,
    TrialSummary, ABLATION_COLUMNS,
};
use output::{cell, percent, render_table, write_csv, write_json, write_trials, RunDir};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing output: {0}")]
    Output(String),
}

impl CliError {
    /// 2 for configuration and usage errors, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_)
            | CliError::Data(DataError::Config(_) | DataError::UnknownClass { .. })
            | CliError::Train(TrainError::Config(_))
            | CliError::Train(TrainError::Data(DataError::Config(_) | DataError::UnknownClass { .. })) => 2,
            _ => 1,
        }
    }
}

/// Exit status when every command step succeeded but some trials failed.
pub const EXIT_FAILED_TRIALS: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "lsdan", version = VERSION, about = "Positive-unlabeled node classification with multi-hop attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load a dataset, print its statistics and cache its hop masks.
    Prepare(CommonArgs),
    /// Repeated trials for every labeling fraction.
    Train(TrainArgs),
    /// Vary one hyperparameter with everything else fixed.
    Sweep(SweepArgs),
    /// The {nnPU, uPU} x {all hops, one hop} grid plus naive cross-entropy.
    Ablate(CommonArgs),
    /// Per-hop F1 of single-hop models next to the full model's hop attention.
    Attention(AttentionArgs),
    /// Write or verify PU split files.
    #[command(subcommand)]
    Split(SplitCommand),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Train once on this split instead of sampling splits.
    #[arg(long, value_name = "FILE")]
    pub split_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// dim, kappa or layers.
    #[arg(long)]
    pub axis: SweepAxis,
    /// Values to try, comma separated. Defaults depend on the axis.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Hops to analyze, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub hops: Vec<usize>,
}

#[derive(Subcommand, Debug)]
pub enum SplitCommand {
    /// Sample a split for the first labeling fraction and the base seed.
    Emit {
        #[command(flatten)]
        common: CommonArgs,
        /// Defaults to `<out>/<dataset>/splits/p<p>-seed<seed>.json`.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Check a split file against the dataset.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "FILE")]
        file: PathBuf,
    },
}

/// What a successful command run produced.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Written files, in order.
    pub files: Vec<PathBuf>,
    /// `(label, seed, error)` of every failed trial.
    pub failed_trials: Vec<(String, u64, String)>,
}

impl Outcome {
    fn record(&mut self, label: &str, summary: &TrialSummary) {
        for f in &summary.failures {
            self.failed_trials.push((label.to_string(), f.seed, f.error.clone()));
        }
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<GraphDataset, CliError> {
    let files = DatasetFiles::locate(&cfg.data_dir, &cfg.dataset)?;
    let positive = cfg.positive_class()?;
    Ok(GraphDataset::load(&cfg.dataset, &files, &positive, cfg.row_normalize)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Computed,
}

pub fn cache_path(cache_dir: &Path, ds: &GraphDataset, kappa: usize, mode: WalkMode) -> PathBuf {
    let mode = match mode {
        WalkMode::Cumulative => "self-loops",
        WalkMode::Exact => "exact",
    };
    cache_dir.join(format!("{}-{mode}-k{kappa}.masks", &ds.fingerprint[..16]))
}

/// Hop masks for `ds`, read from `<cache_dir>` when a matching file exists.
/// Unreadable cache files are recomputed and replaced.
pub fn hop_masks(
    ds: &GraphDataset,
    kappa: usize,
    mode: WalkMode,
    cache_dir: &Path,
) -> Result<(HopMaskSet, CacheStatus), CliError> {
    let path = cache_path(cache_dir, ds, kappa, mode);
    if let Ok(file) = fs::File::open(&path) {
        match HopMaskSet::read_from(std::io::BufReader::new(file)) {
            Ok(m) if m.n() == ds.n() && m.kappa() == kappa && m.mode() == mode => {
                return Ok((m, CacheStatus::Hit))
            }
            Ok(_) => log::warn!("{}: cache does not match the dataset; recomputing", path.display()),
            Err(e) => log::warn!("{}: {e}; recomputing", path.display()),
        }
    }
    let masks = HopMaskSet::compute_with(&ds.adjacency, kappa, mode)?;
    let mut bytes = Vec::new();
    masks.write_to(&mut bytes).expect("in-memory write");
    output::write_atomic(&path, &bytes)?;
    Ok((masks, CacheStatus::Computed))
}

fn cache_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("cache")
}

fn prepared(cfg: &ExperimentConfig, kappa: usize) -> Result<(GraphDataset, HopMaskSet), CliError> {
    let ds = load_dataset(cfg)?;
    log::info!("{}: {}", ds.name, ds.stats());
    let (masks, status) = hop_masks(&ds, kappa, cfg.walk_mode, &cache_dir(cfg))?;
    log::info!("hop masks (kappa {kappa}): {status:?}");
    Ok((ds, masks))
}

fn cmd_prepare(args: &CommonArgs) -> Result<Outcome, CliError> {
    let cfg = ExperimentConfig::resolve(args)?;
    let ds = load_dataset(&cfg)?;
    println!("{}", ds.stats());
    println!(
        "positive class {:?}: {} of {} nodes",
        ds.positive_class,
        ds.num_positives(),
        ds.n()
    );
    let report = ds.build_report;
    println!(
        "adjacency: {} undirected edges ({} self-citations, {} duplicates dropped, {} unknown ids skipped)",
        ds.adjacency.num_edges(),
        report.self_loops_dropped,
        report.duplicates_merged,
        ds.cites.unknown
    );
    let dir = cache_dir(&cfg);
    let (masks, status) = hop_masks(&ds, cfg.kappa, cfg.walk_mode, &dir)?;
    let path = cache_path(&dir, &ds, cfg.kappa, cfg.walk_mode);
    match status {
        CacheStatus::Hit => println!("hop masks: cache hit {}", path.display()),
        CacheStatus::Computed => println!("hop masks: computed and cached {}", path.display()),
    }
    for (k, nnz) in masks.hops().iter().zip(masks.nnz_per_hop()) {
        println!("  hop {k}: {nnz} nonzeros");
    }
    Ok(Outcome {
        files: vec![path],
        ..Outcome::default()
    })
}

fn label(summary: &TrialSummary) -> String {
    format!(
        "{}-p{}-k{}-L{}-d{}",
        summary.objective.name(),
        summary.p,
        summary.net.kappa,
        summary.net.layers,
        summary.net.hidden_dim
    )
}

/// Writes CSV, JSON, summary and per-trial files shared by every experiment
/// command.
fn finish<T: Serialize>(
    command: &str,
    cfg: &ExperimentConfig,
    summaries: &[&TrialSummary],
    results: T,
    summary_text: String,
) -> Result<Outcome, CliError> {
    let dir = RunDir::new(cfg, command)?;
    let mut outcome = Outcome::default();
    let rows: Vec<ResultRow> = summaries.iter().map(|s| s.row(&cfg.dataset)).collect();
    for s in summaries {
        let l = label(s);
        write_trials(&dir.trials(), &l, command, cfg, s)?;
        outcome.record(&l, s);
    }
    write_csv(&dir.csv(), cfg, &rows)?;
    write_json(&dir.json(), command, cfg, results)?;
    let text = format!("# version: {VERSION}\n{summary_text}");
    output::write_atomic(&dir.summary(), text.as_bytes())?;
    print!("{summary_text}");
    outcome.files = vec![dir.csv(), dir.json(), dir.summary(), dir.trials()];
    Ok(outcome)
}

#[derive(Serialize)]
struct Results<T: Serialize> {
    results: T,
}

fn cmd_train(args: &TrainArgs) -> Result<Outcome, CliError> {
    if let Some(path) = &args.split_file {
        return train_on_split(&args.common, path);
    }
    let cfg = ExperimentConfig::resolve(&args.common)?;
    let (ds, masks) = prepared(&cfg, cfg.kappa)?;
    let mut summaries = Vec::with_capacity(cfg.p.len());
    for &p in &cfg.p {
        log::info!("training {} at p = {p}", cfg.objective);
        summaries.push(run_trials(&ds, &masks, &cfg.plan(p, ds.num_features()))?);
    }
    let header: Vec<String> = std::iter::once("objective".to_string())
        .chain(cfg.p.iter().map(|&p| percent(p)))
        .collect();
    let row: Vec<String> = std::iter::once(cfg.objective.to_string())
        .chain(summaries.iter().map(cell))
        .collect();
    let title = format!("{} F1 on U, {} trials per cell", ds.name, cfg.trials);
    let text = render_table(&title, &header, &[row]);
    let refs: Vec<&TrialSummary> = summaries.iter().collect();
    finish("train", &cfg, &refs, Results { results: &summaries }, text)
}

fn train_on_split(common: &CommonArgs, path: &Path) -> Result<Outcome, CliError> {
    let cfg = ExperimentConfig::resolve(common)?;
    let split = load_split(path)?;
    let (ds, masks) = prepared(&cfg, cfg.kappa)?;
    if split.dataset != ds.name || split.positive_class != ds.positive_class {
        return Err(CliError::Config(format!(
            "{} was made for {} with positive class {:?}, not {} with {:?}",
            path.display(),
            split.dataset,
            split.positive_class,
            ds.name,
            ds.positive_class
        )));
    }
    split.validate(&ds.binary_labels)?;
    let mut split = split;
    if let Some(pi) = cfg.prior {
        split.prior = crate::purisk::ClassPrior::new(pi).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let plan = cfg.plan(split.p, ds.num_features());
    let train_cfg = train::TrainConfig {
        seed: split.seed,
        ..plan.train
    };
    let summary = match train::train_once(&ds, &masks, &split, &plan.net, &train_cfg) {
        Ok(report) => TrialSummary {
            objective: cfg.objective,
            p: split.p,
            net: plan.net.clone(),
            mean_f1: report.f1,
            std_f1: 0.0,
            reports: vec![report],
            failures: Vec::new(),
            single_trial: true,
        },
        Err(e @ TrainError::Config(_)) => return Err(e.into()),
        Err(e) => TrialSummary {
            objective: cfg.objective,
            p: split.p,
            net: plan.net.clone(),
            mean_f1: f64::NAN,
            std_f1: f64::NAN,
            reports: Vec::new(),
            failures: vec![train::TrialFailure {
                seed: split.seed,
                error: e.to_string(),
            }],
            single_trial: true,
        },
    };
    let title = format!("{} F1 on U, split {}", ds.name, path.display());
    let header = vec!["objective".to_string(), percent(split.p)];
    let text = render_table(&title, &header, &[vec![cfg.objective.to_string(), cell(&summary)]]);
    finish("train", &cfg, &[&summary], Results { results: [&summary] }, text)
}

fn sweep_defaults(axis: SweepAxis) -> Vec<usize> {
    match axis {
        SweepAxis::Dim => vec![8, 16, 32, 64, 128],
        SweepAxis::Kappa => (1..=8).collect(),
        SweepAxis::Layers => (1..=6).collect(),
    }
}

/// Sweeps and the attention report default to a single fraction.
fn single_p_defaults() -> ExperimentConfig {
    ExperimentConfig {
        p: vec![0.02],
        ..ExperimentConfig::default()
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<Outcome, CliError> {
    let cfg = ExperimentConfig::resolve_with(&args.common, single_p_defaults())?;
    let values = args.values.clone().unwrap_or_else(|| sweep_defaults(args.axis));
    if values.is_empty() || values.contains(&0) {
        return Err(CliError::Config("sweep values must be positive".into()));
    }
    let kappa = match args.axis {
        SweepAxis::Kappa => *values.iter().max().expect("non-empty"),
        _ => cfg.kappa,
    };
    let (ds, masks) = prepared(&cfg, kappa)?;
    let axis_name = serde_json::to_value(args.axis).expect("enum").as_str().unwrap_or("value").to_string();
    let mut tables = Vec::new();
    let mut all = Vec::new();
    for &p in &cfg.p {
        log::info!("sweeping {axis_name} at p = {p}");
        all.push((p, sweep(&ds, &masks, args.axis, &values, &cfg.plan(p, ds.num_features()))?));
    }
    let header: Vec<String> = std::iter::once(axis_name.clone())
        .chain(cfg.p.iter().map(|&p| percent(p)))
        .collect();
    let rows: Vec<Vec<String>> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            std::iter::once(v.to_string())
                .chain(all.iter().map(|(_, rows)| cell(&rows[i].summary)))
                .collect()
        })
        .collect();
    tables.push(render_table(
        &format!("{} {} F1 by {axis_name}", ds.name, cfg.objective),
        &header,
        &rows,
    ));
    let refs: Vec<&TrialSummary> = all.iter().flat_map(|(_, r)| r.iter().map(|r| &r.summary)).collect();
    #[derive(Serialize)]
    struct SweepResults<'a> {
        axis: &'a str,
        values: &'a [usize],
        results: Vec<(f64, &'a [train::SweepRow])>,
    }
    let body = SweepResults {
        axis: &axis_name,
        values: &values,
        results: all.iter().map(|(p, r)| (*p, r.as_slice())).collect(),
    };
    finish("sweep", &cfg, &refs, body, tables.concat())
}

fn cmd_ablate(args: &CommonArgs) -> Result<Outcome, CliError> {
    let cfg = ExperimentConfig::resolve(args)?;
    let (ds, masks) = prepared(&cfg, cfg.kappa)?;
    let table = ablation_suite(&ds, &masks, &cfg.p, &cfg.plan(cfg.p[0], ds.num_features()))?;
    let header: Vec<String> = std::iter::once("method".to_string())
        .chain(cfg.p.iter().map(|&p| percent(p)))
        .collect();
    let rows: Vec<Vec<String>> = ABLATION_COLUMNS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            std::iter::once(name.to_string())
                .chain(table.rows.iter().map(|r| cell(&r.cells[c])))
                .collect()
        })
        .collect();
    let title = format!("{} ablation, F1 on U, kappa {}", ds.name, cfg.kappa);
    let text = render_table(&title, &header, &rows);
    let refs: Vec<&TrialSummary> = table.rows.iter().flat_map(|r| r.cells.iter()).collect();
    finish("ablate", &cfg, &refs, Results { results: &table }, text)
}

fn cmd_attention(args: &AttentionArgs) -> Result<Outcome, CliError> {
    let cfg = ExperimentConfig::resolve_with(&args.common, single_p_defaults())?;
    if args.hops.is_empty() || args.hops.contains(&0) {
        return Err(CliError::Config("hops must be positive".into()));
    }
    let kmax = *args.hops.iter().max().expect("non-empty");
    let (ds, masks) = prepared(&cfg, kmax)?;
    let mut analyses = Vec::new();
    let mut text = String::new();
    for &p in &cfg.p {
        log::info!("hop analysis at p = {p}");
        let a = single_hop_analysis(&ds, &masks, &args.hops, &cfg.plan(p, ds.num_features()))?;
        let header = vec!["k".to_string(), "single-hop F1".to_string(), "mean attention".to_string()];
        let rows: Vec<Vec<String>> = a
            .rows
            .iter()
            .zip(&a.single_hop)
            .map(|(r, s)| vec![r.k.to_string(), cell(s), format!("{:.4}", r.attention_mean)])
            .collect();
        let title = format!(
            "{} hop analysis at {}, full model F1 {}",
            ds.name,
            percent(p),
            cell(&a.full_model)
        );
        text.push_str(&render_table(&title, &header, &rows));
        analyses.push(a);
    }
    let refs: Vec<&TrialSummary> = analyses
        .iter()
        .flat_map(|a| std::iter::once(&a.full_model).chain(&a.single_hop))
        .collect();
    finish("attention", &cfg, &refs, Results { results: &analyses }, text)
}

fn cmd_split(cmd: &SplitCommand) -> Result<Outcome, CliError> {
    match cmd {
        SplitCommand::Emit { common, output } => {
            let cfg = ExperimentConfig::resolve(common)?;
            let ds = load_dataset(&cfg)?;
            let p = cfg.p[0];
            let split = make_pu_split(&ds, p, cfg.seed)?;
            let path = output.clone().unwrap_or_else(|| {
                cfg.out_dir
                    .join(&cfg.dataset)
                    .join("splits")
                    .join(format!("p{p}-seed{}.json", cfg.seed))
            });
            if let Some(parent) = path.parent() {
                output::create_dir(parent)?;
            }
            save_split(&split, &path)?;
            println!(
                "{}: |P| = {}, |U| = {}, prior {}",
                path.display(),
                split.positives_labeled.len(),
                split.unlabeled.len(),
                split.prior.positive()
            );
            Ok(Outcome {
                files: vec![path],
                ..Outcome::default()
            })
        }
        SplitCommand::Check { common, file } => {
            let cfg = ExperimentConfig::resolve(common)?;
            let ds = load_dataset(&cfg)?;
            let split = load_split(file)?;
            if split.dataset != ds.name {
                return Err(CliError::Config(format!(
                    "{} belongs to dataset {}, not {}",
                    file.display(),
                    split.dataset,
                    ds.name
                )));
            }
            split.validate(&ds.binary_labels)?;
            println!(
                "{}: valid; p = {}, seed {}, |P| = {}, |U| = {}, prior {}",
                file.display(),
                split.p,
                split.seed,
                split.positives_labeled.len(),
                split.unlabeled.len(),
                split.prior.positive()
            );
            Ok(Outcome::default())
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Attention(a) => cmd_attention(a),
        Command::Split(c) => cmd_split(c),
    }
}

/// Parses the process arguments, runs the command and maps the outcome to
/// an exit status.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) if outcome.failed_trials.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("error: {} trial(s) failed", outcome.failed_trials.len());
            for (label, seed, error) in &outcome.failed_trials {
                eprintln!("  {label} seed {seed}: {error}");
            }
            ExitCode::from(EXIT_FAILED_TRIALS)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
