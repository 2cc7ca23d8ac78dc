//! Config-driven experiment runner: split construction, strategy execution,
//! (eta, nu) ablations, and report comparison.
//!
//! Per-round progress goes to stderr; machine-readable output goes to files
//! under the output directory (or stdout for `compare` without `--out`).
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error.

mod config;

use clap::{Parser, Subcommand};
use config::{default_config_text, ConfigError, ExperimentConfig};
use discovery_core::baselines::{load_probability_table, ProbabilityTable};
use discovery_core::dataset::{
    build_discovery_split, load_embeddings, load_labels, DatasetSplit, EmbeddingStore,
};
use discovery_core::kernels::load_detection_manifest;
use discovery_core::discovery::{run_ablation, Experiment, RoundRecord, StrategySpec};
use discovery_core::metrics::{
    accumulate, compare, export_comparison_csv, export_report, import_report, DiscoveryReport,
    ReportFormat,
};
use discovery_core::Error as CoreError;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "discovery",
    about = "Active discovery of rare classes and slices in unlabeled pools",
    version
)]
struct Cli {
    /// Experiment configuration file (TOML; JSON accepted by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides output_dir from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Parallel strategy executions (and worker threads).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Print a commented default configuration and exit.
    #[arg(long, global = true)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the labeled/unlabeled split and write its CSV manifests.
    Split,
    /// Run every configured strategy and write one report per strategy.
    Run,
    /// Run the (eta, nu) ablation grid for the configured strategy.
    Ablate,
    /// Align previously written reports into one comparison table.
    Compare {
        /// Report files (.json or .csv) to compare.
        reports: Vec<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

enum CliError {
    Config(String),
    Core(CoreError),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(CoreError::Argument(_)) => EXIT_CONFIG,
            CliError::Core(CoreError::Numerical(_)) => EXIT_NUMERICAL,
            CliError::Core(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) => format!("config error: {m}"),
            CliError::Core(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_defaults {
        print!("{}", default_config_text());
        return ExitCode::SUCCESS;
    }
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    let Some(command) = &cli.command else {
        eprintln!("error: a subcommand is required (split | run | ablate | compare)");
        return ExitCode::from(EXIT_CONFIG);
    };
    match dispatch(&cli, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: &Cli, command: &Command) -> Result<(), CliError> {
    match command {
        Command::Compare { reports } => cmd_compare(cli, reports),
        _ => {
            let (config, base_dir) = load_config(cli)?;
            let out_dir = output_dir(cli, &config)?;
            match command {
                Command::Split => cmd_split(&config, &base_dir, &out_dir),
                Command::Run => cmd_run(&config, &base_dir, &out_dir),
                Command::Ablate => cmd_ablate(&config, &base_dir, &out_dir),
                Command::Compare { .. } => unreachable!(),
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    config.validate(&base_dir)?;
    Ok((config, base_dir))
}

fn output_dir(cli: &Cli, config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory (--out or output_dir)".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
    Ok(dir)
}

struct LoadedDataset {
    store: EmbeddingStore,
    split: DatasetSplit,
    probabilities: Option<ProbabilityTable>,
}

fn load_dataset(config: &ExperimentConfig, base_dir: &Path) -> Result<LoadedDataset, CliError> {
    let emb_path = config.resolve(base_dir, &config.dataset.embeddings);
    let format = config.dataset.embedding_format()?;
    eprintln!("loading embeddings from {}", emb_path.display());
    let mut store = load_embeddings(&emb_path, format)?;
    if config.dataset.normalize && !store.is_normalized() {
        store = store.normalize()?;
    }
    let labels = load_labels(&config.resolve(base_dir, &config.dataset.labels))?;
    for id in labels.keys() {
        if !store.contains(*id) {
            return Err(CoreError::UnknownId(*id).into());
        }
    }
    let split = build_discovery_split(&labels, &config.split.to_spec(config.seed)?)?;
    eprintln!(
        "split: {} labeled / {} unlabeled ({} unknown-concept points in the pool)",
        split.labeled().len(),
        split.unlabeled().len(),
        split.unknown_pool_size()
    );
    let probabilities = match &config.dataset.probabilities {
        Some(path) => Some(load_probability_table(&config.resolve(base_dir, path))?),
        None => None,
    };
    if let Some(path) = &config.dataset.detection_manifest {
        let entries = load_detection_manifest(&config.resolve(base_dir, path))?;
        eprintln!("detection manifest: {} entries validated", entries.len());
    }
    Ok(LoadedDataset {
        store,
        split,
        probabilities,
    })
}

/// Writes the split as deterministic CSV manifests (labeled.csv and
/// unlabeled.csv) with `id,class_id,attrs` rows sorted by id.
fn cmd_split(config: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<(), CliError> {
    let labels = load_labels(&config.resolve(base_dir, &config.dataset.labels))?;
    let split = build_discovery_split(&labels, &config.split.to_spec(config.seed)?)?;
    for (name, ids) in [
        ("labeled.csv", split.labeled()),
        ("unlabeled.csv", split.unlabeled()),
    ] {
        let path = out_dir.join(name);
        let mut out = String::from("id,class_id,attrs\n");
        for id in ids {
            let label = split.oracle_label(*id)?;
            out.push_str(&format!(
                "{id},{},{}\n",
                label.class_id,
                label.attributes.join(";")
            ));
        }
        std::fs::write(&path, out).map_err(|e| CoreError::io(&path, e))?;
        eprintln!("wrote {} ({} ids)", path.display(), ids.len());
    }
    Ok(())
}

fn report_progress(name: &str, record: &RoundRecord) {
    eprintln!(
        "[{name}] round {:2} | {:<22} | selected {:3} | cumulative unknown {:3} | {:.2}s{}",
        record.round,
        record.phase.to_string(),
        record.selected.len(),
        record.cumulative_unknown,
        record.wall_secs,
        if record.warnings.is_empty() {
            String::new()
        } else {
            format!(" | {}", record.warnings.join("; "))
        }
    );
}

fn run_strategy(
    spec: StrategySpec,
    data: &LoadedDataset,
    out_dir: &Path,
) -> Result<DiscoveryReport, CliError> {
    let name = spec.name.clone();
    let mut experiment = Experiment::new(
        spec.clone(),
        &data.split,
        data.store.clone(),
        data.probabilities.clone(),
        Some(out_dir.to_path_buf()),
    )?;
    while let Some(record) = experiment.step()? {
        report_progress(&name, &record);
    }
    let report = accumulate(&spec, experiment.state().history(), &data.split)?;
    for format in [ReportFormat::Json, ReportFormat::Csv] {
        let ext = match format {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        };
        let path = out_dir.join(format!("report-{name}.{ext}"));
        export_report(&report, &path, format)?;
        eprintln!("[{name}] wrote {}", path.display());
    }
    Ok(report)
}

/// Runs every configured strategy (in parallel up to the thread-pool size)
/// and writes one JSON + CSV report pair per strategy.
fn cmd_run(config: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<(), CliError> {
    let data = load_dataset(config, base_dir)?;
    let specs: Vec<StrategySpec> = config
        .strategies
        .iter()
        .enumerate()
        .map(|(k, s)| s.to_spec(config.seed, k, data.probabilities.is_some()))
        .collect::<Result<_, _>>()?;
    use rayon::prelude::*;
    let outcomes: Vec<(String, Result<DiscoveryReport, CliError>)> = specs
        .into_par_iter()
        .map(|spec| {
            let name = spec.name.clone();
            (name, run_strategy(spec, &data, out_dir))
        })
        .collect();
    for (name, outcome) in outcomes {
        match outcome {
            Ok(report) => eprintln!(
                "[{name}] done: {}/{} unknowns discovered{}",
                report.cumulative_unknown_curve.last().copied().unwrap_or(0),
                report.total_unknown_pool,
                report
                    .full_discovery_round
                    .map(|r| format!(", full discovery at round {r}"))
                    .unwrap_or_default()
            ),
            Err(e) => {
                return Err(match e {
                    CliError::Config(m) => CliError::Config(format!("strategy {name}: {m}")),
                    CliError::Core(err) => {
                        eprintln!("[{name}] failed: {err}");
                        CliError::Core(err)
                    }
                })
            }
        }
    }
    Ok(())
}

/// Runs the configured (eta, nu) grid and writes one report per cell plus a
/// summary table of cumulative unknowns at the summary round.
fn cmd_ablate(config: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<(), CliError> {
    let ablation = config
        .ablation
        .as_ref()
        .ok_or_else(|| CliError::Config("no [ablation] section".into()))?;
    let data = load_dataset(config, base_dir)?;
    let (index, base_config) = config
        .strategies
        .iter()
        .enumerate()
        .find(|(_, s)| s.name == ablation.strategy)
        .expect("validated");
    let base = base_config.to_spec(config.seed, index, data.probabilities.is_some())?;
    eprintln!(
        "ablation grid: eta {:?} x nu {:?} over strategy {:?}",
        ablation.eta, ablation.nu, base.name
    );
    let cells = run_ablation(
        &base,
        &ablation.eta,
        &ablation.nu,
        &data.split,
        &data.store,
        data.probabilities.as_ref(),
        Some(out_dir.to_path_buf()),
    )?;
    let mut summary =
        String::from("eta,nu,cumulative_at_summary_round,final_cumulative,full_discovery_round\n");
    for cell in &cells {
        let report = accumulate(&cell.spec, &cell.records, &data.split)?;
        let path = out_dir.join(format!("report-{}.json", cell.spec.name));
        export_report(&report, &path, ReportFormat::Json)?;
        let at_summary = cell
            .records
            .iter()
            .filter(|r| r.round <= ablation.summary_round)
            .next_back()
            .map(|r| r.cumulative_unknown)
            .unwrap_or(0);
        let last = report.cumulative_unknown_curve.last().copied().unwrap_or(0);
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.eta,
            cell.nu,
            at_summary,
            last,
            report
                .full_discovery_round
                .map(|r| r.to_string())
                .unwrap_or_default()
        ));
        eprintln!(
            "[{}] cumulative at round {}: {at_summary}; final {last}",
            cell.spec.name, ablation.summary_round
        );
    }
    let summary_path = out_dir.join("ablation-summary.csv");
    std::fs::write(&summary_path, summary).map_err(|e| CoreError::io(&summary_path, e))?;
    eprintln!("wrote {} ({} cells)", summary_path.display(), cells.len());
    Ok(())
}

/// Aligns report files into one comparison table; writes comparison.csv
/// under --out, or prints CSV to stdout when no output directory is given.
fn cmd_compare(cli: &Cli, reports: &[PathBuf]) -> Result<(), CliError> {
    if reports.is_empty() {
        return Err(CliError::Config("compare needs at least one report".into()));
    }
    let loaded: Vec<DiscoveryReport> = reports
        .iter()
        .map(|p| import_report(p))
        .collect::<Result<_, _>>()?;
    let table = compare(&loaded)?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
            let path = dir.join("comparison.csv");
            export_comparison_csv(&table, &path)?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let tmp = std::env::temp_dir().join(format!("comparison-{}.csv", std::process::id()));
            export_comparison_csv(&table, &tmp)?;
            let text = std::fs::read_to_string(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
            let _ = std::fs::remove_file(&tmp);
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CoreError::io("stdout", e))?;
        }
    }
    Ok(())
}
