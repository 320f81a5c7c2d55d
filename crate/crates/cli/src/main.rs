//! `logitsel` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use logitsel::dgp::build_generating_model;
use logitsel::harness::{
    ingest_summary, render_report, score_archive, DatasetSpec, HarnessError, Manifest, SimulationConfig,
    DEFAULT_REFERENCE, MANIFEST_FILE,
};
use logitsel::methods::MethodRegistry;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INGEST: u8 = 3;
const EXIT_EMPTY: u8 = 4;

#[derive(Parser)]
#[command(name = "logitsel", version, about = "Variable selection benchmark for logistic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a CSV file and print a summary of the processed design.
    Ingest(IngestArgs),
    /// Build generating models and write them as JSON.
    Dgm(DgmArgs),
    /// Run a full simulation and write the result archive.
    Simulate(SimulateArgs),
    /// Score an archive and write score boards as CSV.
    Score(ScoreArgs),
    /// Score an archive and write CSV, markdown and SVG reports.
    Report(ScoreArgs),
}

#[derive(Args)]
struct IngestArgs {
    csv: PathBuf,
    #[arg(long)]
    outcome: String,
    /// Columns to treat as categorical.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
}

#[derive(Args)]
struct DgmArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "dgm")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the method list of the config.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Overrides the replication count of the config.
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Archive directory written by `simulate`.
    archive: PathBuf,
    /// Reference method; defaults to the one recorded in the archive.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    stratify_separation: bool,
    /// Output directory; defaults to the archive directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Config(_) => EXIT_CONFIG,
        HarnessError::Ingest { .. } => EXIT_INGEST,
        HarnessError::EmptyResults => EXIT_EMPTY,
        _ => EXIT_FAILURE,
    }
}

fn ingest(args: IngestArgs) -> Result<(), HarnessError> {
    let spec = DatasetSpec {
        path: args.csv,
        outcome: args.outcome,
        name: None,
        categorical: args.categorical,
        numeric: Vec::new(),
    };
    let data = spec.load()?;
    let summary = ingest_summary(&data);
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn dgm(args: DgmArgs) -> Result<(), HarnessError> {
    let cfg = SimulationConfig::load(&args.config)?;
    std::fs::create_dir_all(&args.out)?;
    for spec in &cfg.datasets {
        let data = spec.load()?;
        match build_generating_model(&data) {
            Ok(gm) => {
                let path = args.out.join(format!("{}.json", spec.id()));
                let text = serde_json::to_string_pretty(&gm).expect("model serializes");
                std::fs::write(&path, text + "\n")?;
                println!("{}: {} predictors -> {}", spec.id(), gm.selected.len(), path.display());
            }
            Err(e) => eprintln!("{}: skipped ({e})", spec.id()),
        }
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), HarnessError> {
    let mut cfg = SimulationConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(m) = args.methods {
        cfg.methods = m;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    let path = logitsel::harness::run_simulation(&cfg, &MethodRegistry::default(), &args.out)?;
    println!("{}", path.display());
    Ok(())
}

fn archive_reference(archive: &Path) -> String {
    std::fs::read_to_string(archive.join(MANIFEST_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
        .map(|m| m.reference_method)
        .unwrap_or_else(|| DEFAULT_REFERENCE.to_string())
}

fn score(args: ScoreArgs, full_report: bool) -> Result<(), HarnessError> {
    let reference = args.reference.unwrap_or_else(|| archive_reference(&args.archive));
    let report = score_archive(&args.archive, &reference, args.stratify_separation)?;
    for n in &report.notices {
        eprintln!("notice: {n}");
    }
    let out = args.out.unwrap_or_else(|| args.archive.clone());
    if full_report {
        for p in render_report(&report, &out, true)? {
            println!("{}", p.display());
        }
    } else {
        std::fs::create_dir_all(&out)?;
        for b in &report.boards {
            let path = out.join(format!("scoreboard_{}.csv", b.stratum.name()));
            b.write_csv(std::fs::File::create(&path)?)?;
            print!("{}", b.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Dgm(a) => dgm(a),
        Command::Simulate(a) => simulate(a),
        Command::Score(a) => score(a, false),
        Command::Report(a) => score(a, true),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
