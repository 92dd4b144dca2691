use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffsense::config::{load_config, validate_config, Experiment};
use diffsense::runner::execute;

#[derive(Parser)]
#[command(name = "diffsense", version, about = "Differential phase estimation campaigns with squeezed probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config, or a manifest.json of an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: output.dir of the config, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restores the full ellipse count (`paper_ellipses`).
    #[arg(long)]
    paper_scale: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    ProbeTable(RunArgs),
    Sample(RunArgs),
    Fit(RunArgs),
    Campaign(RunArgs),
    ScanTau(RunArgs),
    ScanDphi(RunArgs),
    #[command(name = "scan-N")]
    ScanN(RunArgs),
    ScanShots(RunArgs),
    Fisher(RunArgs),
    HybridCompare(RunArgs),
    /// Validates a config and prints its normalised form.
    Validate(RunArgs),
}

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

fn fail(kind: &str, messages: &[String], code: u8) -> ExitCode {
    let v = serde_json::json!({ "error": kind, "messages": messages });
    eprintln!("{v}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (expected, args) = match cli.command {
        Command::ProbeTable(a) => (Some(Experiment::ProbeTable), a),
        Command::Sample(a) => (Some(Experiment::Sample), a),
        Command::Fit(a) => (Some(Experiment::Fit), a),
        Command::Campaign(a) => (Some(Experiment::Campaign), a),
        Command::ScanTau(a) => (Some(Experiment::ScanTau), a),
        Command::ScanDphi(a) => (Some(Experiment::ScanDphi), a),
        Command::ScanN(a) => (Some(Experiment::ScanN), a),
        Command::ScanShots(a) => (Some(Experiment::ScanShots), a),
        Command::Fisher(a) => (Some(Experiment::Fisher), a),
        Command::HybridCompare(a) => (Some(Experiment::HybridCompare), a),
        Command::Validate(a) => (None, a),
    };

    let mut config = match load_config(&args.config) {
        Ok(c) => c,
        Err(errs) => return fail("config", &errs, EXIT_CONFIG),
    };
    if let Some(e) = expected {
        if config.experiment != e {
            let msg = format!("config describes a {} experiment, not {}", config.experiment.name(), e.name());
            return fail("config", &[msg], EXIT_CONFIG);
        }
    }
    if let Some(s) = args.seed {
        config.seed = Some(s);
    }
    if args.paper_scale {
        let n = config.paper_ellipses.unwrap_or(diffsense::config::DEFAULT_PAPER_ELLIPSES);
        config.ellipses = Some(n);
    }
    let resolved = match validate_config(config) {
        Ok(r) => r,
        Err(errs) => return fail("config", &errs, EXIT_CONFIG),
    };
    if expected.is_none() {
        println!("{}", serde_json::to_string_pretty(&resolved).expect("config serializes"));
        return ExitCode::SUCCESS;
    }

    let out = args.out.or_else(|| resolved.config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            return fail("config", &["--workers must be at least 1".to_string()], EXIT_CONFIG);
        }
        pool = pool.num_threads(w);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return fail("internal", &[e.to_string()], EXIT_INTERNAL),
    };
    match pool.install(|| execute(&resolved, &out)) {
        Ok(summary) if summary.failures() > 0 => {
            eprintln!("{} grid entries failed; see the status column", summary.failures());
            ExitCode::from(EXIT_PARTIAL)
        }
        Ok(summary) => {
            eprintln!("wrote {} rows to {}", summary.manifest.rows, out.display());
            ExitCode::SUCCESS
        }
        Err(msg) => fail("internal", &[msg], EXIT_INTERNAL),
    }
}
