use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use kimflow_core::harness::{self, presets, Experiment, ExperimentConfig, Report};

/// Kim–Milman flow-map stability experiments.
#[derive(Parser, Debug)]
#[command(name = "kimflow", version, about)]
struct Cli {
    /// List built-in experiment presets and exit.
    #[arg(long)]
    list_presets: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Coupled flows against Λ_∞·√FI in L²(γ).
    #[command(name = "stability_l2")]
    StabilityL2(RunArgs),
    /// Coupled flows against η_∞·√FI_∞ in L^∞(γ).
    #[command(name = "stability_linf")]
    StabilityLinf(RunArgs),
    /// Fisher information along the OU flow against its envelope.
    #[command(name = "fi_decay")]
    FiDecay(RunArgs),
    /// Empirical check of the θ profile on Hessians of evolved targets.
    #[command(name = "theta_check")]
    ThetaCheck(RunArgs),
    /// Table of bound constants over a parameter grid.
    #[command(name = "constants_table")]
    ConstantsTable(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Use a built-in preset instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the JSON and CSV reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

const DEFAULT_OUT: &str = "kimflow-out";

fn summary(report: &Report) -> String {
    let verdict = if report.passed() { "pass" } else { "VIOLATION" };
    let detail = match report {
        Report::Stability(r) => format!(
            "empirical {:.6} ± {:.2e}, bound {:.6}, slack {}",
            r.statistic,
            r.statistic_std_error,
            r.bound,
            r.slack.ratio().map(|s| format!("{s:.6}")).unwrap_or_else(|| "degenerate".into())
        ),
        Report::Decay(r) => format!(
            "{} times, max envelope excess {:.3} SE, nonincreasing {}",
            r.curve.times.len(),
            r.max_envelope_excess,
            r.nonincreasing
        ),
        Report::Theta(r) => format!("{} times, max violation {:.3e}", r.checks.len(), r.max_violation),
        Report::Constants(r) => format!("{} rows", r.rows.len()),
    };
    format!("{}: {verdict} ({detail})", report.experiment())
}

fn execute(experiment: Experiment, args: RunArgs) -> kimflow_core::Result<bool> {
    let cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => presets::load(name)?,
        (None, None) => unreachable!("clap requires --config or --preset"),
    };
    let mut cfg = cfg.with_experiment(experiment)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = args
        .out
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    let start = Instant::now();
    let report = harness::run(&cfg)?;
    let (json, csv) = report.write(&dir, &cfg.stem())?;
    println!("{}", summary(&report));
    println!("wrote {} and {}", json.display(), csv.display());
    eprintln!("elapsed {:.2?}", start.elapsed());
    Ok(report.passed())
}

fn main() -> ExitCode {
    // exit code 2 is reserved for bound violations; usage errors are plain errors
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if cli.list_presets {
        for p in presets::PRESETS {
            let cfg = presets::load(p.name).expect("built-in presets parse");
            let tag = cfg.experiment.map(|e| e.tag()).unwrap_or("-");
            println!("{:<16} {:<16} {}", p.name, tag, p.description);
        }
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(1);
    };
    let (experiment, args) = match command {
        Command::StabilityL2(a) => (Experiment::StabilityL2, a),
        Command::StabilityLinf(a) => (Experiment::StabilityLinf, a),
        Command::FiDecay(a) => (Experiment::FiDecay, a),
        Command::ThetaCheck(a) => (Experiment::ThetaCheck, a),
        Command::ConstantsTable(a) => (Experiment::ConstantsTable, a),
    };
    match execute(experiment, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
