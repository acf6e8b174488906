use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kinlab::experiment_cli::{error_exit_code, run_study, write_report, ExperimentConfig, Study, EXIT_ASSERTION, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "kinlab", version, about = "Reproducible Boltzmann-limit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dual Trotter error against a self-refined reference.
    Trotter(Common),
    /// Lorentzian mollifier rates (scalar convolution and loss rate).
    Mollifier(Common),
    /// Approximate coherent measurement against the Boltzmann pull-back.
    ShortTime(Common),
    /// Field Monte Carlo with renewal against the Boltzmann marginal.
    Renewal(Common),
    /// Primal Boltzmann trajectory with mass and relaxation diagnostics.
    Boltzmann(Common),
    /// Empirical covariance of the sampled field.
    FieldCheck(Common),
    /// Coherent kernel against a truncated Fock space.
    FockOracle(Common),
}

#[derive(Args)]
struct Common {
    /// JSON file overriding the study defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default kinlab-out/<study>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let (study, args) = match cli.command {
        Command::Trotter(a) => (Study::Trotter, a),
        Command::Mollifier(a) => (Study::Mollifier, a),
        Command::ShortTime(a) => (Study::ShortTime, a),
        Command::Renewal(a) => (Study::Renewal, a),
        Command::Boltzmann(a) => (Study::Boltzmann, a),
        Command::FieldCheck(a) => (Study::FieldCheck, a),
        Command::FockOracle(a) => (Study::FockOracle, a),
    };
    let text = match args.config.as_ref().map(std::fs::read_to_string).transpose() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config: {e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    let out = args.out.map(|p| p.to_string_lossy().into_owned());
    let cfg = match ExperimentConfig::resolve(study, text.as_deref(), args.seed, out) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(error_exit_code(&e) as u8);
        }
    };
    if args.print_config {
        print!("{}", kinlab::canon::to_canonical_json(&cfg).unwrap_or_default());
        return ExitCode::SUCCESS;
    }
    let report = match run_study(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(error_exit_code(&e) as u8);
        }
    };
    let dir = match write_report(&cfg, &report) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(error_exit_code(&e) as u8);
        }
    };
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("wrote {}", dir.display());
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        for c in report.failed() {
            eprintln!("invariant violated: {}", c.name);
        }
        ExitCode::from(EXIT_ASSERTION as u8)
    }
}
