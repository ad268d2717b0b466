use clap::{Args, Parser, Subcommand};
use pompkit::harness::{self, Command, ExperimentConfig, Overrides, Registry};
use pompkit::PompError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Plug-and-play inference for POMP models.
#[derive(Parser)]
#[command(name = "pompkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate data from a model.
    Simulate(RunArgs),
    /// Bootstrap particle filter at fixed parameters.
    Pfilter(RunArgs),
    /// Fixed-lag particle smoother.
    Psmooth(RunArgs),
    If1(RunArgs),
    If2(RunArgs),
    Is2(RunArgs),
    /// Momentum iterated filtering.
    Momentum(RunArgs),
    /// Accelerated iterated filtering.
    Aif(RunArgs),
    /// Averaged iterated filtering.
    Avif(RunArgs),
    /// Particle marginal Metropolis-Hastings.
    Pmmh(RunArgs),
    /// Particle iterated filtering sampler.
    Pif(RunArgs),
    /// Exact log-likelihood from the model's oracle.
    Kalman(RunArgs),
    /// Compare completed runs.
    Summarize {
        /// Run directories, or directories containing runs.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Where to write the report files (default: the first directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &PompError) -> ExitCode {
    match e {
        PompError::Validation(_) => ExitCode::from(2),
        PompError::FilteringLimitExceeded { .. } => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

fn run(command: Command, a: RunArgs) -> Result<(), PompError> {
    let mut cfg = ExperimentConfig::from_path(&a.config)?;
    cfg.apply(&Overrides {
        command: Some(command),
        seed: a.seed,
        reps: a.reps,
        jobs: a.jobs,
        out: a.out,
    });
    let s = harness::run(&cfg, &Registry::builtin())?;
    println!(
        "{} {}: {} replicate(s) in {:.2}s -> {}",
        s.model,
        s.command,
        s.replicates.len(),
        s.wall_time_s,
        cfg.out_dir().display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Cmd::Summarize { dirs, out } => (|| {
            let runs = harness::collect_runs(&dirs)?;
            let report = harness::summarize_runs(&runs)?;
            harness::write_report(out.as_ref().unwrap_or(&dirs[0]), &runs, &report)?;
            print!("{}", harness::render(&report));
            Ok(())
        })(),
        Cmd::Simulate(a) => run(Command::Simulate, a),
        Cmd::Pfilter(a) => run(Command::Pfilter, a),
        Cmd::Psmooth(a) => run(Command::Psmooth, a),
        Cmd::If1(a) => run(Command::If1, a),
        Cmd::If2(a) => run(Command::If2, a),
        Cmd::Is2(a) => run(Command::Is2, a),
        Cmd::Momentum(a) => run(Command::Momentum, a),
        Cmd::Aif(a) => run(Command::Aif, a),
        Cmd::Avif(a) => run(Command::Avif, a),
        Cmd::Pmmh(a) => run(Command::Pmmh, a),
        Cmd::Pif(a) => run(Command::Pif, a),
        Cmd::Kalman(a) => run(Command::Kalman, a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
