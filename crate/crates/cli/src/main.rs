use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vap_core::experiment::{self, ExperimentSpec, HarnessError, Mode};

#[derive(Parser, Debug)]
#[command(name = "vap", version, about = "Personal-object grounding, prompting and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select the personal object in recorded proposals and write its masks.
    Ground(Common),
    /// Tint masked regions and rewrite the instruction.
    Prompt(Common),
    /// Run seeded episodes and report SR, CMR and the failure breakdown.
    Simulate(Common),
    /// Sweep K, opacity, selector or prompt variant.
    Ablate(Common),
    /// Compare two embedding-matrix files.
    Align(Common),
    /// Compare cross-view fusion methods.
    Crossview(Common),
    /// Run multi-target episodes with re-grounding between subgoals.
    Sequential(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Base seed; overrides scene.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Episodes per sweep cell; overrides seeds.
    #[arg(long)]
    seeds: Option<u64>,
    /// Output directory. Every file is written here.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; falls back to VAP_WORKERS, then the core count.
    #[arg(long, env = "VAP_WORKERS")]
    workers: Option<usize>,
}

impl Command {
    fn split(&self) -> (Mode, &Common) {
        match self {
            Command::Ground(c) => (Mode::Ground, c),
            Command::Prompt(c) => (Mode::Prompt, c),
            Command::Simulate(c) => (Mode::Simulate, c),
            Command::Ablate(c) => (Mode::Ablate, c),
            Command::Align(c) => (Mode::Align, c),
            Command::Crossview(c) => (Mode::Crossview, c),
            Command::Sequential(c) => (Mode::Sequential, c),
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (mode, args) = cli.command.split();
    let mut spec = ExperimentSpec::load(&args.config)?;
    if spec.mode != mode {
        return Err(HarnessError::Spec(format!(
            "spec {} has mode {}, not {}",
            args.config.display(),
            spec.mode.name(),
            mode.name()
        )));
    }
    if let Some(seed) = args.seed {
        spec.scene.seed = seed;
    }
    if let Some(n) = args.seeds {
        spec.seeds = n;
    }
    let workers = match args.workers {
        Some(0) => return Err(HarnessError::Spec("--workers must be positive".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let rows = experiment::run_experiment(&spec, &args.out, workers)?;
    print!("{}", experiment::render_table(&rows));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
