use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use steerprompt_core::runner::curve::DEFAULT_SMOOTHING;
use steerprompt_core::runner::registry::BackendRegistry;
use steerprompt_core::runner::settings::{Settings, DEFAULT_LOG_DIR, LOG_DIR_ENV};
use steerprompt_core::runner::{self, RunnerError, Session, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "steerprompt",
    version,
    about = "Guided prompt optimization for vision-language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize prompts for the task in a config file.
    Optimize {
        config: PathBuf,
        /// Run log path; defaults to <log dir>/<task>-seed<seed>.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Report ensemble accuracy of a prompts file on a manifest.
    Evaluate {
        config: PathBuf,
        /// One prompt per line, best first.
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write the curve table (<log>.csv) of a run log, and optionally an SVG chart.
    Plot {
        runlog: PathBuf,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
        smoothing: f64,
    },
    /// Short runs over a grid of steering strengths; prints the chosen alpha.
    AlphaSweep {
        config: PathBuf,
        /// Comma-separated alphas; defaults to the config's alpha_grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Run the built-in synthetic task end to end on the surrogate backend.
    SurrogateDemo {
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
    },
}

fn load(config: &Path) -> Result<Settings, RunnerError> {
    Ok(Settings::load(config)?)
}

fn optimize(
    config: &Path,
    log: Option<PathBuf>,
    seed: Option<u64>,
    alpha: Option<f64>,
) -> Result<(), RunnerError> {
    let mut settings = load(config)?;
    if let Some(s) = seed {
        settings.run.seed = s;
    }
    if let Some(a) = alpha {
        settings.run.alpha = a;
    }
    let session = Session::open(settings, &BackendRegistry::default())?;
    let log = log.unwrap_or_else(|| session.default_log_path());
    let outcome = runner::optimize(&session, &log)?;
    println!("best fitness {:.4}", outcome.best_fitness());
    for (i, c) in outcome.ensemble.iter().enumerate() {
        println!("{}. {} ({:.4})", i + 1, c.text, c.score());
    }
    println!("run log: {}", log.display());
    println!(
        "prompts: {}",
        runner::sibling(&log, "prompts.txt").display()
    );
    Ok(())
}

fn evaluate(config: &Path, prompts: &Path, manifest: &Path, json: bool) -> Result<(), RunnerError> {
    let session = Session::with_manifest(load(config)?, manifest, &BackendRegistry::default())?;
    let prompts = runner::read_prompts(prompts)?;
    let report = runner::evaluate(&session, &prompts)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
        return Ok(());
    }
    println!(
        "top-1 {:.4} ({}/{})",
        report.top1, report.correct, report.total
    );
    for c in &report.per_class {
        match c.accuracy {
            Some(a) => println!("{:<30} {:.4} ({}/{})", c.class, a, c.correct, c.total),
            None => println!("{:<30} -", c.class),
        }
    }
    Ok(())
}

fn alpha_sweep(config: &Path, grid: Option<Vec<f64>>) -> Result<(), RunnerError> {
    let settings = load(config)?;
    let grid = grid.unwrap_or_else(|| settings.alpha_grid.clone());
    let session = Session::open(settings, &BackendRegistry::default())?;
    let search = runner::alpha_sweep(&session, &grid)?;
    for (a, f) in &search.results {
        println!("alpha {a}: best fitness {f:.4}");
    }
    println!(
        "chosen alpha {} ({} iterations per value)",
        search.chosen, search.iterations
    );
    Ok(())
}

fn surrogate_demo(
    alpha: f64,
    seed: u64,
    log: Option<PathBuf>,
    image: Option<PathBuf>,
) -> Result<(), RunnerError> {
    let log = log.unwrap_or_else(|| {
        let dir = std::env::var_os(LOG_DIR_ENV)
            .filter(|d| !d.is_empty())
            .map_or_else(|| PathBuf::from(DEFAULT_LOG_DIR), PathBuf::from);
        dir.join(format!("surrogate-demo-seed{seed}.jsonl"))
    });
    let outcome = runner::surrogate_demo(alpha, seed, &log)?;
    let seed_fitness = outcome.initial.candidates[0].fitness;
    println!("seed prompt fitness {seed_fitness:.4}");
    println!(
        "best fitness {:.4}: {}",
        outcome.best_fitness(),
        outcome.ensemble[0].text
    );
    runner::plot(&log, image.as_deref(), DEFAULT_SMOOTHING)?;
    println!("run log: {}", log.display());
    println!("curve: {}", runner::sibling(&log, "csv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), RunnerError> {
    match cli.command {
        Command::Optimize {
            config,
            log,
            seed,
            alpha,
        } => optimize(&config, log, seed, alpha),
        Command::Evaluate {
            config,
            prompts,
            manifest,
            json,
        } => evaluate(&config, &prompts, &manifest, json),
        Command::Plot {
            runlog,
            image,
            smoothing,
        } => {
            runner::plot(&runlog, image.as_deref(), smoothing)?;
            println!("curve: {}", runner::sibling(&runlog, "csv").display());
            Ok(())
        }
        Command::AlphaSweep { config, grid } => alpha_sweep(&config, grid),
        Command::SurrogateDemo {
            alpha,
            seed,
            log,
            image,
        } => surrogate_demo(alpha, seed, log, image),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 };
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
