// SPDX-License-Identifier: MIT OR Apache-2.0

//! `expertlens` command-line runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use expertlens::pipeline::{load_inputs, preset, run_pipeline, Analysis, RunConfig};
use expertlens::Error;

#[derive(Parser)]
#[command(name = "expertlens", version, about = "Expert-neuron discovery and alignment analyses")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "EXPERTLENS_THREADS")]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and its inputs without running anything.
    Validate(RunArgs),
    /// Every analysis listed in the configuration.
    Run(RunArgs),
    /// Per-neuron AP for every dump and concept.
    Score(RunArgs),
    /// Expert sets and set-size statistics.
    Experts(RunArgs),
    /// Pairwise concept similarities.
    Similarity(RunArgs),
    /// Alignment with human similarity tables.
    Align(RunArgs),
    /// Domain cores against random baselines, and the concept graph.
    Domains(RunArgs),
    /// Layer distributions of expert sets.
    Layers(RunArgs),
    /// Expert-set stability across disjoint folds.
    Folds(RunArgs),
    /// Expert-set overlap between consecutive checkpoints.
    Checkpoints(RunArgs),
    /// Intervention plans.
    Plan(RunArgs),
    /// Word-list prevalence in generations.
    Genstats(RunArgs),
    /// Write a synthetic input set and its run configuration.
    Synth {
        #[arg(long, default_value = "paper-desk")]
        preset: String,
        /// Directory for the inputs and `desk.json`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(args: &RunArgs, only: Option<Analysis>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = std::path::absolute(out).unwrap_or_else(|_| out.clone());
    }
    if let Some(a) = only {
        cfg.analyses = vec![a];
    }
    Ok(cfg)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serialises"));
}

fn run(args: &RunArgs, only: Option<Analysis>) -> Result<(), Error> {
    let cfg = load(args, only)?;
    let manifest = run_pipeline(&cfg)?;
    print_json(&serde_json::json!({
        "output_dir": cfg.output_path(),
        "config_hash": manifest.config_hash,
        "analyses": manifest.analyses,
        "files": manifest.outputs.len(),
    }));
    Ok(())
}

fn validate(args: &RunArgs) -> Result<(), Error> {
    let cfg = load(args, None)?;
    let inputs = load_inputs(&cfg)?;
    print_json(&serde_json::json!({
        "valid": true,
        "config_hash": cfg.config_hash(),
        "inputs": inputs.summary(),
    }));
    Ok(())
}

fn synth(name: &str, out: &Path, seed: u64) -> Result<(), Error> {
    let cfg = preset::write_preset(name, out, seed)?;
    print_json(&serde_json::json!({ "preset": name, "config": cfg }));
    Ok(())
}

fn dispatch(command: &Command) -> Result<(), Error> {
    match command {
        Command::Validate(a) => validate(a),
        Command::Run(a) => run(a, None),
        Command::Score(a) => run(a, Some(Analysis::Score)),
        Command::Experts(a) => run(a, Some(Analysis::Experts)),
        Command::Similarity(a) => run(a, Some(Analysis::Similarity)),
        Command::Align(a) => run(a, Some(Analysis::Align)),
        Command::Domains(a) => run(a, Some(Analysis::Domains)),
        Command::Layers(a) => run(a, Some(Analysis::Layers)),
        Command::Folds(a) => run(a, Some(Analysis::Folds)),
        Command::Checkpoints(a) => run(a, Some(Analysis::Checkpoints)),
        Command::Plan(a) => run(a, Some(Analysis::Plan)),
        Command::Genstats(a) => run(a, Some(Analysis::Genstats)),
        Command::Synth { preset, out, seed } => synth(preset, out, *seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_validation() => {
            let errors = match e {
                Error::Validation(list) => list,
                other => vec![other.to_string()],
            };
            eprintln!("{}", serde_json::json!({ "errors": errors }));
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
