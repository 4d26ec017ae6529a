use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use mmqa::pipeline::{apply_seed_override, parse_config, run_pipeline, Stage};

/// Multi-stream video-QA training and modality-bias analysis.
#[derive(Parser)]
#[command(name = "mmqa", version, about)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,

    /// Pipeline stage to run.
    #[arg(long, default_value = "all")]
    stage: String,

    /// Output directory (overrides the config's `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Replaces dataset, split and training seeds; model init seeds are
    /// derived from this value and the model id.
    #[arg(long)]
    seed_override: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = match Stage::parse(&cli.stage) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let mut cfg = match parse_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(n) = cli.seed_override {
        apply_seed_override(&mut cfg, n);
    }
    let out = match cli.out.clone().or_else(|| cfg.out_dir.clone()) {
        Some(o) => o,
        None => {
            eprintln!("error: no output directory (pass --out or set `out_dir` in the config)");
            return ExitCode::from(1);
        }
    };
    match run_pipeline(&cfg, stage, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
