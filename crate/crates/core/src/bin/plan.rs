use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use contact_traj::config::{PipelineConfig, Scale};
use contact_traj::pipeline::{self, Stage};

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

/// Run the sampling, region-graph, reachability and trajectory stages.
#[derive(Parser)]
#[command(name = "plan", version)]
struct Args {
    /// TOML pipeline configuration.
    #[arg(long)]
    config: PathBuf,
    /// sample, frs, dp, reach, plan or all.
    #[arg(long)]
    stage: Stage,
    /// Artifact directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "desk")]
    scale: ScaleArg,
}

fn main() -> ExitCode {
    let args = Args::parse();
    // worker count for the sample and QP batches
    if let Some(n) = std::env::var("PLAN_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("plan: could not size the worker pool: {e}");
        }
    }
    let scale = match args.scale {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Paper => Scale::Paper,
    };
    let config = match PipelineConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("plan: {e}");
            return ExitCode::from(1);
        }
    };
    let mut config = config.with_scale(scale);
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    match pipeline::run(&config, scale, args.stage, &args.out) {
        Ok(manifests) => {
            for m in manifests {
                println!("{} done in {:.1} s: {:?}", m.stage, m.wall_time_s, m.counts);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("plan: stage {} failed: {e}", args.stage);
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
