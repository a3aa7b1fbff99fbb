//! `ldr2hdr`: dataset building, training, inference, evaluation and reporting.

mod commands;
mod pairs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use commands::CommandResult;

#[derive(Parser)]
#[command(name = "ldr2hdr", version, about = "Two-stage LDR to 16-bit HDR reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a patch-triplet dataset from a manifest or from synthetic scenes.
    #[command(group(ArgGroup::new("source").required(true).args(["manifest", "synthetic"])))]
    Dataset {
        /// TOML manifest listing (ldr, hdr16, scene_id) entries.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Number of synthetic scenes to generate instead.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Patches per synthetic scene.
        #[arg(long, default_value_t = 8, requires = "synthetic")]
        patches: usize,
        #[arg(long, default_value_t = 0, requires = "synthetic")]
        seed: u64,
        #[arg(long, requires = "synthetic")]
        patch_size: Option<usize>,
        /// Sensor noise sigma of the synthetic degradation.
        #[arg(long, requires = "synthetic")]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the generator and discriminator on a built dataset.
    Train {
        /// TOML training configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the step budget.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Reconstruct a 16-bit HDR PNG from an 8-bit LDR PNG.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Process in tiles of this side to bound memory.
        #[arg(long)]
        tile: Option<usize>,
    },
    /// PSNR and mu-PSNR over a pairs manifest.
    Eval {
        /// Needed when pairs give LDR inputs rather than predictions.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        pairs: PathBuf,
        /// JSONL report; a table is written next to it with a .txt extension.
        #[arg(long)]
        report: PathBuf,
    },
    /// Clip and normalize a 16-bit PNG for display.
    Visualize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = ldr2hdr_core::config::DEFAULT_CLIP_PERCENTILE)]
        percentile: f64,
    },
    /// Parameter counts per stage and their deviation from the reference counts.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train stage-I-only, stage-II-only and two-stage models and compare them.
    Ablation {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        max_steps: Option<usize>,
    },
}

fn run(cmd: Command) -> ldr2hdr_core::Result<CommandResult> {
    match cmd {
        Command::Dataset {
            manifest,
            synthetic,
            patches,
            seed,
            patch_size,
            noise,
            out,
        } => match (manifest, synthetic) {
            (Some(m), _) => commands::dataset_from_manifest(&m, &out),
            (None, Some(n)) => commands::dataset_synthetic(n, patches, seed, patch_size, noise, &out),
            (None, None) => unreachable!("clap enforces the source group"),
        },
        Command::Train {
            config,
            dataset,
            out,
            resume,
            max_steps,
        } => commands::train(config.as_deref(), &dataset, &out, resume.as_deref(), max_steps),
        Command::Infer {
            checkpoint,
            input,
            output,
            tile,
        } => commands::infer(&checkpoint, &input, &output, tile),
        Command::Eval {
            checkpoint,
            pairs,
            report,
        } => commands::eval(checkpoint.as_deref(), &pairs, &report),
        Command::Visualize {
            input,
            output,
            percentile,
        } => commands::visualize(&input, &output, percentile),
        Command::Params { config } => commands::params_report(config.as_deref()),
        Command::Ablation {
            config,
            train,
            eval,
            report,
            max_steps,
        } => commands::ablation(config.as_deref(), &train, &eval, &report, max_steps),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match run(cli.command) {
        Ok(r) => r,
        Err(e) => CommandResult::failure(&e),
    };
    for a in &result.artifacts {
        log::info!("wrote {}", a.display());
    }
    if result.exit_code == 0 {
        println!("{}", result.summary);
    } else {
        eprintln!("error: {}", result.summary);
    }
    ExitCode::from(result.exit_code)
}
