//! Command-line entry point: train / evaluate / attack / ablate / heatmap /
//! synth, wired over one flat key=value configuration.

mod commands;
mod output;

use clap::{Args, Parser, Subcommand};
use etndnet_core::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "etndnet",
    about = "Occlusion-robust re-identification via adversarial feature-map perturbation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Key=value configuration file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: <output root>/<command>-seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset override: 'synth' or a directory with train/query/gallery.
    #[arg(long)]
    data: Option<String>,
    /// Extra key=value overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, log and config echo.
    Train {
        #[command(flatten)]
        common: Common,
        /// baseline (zero adversarial weights) or etnd (defended).
        #[arg(long, default_value = "etnd")]
        mode: String,
    },
    /// Evaluate a checkpoint: result JSON and CMC plot.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint under a perturbation attack.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// feature_erase | feature_transform | feature_noise | image_erase
        #[arg(long)]
        kind: Option<String>,
        /// query | gallery | both
        #[arg(long)]
        apply_to: Option<String>,
    },
    /// Train and evaluate all defense combinations over the seed list.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Write attention heatmaps for query images.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of images to render (0 = all queries).
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Generate the synthetic dataset to a directory.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve_config(common: &Common, mode: Option<&str>) -> etndnet_core::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(mode) = mode {
        cfg.apply_kv("mode", mode)?;
    }
    if let Some(seed) = common.seed {
        cfg.apply_kv("seed", &seed.to_string())?;
    }
    if let Some(data) = &common.data {
        cfg.apply_kv("dataset", data)?;
    }
    for kv in &common.set {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(etndnet_core::Error::InvalidConfig(format!(
                "--set expects KEY=VALUE, got '{kv}'"
            )));
        };
        cfg.apply_kv(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { common, mode } => resolve_config(common, Some(mode))
            .and_then(|cfg| commands::train(cfg, common.out.clone(), "train")),
        Command::Evaluate { common, checkpoint } => resolve_config(common, None)
            .and_then(|cfg| commands::evaluate(cfg, checkpoint, common.out.clone())),
        Command::Attack {
            common,
            checkpoint,
            kind,
            apply_to,
        } => resolve_config(common, None).and_then(|mut cfg| {
            if let Some(kind) = kind {
                cfg.apply_kv("attack_kind", kind)?;
            }
            if let Some(apply_to) = apply_to {
                cfg.apply_kv("attack_apply_to", apply_to)?;
            }
            commands::attack(cfg, checkpoint, common.out.clone())
        }),
        Command::Ablate { common } => {
            resolve_config(common, None).and_then(|cfg| commands::ablate(cfg, common.out.clone()))
        }
        Command::Heatmap {
            common,
            checkpoint,
            count,
        } => resolve_config(common, None)
            .and_then(|cfg| commands::heatmap(cfg, checkpoint, common.out.clone(), *count)),
        Command::Synth { common } => {
            resolve_config(common, None).and_then(|cfg| commands::synth(cfg, common.out.clone()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let structured = serde_json::json!({ "error": e.to_string() });
            eprintln!("{structured}");
            ExitCode::FAILURE
        }
    }
}
