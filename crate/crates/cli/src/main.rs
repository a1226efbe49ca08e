//! `cloudnet`: prepare data, train, predict cloud masks and evaluate them.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use cloudnet_core::inference::InferenceConfig;
use cloudnet_core::model::NetworkConfig;
use cloudnet_core::trainer::TrainConfig;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "cloudnet", version, about = "Cloud segmentation for 4-band Landsat 8 scenes")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut raw scenes into patches and write per-split manifests.
    Prepare,
    /// Train the network on the prepared training split.
    Train {
        /// Override `train.seed` (and the augmentation seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Resume from a checkpoint written by `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write cloud masks for test scenes.
    Predict {
        /// Weights to use; defaults to `<output_dir>/best.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write a float probability map per scene.
        #[arg(long)]
        emit_prob: bool,
        /// Restrict to these scene ids.
        scene_ids: Vec<String>,
    },
    /// Score predictions against the test ground truth.
    Evaluate,
}

fn defaults_help() -> String {
    let t = TrainConfig::default();
    let i = InferenceConfig::default();
    let n = NetworkConfig::default();
    format!(
        "Defaults (set in the config file):\n  \
         train.initial_lr       {:e}\n  \
         train.decay_rate       {}\n  \
         train.patience         {}\n  \
         train.lr_floor         {:e}\n  \
         inference.threshold    {}\n  \
         inference.patch_size   {}\n  \
         network.input_side     {}\n\n\
         The data root may also be given with {}.\n\
         Exit status: 0 success, 1 usage error, 2 data error, 3 runtime failure.",
        t.initial_lr,
        t.decay_rate,
        t.patience,
        t.lr_floor,
        i.threshold,
        i.patch_size,
        n.input_side,
        config::DATA_ROOT_ENV,
    )
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Usage("--config <FILE> is required".into()))?;
    let mut cfg = config::load(&path)?;
    match cli.command {
        Command::Prepare => commands::prepare(&cfg),
        Command::Train {
            seed,
            max_epochs,
            checkpoint,
        } => {
            if let Some(s) = seed {
                cfg.train.seed = s;
                cfg.augment.seed = s;
            }
            if let Some(m) = max_epochs {
                cfg.train.max_epochs = m;
            }
            commands::train(&cfg, checkpoint.as_deref())
        }
        Command::Predict {
            checkpoint,
            emit_prob,
            scene_ids,
        } => commands::predict(&cfg, checkpoint.as_deref(), emit_prob, &scene_ids),
        Command::Evaluate => commands::evaluate(&cfg),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(defaults_help()).try_get_matches();
    let cli = match matches.and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cloudnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
