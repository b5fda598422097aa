use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use unilatent::toolkit::{self, ControlEval, ExperimentConfig};

/// Cross-embodiment motion retargeting and latent goal-conditioned control.
#[derive(Parser)]
#[command(name = "unilatent", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared latent space on the configured robots.
    TrainLatent {
        #[arg(long)]
        config: PathBuf,
    },
    /// Add a robot to a trained checkpoint by training only its embedding layers.
    AddRobot {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        spec: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the goal-conditioned latent policy on human motion.
    TrainPolicy {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retarget a motion file to a registered robot.
    Retarget {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive a robot arm toward a goal position given in meters.
    Control {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        robot: String,
        #[arg(long, num_args = 3, allow_negative_numbers = true, value_names = ["X", "Y", "Z"])]
        goal: Vec<f64>,
        #[arg(long, default_value_t = 30)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        noise_scale: f64,
        #[arg(long, default_value = "control.json")]
        out: PathBuf,
    },
    /// Write retargeting and control metrics for the listed embodiment pairs.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 30)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Project motion latents onto two principal components and plot them.
    VizPca {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        motions: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainLatent { config } => {
            let cfg = load_config(&config)?;
            print_json(&toolkit::cmd_train_latent(&cfg)?)
        }
        Command::AddRobot { ckpt, spec, config, out } => {
            let cfg = load_config(&config)?;
            print_json(&toolkit::cmd_add_robot(&ckpt, &spec, &cfg, out.as_deref())?)
        }
        Command::TrainPolicy { ckpt, config, out } => {
            let cfg = load_config(&config)?;
            print_json(&toolkit::cmd_train_policy(&ckpt, &cfg, out.as_deref())?)
        }
        Command::Retarget { ckpt, motion, target, out } => {
            let m = toolkit::cmd_retarget(&ckpt, &motion, &target, &out)?;
            print_json(&serde_json::json!({ "frames": m.len(), "out": out }))
        }
        Command::Control { ckpt, policy, robot, goal, horizon, seed, noise_scale, out } => {
            let goal = [goal[0], goal[1], goal[2]];
            let s = toolkit::cmd_control(&ckpt, &policy, &robot, goal, horizon, seed, noise_scale, &out)?;
            print_json(&s)
        }
        Command::Eval { ckpt, pairs, out, policy, episodes, horizon, seed } => {
            let control = ControlEval { episodes, horizon, seed, noise_scale: 1.0 };
            let rows = toolkit::cmd_eval(&ckpt, &pairs, &out, policy.as_deref(), control)?;
            print_json(&serde_json::json!({ "rows": rows.len(), "out": out }))
        }
        Command::VizPca { ckpt, motions, out } => {
            let r = toolkit::cmd_viz_pca(&ckpt, &motions, &out)?;
            print_json(&serde_json::json!({
                "points": r.points.len(),
                "variances": &r.pca.variances[..2.min(r.pca.variances.len())],
                "out": out,
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UNILATENT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
