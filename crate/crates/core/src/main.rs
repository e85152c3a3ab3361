use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use anomaly_ac::checkpoint::Checkpoint;
use anomaly_ac::config::{parse_config, RunConfig};
use anomaly_ac::harness::{self, CellResult};
use anomaly_ac::report;

const DEFAULTS: &str = "\
Defaults (override in a TOML config file):
  environment: processes = 3, abnormal_probs = [0.2, 0.3, 0.1], flip_prob = 0.2
  learning:    lambda = 0.5, gamma = 0.5, actor_learning_rate = 0.007,
               critic_learning_rate = 0.01, decay = 0.9999, max_episode_len = 1000,
               reward_baseline = \"previous\"
  training:    max_episodes = 15000, validation_interval = 1000, validation_hold = 200,
               validation_set_size = 3, pi_up = 0.8, validation_policy = \"sample\"
  testing:     warmup_steps = 100, max_sampling_time = 2000, episodes_per_cell = 200,
               pi_up = 0.8, pi_low = 0.6, compare_pi_low = 0.6, policy = \"sample\"
  chernoff:    explore = 0.1, oracle_kl = false

Exit status: 0 on success, 2 on a configuration error, 1 on any other failure.";

#[derive(Parser)]
#[command(
    name = "anomaly-ac",
    version,
    about = "Active sequential anomaly detection with an actor-critic sensor selector"
)]
#[command(after_help = DEFAULTS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write a checkpoint plus validation traces.
    Train(Common),
    /// Run change-point test episodes at the configured (pi_up, pi_low).
    Test(WithCheckpoint),
    /// Run the full (pi_up, pi_low) threshold grid.
    Sweep(WithCheckpoint),
    /// Compare the agent with the Chernoff baseline at a fixed pi_low.
    Compare(WithCheckpoint),
    /// Load a checkpoint and print what it contains.
    ValidateCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Training episodes, or test episodes per cell (overrides the config file).
    #[arg(long)]
    episodes: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct WithCheckpoint {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Without --config the configuration stored in the checkpoint is used.
    #[command(flatten)]
    common: Common,
}

/// A failure that maps to the configuration exit status.
fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain()
        .any(|e| e.downcast_ref::<anomaly_ac::Error>().is_some_and(|e| e.is_config()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(c) => train(c),
        Command::Test(w) => evaluate(w, Mode::Test),
        Command::Sweep(w) => evaluate(w, Mode::Sweep),
        Command::Compare(w) => evaluate(w, Mode::Compare),
        Command::ValidateCheckpoint { checkpoint } => validate_checkpoint(&checkpoint),
    }
}

fn resolve(base: RunConfig, c: &Common, train: bool) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &c.config {
        Some(path) => parse_config(path)?,
        None => base,
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &c.out_dir {
        cfg.out_dir = dir.display().to_string();
    }
    if let Some(n) = c.episodes {
        if train {
            cfg.training.max_episodes = n;
        } else {
            cfg.testing.episodes_per_cell = usize::try_from(n).map_err(|_| anomaly_ac::Error::Config {
                field: "--episodes".into(),
                msg: "too large".into(),
            })?;
        }
    }
    cfg.validate()?;
    let out = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.resolved.toml"), cfg.to_toml())?;
    Ok((cfg, out))
}

fn train(c: Common) -> Result<()> {
    let (cfg, out) = resolve(RunConfig::default(), &c, true)?;
    let total = cfg.training.max_episodes;
    let step = (total / 20).max(1);
    let (mut window_len, mut window_n) = (0usize, 0usize);
    let outcome = harness::train_with_progress(&cfg, |e, ep| {
        window_len += ep.length;
        window_n += 1;
        if !c.quiet && (e % step == 0 || e == total) {
            eprintln!(
                "episode {e}/{total}: mean length {:.2}",
                window_len as f64 / window_n as f64
            );
            (window_len, window_n) = (0, 0);
        }
    })?;
    let ckpt_path = out.join("checkpoint.bin");
    outcome.checkpoint.save(&ckpt_path)?;
    report::write_validation(&out.join("validation.csv"), &outcome.validation)?;
    if !c.quiet {
        let mean_len =
            outcome.episodes.iter().map(|e| e.length as f64).sum::<f64>() / outcome.episodes.len().max(1) as f64;
        println!("trained {total} episodes (mean length {mean_len:.2})");
        println!("checkpoint: {}", ckpt_path.display());
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Mode {
    Test,
    Sweep,
    Compare,
}

fn evaluate(w: WithCheckpoint, mode: Mode) -> Result<()> {
    let mut ckpt = Checkpoint::load(&w.checkpoint).with_context(|| format!("loading {}", w.checkpoint.display()))?;
    let (cfg, out) = resolve(ckpt.config.clone(), &w.common, false)?;
    if cfg.environment != ckpt.config.environment {
        return Err(anomaly_ac::Error::Config {
            field: "environment".into(),
            msg: "differs from the environment the checkpoint was trained on".into(),
        }
        .into());
    }
    ckpt.config.chernoff = cfg.chernoff;
    let tc = &cfg.testing;
    let quiet = w.common.quiet;
    match mode {
        Mode::Test => {
            let cell = harness::test(&ckpt, tc, cfg.seed)?;
            report::write_metrics(&out.join("metrics.csv"), &[&cell])?;
            report::write_grid(&out.join("grid.csv"), &[&cell])?;
            if !quiet {
                print_cells(&[&cell]);
            }
        }
        Mode::Sweep => {
            let cells = harness::sweep(&ckpt, tc, cfg.seed)?;
            let refs: Vec<&CellResult> = cells.iter().collect();
            report::write_metrics(&out.join("metrics.csv"), &refs)?;
            report::write_grid(&out.join("grid.csv"), &refs)?;
            if !quiet {
                print_cells(&refs);
            }
        }
        Mode::Compare => {
            let rows = harness::compare(&ckpt, tc, cfg.seed)?;
            let refs: Vec<&CellResult> = rows.iter().flat_map(|r| [&r.agent, &r.chernoff]).collect();
            report::write_compare(&out.join("compare.csv"), &rows)?;
            report::write_metrics(&out.join("metrics.csv"), &refs)?;
            if !quiet {
                print_cells(&refs);
            }
        }
    }
    Ok(())
}

fn print_cells(cells: &[&CellResult]) {
    println!(
        "{:<9} {:>6} {:>6} {:>10} {:>8} {:>9}",
        "policy", "pi_up", "pi_low", "mean_delay", "loss", "no_claim"
    );
    for c in cells {
        let s = &c.summary;
        println!(
            "{:<9} {:>6} {:>6} {:>10.3} {:>8.4} {:>9.4}",
            c.policy.name(),
            s.pi_up,
            s.pi_low,
            s.mean_delay,
            s.loss,
            s.no_claim_rate
        );
    }
}

fn validate_checkpoint(path: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let env = &ckpt.config.environment;
    println!("checkpoint: {}", path.display());
    println!("processes: {} ({} hypotheses)", env.processes, 1usize << env.processes);
    println!("episodes trained: {}", ckpt.episodes);
    println!("seed: {}", ckpt.rng.seed);
    println!(
        "actor parameters: {} (learning rate {:e})",
        ckpt.actor.param_count(),
        ckpt.actor.learning_rate()
    );
    println!(
        "critic parameters: {} (learning rate {:e})",
        ckpt.critic.param_count(),
        ckpt.critic.learning_rate()
    );
    println!("stored samples: {}", ckpt.store.len());
    Ok(())
}
