//! Run configuration: a TOML file whose every key has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{Environment, LearningConfig, RewardBaseline};
use crate::chernoff::ChernoffConfig;
use crate::error::{Error, Result};
use crate::harness::{TestConfig, TrainConfig};
use crate::hypothesis::{ProcessSet, MAX_PROCESSES};
use crate::neuralnet::CRITIC_LEARNING_RATE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub processes: usize,
    pub abnormal_probs: Vec<f64>,
    pub flip_prob: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            processes: 3,
            abnormal_probs: vec![0.2, 0.3, 0.1],
            flip_prob: 0.2,
        }
    }
}

/// Actor step size used by default. The network-level default
/// ([`crate::neuralnet::ACTOR_LEARNING_RATE`]) is too small for plain SGD to
/// move the policy away from uniform within a 15000-episode run; much larger
/// rates collapse the policy onto the most useful sensor and starve the
/// others, after which rare hypotheses can no longer be told apart.
pub const DEFAULT_ACTOR_LEARNING_RATE: f64 = 0.007;
/// Per-episode learning rate decay used by default.
pub const DEFAULT_LEARNING_DECAY: f64 = 0.9999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSection {
    pub lambda: f64,
    pub gamma: f64,
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub decay: f64,
    pub max_episode_len: usize,
    pub reward_baseline: RewardBaseline,
}

impl Default for LearningSection {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gamma: 0.5,
            actor_learning_rate: DEFAULT_ACTOR_LEARNING_RATE,
            critic_learning_rate: CRITIC_LEARNING_RATE,
            decay: DEFAULT_LEARNING_DECAY,
            max_episode_len: 1000,
            reward_baseline: RewardBaseline::Previous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    pub environment: EnvironmentConfig,
    pub learning: LearningSection,
    pub training: TrainConfig,
    pub testing: TestConfig,
    pub chernoff: ChernoffConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "out".into(),
            environment: EnvironmentConfig::default(),
            learning: LearningSection::default(),
            training: TrainConfig::default(),
            testing: TestConfig::default(),
            chernoff: ChernoffConfig::default(),
        }
    }
}

fn in_open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl RunConfig {
    /// Parses and validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("bytes {}..{}", s.start, s.end));
            Error::config(field.unwrap_or_else(|| "<file>".into()), e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full config, defaults expanded.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let env = &self.environment;
        if env.processes == 0 || env.processes > MAX_PROCESSES {
            return Err(Error::config(
                "environment.processes",
                format!("must lie in 1..={MAX_PROCESSES}, got {}", env.processes),
            ));
        }
        if env.abnormal_probs.len() != env.processes {
            return Err(Error::config(
                "environment.abnormal_probs",
                format!("expected {} entries, got {}", env.processes, env.abnormal_probs.len()),
            ));
        }
        if let Some((i, p)) = env.abnormal_probs.iter().enumerate().find(|(_, p)| !in_open_unit(**p)) {
            return Err(Error::config(
                format!("environment.abnormal_probs[{i}]"),
                format!("must lie in (0, 1), got {p}"),
            ));
        }
        if !(env.flip_prob >= 0.0 && env.flip_prob < 0.5) {
            return Err(Error::config("environment.flip_prob", "must lie in [0, 0.5)"));
        }
        self.learning().validate()?;

        let hypotheses = 1usize << env.processes;
        let tr = &self.training;
        if !(tr.pi_up > 0.5 && tr.pi_up < 1.0) {
            return Err(Error::config("training.pi_up", "must lie in (0.5, 1)"));
        }
        if tr.validation_interval > 0 {
            if tr.validation_hold == 0 {
                return Err(Error::config("training.validation_hold", "must be positive"));
            }
            if tr.validation_set_size == 0 || tr.validation_set_size > hypotheses {
                return Err(Error::config(
                    "training.validation_set_size",
                    format!("must lie in 1..={hypotheses}"),
                ));
            }
        }

        let te = &self.testing;
        if te.max_sampling_time == 0 {
            return Err(Error::config("testing.max_sampling_time", "must be positive"));
        }
        if te.episodes_per_cell == 0 {
            return Err(Error::config("testing.episodes_per_cell", "must be positive"));
        }
        for (name, v) in [
            ("testing.pi_up", te.pi_up),
            ("testing.pi_low", te.pi_low),
            ("testing.compare_pi_low", te.compare_pi_low),
        ] {
            if !in_open_unit(v) {
                return Err(Error::config(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if te.pi_low >= te.pi_up {
            return Err(Error::config(
                "testing.pi_low",
                format!("must be below testing.pi_up ({}), got {}", te.pi_up, te.pi_low),
            ));
        }
        for (name, grid) in [
            ("testing.pi_up_grid", &te.pi_up_grid),
            ("testing.pi_low_grid", &te.pi_low_grid),
        ] {
            if grid.is_empty() {
                return Err(Error::config(name, "must not be empty"));
            }
            if let Some(v) = grid.iter().find(|v| !in_open_unit(**v)) {
                return Err(Error::config(name, format!("values must lie in (0, 1), got {v}")));
            }
        }
        if te.sweep_cells().is_empty() {
            return Err(Error::config("testing.pi_low_grid", "no grid pair has pi_low < pi_up"));
        }
        self.chernoff.validate()
    }

    pub fn environment(&self) -> Result<Environment<f64>> {
        let procs = ProcessSet::new(self.environment.abnormal_probs.clone(), self.environment.flip_prob)
            .map_err(|e| Error::config("environment", e.to_string()))?;
        Environment::new(procs)
    }

    pub fn learning(&self) -> LearningConfig<f64> {
        let l = &self.learning;
        LearningConfig {
            lambda: l.lambda,
            gamma: l.gamma,
            actor_learning_rate: l.actor_learning_rate,
            critic_learning_rate: l.critic_learning_rate,
            decay: l.decay,
            max_episode_len: l.max_episode_len,
            reward_baseline: l.reward_baseline,
        }
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
    RunConfig::from_toml(&text)
}
