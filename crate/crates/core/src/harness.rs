//! Training with periodic frozen-policy validation, change-point testing,
//! threshold sweeps and the Chernoff comparison.

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{
    rollout, run_training_episode, ActorCritic, ActorPolicy, Environment, PolicyMode, RewardBaseline, SensorPolicy,
};
use crate::belief::{
    check_accept, check_reject_null, reveal_and_refit, update_posterior, EstimatedDistributions, SampleStore,
    Thresholds,
};
use crate::checkpoint::{Checkpoint, RngState};
use crate::chernoff::ChernoffPolicy;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::hypothesis::{draw_hypothesis, observe, SensorSample, TrueState};
use crate::neuralnet::decay_learning_rates;
use crate::seed::{stream, Rng};

/// Upper/lower thresholds studied in the sweeps.
pub const PI_UP_GRID: [f64; 11] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99];
pub const PI_LOW_GRID: [f64; 11] = [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_episodes: u64,
    /// Episodes between validation blocks; 0 disables validation.
    pub validation_interval: u64,
    /// Steps each validation hypothesis stays true.
    pub validation_hold: usize,
    pub validation_set_size: usize,
    /// Accept threshold that ends a training episode.
    pub pi_up: f64,
    /// Sampling by default: a greedy actor can lock onto one sensor at a
    /// saturated belief and never see evidence against it.
    pub validation_policy: PolicyMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_episodes: 15_000,
            validation_interval: 1_000,
            validation_hold: 200,
            validation_set_size: 3,
            pi_up: 0.8,
            validation_policy: PolicyMode::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    /// Steps with the all-normal hypothesis true before the change.
    pub warmup_steps: usize,
    /// Cap on post-change steps per episode.
    pub max_sampling_time: usize,
    pub episodes_per_cell: usize,
    /// Thresholds for the single-cell `test` run.
    pub pi_up: f64,
    pub pi_low: f64,
    pub pi_up_grid: Vec<f64>,
    pub pi_low_grid: Vec<f64>,
    /// Lower threshold shared by every cell of the Chernoff comparison.
    pub compare_pi_low: f64,
    /// How the agent picks sensors during test episodes; see `validation_policy`.
    pub policy: PolicyMode,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 100,
            max_sampling_time: 2_000,
            episodes_per_cell: 200,
            pi_up: 0.8,
            pi_low: 0.6,
            pi_up_grid: PI_UP_GRID.to_vec(),
            pi_low_grid: PI_LOW_GRID.to_vec(),
            compare_pi_low: 0.6,
            policy: PolicyMode::Sample,
        }
    }
}

impl TestConfig {
    /// `(pi_up, pi_low)` sweep cells with `pi_low < pi_up`, ordered by
    /// `pi_low` then `pi_up`.
    pub fn sweep_cells(&self) -> Vec<(f64, f64)> {
        self.pi_low_grid
            .iter()
            .flat_map(|&low| {
                self.pi_up_grid
                    .iter()
                    .filter(move |&&up| low < up)
                    .map(move |&up| (up, low))
            })
            .collect()
    }
}

/// Posterior trace of one validation block.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationBlock {
    pub block_id: usize,
    /// Training episodes completed before this block ran.
    pub after_episode: u64,
    /// The hypotheses held true in turn.
    pub hypotheses: Vec<usize>,
    pub hold: usize,
    /// `posteriors[step][k]` is the posterior of `hypotheses[k]` after `step + 1` samples.
    pub posteriors: Vec<Vec<f64>>,
}

impl ValidationBlock {
    /// For each segment, whether the hypothesis true during it exceeded
    /// `level` at some step of the segment.
    pub fn segment_hits(&self, level: f64) -> Vec<bool> {
        (0..self.hypotheses.len())
            .map(|k| {
                self.posteriors[k * self.hold..(k + 1) * self.hold]
                    .iter()
                    .any(|row| row[k] > level)
            })
            .collect()
    }
}

/// Per-episode training summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainEpisode {
    pub truth: usize,
    pub length: usize,
    pub accepted: Option<usize>,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub validation: Vec<ValidationBlock>,
    pub episodes: Vec<TrainEpisode>,
}

fn validate_policy(
    env: &Environment<f64>,
    est: &EstimatedDistributions<f64>,
    ac: &ActorCritic<f64>,
    cfg: &TrainConfig,
    seed: u64,
    block_id: usize,
    after_episode: u64,
) -> Result<ValidationBlock> {
    let mut env_rng = stream(seed, "validation/env", block_id as u64);
    let mut policy_rng = stream(seed, "validation/policy", block_id as u64);
    let hypotheses: Vec<usize> = sample_indices(&mut env_rng, env.hypotheses(), cfg.validation_set_size).into_vec();
    let mut policy = ActorPolicy::new(&ac.actor, cfg.validation_policy);
    let mut belief = env.prior.clone();
    let mut posteriors = Vec::with_capacity(hypotheses.len() * cfg.validation_hold);
    let mut t = 0u64;
    for &h in &hypotheses {
        let truth = TrueState::new(*env.space.get(h), t);
        for _ in 0..cfg.validation_hold {
            t += 1;
            let a = policy.select(&belief, est, &mut policy_rng);
            let s = observe(&truth, a, t, &env.procs, &mut env_rng)?;
            belief = update_posterior(&belief, &s, est);
            posteriors.push(hypotheses.iter().map(|&k| belief.probs()[k]).collect());
        }
    }
    Ok(ValidationBlock {
        block_id,
        after_episode,
        hypotheses,
        hold: cfg.validation_hold,
        posteriors,
    })
}

/// Trains an actor-critic agent from scratch.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    train_with_progress(cfg, |_, _| {})
}

/// [`train`], calling `progress(episode, record)` after every episode.
pub fn train_with_progress(cfg: &RunConfig, mut progress: impl FnMut(u64, &TrainEpisode)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tc = &cfg.training;
    if !(tc.pi_up > 0.5 && tc.pi_up < 1.0) {
        return Err(Error::config("training.pi_up", "must lie in (0.5, 1)"));
    }
    let env = cfg.environment()?;
    let learning = cfg.learning();
    let seed = cfg.seed;
    let mut ac = ActorCritic::new(
        env.hypotheses(),
        env.sensors(),
        learning,
        &mut stream(seed, "init/actor", 0),
        &mut stream(seed, "init/critic", 0),
    );
    let mut store = SampleStore::new(env.sensors(), env.hypotheses());
    let mut est = store.estimates();
    let mut env_rng = stream(seed, "train/env", 0);
    let mut policy_rng = stream(seed, "train/policy", 0);
    let mut validation = Vec::new();
    let mut episodes = Vec::with_capacity(tc.max_episodes as usize);

    for episode in 1..=tc.max_episodes {
        let truth = draw_hypothesis(&env.prior, &env.space, &mut env_rng);
        let rec = run_training_episode(
            &env,
            &mut store,
            &mut est,
            &mut ac,
            truth,
            tc.pi_up,
            &mut env_rng,
            &mut policy_rng,
        )?;
        decay_learning_rates(&mut ac.actor, &mut ac.critic);
        let summary = TrainEpisode {
            truth: rec.truth,
            length: rec.len(),
            accepted: rec.accepted,
            truncated: rec.truncated,
        };
        progress(episode, &summary);
        episodes.push(summary);
        if tc.validation_interval > 0 && episode % tc.validation_interval == 0 {
            let block = validate_policy(&env, &est, &ac, tc, seed, validation.len(), episode)?;
            validation.push(block);
        }
    }

    let checkpoint = Checkpoint {
        config: cfg.clone(),
        actor: ac.actor,
        critic: ac.critic,
        store,
        episodes: tc.max_episodes,
        rng: RngState {
            seed,
            env_word_pos: env_rng.get_word_pos(),
            policy_word_pos: policy_rng.get_word_pos(),
        },
    };
    Ok(TrainOutcome {
        checkpoint,
        validation,
        episodes,
    })
}

/// Outcome of one change-point test episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestEpisode {
    /// Hypothesis that became true after the warm-up.
    pub truth: usize,
    /// Post-change step at which the change point was reported.
    pub change_reported: Option<u64>,
    pub accepted: Option<usize>,
    /// Steps from the change to the claim.
    pub claim_delay: Option<u64>,
    /// Change reports while nothing actually changed.
    pub false_alarms: u32,
    /// No claim within the sampling cap.
    pub truncated: bool,
}

impl TestEpisode {
    pub fn correct(&self) -> Option<bool> {
        self.accepted.map(|m| m == self.truth)
    }
}

/// One warm-up-then-change episode.
///
/// The all-normal hypothesis holds for `warmup_steps`, then a new truth is
/// drawn from the prior. The monitor reports a change once the all-normal
/// posterior falls to `thr.lower` and resets the belief to the prior; from
/// then on the first hypothesis whose posterior reaches `thr.upper` is
/// claimed. Afterwards the samples are filed under the revealed truths and
/// the estimates refit.
#[allow(clippy::too_many_arguments)]
pub fn run_test_episode<P: SensorPolicy<f64> + ?Sized>(
    env: &Environment<f64>,
    store: &mut SampleStore,
    est: &mut EstimatedDistributions<f64>,
    policy: &mut P,
    thr: &Thresholds<f64>,
    cfg: &TestConfig,
    env_rng: &mut Rng,
    policy_rng: &mut Rng,
) -> Result<TestEpisode> {
    let normal = TrueState::new(*env.space.get(0), 0);
    let mut belief = env.prior.clone();
    let mut warm: Vec<SensorSample> = Vec::with_capacity(cfg.warmup_steps);
    let mut t = 0u64;
    for _ in 0..cfg.warmup_steps {
        t += 1;
        let a = policy.select(&belief, est, policy_rng);
        let s = observe(&normal, a, t, &env.procs, env_rng)?;
        belief = update_posterior(&belief, &s, est);
        warm.push(s);
    }

    let truth = draw_hypothesis(&env.prior, &env.space, env_rng);
    let state = TrueState::new(truth, t);
    let mut post: Vec<SensorSample> = Vec::new();
    let mut change_reported = None;
    let mut accepted = None;
    let mut claim_delay = None;
    let mut false_alarms = 0;
    for step in 1..=cfg.max_sampling_time as u64 {
        let a = policy.select(&belief, est, policy_rng);
        let s = observe(&state, a, t + step, &env.procs, env_rng)?;
        belief = update_posterior(&belief, &s, est);
        post.push(s);
        if change_reported.is_none() {
            if !check_reject_null(&belief, thr) {
                continue;
            }
            change_reported = Some(step);
            if truth.index() == 0 {
                false_alarms += 1;
            }
            belief = env.prior.clone();
        }
        if let Some(m) = check_accept(&belief, thr) {
            accepted = Some(m);
            claim_delay = Some(step);
            break;
        }
    }

    for s in &warm {
        store.record(s, 0);
    }
    *est = reveal_and_refit(store, &post, truth.index());
    Ok(TestEpisode {
        truth: truth.index(),
        change_reported,
        accepted,
        claim_delay,
        false_alarms,
        truncated: accepted.is_none(),
    })
}

/// Which policy drives a test cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Agent,
    Chernoff,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Agent => "agent",
            PolicyKind::Chernoff => "chernoff",
        }
    }
}

/// Aggregates of one threshold cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub pi_up: f64,
    pub pi_low: f64,
    pub episodes: usize,
    pub claims: usize,
    /// Mean claim delay over episodes with a claim; NaN without claims.
    pub mean_delay: f64,
    pub delay_stderr: f64,
    /// Wrong claims over all claims; NaN without claims.
    pub loss: f64,
    pub no_claim_rate: f64,
    /// Change reports per episode whose new truth was still all-normal.
    pub false_alarm_rate: f64,
}

impl CellSummary {
    pub fn from_episodes(pi_up: f64, pi_low: f64, eps: &[TestEpisode]) -> Self {
        let delays: Vec<f64> = eps.iter().filter_map(|e| e.claim_delay).map(|d| d as f64).collect();
        let claims = delays.len();
        let wrong = eps.iter().filter(|e| e.correct() == Some(false)).count();
        let (mean_delay, delay_stderr) = if claims == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = delays.iter().sum::<f64>() / claims as f64;
            let se = if claims > 1 {
                let var = delays.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (claims - 1) as f64;
                (var / claims as f64).sqrt()
            } else {
                0.0
            };
            (mean, se)
        };
        let unchanged = eps.iter().filter(|e| e.truth == 0).count();
        let alarms: u32 = eps.iter().map(|e| e.false_alarms).sum();
        let n = eps.len().max(1) as f64;
        Self {
            pi_up,
            pi_low,
            episodes: eps.len(),
            claims,
            mean_delay,
            delay_stderr,
            loss: if claims == 0 {
                f64::NAN
            } else {
                wrong as f64 / claims as f64
            },
            no_claim_rate: eps.iter().filter(|e| e.truncated).count() as f64 / n,
            false_alarm_rate: if unchanged == 0 {
                0.0
            } else {
                alarms as f64 / unchanged as f64
            },
        }
    }
}

/// Every episode of one cell plus its summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub policy: PolicyKind,
    pub episodes: Vec<TestEpisode>,
    pub summary: CellSummary,
}

/// Runs `episodes` test episodes for one threshold pair on a private copy of
/// the checkpoint's sample store. Episode `e` draws its environment and
/// policy randomness from streams keyed only by `(seed, e)`, so cells and
/// policies see paired environments.
pub fn run_cell(
    ckpt: &Checkpoint,
    policy: PolicyKind,
    thr: Thresholds<f64>,
    cfg: &TestConfig,
    episodes: usize,
    seed: u64,
) -> Result<CellResult> {
    let env = ckpt.config.environment()?;
    let mut store = ckpt.store.clone();
    let mut est = store.estimates();
    let mut agent = ActorPolicy::new(&ckpt.actor, cfg.policy);
    let mut chernoff = ChernoffPolicy::new(ckpt.config.chernoff, &env);
    let mut out = Vec::with_capacity(episodes);
    for e in 0..episodes as u64 {
        let mut env_rng = stream(seed, "test/env", e);
        let mut policy_rng = stream(seed, "test/policy", e);
        let p: &mut dyn SensorPolicy<f64> = match policy {
            PolicyKind::Agent => &mut agent,
            PolicyKind::Chernoff => &mut chernoff,
        };
        out.push(run_test_episode(
            &env,
            &mut store,
            &mut est,
            p,
            &thr,
            cfg,
            &mut env_rng,
            &mut policy_rng,
        )?);
    }
    let summary = CellSummary::from_episodes(thr.upper, thr.lower, &out);
    Ok(CellResult {
        policy,
        episodes: out,
        summary,
    })
}

/// The single-cell test at the configured `(pi_up, pi_low)`.
pub fn test(ckpt: &Checkpoint, cfg: &TestConfig, seed: u64) -> Result<CellResult> {
    let thr = Thresholds::new(cfg.pi_up, cfg.pi_low).map_err(|e| Error::config("testing.pi_low", e.to_string()))?;
    run_cell(ckpt, PolicyKind::Agent, thr, cfg, cfg.episodes_per_cell, seed)
}

/// Every valid cell of the threshold grids, agent policy.
pub fn sweep(ckpt: &Checkpoint, cfg: &TestConfig, seed: u64) -> Result<Vec<CellResult>> {
    let cells = cfg.sweep_cells();
    if cells.is_empty() {
        return Err(Error::config("testing.pi_low_grid", "no grid pair has pi_low < pi_up"));
    }
    cells
        .par_iter()
        .map(|&(up, low)| {
            let thr = Thresholds::new(up, low)?;
            run_cell(ckpt, PolicyKind::Agent, thr, cfg, cfg.episodes_per_cell, seed)
        })
        .collect()
}

/// Agent and Chernoff results for one comparison cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub agent: CellResult,
    pub chernoff: CellResult,
}

/// Agent against the Chernoff baseline at a fixed lower threshold, paired
/// by episode seed. The two thresholds act in separate phases of an
/// episode, so `pi_up <= pi_low` cells are allowed here.
pub fn compare(ckpt: &Checkpoint, cfg: &TestConfig, seed: u64) -> Result<Vec<ComparisonRow>> {
    let low = cfg.compare_pi_low;
    cfg.pi_up_grid
        .par_iter()
        .map(|&up| {
            let thr = Thresholds::unordered(up, low)?;
            let agent = run_cell(ckpt, PolicyKind::Agent, thr, cfg, cfg.episodes_per_cell, seed)?;
            let chernoff = run_cell(ckpt, PolicyKind::Chernoff, thr, cfg, cfg.episodes_per_cell, seed)?;
            Ok(ComparisonRow { agent, chernoff })
        })
        .collect()
}

/// Episode lengths of `policy` under the training stopping rule, with
/// truths drawn from the prior and frozen estimates. Episode `e` uses
/// environment stream `(seed, e)` regardless of the policy.
pub fn stopping_lengths<P: SensorPolicy<f64> + ?Sized>(
    env: &Environment<f64>,
    est: &EstimatedDistributions<f64>,
    policy: &mut P,
    upper: f64,
    max_len: usize,
    episodes: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    (0..episodes as u64)
        .map(|e| {
            let mut env_rng = stream(seed, "stopping/env", e);
            let mut policy_rng = stream(seed, "stopping/policy", e);
            let truth = draw_hypothesis(&env.prior, &env.space, &mut env_rng);
            let rec = rollout(
                env,
                est,
                truth,
                upper,
                max_len,
                RewardBaseline::Prior,
                policy,
                &mut env_rng,
                &mut policy_rng,
            )?;
            Ok(rec.len())
        })
        .collect()
}
