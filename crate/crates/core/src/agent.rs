//! Actor-critic sensor selection: action choice, rewards, discounted
//! returns, TD errors and the per-episode backward update sweep.

use crate::belief::{
    confidence, reveal_and_refit, update_posterior, BeliefVector, EstimatedDistributions, SampleStore,
};
use crate::error::{Error, Result};
use crate::hypothesis::{
    observe, prior_belief, sample_categorical, Hypothesis, HypothesisSpace, ProcessSet, SensorSample, TrueState,
};
use crate::neuralnet::{build_actor, build_critic, DenseNet};
use crate::scalar::Scalar;
use crate::seed::Rng;

/// How the actor turns its softmax scores into a sensor choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Categorical draw from the scores.
    Sample,
    /// Highest score, ties to the lowest sensor.
    Greedy,
}

/// The observable environment: processes, their hypothesis space and prior.
#[derive(Debug, Clone)]
pub struct Environment<T> {
    pub procs: ProcessSet<T>,
    pub space: HypothesisSpace,
    pub prior: BeliefVector<T>,
}

impl<T: Scalar> Environment<T> {
    pub fn new(procs: ProcessSet<T>) -> Result<Self> {
        let space = crate::hypothesis::enumerate_hypotheses(procs.count())?;
        let prior = prior_belief(&procs, &space)?;
        Ok(Self { procs, space, prior })
    }

    pub fn sensors(&self) -> usize {
        self.procs.count()
    }

    pub fn hypotheses(&self) -> usize {
        self.space.len()
    }
}

/// Anything that picks the next sensor (0-based) from the current belief.
pub trait SensorPolicy<T> {
    fn select(&mut self, belief: &BeliefVector<T>, est: &EstimatedDistributions<T>, rng: &mut Rng) -> usize;
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax<T: Scalar>(scores: &[T]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold((0, scores[0]), |best, (i, &s)| if s > best.1 { (i, s) } else { best })
        .0
}

/// Picks a sensor from the actor's softmax scores.
pub fn select_action<T: Scalar>(
    actor: &DenseNet<T>,
    belief: &BeliefVector<T>,
    mode: PolicyMode,
    rng: &mut Rng,
) -> usize {
    let scores = actor.forward(belief.probs());
    match mode {
        PolicyMode::Greedy => argmax(&scores),
        PolicyMode::Sample => sample_categorical(&scores, rng),
    }
}

/// The actor network used as a frozen policy.
///
/// Remembers the scores of the last belief it saw: a saturated belief is a
/// fixed point of the update, and long test episodes sit on it for
/// thousands of steps.
pub struct ActorPolicy<'a, T> {
    actor: &'a DenseNet<T>,
    mode: PolicyMode,
    last: Option<(Vec<T>, Vec<T>)>,
}

impl<'a, T: Scalar> ActorPolicy<'a, T> {
    pub fn new(actor: &'a DenseNet<T>, mode: PolicyMode) -> Self {
        Self {
            actor,
            mode,
            last: None,
        }
    }

    pub fn mode(&self) -> PolicyMode {
        self.mode
    }

    fn scores(&mut self, belief: &BeliefVector<T>) -> &[T] {
        let hit = matches!(&self.last, Some((input, _)) if input.as_slice() == belief.probs());
        if !hit {
            self.last = Some((belief.probs().to_vec(), self.actor.forward(belief.probs())));
        }
        &self.last.as_ref().unwrap().1
    }
}

impl<T: Scalar> SensorPolicy<T> for ActorPolicy<'_, T> {
    fn select(&mut self, belief: &BeliefVector<T>, _est: &EstimatedDistributions<T>, rng: &mut Rng) -> usize {
        let mode = self.mode;
        let scores = self.scores(belief);
        match mode {
            PolicyMode::Greedy => argmax(scores),
            PolicyMode::Sample => sample_categorical(scores, rng),
        }
    }
}

/// Uniformly random sensor choice.
pub struct UniformPolicy {
    pub sensors: usize,
}

impl<T: Scalar> SensorPolicy<T> for UniformPolicy {
    fn select(&mut self, _belief: &BeliefVector<T>, _est: &EstimatedDistributions<T>, rng: &mut Rng) -> usize {
        use rand::Rng as _;
        rng.gen_range(0..self.sensors)
    }
}

/// `(C_t - C_prior) / t` for the 1-based step `t`.
pub fn reward<T: Scalar>(c_t: T, c_prior: T, t: u64) -> Result<T> {
    if t == 0 {
        return Err(Error::arg("reward step index starts at 1"));
    }
    Ok((c_t - c_prior) / T::from_u64(t).unwrap())
}

/// `R_t = sum_{tau >= t} lambda^(tau - t) r_tau` via the backward recurrence.
pub fn discounted_return<T: Scalar>(rewards: &[T], lambda: T) -> Vec<T> {
    let mut out = vec![T::zero(); rewards.len()];
    let mut acc = T::zero();
    for (r_out, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + lambda * acc;
        *r_out = acc;
    }
    out
}

pub fn td_error<T: Scalar>(ret: T, v_next: T, v_curr: T, gamma: T) -> T {
    ret + gamma * v_next - v_curr
}

/// Confidence subtracted from `C_t` in the step reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardBaseline {
    /// Confidence of the episode's initial belief.
    Prior,
    /// Confidence before the current step's sample.
    Previous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningConfig<T> {
    /// Return discount.
    pub lambda: T,
    /// TD discount.
    pub gamma: T,
    pub actor_learning_rate: T,
    pub critic_learning_rate: T,
    /// Per-episode multiplicative learning rate decay.
    pub decay: T,
    pub max_episode_len: usize,
    pub reward_baseline: RewardBaseline,
}

impl<T: Scalar> LearningConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: T| x > T::zero() && x < T::one();
        if !open_unit(self.lambda) {
            return Err(Error::config("learning.lambda", "must lie in (0, 1)"));
        }
        if !open_unit(self.gamma) {
            return Err(Error::config("learning.gamma", "must lie in (0, 1)"));
        }
        let positive = |x: T| x > T::zero();
        if !positive(self.actor_learning_rate) {
            return Err(Error::config("learning.actor_learning_rate", "must be positive"));
        }
        if !positive(self.critic_learning_rate) {
            return Err(Error::config("learning.critic_learning_rate", "must be positive"));
        }
        if !(self.decay > T::zero() && self.decay <= T::one()) {
            return Err(Error::config("learning.decay", "must lie in (0, 1]"));
        }
        if self.max_episode_len == 0 {
            return Err(Error::config("learning.max_episode_len", "must be positive"));
        }
        Ok(())
    }
}

/// One step of experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub state: BeliefVector<T>,
    pub action: usize,
    pub reward: T,
    pub next_state: BeliefVector<T>,
}

/// A single accept-or-truncate episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord<T> {
    pub truth: usize,
    pub transitions: Vec<Transition<T>>,
    pub samples: Vec<SensorSample>,
    pub accepted: Option<usize>,
    pub truncated: bool,
}

impl<T> EpisodeRecord<T> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn correct(&self) -> Option<bool> {
        self.accepted.map(|m| m == self.truth)
    }
}

/// Runs one episode from the prior until the largest posterior reaches
/// `upper` or `max_len` steps elapse. No learning and no refit.
#[allow(clippy::too_many_arguments)]
pub fn rollout<T: Scalar, P: SensorPolicy<T> + ?Sized>(
    env: &Environment<T>,
    est: &EstimatedDistributions<T>,
    truth: Hypothesis,
    upper: T,
    max_len: usize,
    baseline: RewardBaseline,
    policy: &mut P,
    env_rng: &mut Rng,
    policy_rng: &mut Rng,
) -> Result<EpisodeRecord<T>> {
    let state = TrueState::new(truth, 0);
    let mut belief = env.prior.clone();
    let mut c_base = confidence(&belief);
    let mut transitions = Vec::new();
    let mut samples = Vec::new();
    let mut t = 0u64;
    let (accepted, truncated) = loop {
        let (m, p) = belief.argmax();
        if p >= upper {
            break (Some(m), false);
        }
        if transitions.len() >= max_len {
            break (None, true);
        }
        t += 1;
        let action = policy.select(&belief, est, policy_rng);
        let sample = observe(&state, action, t, &env.procs, env_rng)?;
        let next = update_posterior(&belief, &sample, est);
        let c_next = confidence(&next);
        let r = reward(c_next, c_base, t)?;
        if baseline == RewardBaseline::Previous {
            c_base = c_next;
        }
        samples.push(sample);
        transitions.push(Transition {
            state: std::mem::replace(&mut belief, next.clone()),
            action,
            reward: r,
            next_state: next,
        });
    };
    Ok(EpisodeRecord {
        truth: truth.index(),
        transitions,
        samples,
        accepted,
        truncated,
    })
}

/// Actor and critic networks plus the learning configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic<T> {
    pub actor: DenseNet<T>,
    pub critic: DenseNet<T>,
    pub cfg: LearningConfig<T>,
}

impl<T: Scalar> ActorCritic<T> {
    /// Builds freshly initialized networks; each takes its own generator.
    pub fn new(
        input_dim: usize,
        actions: usize,
        cfg: LearningConfig<T>,
        actor_rng: &mut Rng,
        critic_rng: &mut Rng,
    ) -> Self {
        let actor = build_actor(input_dim, actions, actor_rng)
            .with_learning_rate(cfg.actor_learning_rate)
            .with_decay(cfg.decay);
        let critic = build_critic(input_dim, critic_rng)
            .with_learning_rate(cfg.critic_learning_rate)
            .with_decay(cfg.decay);
        Self { actor, critic, cfg }
    }

    /// Sweeps the episode backwards: accumulate the return, take the TD
    /// error against the current critic, step the critic, then the actor.
    /// `terminal` marks that the last transition reached an accepting state,
    /// whose value is taken as zero.
    pub fn backward_sweep(&mut self, transitions: &[Transition<T>], terminal: bool) -> Result<()> {
        let mut ret = T::zero();
        for (k, tr) in transitions.iter().enumerate().rev() {
            ret = tr.reward + self.cfg.lambda * ret;
            let v_next = if terminal && k + 1 == transitions.len() {
                T::zero()
            } else {
                self.critic.forward(tr.next_state.probs())[0]
            };
            let target = ret + self.cfg.gamma * v_next;
            let v_curr = self.critic.forward(tr.state.probs())[0];
            let delta = td_error(ret, v_next, v_curr, self.cfg.gamma);
            self.critic.critic_step(tr.state.probs(), target)?;
            self.actor.actor_step(tr.state.probs(), tr.action, delta)?;
        }
        Ok(())
    }
}

/// One training episode: sampled-policy rollout with frozen estimates, the
/// backward update sweep, then reveal the truth and refit the estimates.
/// Learning rates are not decayed here.
#[allow(clippy::too_many_arguments)]
pub fn run_training_episode<T: Scalar>(
    env: &Environment<T>,
    store: &mut SampleStore,
    est: &mut EstimatedDistributions<T>,
    ac: &mut ActorCritic<T>,
    truth: Hypothesis,
    upper: T,
    env_rng: &mut Rng,
    policy_rng: &mut Rng,
) -> Result<EpisodeRecord<T>> {
    let mut policy = ActorPolicy::new(&ac.actor, PolicyMode::Sample);
    let record = rollout(
        env,
        est,
        truth,
        upper,
        ac.cfg.max_episode_len,
        ac.cfg.reward_baseline,
        &mut policy,
        env_rng,
        policy_rng,
    )?;
    ac.backward_sweep(&record.transitions, !record.truncated)?;
    *est = reveal_and_refit(store, &record.samples, truth.index());
    Ok(record)
}
