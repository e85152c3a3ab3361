//! Chernoff-test sensor selection baseline.
//!
//! With probability `1 - explore` the sensor that best separates the
//! current maximum-likelihood hypothesis from its closest alternative (in
//! Bernoulli KL divergence) is queried; otherwise a sensor is drawn
//! uniformly.

use rand::Rng as _;

use crate::agent::{Environment, SensorPolicy};
use crate::belief::{BeliefVector, EstimatedDistributions, SampleStore, Thresholds, EPS_CLAMP};
use crate::error::{Error, Result};
use crate::harness::{run_test_episode, TestConfig, TestEpisode};
use crate::scalar::Scalar;
use crate::seed::Rng;

/// Default probability of a uniformly random sensor choice.
pub const DEFAULT_EXPLORE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChernoffConfig {
    pub explore: f64,
    /// Score sensors with the true emission probabilities instead of the
    /// agent's estimates. Diagnostic only.
    pub oracle_kl: bool,
}

impl Default for ChernoffConfig {
    fn default() -> Self {
        Self {
            explore: DEFAULT_EXPLORE,
            oracle_kl: false,
        }
    }
}

impl ChernoffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.explore) {
            return Err(Error::config("chernoff.explore", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `KL(Bern(p) || Bern(q))`, natural log, inputs clamped away from 0 and 1.
pub fn kl_bernoulli<T: Scalar>(p: T, q: T) -> T {
    let lo = T::lit(EPS_CLAMP);
    let hi = T::one() - lo;
    let p = p.max(lo).min(hi);
    let q = q.max(lo).min(hi);
    let one = T::one();
    p * (p / q).ln() + (one - p) * ((one - p) / (one - q)).ln()
}

/// Worst-case separation of hypothesis `m_hat` from every alternative when
/// querying `sensor`.
pub fn min_kl<T: Scalar>(est: &EstimatedDistributions<T>, sensor: usize, m_hat: usize) -> T {
    let p = est.p_one(sensor, m_hat);
    (0..est.hypotheses())
        .filter(|&m| m != m_hat)
        .map(|m| kl_bernoulli(p, est.p_one(sensor, m)))
        .fold(T::infinity(), T::min)
}

/// Chernoff sensor choice (0-based).
pub fn chernoff_select<T: Scalar>(
    belief: &BeliefVector<T>,
    est: &EstimatedDistributions<T>,
    cfg: &ChernoffConfig,
    rng: &mut Rng,
) -> usize {
    let sensors = est.sensors();
    if rng.gen::<f64>() < cfg.explore {
        return rng.gen_range(0..sensors);
    }
    let (m_hat, _) = belief.argmax();
    let mut best = 0;
    let mut best_score = min_kl(est, 0, m_hat);
    for i in 1..sensors {
        let s = min_kl(est, i, m_hat);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Chernoff selection as a [`SensorPolicy`]. When `oracle` is set, sensors
/// are scored against it rather than the estimates passed at selection time.
pub struct ChernoffPolicy<T> {
    pub cfg: ChernoffConfig,
    pub oracle: Option<EstimatedDistributions<T>>,
}

impl<T: Scalar> ChernoffPolicy<T> {
    pub fn new(cfg: ChernoffConfig, env: &Environment<T>) -> Self {
        let oracle = cfg
            .oracle_kl
            .then(|| EstimatedDistributions::oracle(&env.procs, &env.space));
        Self { cfg, oracle }
    }
}

impl<T: Scalar> SensorPolicy<T> for ChernoffPolicy<T> {
    fn select(&mut self, belief: &BeliefVector<T>, est: &EstimatedDistributions<T>, rng: &mut Rng) -> usize {
        chernoff_select(belief, self.oracle.as_ref().unwrap_or(est), &self.cfg, rng)
    }
}

/// One change-point test episode driven by the Chernoff selector.
#[allow(clippy::too_many_arguments)]
pub fn run_chernoff_episode(
    env: &Environment<f64>,
    store: &mut SampleStore,
    est: &mut EstimatedDistributions<f64>,
    cfg: &ChernoffConfig,
    thr: &Thresholds<f64>,
    test: &TestConfig,
    env_rng: &mut Rng,
    policy_rng: &mut Rng,
) -> Result<TestEpisode> {
    let mut policy = ChernoffPolicy::new(*cfg, env);
    run_test_episode(env, store, est, &mut policy, thr, test, env_rng, policy_rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::ProcessSet;
    use crate::seed::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kl_spot_values() {
        for p in [0.01, 0.3, 0.5, 0.77] {
            assert_abs_diff_eq!(kl_bernoulli(p, p), 0.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(kl_bernoulli(0.9f64, 0.1), 0.8 * 9f64.ln(), epsilon = 1e-12);
        for q in [0.05, 0.2, 0.45] {
            assert_abs_diff_eq!(kl_bernoulli(0.5f64, q), kl_bernoulli(0.5, 1.0 - q), epsilon = 1e-15);
        }
        assert!(kl_bernoulli(0.0f64, 1.0).is_finite());
    }

    #[test]
    fn kl_nonnegative_with_equality_only_on_diagonal() {
        let grid: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
        for &p in &grid {
            for &q in &grid {
                let d = kl_bernoulli(p, q);
                if p == q {
                    assert_eq!(d, 0.0);
                } else {
                    assert!(d > 0.0, "KL({p}, {q}) = {d}");
                }
            }
        }
    }

    #[test]
    fn identical_estimates_fall_back_to_first_sensor() {
        let est = EstimatedDistributions::<f64>::uninformative(3, 8);
        let cfg = ChernoffConfig {
            explore: 0.0,
            oracle_kl: false,
        };
        let mut rng = stream(0, "ch", 0);
        let b = BeliefVector::<f64>::uniform(8);
        for _ in 0..10 {
            assert_eq!(chernoff_select(&b, &est, &cfg, &mut rng), 0);
        }
    }

    #[test]
    fn overlapping_hypotheses_leave_no_separating_sensor() {
        // With m_hat = H_1 = {1}, every sensor has an alternative that emits
        // identically: H_4 on sensor 1, H_0 on sensors 2 and 3.
        let procs = ProcessSet::new(vec![0.2, 0.3, 0.1], 0.1).unwrap();
        let env = Environment::new(procs).unwrap();
        let est = EstimatedDistributions::oracle(&env.procs, &env.space);
        let table: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                (0..8)
                    .filter(|&m| m != 1)
                    .map(|m| kl_bernoulli(est.p_one(i, 1), est.p_one(i, m)))
                    .collect()
            })
            .collect();
        let zero_rows: Vec<usize> = vec![4, 5, 7];
        for m in zero_rows {
            // index into the 7 alternatives (H_1 removed)
            assert_eq!(table[0][m - 1], 0.0);
        }
        assert_eq!(table[1][0], 0.0);
        assert_eq!(table[2][0], 0.0);
        for i in 0..3 {
            assert_eq!(min_kl(&est, i, 1), 0.0);
        }
        let mut probs = vec![0.01; 8];
        probs[1] = 0.93;
        let b = BeliefVector::new(probs).unwrap();
        let cfg = ChernoffConfig {
            explore: 0.0,
            oracle_kl: false,
        };
        assert_eq!(chernoff_select(&b, &est, &cfg, &mut stream(1, "ch", 0)), 0);
    }

    #[test]
    fn dominant_sensor_is_always_chosen() {
        // two processes; the estimates make sensor 2 the only informative one
        let est = EstimatedDistributions::from_values(2, 4, vec![0.5, 0.5, 0.5, 0.5, 0.1, 0.2, 0.8, 0.9]).unwrap();
        let cfg = ChernoffConfig {
            explore: 0.0,
            oracle_kl: false,
        };
        let b = BeliefVector::<f64>::uniform(4);
        let mut rng = stream(2, "ch", 0);
        for _ in 0..50 {
            assert_eq!(chernoff_select(&b, &est, &cfg, &mut rng), 1);
        }
    }

    #[test]
    fn full_exploration_is_uniform() {
        let est = EstimatedDistributions::<f64>::uninformative(3, 8);
        let cfg = ChernoffConfig {
            explore: 1.0,
            oracle_kl: false,
        };
        let b = BeliefVector::<f64>::uniform(8);
        let mut rng = stream(3, "ch", 0);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[chernoff_select(&b, &est, &cfg, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn selection_is_seeded() {
        let est = EstimatedDistributions::<f64>::uninformative(3, 8);
        let cfg = ChernoffConfig {
            explore: 0.5,
            oracle_kl: false,
        };
        let b = BeliefVector::<f64>::uniform(8);
        let run = || {
            let mut rng = stream(4, "ch", 0);
            (0..100)
                .map(|_| chernoff_select(&b, &est, &cfg, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn explore_out_of_range_rejected() {
        assert!(ChernoffConfig {
            explore: 1.5,
            oracle_kl: false
        }
        .validate()
        .is_err());
        assert!(ChernoffConfig::default().validate().is_ok());
    }
}
