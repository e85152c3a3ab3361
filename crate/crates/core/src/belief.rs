//! Posterior belief over hypotheses, the confidence functional, stopping
//! rules, and smoothed maximum-likelihood estimates of each sensor's
//! Bernoulli parameter under each hypothesis.

use crate::error::{Error, Result};
use crate::hypothesis::{HypothesisSpace, ProcessSet, SensorSample};
use crate::scalar::Scalar;

/// Lower clamp for belief entries; the upper clamp is `1 - EPS_CLAMP`.
pub const EPS_CLAMP: f64 = 1e-9;

/// Additive smoothing constant for the Bernoulli estimates.
pub const LAPLACE: f64 = 1.0;

/// Probability vector over the hypothesis space.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector<T> {
    probs: Vec<T>,
}

impl<T: Scalar> BeliefVector<T> {
    /// Validates and normalizes `probs`. Entries must be finite and
    /// non-negative with a positive total.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::arg("belief vector must be non-empty"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < T::zero()) {
            return Err(Error::arg("belief entries must be finite and non-negative"));
        }
        let total: T = probs.iter().copied().sum();
        if total <= T::zero() {
            return Err(Error::arg("belief entries sum to zero"));
        }
        Ok(Self {
            probs: probs.into_iter().map(|p| p / total).collect(),
        })
    }

    /// Wraps `probs` as-is. The caller guarantees they lie on the simplex.
    pub fn from_probs_unchecked(probs: Vec<T>) -> Self {
        Self { probs }
    }

    pub fn uniform(len: usize) -> Self {
        let p = T::one() / T::from_usize(len).unwrap();
        Self { probs: vec![p; len] }
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Largest entry and its index; ties resolve to the lowest index.
    pub fn argmax(&self) -> (usize, T) {
        self.probs.iter().enumerate().fold(
            (0, self.probs[0]),
            |best, (i, &p)| if p > best.1 { (i, p) } else { best },
        )
    }

    /// Copy with every entry clamped to `[EPS_CLAMP, 1 - EPS_CLAMP]` and renormalized.
    pub fn clamped(&self) -> Self {
        let mut probs = self.probs.clone();
        clamp_renormalize(&mut probs);
        Self { probs }
    }
}

fn clamp_renormalize<T: Scalar>(probs: &mut [T]) {
    let lo = T::lit(EPS_CLAMP);
    let hi = T::one() - lo;
    for p in probs.iter_mut() {
        *p = p.max(lo).min(hi);
    }
    let total: T = probs.iter().copied().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
}

#[inline]
fn clamp_entry<T: Scalar>(p: T) -> T {
    let lo = T::lit(EPS_CLAMP);
    p.max(lo).min(T::one() - lo)
}

/// One Bayes step: multiply by the likelihood of `sample` under every
/// hypothesis, renormalize, clamp, renormalize.
pub fn update_posterior<T: Scalar>(
    belief: &BeliefVector<T>,
    sample: &SensorSample,
    est: &EstimatedDistributions<T>,
) -> BeliefVector<T> {
    assert_eq!(belief.len(), est.hypotheses(), "belief/estimate size mismatch");
    let mut probs: Vec<T> = belief
        .probs
        .iter()
        .enumerate()
        .map(|(m, &p)| p * est.likelihood(sample.sensor, m, sample.value))
        .collect();
    let total: T = probs.iter().copied().sum();
    assert!(
        total > T::zero() && total.is_finite(),
        "posterior normalizer must be positive"
    );
    for p in probs.iter_mut() {
        *p /= total;
    }
    clamp_renormalize(&mut probs);
    BeliefVector { probs }
}

/// Log-odds of a single hypothesis, `ln(pi / (1 - pi))`, on the clamped entry.
pub fn hypothesis_confidence<T: Scalar>(belief: &BeliefVector<T>, m: usize) -> T {
    let p = clamp_entry(belief.probs[m]);
    (p / (T::one() - p)).ln()
}

/// Belief-weighted average log-odds, `sum_m pi_m ln(pi_m / (1 - pi_m))`.
pub fn confidence<T: Scalar>(belief: &BeliefVector<T>) -> T {
    belief
        .probs
        .iter()
        .map(|&p| {
            let p = clamp_entry(p);
            p * (p / (T::one() - p)).ln()
        })
        .sum()
}

/// Acceptance and change-point thresholds on the posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds<T> {
    pub upper: T,
    pub lower: T,
}

impl<T: Scalar> Thresholds<T> {
    pub fn new(upper: T, lower: T) -> Result<Self> {
        let unit = |x: T| x > T::zero() && x < T::one();
        if !unit(upper) || !unit(lower) {
            return Err(Error::arg(format!(
                "thresholds must lie in (0, 1), got upper {upper} lower {lower}"
            )));
        }
        if lower >= upper {
            return Err(Error::arg(format!(
                "lower threshold {lower} must be below upper threshold {upper}"
            )));
        }
        Ok(Self { upper, lower })
    }

    /// Like [`new`](Self::new) but without requiring `lower < upper`. Used
    /// where the two thresholds act in separate phases of an episode.
    pub fn unordered(upper: T, lower: T) -> Result<Self> {
        let unit = |x: T| x > T::zero() && x < T::one();
        if !unit(upper) || !unit(lower) {
            return Err(Error::arg(format!(
                "thresholds must lie in (0, 1), got upper {upper} lower {lower}"
            )));
        }
        Ok(Self { upper, lower })
    }
}

/// Index of the accepted hypothesis, if the largest posterior reaches the
/// upper threshold.
pub fn check_accept<T: Scalar>(belief: &BeliefVector<T>, thr: &Thresholds<T>) -> Option<usize> {
    let (m, p) = belief.argmax();
    (p >= thr.upper).then_some(m)
}

/// True when the all-normal hypothesis has fallen to or below the lower threshold.
pub fn check_reject_null<T: Scalar>(belief: &BeliefVector<T>, thr: &Thresholds<T>) -> bool {
    belief.probs[0] <= thr.lower
}

/// Per-(sensor, hypothesis) counts of samples collected while that
/// hypothesis was revealed to be true.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleStore {
    sensors: usize,
    hypotheses: usize,
    totals: Vec<u64>,
    ones: Vec<u64>,
}

impl SampleStore {
    pub fn new(sensors: usize, hypotheses: usize) -> Self {
        Self {
            sensors,
            hypotheses,
            totals: vec![0; sensors * hypotheses],
            ones: vec![0; sensors * hypotheses],
        }
    }

    /// Rebuilds a store from raw counts laid out sensor-major.
    pub fn from_counts(sensors: usize, hypotheses: usize, totals: Vec<u64>, ones: Vec<u64>) -> Result<Self> {
        let n = sensors * hypotheses;
        if totals.len() != n || ones.len() != n {
            return Err(Error::arg("sample store count length mismatch"));
        }
        if totals.iter().zip(&ones).any(|(t, o)| o > t) {
            return Err(Error::arg("sample store has more ones than samples"));
        }
        Ok(Self {
            sensors,
            hypotheses,
            totals,
            ones,
        })
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    /// `(n_total, n_ones)` for 0-based `sensor` under hypothesis `m`.
    pub fn counts(&self, sensor: usize, m: usize) -> (u64, u64) {
        let k = sensor * self.hypotheses + m;
        (self.totals[k], self.ones[k])
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn ones(&self) -> &[u64] {
        &self.ones
    }

    /// Total number of stored samples.
    pub fn len(&self) -> u64 {
        self.totals.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn record(&mut self, sample: &SensorSample, m: usize) {
        let k = sample.sensor * self.hypotheses + m;
        self.totals[k] += 1;
        self.ones[k] += sample.value as u64;
    }

    /// Smoothed estimates from the current counts.
    pub fn estimates<T: Scalar>(&self) -> EstimatedDistributions<T> {
        let a = T::lit(LAPLACE);
        let p_one = self
            .totals
            .iter()
            .zip(&self.ones)
            .map(|(&n, &k)| (T::from_u64(k).unwrap() + a) / (T::from_u64(n).unwrap() + a + a))
            .collect();
        EstimatedDistributions {
            sensors: self.sensors,
            hypotheses: self.hypotheses,
            p_one,
        }
    }
}

/// Bernoulli parameter estimate `P(Y = 1)` of each sensor under each hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedDistributions<T> {
    sensors: usize,
    hypotheses: usize,
    p_one: Vec<T>,
}

impl<T: Scalar> EstimatedDistributions<T> {
    /// Every estimate at 0.5, as produced by an empty store.
    pub fn uninformative(sensors: usize, hypotheses: usize) -> Self {
        Self {
            sensors,
            hypotheses,
            p_one: vec![T::lit(0.5); sensors * hypotheses],
        }
    }

    /// The true emission probabilities of the environment.
    pub fn oracle(procs: &ProcessSet<T>, space: &HypothesisSpace) -> Self {
        let sensors = procs.count();
        let mut p_one = Vec::with_capacity(sensors * space.len());
        for i in 0..sensors {
            for h in space {
                p_one.push(procs.emission_prob(h, i));
            }
        }
        Self {
            sensors,
            hypotheses: space.len(),
            p_one,
        }
    }

    /// Builds estimates from explicit values laid out sensor-major.
    pub fn from_values(sensors: usize, hypotheses: usize, p_one: Vec<T>) -> Result<Self> {
        if p_one.len() != sensors * hypotheses {
            return Err(Error::arg("estimate length mismatch"));
        }
        if p_one.iter().any(|&p| !(p > T::zero() && p < T::one())) {
            return Err(Error::arg("estimates must lie strictly inside (0, 1)"));
        }
        Ok(Self {
            sensors,
            hypotheses,
            p_one,
        })
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    /// Estimated `P(Y = 1)` for 0-based `sensor` under hypothesis `m`.
    #[inline]
    pub fn p_one(&self, sensor: usize, m: usize) -> T {
        self.p_one[sensor * self.hypotheses + m]
    }

    #[inline]
    pub fn likelihood(&self, sensor: usize, m: usize, value: bool) -> T {
        let p = self.p_one(sensor, m);
        if value {
            p
        } else {
            T::one() - p
        }
    }
}

/// Files the episode's samples under the revealed hypothesis and refits.
pub fn reveal_and_refit<T: Scalar>(
    store: &mut SampleStore,
    samples: &[SensorSample],
    true_m: usize,
) -> EstimatedDistributions<T> {
    for s in samples {
        store.record(s, true_m);
    }
    store.estimates()
}
