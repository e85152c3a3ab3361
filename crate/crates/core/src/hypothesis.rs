//! Processes, hypotheses over which of them are abnormal, and the noisy
//! binary sensors that observe them.
//!
//! Sensors are 0-based inside the crate. Files and user-facing output use
//! 1-based sensor numbers.

use rand::Rng as _;

use crate::belief::BeliefVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::Rng;

/// Largest supported process count; `2^20` hypotheses.
pub const MAX_PROCESSES: usize = 20;

/// The monitored processes: how likely each is to be abnormal and how
/// often a sensor reports the flipped state.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSet<T> {
    abnormal_probs: Vec<T>,
    flip_prob: T,
}

impl<T: Scalar> ProcessSet<T> {
    pub fn new(abnormal_probs: Vec<T>, flip_prob: T) -> Result<Self> {
        if abnormal_probs.is_empty() {
            return Err(Error::arg("at least one process is required"));
        }
        if abnormal_probs.len() > MAX_PROCESSES {
            return Err(Error::arg(format!(
                "{} processes exceeds the maximum of {MAX_PROCESSES}",
                abnormal_probs.len()
            )));
        }
        for (i, &p) in abnormal_probs.iter().enumerate() {
            if !(p > T::zero() && p < T::one()) {
                return Err(Error::arg(format!(
                    "abnormal probability of process {} must lie in (0, 1), got {p}",
                    i + 1
                )));
            }
        }
        if !(flip_prob >= T::zero() && flip_prob < T::lit(0.5)) {
            return Err(Error::arg(format!(
                "flip probability must lie in [0, 0.5), got {flip_prob}"
            )));
        }
        Ok(Self {
            abnormal_probs,
            flip_prob,
        })
    }

    pub fn count(&self) -> usize {
        self.abnormal_probs.len()
    }

    pub fn abnormal_probs(&self) -> &[T] {
        &self.abnormal_probs
    }

    pub fn flip_prob(&self) -> T {
        self.flip_prob
    }

    /// Probability that `sensor` reports 1 when `hypothesis` is true.
    pub fn emission_prob(&self, hypothesis: &Hypothesis, sensor: usize) -> T {
        if hypothesis.contains(sensor) {
            T::one() - self.flip_prob
        } else {
            self.flip_prob
        }
    }
}

/// One assignment of normal/abnormal states to every process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hypothesis {
    index: usize,
    mask: u32,
}

impl Hypothesis {
    /// Position in the canonical ordering.
    pub fn index(&self) -> usize {
        self.index
    }

    /// Bit `i` is set when process `i` (0-based) is abnormal.
    pub fn mask(&self) -> u32 {
        self.mask
    }

    /// Whether the 0-based process/sensor `sensor` is abnormal.
    #[inline]
    pub fn contains(&self, sensor: usize) -> bool {
        self.mask >> sensor & 1 == 1
    }

    /// Abnormal processes as 1-based indices, ascending.
    pub fn members(&self) -> Vec<usize> {
        (0..32).filter(|&i| self.contains(i)).map(|i| i + 1).collect()
    }

    pub fn cardinality(&self) -> u32 {
        self.mask.count_ones()
    }
}

/// All `2^N` hypotheses in canonical order: ascending cardinality, then
/// lexicographic by member indices. Index 0 is the all-normal hypothesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypothesisSpace {
    processes: usize,
    hypotheses: Vec<Hypothesis>,
    index_of_mask: Vec<u32>,
}

impl HypothesisSpace {
    pub fn processes(&self) -> usize {
        self.processes
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn get(&self, index: usize) -> &Hypothesis {
        &self.hypotheses[index]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Hypothesis> {
        self.hypotheses.iter()
    }

    pub fn by_mask(&self, mask: u32) -> Option<&Hypothesis> {
        self.index_of_mask
            .get(mask as usize)
            .map(|&i| &self.hypotheses[i as usize])
    }
}

impl<'a> IntoIterator for &'a HypothesisSpace {
    type Item = &'a Hypothesis;
    type IntoIter = std::slice::Iter<'a, Hypothesis>;

    fn into_iter(self) -> Self::IntoIter {
        self.hypotheses.iter()
    }
}

/// Pushes every `k`-subset of `0..n` onto `out` in lexicographic order.
fn push_combinations(n: usize, k: usize, out: &mut Vec<u32>) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().fold(0u32, |m, &i| m | 1 << i));
        // rightmost position that can still advance
        let Some(pos) = (0..k).rev().find(|&p| idx[p] < n - k + p) else {
            return;
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Enumerates the hypothesis space for `n` processes.
pub fn enumerate_hypotheses(n: usize) -> Result<HypothesisSpace> {
    if n == 0 {
        return Err(Error::arg("process count must be at least 1"));
    }
    if n > MAX_PROCESSES {
        return Err(Error::arg(format!(
            "process count {n} exceeds the maximum of {MAX_PROCESSES}"
        )));
    }
    let total = 1usize << n;
    let mut masks = Vec::with_capacity(total);
    masks.push(0);
    for k in 1..=n {
        push_combinations(n, k, &mut masks);
    }
    debug_assert_eq!(masks.len(), total);
    let mut index_of_mask = vec![0u32; total];
    let hypotheses = masks
        .into_iter()
        .enumerate()
        .map(|(index, mask)| {
            index_of_mask[mask as usize] = index as u32;
            Hypothesis { index, mask }
        })
        .collect();
    Ok(HypothesisSpace {
        processes: n,
        hypotheses,
        index_of_mask,
    })
}

/// Joint prior over hypotheses from independent per-process abnormality.
pub fn prior_belief<T: Scalar>(procs: &ProcessSet<T>, space: &HypothesisSpace) -> Result<BeliefVector<T>> {
    if procs.count() != space.processes() {
        return Err(Error::arg(format!(
            "process set has {} processes but the hypothesis space was built for {}",
            procs.count(),
            space.processes()
        )));
    }
    let probs = space
        .iter()
        .map(|h| {
            procs
                .abnormal_probs()
                .iter()
                .enumerate()
                .fold(
                    T::one(),
                    |acc, (i, &p)| {
                        if h.contains(i) {
                            acc * p
                        } else {
                            acc * (T::one() - p)
                        }
                    },
                )
        })
        .collect();
    Ok(BeliefVector::from_probs_unchecked(probs))
}

/// Draws an index from a categorical distribution. Zero-mass entries are
/// never returned.
pub fn sample_categorical<T: Scalar>(probs: &[T], rng: &mut Rng) -> usize {
    let total: f64 = probs.iter().map(|p| p.to_f64_lossy()).sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.to_f64_lossy();
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draws the true hypothesis for a new episode from the prior.
pub fn draw_hypothesis<T: Scalar>(prior: &BeliefVector<T>, space: &HypothesisSpace, rng: &mut Rng) -> Hypothesis {
    *space.get(sample_categorical(prior.probs(), rng))
}

/// The hidden truth the environment samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrueState {
    pub current: Hypothesis,
    pub change_time: u64,
}

impl TrueState {
    pub fn new(current: Hypothesis, change_time: u64) -> Self {
        Self { current, change_time }
    }
}

/// One binary reading from one sensor. `sensor` is 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorSample {
    pub sensor: usize,
    pub value: bool,
    pub time: u64,
}

/// Samples `sensor` (0-based) under the true state.
pub fn observe<T: Scalar>(
    state: &TrueState,
    sensor: usize,
    time: u64,
    procs: &ProcessSet<T>,
    rng: &mut Rng,
) -> Result<SensorSample> {
    if sensor >= procs.count() {
        return Err(Error::arg(format!(
            "sensor {} out of range 1..={}",
            sensor + 1,
            procs.count()
        )));
    }
    let p = procs.emission_prob(&state.current, sensor).to_f64_lossy();
    Ok(SensorSample {
        sensor,
        value: rng.gen::<f64>() < p,
        time,
    })
}
