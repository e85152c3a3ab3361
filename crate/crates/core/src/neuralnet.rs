//! Small dense feed-forward networks with hand-written forward and backward
//! passes. Only what the actor and critic need: rectifier hidden layers and
//! a softmax or identity output.
//!
//! Weight matrices are stored `input_dim x output_dim`, row-major, so the
//! forward pass is a sequence of contiguous `axpy` updates.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::Rng;

/// Actor learning rate.
pub const ACTOR_LEARNING_RATE: f64 = 0.0005;
/// Critic learning rate.
pub const CRITIC_LEARNING_RATE: f64 = 0.01;
/// Per-episode learning rate decay factor.
pub const DEFAULT_DECAY: f64 = 0.999;
/// Learning rates never decay below this value.
pub const LEARNING_RATE_FLOOR: f64 = 1e-6;

const ACTOR_HIDDEN: [usize; 2] = [200, 200];
const CRITIC_HIDDEN: [usize; 2] = [200, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Softmax => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Softmax),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    spec: LayerSpec,
    /// `input_dim x output_dim`, row-major.
    weights: Vec<T>,
    biases: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(spec: LayerSpec, weights: Vec<T>, biases: Vec<T>) -> Result<Self> {
        if spec.input_dim == 0 || spec.output_dim == 0 {
            return Err(Error::arg("layer dimensions must be positive"));
        }
        if weights.len() != spec.input_dim * spec.output_dim || biases.len() != spec.output_dim {
            return Err(Error::arg("layer parameter shape does not match its spec"));
        }
        if weights.iter().chain(&biases).any(|w| !w.is_finite()) {
            return Err(Error::arg("layer parameters must be finite"));
        }
        Ok(Self { spec, weights, biases })
    }

    fn zeros(spec: LayerSpec) -> Self {
        Self {
            spec,
            weights: vec![T::zero(); spec.input_dim * spec.output_dim],
            biases: vec![T::zero(); spec.output_dim],
        }
    }

    fn init_uniform(spec: LayerSpec, rng: &mut Rng) -> Self {
        let bound = 1.0 / (spec.input_dim as f64).sqrt();
        let weights = (0..spec.input_dim * spec.output_dim)
            .map(|_| T::lit(rng.gen_range(-bound..=bound)))
            .collect();
        Self {
            spec,
            weights,
            biases: vec![T::zero(); spec.output_dim],
        }
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn biases(&self) -> &[T] {
        &self.biases
    }

    fn forward_into(&self, input: &[T], out: &mut Vec<T>) {
        let n_out = self.spec.output_dim;
        out.clear();
        out.extend_from_slice(&self.biases);
        for (row, &x) in self.weights.chunks_exact(n_out).zip(input) {
            if x == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        match self.spec.activation {
            Activation::Relu => {
                for o in out.iter_mut() {
                    *o = o.max(T::zero());
                }
            }
            Activation::Softmax => softmax_in_place(out),
            Activation::Identity => {}
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut v = logits.to_vec();
    softmax_in_place(&mut v);
    v
}

fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Activations recorded by a forward pass: the input followed by the
/// post-activation output of every layer.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    activations: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().expect("cache holds the input")
    }
}

/// Parameter gradient, shaped like the network it was taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradient<T> {
    /// Flattened in the same order as [`DenseNet::params`].
    pub fn flatten(&self) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

/// A feed-forward network with its own SGD learning rate and decay.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    layers: Vec<Layer<T>>,
    learning_rate: T,
    decay: T,
}

impl<T: Scalar> DenseNet<T> {
    pub fn new(layers: Vec<Layer<T>>, learning_rate: T, decay: T) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::arg("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].spec.output_dim != pair[1].spec.input_dim {
                return Err(Error::arg("adjacent layer dimensions do not chain"));
            }
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|l| l.spec.activation == Activation::Softmax)
        {
            return Err(Error::arg("softmax is only supported on the output layer"));
        }
        if !(learning_rate > T::zero() && learning_rate.is_finite()) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if !(decay > T::zero() && decay <= T::one()) {
            return Err(Error::arg("decay must lie in (0, 1]"));
        }
        Ok(Self {
            layers,
            learning_rate,
            decay,
        })
    }

    fn from_specs(specs: &[LayerSpec], rng: Option<&mut Rng>, learning_rate: f64) -> Self {
        let layers = match rng {
            Some(rng) => specs.iter().map(|&s| Layer::init_uniform(s, rng)).collect(),
            None => specs.iter().map(|&s| Layer::zeros(s)).collect(),
        };
        Self {
            layers,
            learning_rate: T::lit(learning_rate),
            decay: T::lit(DEFAULT_DECAY),
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().spec.output_dim
    }

    pub fn learning_rate(&self) -> T {
        self.learning_rate
    }

    pub fn decay(&self) -> T {
        self.decay
    }

    pub fn with_learning_rate(mut self, rate: T) -> Self {
        self.learning_rate = rate;
        self
    }

    pub fn with_decay(mut self, decay: T) -> Self {
        self.decay = decay;
        self
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::arg("parameter vector length mismatch"));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Vec<T> {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            l.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_cached(&self, input: &[T]) -> ForwardCache<T> {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for l in &self.layers {
            let mut out = Vec::with_capacity(l.spec.output_dim);
            l.forward_into(activations.last().unwrap(), &mut out);
            activations.push(out);
        }
        ForwardCache { activations }
    }

    /// Gradient of an objective whose derivative with respect to the last
    /// layer's pre-activation is `out_grad`.
    pub fn backward(&self, cache: &ForwardCache<T>, out_grad: &[T]) -> Gradient<T> {
        let n = self.layers.len();
        let mut weights = vec![Vec::new(); n];
        let mut biases = vec![Vec::new(); n];
        let mut delta = out_grad.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[k];
            let n_out = l.spec.output_dim;
            let mut gw = vec![T::zero(); l.weights.len()];
            for (row, &x) in gw.chunks_exact_mut(n_out).zip(input) {
                if x == T::zero() {
                    continue;
                }
                for (g, &d) in row.iter_mut().zip(&delta) {
                    *g = d * x;
                }
            }
            weights[k] = gw;
            biases[k] = delta.clone();
            if k > 0 {
                delta = propagate(l, input, &delta, self.layers[k - 1].spec.activation);
            }
        }
        Gradient { weights, biases }
    }

    /// Adds `scale * gradient` to the parameters, where the gradient is the
    /// one [`backward`](Self::backward) would return. Avoids materializing it.
    fn ascend_fused(&mut self, cache: &ForwardCache<T>, out_grad: &[T], scale: T) {
        let mut delta = out_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let input = &cache.activations[k];
            let next = (k > 0).then(|| propagate(&self.layers[k], input, &delta, self.layers[k - 1].spec.activation));
            let l = &mut self.layers[k];
            let n_out = l.spec.output_dim;
            for (row, &x) in l.weights.chunks_exact_mut(n_out).zip(input) {
                if x == T::zero() {
                    continue;
                }
                let s = scale * x;
                for (w, &d) in row.iter_mut().zip(&delta) {
                    *w += s * d;
                }
            }
            for (b, &d) in l.biases.iter_mut().zip(&delta) {
                *b += scale * d;
            }
            if let Some(next) = next {
                delta = next;
            }
        }
    }

    pub fn apply_gradient(&mut self, grad: &Gradient<T>, scale: T) {
        for (l, (gw, gb)) in self.layers.iter_mut().zip(grad.weights.iter().zip(&grad.biases)) {
            for (w, &g) in l.weights.iter_mut().zip(gw) {
                *w += scale * g;
            }
            for (b, &g) in l.biases.iter_mut().zip(gb) {
                *b += scale * g;
            }
        }
    }

    fn check_softmax_output(&self) {
        assert_eq!(
            self.layers.last().unwrap().spec.activation,
            Activation::Softmax,
            "policy gradient needs a softmax output"
        );
    }

    fn check_scalar_output(&self) {
        assert_eq!(self.output_dim(), 1, "value network must have one output");
    }

    /// Gradient of `ln softmax(net(state))[action]`.
    pub fn log_prob_gradient(&self, state: &[T], action: usize) -> Gradient<T> {
        self.check_softmax_output();
        let cache = self.forward_cached(state);
        self.backward(&cache, &log_prob_out_grad(cache.output(), action))
    }

    /// Gradient of the squared residual `(target - net(state))^2`.
    pub fn squared_residual_gradient(&self, state: &[T], target: T) -> Gradient<T> {
        self.check_scalar_output();
        let cache = self.forward_cached(state);
        let residual = target - cache.output()[0];
        self.backward(&cache, &[-(residual + residual)])
    }

    /// Policy-gradient ascent step: `theta += lr * delta * grad ln mu(state, action)`.
    pub fn actor_step(&mut self, state: &[T], action: usize, delta: T) -> Result<()> {
        if !delta.is_finite() {
            return Err(Error::arg(format!("TD error must be finite, got {delta}")));
        }
        self.check_softmax_output();
        if action >= self.output_dim() {
            return Err(Error::arg(format!("action {action} out of range")));
        }
        if delta == T::zero() {
            return Ok(());
        }
        let cache = self.forward_cached(state);
        let g = log_prob_out_grad(cache.output(), action);
        let scale = self.learning_rate * delta;
        self.ascend_fused(&cache, &g, scale);
        Ok(())
    }

    /// Semi-gradient descent step on `(target - V(state))^2`, target held fixed.
    pub fn critic_step(&mut self, state: &[T], target: T) -> Result<()> {
        if !target.is_finite() {
            return Err(Error::arg(format!("critic target must be finite, got {target}")));
        }
        self.check_scalar_output();
        let cache = self.forward_cached(state);
        let residual = target - cache.output()[0];
        if residual == T::zero() {
            return Ok(());
        }
        // d/dV (target - V)^2 = -2 residual; descend
        let scale = self.learning_rate;
        self.ascend_fused(&cache, &[residual + residual], scale);
        Ok(())
    }

    /// Multiplies the learning rate by the decay factor, floored.
    pub fn decay_learning_rate(&mut self) {
        self.learning_rate = (self.learning_rate * self.decay).max(T::lit(LEARNING_RATE_FLOOR));
    }
}

/// Pulls `delta` back through `layer` onto its input, which was produced by
/// an activation of kind `input_activation`.
fn propagate<T: Scalar>(layer: &Layer<T>, input: &[T], delta: &[T], input_activation: Activation) -> Vec<T> {
    let rectified = input_activation == Activation::Relu;
    layer
        .weights
        .chunks_exact(layer.spec.output_dim)
        .zip(input)
        .map(|(row, &x)| {
            if !rectified || x > T::zero() {
                row.iter().zip(delta).map(|(&w, &d)| w * d).sum()
            } else {
                T::zero()
            }
        })
        .collect()
}

fn log_prob_out_grad<T: Scalar>(probs: &[T], action: usize) -> Vec<T> {
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == action { T::one() - p } else { -p })
        .collect()
}

fn chain_specs(input: usize, hidden: &[usize], output: usize, head: Activation) -> Vec<LayerSpec> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims.windows(2)
        .enumerate()
        .map(|(k, d)| LayerSpec {
            input_dim: d[0],
            output_dim: d[1],
            activation: if k == hidden.len() { head } else { Activation::Relu },
        })
        .collect()
}

/// Policy network: `input -> 200 relu -> 200 relu -> actions softmax`.
pub fn build_actor<T: Scalar>(input_dim: usize, actions: usize, rng: &mut Rng) -> DenseNet<T> {
    let specs = chain_specs(input_dim, &ACTOR_HIDDEN, actions, Activation::Softmax);
    DenseNet::from_specs(&specs, Some(rng), ACTOR_LEARNING_RATE)
}

/// Value network: `input -> 200 relu -> 100 relu -> 1`.
pub fn build_critic<T: Scalar>(input_dim: usize, rng: &mut Rng) -> DenseNet<T> {
    let specs = chain_specs(input_dim, &CRITIC_HIDDEN, 1, Activation::Identity);
    DenseNet::from_specs(&specs, Some(rng), CRITIC_LEARNING_RATE)
}

/// Actor with every parameter zero.
pub fn zero_actor<T: Scalar>(input_dim: usize, actions: usize) -> DenseNet<T> {
    let specs = chain_specs(input_dim, &ACTOR_HIDDEN, actions, Activation::Softmax);
    DenseNet::from_specs(&specs, None, ACTOR_LEARNING_RATE)
}

/// Critic with every parameter zero.
pub fn zero_critic<T: Scalar>(input_dim: usize) -> DenseNet<T> {
    let specs = chain_specs(input_dim, &CRITIC_HIDDEN, 1, Activation::Identity);
    DenseNet::from_specs(&specs, None, CRITIC_LEARNING_RATE)
}

/// Applies one decay step to both networks' learning rates.
pub fn decay_learning_rates<T: Scalar>(actor: &mut DenseNet<T>, critic: &mut DenseNet<T>) {
    actor.decay_learning_rate();
    critic.decay_learning_rate();
}
