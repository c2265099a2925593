//! Dense feed-forward network with hand-rolled backprop, generic over the
//! scalar so the same code path trains in f32 and gradient-checks in f64.

use crate::rng::{rng_from_seed, standard_normal};

/// Scalar abstraction: f32 for training speed, f64 for verification.
pub trait Real:
    Copy
    + PartialOrd
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln_1p(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln_1p(self) -> Self {
                self.ln_1p()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
        }
    };
}
impl_real!(f32);
impl_real!(f64);

/// Smooth ramp: `softplus(x) = max(x, 0) + ln(1 + e^{−|x|})`, with the
/// logistic function as its derivative. Smooth everywhere, so central
/// finite differences converge cleanly at every operating point.
fn softplus<T: Real>(x: T) -> T {
    let pos = if x > T::ZERO { x } else { T::ZERO };
    pos + (-x.abs()).exp().ln_1p()
}

fn logistic<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// Dot product with eight independent accumulator lanes; the lane sums keep
/// the loop free of a serial dependency so it vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for (lane, (x, y)) in acc.iter_mut().zip(xa.iter().zip(xb)) {
            *lane += *x * *y;
        }
    }
    let mut rest = T::ZERO;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        rest += *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + rest
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Linear,
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Softplus => softplus(x),
            Activation::Linear => x,
        }
    }

    fn derivative<T: Real>(self, preact: T) -> T {
        match self {
            Activation::Softplus => logistic(preact),
            Activation::Linear => T::ONE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Real> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `(out, in)`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorNet<T: Real> {
    pub layers: Vec<DenseLayer<T>>,
}

/// Per-layer parameter gradients, mirroring the net's layout.
#[derive(Debug, Clone)]
pub struct NetGradient<T: Real> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> NetGradient<T> {
    pub fn zeros_like(net: &RegressorNet<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![T::ZERO; l.weights.len()], vec![T::ZERO; l.bias.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in w.iter_mut().zip(ow) {
                *x += *y;
            }
            for (x, y) in b.iter_mut().zip(ob) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for (w, b) in self.layers.iter_mut() {
            for x in w.iter_mut() {
                *x = *x * s;
            }
            for x in b.iter_mut() {
                *x = *x * s;
            }
        }
    }
}

/// Activations and pre-activations of one batched forward pass, kept for
/// the backward pass.
pub struct ForwardCache<T: Real> {
    /// `layer_inputs[l]`: input rows to layer `l` (batch-major).
    pub layer_inputs: Vec<Vec<T>>,
    /// `preacts[l]`: pre-activation rows of layer `l`.
    pub preacts: Vec<Vec<T>>,
    pub outputs: Vec<T>,
    pub batch: usize,
}

impl<T: Real> RegressorNet<T> {
    /// Builds the net: softplus hidden layers (He-normal init) and a linear,
    /// zero-initialized output layer, so a fresh net predicts all zeros.
    pub fn init(input_dim: usize, hidden: &[usize], output_dim: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &width in hidden {
            let std = (2.0 / prev as f64).sqrt();
            let weights = (0..width * prev)
                .map(|_| T::from_f64(std * standard_normal(&mut rng)))
                .collect();
            layers.push(DenseLayer {
                in_dim: prev,
                out_dim: width,
                weights,
                bias: vec![T::ZERO; width],
                activation: Activation::Softplus,
            });
            prev = width;
        }
        layers.push(DenseLayer {
            in_dim: prev,
            out_dim: output_dim,
            weights: vec![T::ZERO; output_dim * prev],
            bias: vec![T::ZERO; output_dim],
            activation: Activation::Linear,
        });
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|w| w.is_finite()) && l.bias.iter().all(|b| b.is_finite())
        })
    }

    /// Batched forward pass keeping the caches needed by `backward`.
    /// `inputs` is batch-major, `batch × input_dim`. Weight rows are the
    /// outer loop so each row streams through cache once per batch.
    pub fn forward_batch(&self, inputs: &[T], batch: usize) -> ForwardCache<T> {
        assert_eq!(inputs.len(), batch * self.input_dim());
        let mut layer_inputs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut preacts: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut current = inputs.to_vec();
        for layer in &self.layers {
            let mut z = vec![T::ZERO; batch * layer.out_dim];
            for o in 0..layer.out_dim {
                let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let bias = layer.bias[o];
                for b in 0..batch {
                    let x = &current[b * layer.in_dim..(b + 1) * layer.in_dim];
                    z[b * layer.out_dim + o] = bias + dot(wrow, x);
                }
            }
            let activated: Vec<T> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            layer_inputs.push(current);
            preacts.push(z);
            current = activated;
        }
        ForwardCache {
            layer_inputs,
            preacts,
            outputs: current,
            batch,
        }
    }

    /// Single-sample forward without caches.
    pub fn forward_one(&self, input: &[T]) -> Vec<T> {
        self.forward_batch(input, 1).outputs
    }

    /// Backprop from `d_outputs` (batch-major `batch × output_dim`,
    /// gradients of the loss w.r.t. the net outputs) to parameter gradients.
    pub fn backward(&self, cache: &ForwardCache<T>, d_outputs: &[T]) -> NetGradient<T> {
        assert_eq!(d_outputs.len(), cache.batch * self.output_dim());
        let mut grad = NetGradient::zeros_like(self);
        let batch = cache.batch;
        let mut upstream = d_outputs.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let preact = &cache.preacts[l];
            let inputs = &cache.layer_inputs[l];
            let (dw, db) = &mut grad.layers[l];
            let mut downstream = vec![T::ZERO; batch * layer.in_dim];
            // Same row-outer order as the forward pass: each weight and
            // gradient row streams once per batch.
            for o in 0..layer.out_dim {
                let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let dwrow = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for b in 0..batch {
                    let delta = upstream[b * layer.out_dim + o]
                        * layer.activation.derivative(preact[b * layer.out_dim + o]);
                    if delta.to_f64() == 0.0 {
                        continue;
                    }
                    db[o] += delta;
                    let x = &inputs[b * layer.in_dim..(b + 1) * layer.in_dim];
                    let dx = &mut downstream[b * layer.in_dim..(b + 1) * layer.in_dim];
                    for (dwi, xi) in dwrow.iter_mut().zip(x) {
                        *dwi += delta * *xi;
                    }
                    for (dxi, wi) in dx.iter_mut().zip(wrow) {
                        *dxi += delta * *wi;
                    }
                }
            }
            upstream = downstream;
        }
        grad
    }

    /// Converts parameter precision (used for f64 gradient verification).
    pub fn convert<U: Real>(&self) -> RegressorNet<U> {
        RegressorNet {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weights: l.weights.iter().map(|w| U::from_f64(w.to_f64())).collect(),
                    bias: l.bias.iter().map(|b| U::from_f64(b.to_f64())).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}
