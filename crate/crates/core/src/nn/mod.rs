//! Minimal dense/convolutional building blocks with hand-written backward passes.
//!
//! Everything is generic over [`Scalar`] so that training runs in `f32` while
//! gradient checks run in `f64`.

mod layers;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

pub use layers::{CausalConv, Linear, StridedConv};

pub trait Scalar:
    LinalgScalar
    + Float
    + ScalarOperand
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// A model whose trainable tensors can be enumerated in a fixed order.
pub trait Params<S: Scalar> {
    /// Names and views of every trainable tensor, in a stable order.
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, S>)>;

    /// Mutable views of the same tensors, in the same order.
    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, S>>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero(&mut self) {
        for mut t in self.tensors_mut() {
            t.fill(S::zero());
        }
    }

    fn scale(&mut self, factor: S) {
        for mut t in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v.f64() * v.f64()).sum::<f64>())
            .sum()
    }
}

/// Uniform initialisation in `[-limit, limit]`.
pub fn uniform<S: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), limit: f64) -> Array2<S> {
    Array2::from_shape_simple_fn(shape, || S::of(rng.gen_range(-limit..=limit)))
}

/// He-uniform limit for a ReLU layer with `fan_in` inputs.
pub fn he_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

/// Glorot-uniform limit.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

pub fn relu<S: Scalar>(x: &mut Array2<S>) {
    x.mapv_inplace(|v| v.max(S::zero()));
}

/// Zeroes `grad` wherever the forward ReLU output was not positive.
pub fn relu_backward<S: Scalar>(grad: &mut Array2<S>, out: &Array2<S>) {
    ndarray::Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= S::zero() {
            *g = S::zero();
        }
    });
}

/// Inverted-dropout mask: entries are `0` or `1/(1-p)`.
pub fn dropout_mask<S: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), p: f64) -> Array2<S> {
    let keep = S::of(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < p { S::zero() } else { keep })
}

/// Row-wise softmax, numerically stabilised.
pub fn softmax_rows<S: Scalar>(logits: &Array2<S>) -> Array2<S> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: S = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn softmax<S: Scalar>(logits: &[S], temperature: f64) -> Vec<f64> {
    let t = temperature.max(1e-12);
    let scaled: Vec<f64> = logits.iter().map(|v| v.f64() / t).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Summed next-token cross-entropy and its gradient w.r.t. the logits.
///
/// The returned loss is the sum over rows; the gradient is scaled by
/// `grad_scale` so callers can fold in batch averaging.
pub fn cross_entropy<S: Scalar>(logits: &Array2<S>, targets: &[u32], grad_scale: S) -> (f64, Array2<S>) {
    debug_assert_eq!(logits.nrows(), targets.len());
    let mut probs = softmax_rows(logits);
    let mut loss = 0.0;
    for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
        let p = row[t as usize].f64().max(1e-300);
        loss -= p.ln();
        row[t as usize] -= S::one();
        row.mapv_inplace(|v| v * grad_scale);
    }
    (loss, probs)
}

/// Summed cross-entropy without a gradient.
pub fn cross_entropy_loss<S: Scalar>(logits: &Array2<S>, targets: &[u32]) -> f64 {
    let mut loss = 0.0;
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max).f64();
        let lse = max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
        loss += lse - row[t as usize].f64();
    }
    loss
}

pub fn sum_rows<S: Scalar>(x: &Array2<S>) -> Array1<S> {
    x.sum_axis(Axis(0))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update of `params` from `grads`; both must list tensors in the same order.
    pub fn update<P: Params<S> + ?Sized, G: Params<S> + ?Sized>(&mut self, params: &mut P, grads: &G) {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        assert_eq!(grads.len(), params.len(), "parameter/gradient layout mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as f64;
        let lr = self.learning_rate * (1.0 - self.beta2.powf(t)).sqrt() / (1.0 - self.beta1.powf(t));
        let (b1, b2, eps, lr) = (S::of(self.beta1), S::of(self.beta2), S::of(self.eps), S::of(lr));
        let (one_b1, one_b2) = (S::one() - b1, S::one() - b2);
        for (i, (p, (_, g))) in params.iter_mut().zip(&grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= lr * *m / (v.sqrt() + eps);
            }
        }
    }
}

/// Scales gradients down so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<S: Scalar, G: Params<S> + ?Sized>(grads: &mut G, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm && norm.is_finite() {
        grads.scale(S::of(max_norm / norm));
    }
    norm
}
