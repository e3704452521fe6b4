//! Dense layers with hand-written backward passes, the DeepSet set
//! function, cross-entropy loss and the Adam optimizer.
//!
//! Everything is generic over [`Real`] so the same code trains in `f32`
//! and is gradient-checked in `f64`. Reductions run in a fixed left to
//! right order, so results are reproducible bit for bit.

use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("representable")
    }

    fn to_f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Training mode carries the generator used for dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Named views over every learnable tensor, in a stable order.
pub trait Parameters<T> {
    fn tensors(&self) -> Vec<(String, &[T])>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero(&mut self)
    where
        T: Copy + Default,
    {
        for t in self.tensors_mut() {
            t.fill(T::default());
        }
    }
}

/// `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Linear<T> {
    /// Uniform `±sqrt(6 / (in + out))` weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || T::from_f64(rng.gen_range(-bound..=bound)));
        Self {
            weight,
            bias: Array1::from_elem(fan_out, T::zero()),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::from_elem((fan_in, fan_out), T::zero()),
            bias: Array1::from_elem(fan_out, T::zero()),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.fan_in() {
            return Err(Error::shape(format!(
                "linear layer expects width {}, got {}",
                self.fan_in(),
                x.ncols()
            )));
        }
        let mut y = x.dot(&self.weight);
        for mut row in y.outer_iter_mut() {
            row += &self.bias;
        }
        Ok(y)
    }

    /// Accumulates weight and bias gradients into `grads` and returns the
    /// gradient with respect to `x`.
    pub fn backward(&self, x: &Array2<T>, grad_out: &Array2<T>, grads: &mut Linear<T>) -> Array2<T> {
        grads.weight += &x.t().dot(grad_out);
        for row in grad_out.outer_iter() {
            grads.bias += &row;
        }
        grad_out.dot(&self.weight.t())
    }
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        vec![
            ("weight".into(), self.weight.as_slice().expect("contiguous")),
            ("bias".into(), self.bias.as_slice().expect("contiguous")),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.weight.as_slice_mut().expect("contiguous"),
            self.bias.as_slice_mut().expect("contiguous"),
        ]
    }
}

pub fn relu<T: Real>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad` where the pre-activation was positive.
pub fn relu_backward<T: Real>(pre: &Array2<T>, grad: &Array2<T>) -> Array2<T> {
    let mut out = grad.clone();
    out.zip_mut_with(pre, |g, &p| {
        if p <= T::zero() {
            *g = T::zero();
        }
    });
    out
}

/// Inverted dropout mask: kept units are scaled by `1 / (1 - rate)`.
/// Returns `None` when the layer is the identity (eval mode or rate 0).
pub fn dropout_mask<T: Real>(shape: (usize, usize), rate: f64, mode: &mut Mode<'_>) -> Option<Array2<T>> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let scale = T::from_f64(1.0 / (1.0 - rate));
            Some(Array2::from_shape_simple_fn(shape, || {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    scale
                }
            }))
        }
        _ => None,
    }
}

pub fn dropout<T: Real>(x: &Array2<T>, rate: f64, mode: &mut Mode<'_>) -> (Array2<T>, Option<Array2<T>>) {
    match dropout_mask(x.dim(), rate, mode) {
        Some(mask) => (x * &mask, Some(mask)),
        None => (x.clone(), None),
    }
}

pub fn dropout_backward<T: Real>(mask: Option<&Array2<T>>, grad: &Array2<T>) -> Array2<T> {
    match mask {
        Some(m) => grad * m,
        None => grad.clone(),
    }
}

/// Fully connected network. Hidden layers use ReLU followed by dropout;
/// the output layer applies ReLU only when `relu_output` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub relu_output: bool,
    pub dropout: f64,
}

struct LayerTape<T> {
    input: Array2<T>,
    pre: Array2<T>,
    mask: Option<Array2<T>>,
}

pub struct MlpTape<T> {
    layers: Vec<LayerTape<T>>,
}

impl<T: Real> Mlp<T> {
    /// Network with layer widths `widths[0] -> widths[1] -> …`.
    pub fn init(widths: &[usize], relu_output: bool, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self {
            layers,
            relu_output,
            dropout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.fan_in(), l.fan_out()))
                .collect(),
            relu_output: self.relu_output,
            dropout: self.dropout,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(Linear::fan_in).collect();
        w.extend(self.layers.last().map(Linear::fan_out));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, Linear::fan_in)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    pub fn forward(&self, x: &Array2<T>, mode: &mut Mode<'_>) -> Result<(Array2<T>, MlpTape<T>)> {
        let mut tape = MlpTape {
            layers: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h)?;
            let hidden = i < last;
            let act = if hidden || self.relu_output {
                relu(&pre)
            } else {
                pre.clone()
            };
            let (out, mask) = if hidden {
                dropout(&act, self.dropout, mode)
            } else {
                (act, None)
            };
            tape.layers.push(LayerTape { input: h, pre, mask });
            h = out;
        }
        Ok((h, tape))
    }

    pub fn backward(&self, tape: &MlpTape<T>, grad_out: &Array2<T>, grads: &mut Mlp<T>) -> Array2<T> {
        let mut g = grad_out.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, (layer, rec)) in self.layers.iter().zip(&tape.layers).enumerate().rev() {
            let hidden = i < last;
            if hidden {
                g = dropout_backward(rec.mask.as_ref(), &g);
            }
            if hidden || self.relu_output {
                g = relu_backward(&rec.pre, &g);
            }
            g = layer.backward(&rec.input, &g, &mut grads.layers[i]);
        }
        g
    }
}

impl<T: Real> Parameters<T> for Mlp<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("layer{i}.{name}"), t))
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// Sums each run of `group` consecutive rows.
pub fn sum_groups<T: Real>(x: &Array2<T>, group: usize) -> Result<Array2<T>> {
    if group == 0 || !x.nrows().is_multiple_of(group) {
        return Err(Error::shape(format!(
            "{} rows do not split into groups of {group}",
            x.nrows()
        )));
    }
    let mut out = Array2::from_elem((x.nrows() / group, x.ncols()), T::zero());
    for (i, row) in x.outer_iter().enumerate() {
        let mut acc = out.row_mut(i / group);
        acc += &row;
    }
    Ok(out)
}

/// Gradient of [`sum_groups`]: every row of a group receives its group's
/// gradient.
pub fn sum_groups_backward<T: Real>(grad: &Array2<T>, group: usize) -> Array2<T> {
    let mut out = Array2::from_elem((grad.nrows() * group, grad.ncols()), T::zero());
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        row.assign(&grad.row(i / group));
    }
    out
}

/// Sums consecutive row segments of the given sizes.
pub fn segment_sum<T: Real>(x: &Array2<T>, sizes: &[usize]) -> Result<Array2<T>> {
    if sizes.iter().sum::<usize>() != x.nrows() {
        return Err(Error::shape(format!(
            "segments cover {} rows, input has {}",
            sizes.iter().sum::<usize>(),
            x.nrows()
        )));
    }
    let mut out = Array2::from_elem((sizes.len(), x.ncols()), T::zero());
    let mut start = 0;
    for (s, &len) in sizes.iter().enumerate() {
        let mut acc = out.row_mut(s);
        for r in start..start + len {
            acc += &x.row(r);
        }
        start += len;
    }
    Ok(out)
}

pub fn segment_sum_backward<T: Real>(grad: &Array2<T>, sizes: &[usize]) -> Array2<T> {
    let total = sizes.iter().sum();
    let mut out = Array2::from_elem((total, grad.ncols()), T::zero());
    let mut r = 0;
    for (s, &len) in sizes.iter().enumerate() {
        for _ in 0..len {
            out.row_mut(r).assign(&grad.row(s));
            r += 1;
        }
    }
    out
}

/// `ρ(Σ φ(x_i))` over sets stored as consecutive row groups.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSet<T> {
    pub inner: Mlp<T>,
    pub outer: Mlp<T>,
}

pub struct DeepSetTape<T> {
    inner: MlpTape<T>,
    outer: MlpTape<T>,
    set_size: usize,
}

impl<T: Real> DeepSet<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            inner: self.inner.zeros_like(),
            outer: self.outer.zeros_like(),
        }
    }

    /// `x` holds `m` sets of `set_size` rows each; returns `m` rows.
    pub fn forward(&self, x: &Array2<T>, set_size: usize, mode: &mut Mode<'_>) -> Result<(Array2<T>, DeepSetTape<T>)> {
        if set_size == 0 {
            return Err(Error::shape("empty set"));
        }
        let (phi, inner) = self.inner.forward(x, mode)?;
        let pooled = sum_groups(&phi, set_size)?;
        let (out, outer) = self.outer.forward(&pooled, mode)?;
        Ok((out, DeepSetTape { inner, outer, set_size }))
    }

    pub fn backward(&self, tape: &DeepSetTape<T>, grad_out: &Array2<T>, grads: &mut DeepSet<T>) -> Array2<T> {
        let g = self.outer.backward(&tape.outer, grad_out, &mut grads.outer);
        let g = sum_groups_backward(&g, tape.set_size);
        self.inner.backward(&tape.inner, &g, &mut grads.inner)
    }
}

impl<T: Real> Parameters<T> for DeepSet<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = self
            .inner
            .tensors()
            .into_iter()
            .map(|(n, t)| (format!("inner.{n}"), t))
            .collect();
        out.extend(self.outer.tensors().into_iter().map(|(n, t)| (format!("outer.{n}"), t)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.inner.tensors_mut();
        out.extend(self.outer.tensors_mut());
        out
    }
}

/// Row-wise softmax with max-shift.
pub fn softmax<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row /= total;
    }
    out
}

/// Mean cross-entropy over rows and its gradient with respect to the logits.
pub fn softmax_xent<T: Real>(logits: &Array2<T>, labels: &[usize]) -> Result<(T, Array2<T>)> {
    if labels.len() != logits.nrows() {
        return Err(Error::shape(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.nrows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::shape(format!("label {bad} for {} classes", logits.ncols())));
    }
    let n = T::from_f64(labels.len().max(1) as f64);
    let mut grad = softmax(logits);
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut lse = T::zero();
        for &v in row.iter() {
            lse += (v - max).exp();
        }
        loss += lse.ln() + max - row[y];
        grad[[i, y]] -= T::one();
    }
    grad /= n;
    Ok((loss / n, grad))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    /// Moments shaped after `params`, with `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    pub fn new(params: &impl Parameters<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update<P: Parameters<T>>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if grads.len() != params.len() || params.len() != self.m.len() {
            return Err(Error::shape("optimizer state does not mirror the parameters"));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let one = T::one();
        let c1 = T::from_f64(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64(1.0 - self.beta2.powi(t));
        let lr = T::from_f64(lr);
        let eps = T::from_f64(self.eps);
        for (((p, (_, g)), m), v) in params.iter_mut().zip(&grads).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::shape("gradient shape differs from parameter"));
            }
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `initial · factor^⌊epoch / every⌋`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            initial: 0.01,
            factor: 0.5,
            every: 50,
        }
    }
}

impl StepDecay {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.initial * self.factor.powi((epoch / self.every) as i32)
    }
}

/// Learning rate at `epoch` for the default schedule.
pub fn lr_schedule(epoch: usize) -> f64 {
    StepDecay::default().lr(epoch)
}
