//! Numerical kernels for the shallow CNN: initialization, layers with
//! hand-written backward passes, loss, dropout, and Adam.

use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::scalar::Real;

/// Probabilities below this are clipped before taking the log.
pub const LOG_CLIP: f64 = 1e-12;

/// Glorot-uniform `fan_in × fan_out` matrix on `[-b, b]`,
/// `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Real>(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix<T> {
    assert!(fan_in >= 1 && fan_out >= 1, "xavier_init needs positive fans");
    let b = T::lit(xavier_bound(fan_in, fan_out));
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-b, b)).collect();
    Matrix::from_vec(fan_in, fan_out, data)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[inline]
pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Single-filter valid convolution over rows with ReLU.
///
/// `filter` is `w × D`; the result has `L - w + 1` entries.
///
/// # Panics
/// If the filter is wider than the input has rows or the column counts differ.
pub fn conv1d_forward<T: Real>(input: &Matrix<T>, filter: &Matrix<T>, bias: T) -> Vec<T> {
    let (len, dim) = input.shape();
    let w = filter.rows();
    assert!(w >= 1 && w <= len, "filter width {w} outside 1..={len}");
    assert_eq!(filter.cols(), dim, "filter depth must match input width");
    (0..=len - w)
        .map(|t| relu(bias + dot(input.row_span(t, w), filter.as_slice())))
        .collect()
}

/// Result of max-over-time pooling; `index` is the first maximal position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pooled<T> {
    pub value: T,
    pub index: usize,
}

/// # Panics
/// On an empty feature map.
pub fn max_over_time<T: Real>(feature_map: &[T]) -> Pooled<T> {
    assert!(!feature_map.is_empty(), "max_over_time on empty feature map");
    let mut best = Pooled {
        value: feature_map[0],
        index: 0,
    };
    for (i, &v) in feature_map.iter().enumerate().skip(1) {
        if v > best.value {
            best = Pooled { value: v, index: i };
        }
    }
    best
}

/// Routes `grad` to the pooled position only.
pub fn max_over_time_backward<T: Real>(len: usize, pooled: &Pooled<T>, grad: T) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    out[pooled.index] = grad;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => relu(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Relu if y > T::zero() => T::one(),
            Activation::Relu => T::zero(),
            Activation::Identity => T::one(),
        }
    }
}

/// `activation(inputᵀ W + b)` for `W` of shape `n × m`.
///
/// # Panics
/// On shape mismatch.
pub fn dense_forward<T: Real>(
    input: &[T],
    weights: &Matrix<T>,
    bias: &[T],
    activation: Activation,
) -> Vec<T> {
    assert_eq!(input.len(), weights.rows(), "dense input width");
    assert_eq!(bias.len(), weights.cols(), "dense bias width");
    let mut out = bias.to_vec();
    for (i, &x) in input.iter().enumerate() {
        if x == T::zero() {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(weights.row(i)) {
            *o += x * w;
        }
    }
    for o in &mut out {
        *o = activation.apply(*o);
    }
    out
}

/// Accumulates the gradients of a dense layer and returns the gradient with
/// respect to its input.
///
/// `output` is the post-activation output from the forward pass.
pub fn dense_backward<T: Real>(
    input: &[T],
    weights: &Matrix<T>,
    output: &[T],
    activation: Activation,
    grad_output: &[T],
    grad_weights: &mut Matrix<T>,
    grad_bias: &mut [T],
) -> Vec<T> {
    let delta: Vec<T> = grad_output
        .iter()
        .zip(output)
        .map(|(&g, &y)| g * activation.grad_from_output(y))
        .collect();
    for (gb, &d) in grad_bias.iter_mut().zip(&delta) {
        *gb += d;
    }
    let mut grad_input = vec![T::zero(); input.len()];
    for (i, &x) in input.iter().enumerate() {
        let w_row = weights.row(i);
        grad_input[i] = dot(w_row, &delta);
        if x != T::zero() {
            for (gw, &d) in grad_weights.row_mut(i).iter_mut().zip(&delta) {
                *gw += x * d;
            }
        }
    }
    grad_input
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("logit {i} is {}", logits[i])));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `-ln(max(pred[gold], 1e-12))`, accumulated in `f64`.
pub fn cross_entropy<T: Real>(pred: &[T], gold: Class) -> f64 {
    -pred[gold.index()].to_f64_lossy().max(LOG_CLIP).ln()
}

/// Gradient of `cross_entropy(softmax(z), gold)` with respect to `z`.
pub fn softmax_cross_entropy_grad<T: Real>(probs: &[T], gold: Class) -> Vec<T> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == gold.index() { p - T::one() } else { p })
        .collect()
}

/// Probability of zeroing a unit during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    p: f64,
}

impl DropoutSpec {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Per-unit multipliers: `0` for dropped units, `1/(1-p)` for survivors.
    pub fn sample_mask<T: Real>(&self, len: usize, rng: &mut Rng) -> Vec<T> {
        let keep = T::lit(1.0 / (1.0 - self.p));
        (0..len)
            .map(|_| if rng.unit() < self.p { T::zero() } else { keep })
            .collect()
    }
}

/// Inverted dropout; identity when `training` is false.
pub fn dropout_apply<T: Real>(
    values: &[T],
    spec: &DropoutSpec,
    rng: &mut Rng,
    training: bool,
) -> Vec<T> {
    if !training || spec.p == 0.0 {
        return values.to_vec();
    }
    let mask = spec.sample_mask::<T>(values.len(), rng);
    values.iter().zip(&mask).map(|(&v, &m)| v * m).collect()
}

/// Adam moments and step counter for a list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub learning_rate: T,
    /// Annealing restarts applied so far.
    pub restarts: usize,
}

impl<T: Real> AdamState<T> {
    pub const BETA1: f64 = 0.9;
    pub const EPSILON: f64 = 1e-8;

    /// Fresh state for blocks of the given lengths.
    pub fn new(block_lens: &[usize], learning_rate: f64, beta2: f64) -> Self {
        Self {
            m: block_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: block_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            beta1: T::lit(Self::BETA1),
            beta2: T::lit(beta2),
            epsilon: T::lit(Self::EPSILON),
            learning_rate: T::lit(learning_rate),
            restarts: 0,
        }
    }

    fn reset_moments(&mut self) {
        for block in self.m.iter_mut().chain(self.v.iter_mut()) {
            block.iter_mut().for_each(|x| *x = T::zero());
        }
        self.t = 0;
    }
}

/// One bias-corrected Adam update over every parameter block.
///
/// Gradients are checked before anything is modified, so a non-finite
/// gradient leaves parameters and state untouched.
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameter blocks, {} gradient blocks, {} state blocks",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (b, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[b].len() {
            return Err(Error::Shape(format!("adam: block {b} length mismatch")));
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { block: b, index: i });
        }
    }

    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[b];
        let v = &mut state.v[b];
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Restores the best checkpoint, halves the learning rate, and resets the
/// moments and step counter.
///
/// Returns `None` once `max_restarts` restarts have been used; the caller
/// stops training instead.
pub fn anneal_restart<T: Real, P: Clone>(
    state: &AdamState<T>,
    best_checkpoint: &P,
    max_restarts: usize,
) -> Option<(AdamState<T>, P)> {
    if state.restarts >= max_restarts {
        return None;
    }
    let mut next = state.clone();
    next.reset_moments();
    next.learning_rate = state.learning_rate / T::lit(2.0);
    next.restarts += 1;
    Some((next, best_checkpoint.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_bounds() {
        assert_eq!(xavier_bound(3, 3), 1.0);
        assert_eq!(xavier_bound(1, 5), 1.0);
        let mut rng = Rng::new(1);
        let m: Matrix<f64> = xavier_init(3, 3, &mut rng);
        assert_eq!(m.shape(), (3, 3));
        assert!(m.as_slice().iter().all(|x| x.abs() <= 1.0));
        let m: Matrix<f32> = xavier_init(1, 5, &mut rng);
        assert!(m.as_slice().iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn conv_examples() {
        let ones = Matrix::from_vec(3, 2, vec![1.0f64; 6]);
        let filt = Matrix::from_vec(2, 2, vec![1.0; 4]);
        assert_eq!(conv1d_forward(&ones, &filt, 0.0), vec![4.0, 4.0]);
        let zero = Matrix::zeros(2, 2);
        assert_eq!(conv1d_forward(&ones, &zero, 0.0), vec![0.0, 0.0]);
        let x = Matrix::from_vec(2, 1, vec![1.0, -3.0]);
        let f = Matrix::from_vec(1, 1, vec![1.0]);
        assert_eq!(conv1d_forward(&x, &f, 0.0), vec![1.0, 0.0]);
    }

    #[test]
    #[should_panic]
    fn conv_wider_than_input_panics() {
        let x = Matrix::<f64>::zeros(2, 1);
        let f = Matrix::<f64>::zeros(3, 1);
        conv1d_forward(&x, &f, 0.0);
    }

    #[test]
    fn max_pool_examples() {
        assert_eq!(max_over_time(&[4.0, 4.0]), Pooled { value: 4.0, index: 0 });
        assert_eq!(max_over_time(&[1.0, 5.0, 3.0]).value, 5.0);
        assert_eq!(max_over_time(&[-2.0, -7.0]).value, -2.0);
        let p = max_over_time(&[1.0, 5.0, 5.0]);
        assert_eq!(max_over_time_backward(3, &p, 2.0), vec![0.0, 2.0, 0.0]);
    }

    #[test]
    #[should_panic]
    fn max_pool_empty_panics() {
        max_over_time::<f64>(&[]);
    }

    #[test]
    fn dense_examples() {
        let eye = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(
            dense_forward(&[1.5, -2.0], &eye, &[0.0, 0.0], Activation::Identity),
            vec![1.5, -2.0]
        );
        assert_eq!(
            dense_forward(&[1.0, 2.0], &eye, &[-3.0, 0.0], Activation::Relu),
            vec![0.0, 2.0]
        );
        let w = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(
            dense_forward(&[0.0, 0.0], &w, &[7.0, 8.0, 9.0], Activation::Identity),
            vec![7.0, 8.0, 9.0]
        );
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0f64, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        for c in [-5.0f64, 0.0, 12.5] {
            let p = softmax(&[c, c + 2f64.ln()]).unwrap();
            assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
            assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
        }
        let p = softmax(&[1000.0f64, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0f64, 0.0, 0.0], Class::Intake), 0.0);
        let u = [1.0 / 3.0f64; 3];
        for c in Class::ALL {
            assert!((cross_entropy(&u, c) - 3f64.ln()).abs() < 1e-12);
        }
        let clipped = cross_entropy(&[0.0f64, 1.0, 0.0], Class::Intake);
        assert!((clipped - 27.631021115928547).abs() < 1e-9);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = Rng::new(5);
        let v = vec![1.0f32, 2.0, 3.0];
        let p0 = DropoutSpec::new(0.0).unwrap();
        assert_eq!(dropout_apply(&v, &p0, &mut rng, true), v);
        let p5 = DropoutSpec::new(0.5).unwrap();
        assert_eq!(dropout_apply(&v, &p5, &mut rng, false), v);
        assert!(DropoutSpec::new(1.0).is_err());
        assert!(DropoutSpec::new(-0.1).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let mut rng = Rng::new(11);
        let spec = DropoutSpec::new(0.5).unwrap();
        let out = dropout_apply(&vec![1.0f64; 100_000], &spec, &mut rng, true);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(out.iter().all(|&x| x == 0.0 || x == 2.0));
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(&[1], 0.001, 0.999);
        adam_step(&mut [&mut p[..]], &[&[1.0]], &mut s).unwrap();
        assert!((p[0] - (-0.001 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_zero_gradient_fresh_state() {
        let mut p = vec![0.25f64, -1.0];
        let mut s = AdamState::new(&[2], 0.001, 0.9);
        adam_step(&mut [&mut p[..]], &[&[0.0, 0.0]], &mut s).unwrap();
        assert_eq!(p, vec![0.25, -1.0]);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut a = vec![0.0f32];
        let mut b = vec![0.0f32];
        let mut s = AdamState::new(&[1, 1], 0.001, 0.9);
        let err = adam_step(&mut [&mut a[..], &mut b[..]], &[&[0.0], &[f32::NAN]], &mut s)
            .unwrap_err();
        assert!(err.to_string().contains("block 1"), "{err}");
        assert_eq!(s.t, 0);
    }

    #[test]
    fn restart_halves_lr_and_caps() {
        let mut s = AdamState::<f64>::new(&[1], 0.001, 0.999);
        let mut p = vec![0.0];
        adam_step(&mut [&mut p[..]], &[&[1.0]], &mut s).unwrap();
        let checkpoint = vec![0.5f64, 0.25];
        let (s1, restored) = anneal_restart(&s, &checkpoint, 2).unwrap();
        assert_eq!(restored, checkpoint);
        assert_eq!(s1.learning_rate, 0.0005);
        assert_eq!(s1.t, 0);
        assert!(s1.m[0].iter().chain(&s1.v[0]).all(|&x| x == 0.0));
        let (s2, _) = anneal_restart(&s1, &checkpoint, 2).unwrap();
        assert_eq!(s2.restarts, 2);
        assert!(anneal_restart(&s2, &checkpoint, 2).is_none());
    }
}
