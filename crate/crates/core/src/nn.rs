//! Hand-composed layers with explicit forward and backward passes, the
//! masked softmax cross-entropy loss, and Adam.
//!
//! Layers cache what their backward pass needs during `forward`; calling
//! `backward` without a preceding `forward` is an error. Parameter
//! gradients accumulate until [`Param::zero_grad`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{DenseMatrix, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{0}: backward called before forward")]
    BackwardBeforeForward(&'static str),
    #[error("loss mask is empty")]
    EmptyMask,
    #[error("mask index {0} out of range")]
    MaskOutOfRange(usize),
    #[error("label {label} outside 0..{classes}")]
    BadLabel { label: usize, classes: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    BadRate(f64),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
}

impl Param {
    pub fn new(value: DenseMatrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: DenseMatrix::zeros(r, c),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn grad_is_zero(&self) -> bool {
        self.grad.data().iter().all(|&g| g == 0.0)
    }
}

/// Glorot-uniform sample for a `fan_in × fan_out` weight.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..limit))
}

/// Bias-free linear map `y = x · W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Param,
    #[serde(skip)]
    input: Option<DenseMatrix>,
}

impl Linear {
    pub fn new(weight: DenseMatrix) -> Self {
        Self {
            weight: Param::new(weight),
            input: None,
        }
    }

    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self::new(glorot_uniform(fan_in, fan_out, rng))
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&mut self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let y = x.matmul(&self.weight.value)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates `dW = xᵀ dy` and returns `dx = dy Wᵀ`.
    pub fn backward(&mut self, dy: &DenseMatrix) -> Result<DenseMatrix> {
        self.backward_weight(dy)?;
        Ok(dy.matmul_t(&self.weight.value)?)
    }

    /// Accumulates the weight gradient only; for layers whose input needs
    /// no gradient.
    pub fn backward_weight(&mut self, dy: &DenseMatrix) -> Result<()> {
        let x = self.input.as_ref().ok_or(NnError::BackwardBeforeForward("linear"))?;
        let dw = x.t_matmul(dy)?;
        self.weight.grad.add_assign(&dw)?;
        Ok(())
    }
}

/// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    rate: f64,
    #[serde(skip)]
    last_mask: Option<DenseMatrix>,
    #[serde(skip)]
    last_mode: Option<Mode>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::BadRate(rate));
        }
        Ok(Self {
            rate,
            last_mask: None,
            last_mode: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, x: &DenseMatrix, mode: Mode, rng: &mut impl Rng) -> DenseMatrix {
        self.last_mode = Some(mode);
        if mode == Mode::Eval || self.rate == 0.0 {
            self.last_mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask = DenseMatrix::from_fn(x.rows(), x.cols(), |_, _| if rng.gen_bool(keep) { scale } else { 0.0 });
        let y = x.hadamard(&mask).expect("mask has the input's shape");
        self.last_mask = Some(mask);
        y
    }

    pub fn backward(&self, dy: &DenseMatrix) -> Result<DenseMatrix> {
        match (self.last_mode, &self.last_mask) {
            (None, _) => Err(NnError::BackwardBeforeForward("dropout")),
            (Some(_), None) => Ok(dy.clone()),
            (Some(_), Some(mask)) => Ok(dy.hadamard(mask)?),
        }
    }
}

/// Per-column batch normalization over the rows of its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    #[serde(skip)]
    cache: Option<BnCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache {
    mode: Mode,
    x_hat: DenseMatrix,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::new(DenseMatrix::filled(1, features, 1.0)),
            beta: Param::new(DenseMatrix::zeros(1, features)),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &DenseMatrix, mode: Mode) -> Result<DenseMatrix> {
        let f = self.features();
        if x.cols() != f {
            return Err(LinalgError::ShapeMismatch {
                op: "batchnorm",
                lhs: x.shape(),
                rhs: (1, f),
            }
            .into());
        }
        let n = x.rows();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; f];
                for r in 0..n {
                    for (m, v) in mean.iter_mut().zip(x.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for r in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                // Running variance tracks the unbiased estimate.
                let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                for j in 0..f {
                    self.running_mean[j] = (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
                    self.running_var[j] = (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let x_hat = DenseMatrix::from_fn(n, f, |r, c| (x[(r, c)] - mean[c]) * inv_std[c]);
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let y = DenseMatrix::from_fn(n, f, |r, c| gamma[c] * x_hat[(r, c)] + beta[c]);
        self.cache = Some(BnCache { mode, x_hat, inv_std });
        Ok(y)
    }

    /// Accumulates `dγ`, `dβ` and returns the input gradient. Train mode
    /// differentiates through the batch statistics; eval mode is affine.
    pub fn backward(&mut self, dy: &DenseMatrix) -> Result<DenseMatrix> {
        let cache = self.cache.as_ref().ok_or(NnError::BackwardBeforeForward("batchnorm"))?;
        let (n, f) = cache.x_hat.shape();
        if dy.shape() != (n, f) {
            return Err(LinalgError::ShapeMismatch {
                op: "batchnorm backward",
                lhs: dy.shape(),
                rhs: (n, f),
            }
            .into());
        }
        let mut dgamma = vec![0.0; f];
        let mut dbeta = vec![0.0; f];
        for r in 0..n {
            for c in 0..f {
                dgamma[c] += dy[(r, c)] * cache.x_hat[(r, c)];
                dbeta[c] += dy[(r, c)];
            }
        }
        let gamma = self.gamma.value.data();
        let dx = match cache.mode {
            Mode::Eval => DenseMatrix::from_fn(n, f, |r, c| dy[(r, c)] * gamma[c] * cache.inv_std[c]),
            Mode::Train => {
                let nf = n as f64;
                DenseMatrix::from_fn(n, f, |r, c| {
                    gamma[c] * cache.inv_std[c] / nf
                        * (nf * dy[(r, c)] - dbeta[c] - cache.x_hat[(r, c)] * dgamma[c])
                })
            }
        };
        for c in 0..f {
            self.gamma.grad.data_mut()[c] += dgamma[c];
            self.beta.grad.data_mut()[c] += dbeta[c];
        }
        Ok(dx)
    }
}

pub fn relu_forward(x: &DenseMatrix) -> DenseMatrix {
    x.relu()
}

/// Gradient of ReLU given the forward *input* `x`.
pub fn relu_backward(x: &DenseMatrix, dy: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(dy.hadamard(&x.relu_mask())?)
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Mean cross-entropy over the masked rows and its gradient with respect
/// to the logits (zero outside the mask).
pub fn softmax_cross_entropy(logits: &DenseMatrix, labels: &[usize], mask: &[usize]) -> Result<(f64, DenseMatrix)> {
    if mask.is_empty() {
        return Err(NnError::EmptyMask);
    }
    let c = logits.cols();
    let mut grad = DenseMatrix::zeros(logits.rows(), c);
    let scale = 1.0 / mask.len() as f64;
    let mut loss = 0.0;
    for &i in mask {
        if i >= logits.rows() || i >= labels.len() {
            return Err(NnError::MaskOutOfRange(i));
        }
        let y = labels[i];
        if y >= c {
            return Err(NnError::BadLabel { label: y, classes: c });
        }
        let row = logits.row(i);
        let (arg, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, v)| if v > best.1 { (j, v) } else { best });
        // log Σ exp(row - max) = ln(1 + rest), accurate when one logit dominates
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != arg)
            .map(|(_, v)| (v - max).exp())
            .sum();
        let log_z = max + rest.ln_1p();
        loss += (max - row[y]) + rest.ln_1p();
        let g = grad.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = scale * ((row[j] - log_z).exp() - if j == y { 1.0 } else { 0.0 });
        }
    }
    Ok((loss * scale, grad))
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first_moment: Vec<DenseMatrix>,
    second_moment: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// One update of every parameter in `params`. The slice must list the
    /// same parameters in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.first_moment.is_empty() {
            for p in params.iter() {
                let (r, c) = p.value.shape();
                self.first_moment.push(DenseMatrix::zeros(r, c));
                self.second_moment.push(DenseMatrix::zeros(r, c));
            }
        }
        assert_eq!(self.first_moment.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            if self.first_moment[k].shape() != p.value.shape() {
                return Err(LinalgError::ShapeMismatch {
                    op: "adam",
                    lhs: self.first_moment[k].shape(),
                    rhs: p.value.shape(),
                }
                .into());
            }
            let m = self.first_moment[k].data_mut();
            let v = self.second_moment[k].data_mut();
            let Param { value, grad } = &mut **p;
            for (((w, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                let g = g + self.weight_decay * *w;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [&mut Param]) -> Result<()> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(&mut rng, 3, 4);
        let mut d = Dropout::new(0.5).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval, &mut rng), x);
        assert_eq!(d.backward(&x).unwrap(), x);
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(0.3).unwrap().backward(&x).is_err());
    }

    #[test]
    fn dropout_train_is_unbiased() {
        // Every output entry x·m/(1-p) has mean x and variance x²·p/(1-p).
        let p = 0.5;
        let draws = 10_000;
        let x = DenseMatrix::from_rows(&[[1.0, -2.0, 0.5]]);
        let mut d = Dropout::new(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut acc = DenseMatrix::zeros(1, 3);
        for _ in 0..draws {
            let y = d.forward(&x, Mode::Train, &mut rng);
            for (c, &v) in y.data().iter().enumerate() {
                assert!(v == 0.0 || (v - x[(0, c)] / (1.0 - p)).abs() < 1e-15);
            }
            acc.add_assign(&y).unwrap();
        }
        for c in 0..3 {
            let xc: f64 = x[(0, c)];
            let sigma = (xc * xc * p / (1.0 - p) / draws as f64).sqrt();
            assert!((acc[(0, c)] / draws as f64 - xc).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn batchnorm_standardizes_column() {
        let mut bn = BatchNorm::new(1);
        bn.eps = 0.0;
        let x = DenseMatrix::from_rows(&[[1.0], [2.0], [3.0]]);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let want = [-1.0 / (2.0 / 3.0f64).sqrt(), 0.0, 1.0 / (2.0 / 3.0f64).sqrt()];
        for (got, want) in y.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((y[(2, 0)] - 1.2247).abs() < 1e-4);
        // running stats moved toward batch mean 2, unbiased var 1
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_eval_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bn = BatchNorm::new(3);
        bn.running_mean = vec![0.5, -1.0, 2.0];
        bn.running_var = vec![4.0, 0.25, 1.0];
        bn.gamma.value = random(&mut rng, 1, 3);
        let a = random(&mut rng, 4, 3);
        let b = random(&mut rng, 4, 3);
        let fa = bn.forward(&a, Mode::Eval).unwrap();
        let fb = bn.forward(&b, Mode::Eval).unwrap();
        let f0 = bn.forward(&DenseMatrix::zeros(4, 3), Mode::Eval).unwrap();
        let fsum = bn.forward(&a.add(&b).unwrap(), Mode::Eval).unwrap();
        // f(a + b) = f(a) + f(b) - f(0)
        let combined = fa.add(&fb).unwrap().add(&f0.scale(-1.0)).unwrap();
        assert!(fsum.max_abs_diff(&combined) < 1e-12);
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn backward_before_forward_errors() {
        let mut lin = Linear::new(DenseMatrix::identity(2));
        assert!(matches!(
            lin.backward(&DenseMatrix::zeros(1, 2)),
            Err(NnError::BackwardBeforeForward(_))
        ));
        let mut bn = BatchNorm::new(2);
        assert!(bn.backward(&DenseMatrix::zeros(1, 2)).is_err());
    }

    /// Gradient checks use the scalar objective `sum(y ⊙ probe)` for a fixed
    /// random probe, so `dy = probe`.
    fn check_linear(seed: u64, n: usize, fin: usize, fout: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, n, fin);
        let probe = random(&mut rng, n, fout);
        let mut lin = Linear::glorot(fin, fout, &mut rng);
        lin.forward(&x).unwrap();
        let dx = lin.backward(&probe).unwrap();
        let w = lin.weight.value.clone();
        let num_dx = central_difference(&x, 1e-5, |xp| xp.matmul(&w).unwrap().dot(&probe).unwrap());
        let num_dw = central_difference(&w, 1e-5, |wp| x.matmul(wp).unwrap().dot(&probe).unwrap());
        max_relative_error(&dx, &num_dx).max(max_relative_error(&lin.weight.grad, &num_dw))
    }

    fn check_batchnorm(seed: u64, n: usize, f: usize, mode: Mode) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, n, f);
        let probe = random(&mut rng, n, f);
        let mut bn = BatchNorm::new(f);
        bn.gamma.value = random(&mut rng, 1, f);
        bn.beta.value = random(&mut rng, 1, f);
        bn.running_mean = (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        bn.running_var = (0..f).map(|_| rng.gen_range(0.5..2.0)).collect();
        let template = bn.clone();
        bn.forward(&x, mode).unwrap();
        let dx = bn.backward(&probe).unwrap();
        let objective = |bn: &BatchNorm, x: &DenseMatrix| {
            let mut fresh = bn.clone();
            fresh.forward(x, mode).unwrap().dot(&probe).unwrap()
        };
        let num_dx = central_difference(&x, 1e-5, |xp| objective(&template, xp));
        let num_dg = central_difference(&template.gamma.value, 1e-5, |g| {
            let mut t = template.clone();
            t.gamma.value = g.clone();
            objective(&t, &x)
        });
        let num_db = central_difference(&template.beta.value, 1e-5, |b| {
            let mut t = template.clone();
            t.beta.value = b.clone();
            objective(&t, &x)
        });
        max_relative_error(&dx, &num_dx)
            .max(max_relative_error(&bn.gamma.grad, &num_dg))
            .max(max_relative_error(&bn.beta.grad, &num_db))
    }

    fn check_relu(seed: u64, n: usize, f: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep entries away from the kink
        let x = DenseMatrix::from_fn(n, f, |_, _| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let probe = random(&mut rng, n, f);
        let dx = relu_backward(&x, &probe).unwrap();
        let num = central_difference(&x, 1e-5, |xp| relu_forward(xp).dot(&probe).unwrap());
        max_relative_error(&dx, &num)
    }

    fn check_dropout(seed: u64, n: usize, f: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, n, f);
        let probe = random(&mut rng, n, f);
        let mut d = Dropout::new(0.4).unwrap();
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
        d.forward(&x, Mode::Train, &mut mask_rng);
        let dx = d.backward(&probe).unwrap();
        let num = central_difference(&x, 1e-5, |xp| {
            let mut again = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
            let mut d2 = Dropout::new(0.4).unwrap();
            d2.forward(xp, Mode::Train, &mut again).dot(&probe).unwrap()
        });
        max_relative_error(&dx, &num)
    }

    #[test]
    fn layer_gradients_match_finite_differences_on_6x4() {
        assert!(check_linear(1, 6, 4, 3) < 1e-4);
        assert!(check_batchnorm(1, 6, 4, Mode::Train) < 1e-4);
        assert!(check_batchnorm(1, 6, 4, Mode::Eval) < 1e-4);
        assert!(check_relu(1, 6, 4) < 1e-4);
        assert!(check_dropout(1, 6, 4) < 1e-4);
    }

    #[test]
    fn layer_gradients_random_shapes_20_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = rng.gen_range(2..=8);
            let a = rng.gen_range(1..=8);
            let b = rng.gen_range(1..=8);
            assert!(check_linear(seed, n, a, b) < 1e-4, "linear seed {seed}");
            assert!(check_batchnorm(seed, n, a, Mode::Train) < 1e-4, "bn train seed {seed}");
            assert!(check_batchnorm(seed, n, a, Mode::Eval) < 1e-4, "bn eval seed {seed}");
            assert!(check_relu(seed, n, a) < 1e-4, "relu seed {seed}");
            assert!(check_dropout(seed, n, a) < 1e-4, "dropout seed {seed}");
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = DenseMatrix::zeros(3, 4);
        let (loss, _) = softmax_cross_entropy(&uniform, &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);

        let confident = DenseMatrix::from_rows(&[[10.0, -10.0]]);
        let (loss, _) = softmax_cross_entropy(&confident, &[0], &[0]).unwrap();
        // -log σ(20) = log(1 + e^-20)
        let closed = (-20f64).exp().ln_1p();
        assert!((loss - closed).abs() < 1e-20);
        assert!((loss - 2.06e-9).abs() < 1e-11);

        assert_eq!(softmax_cross_entropy(&uniform, &[0, 1, 2], &[]).unwrap_err(), NnError::EmptyMask);
        assert!(softmax_cross_entropy(&uniform, &[0, 1, 2], &[7]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let logits = random(&mut rng, 5, 3).scale(3.0);
        let labels = [0, 2, 1, 1, 0];
        let mask = [0, 2, 3];
        let (_, grad) = softmax_cross_entropy(&logits, &labels, &mask).unwrap();
        let num = central_difference(&logits, 1e-5, |l| softmax_cross_entropy(l, &labels, &mask).unwrap().0);
        assert!(max_relative_error(&grad, &num) < 1e-4);
        for c in 0..3 {
            assert_eq!(grad[(1, c)], 0.0);
            assert_eq!(grad[(4, c)], 0.0);
        }
    }

    #[test]
    fn adam_examples() {
        let mut p = Param::new(DenseMatrix::from_rows(&[[1.0, -2.0]]));
        let mut adam = AdamState::new(0.1, 0.0);
        adam_step(&mut adam, &mut [&mut p]).unwrap();
        assert_eq!(p.value, DenseMatrix::from_rows(&[[1.0, -2.0]]));

        let mut p = Param::new(DenseMatrix::from_rows(&[[1.0]]));
        p.grad = DenseMatrix::from_rows(&[[1.0]]);
        let mut adam = AdamState::new(0.1, 0.0);
        adam.step(&mut [&mut p]).unwrap();
        assert!((p.value[(0, 0)] - 0.9).abs() < 1e-7);

        // minimize p² from p = 1
        let mut p = Param::new(DenseMatrix::from_rows(&[[1.0]]));
        let mut adam = AdamState::new(0.1, 0.0);
        let mut prev = 1.0f64;
        for step in 0..50 {
            p.zero_grad();
            p.grad[(0, 0)] = 2.0 * p.value[(0, 0)];
            adam.step(&mut [&mut p]).unwrap();
            let now = p.value[(0, 0)];
            if step < 9 {
                // descent while far from the optimum
                assert!(now.abs() < prev.abs());
            }
            prev = now;
        }
        assert!(p.value[(0, 0)].abs() < 0.5);
    }

    #[test]
    fn adam_weight_decay_enters_gradient() {
        // zero gradient but λ > 0 shrinks toward zero
        let mut p = Param::new(DenseMatrix::from_rows(&[[2.0]]));
        let mut adam = AdamState::new(0.01, 0.5);
        adam.step(&mut [&mut p]).unwrap();
        assert!((p.value[(0, 0)] - 1.99).abs() < 1e-7);
    }
}
