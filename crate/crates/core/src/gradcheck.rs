//! Central finite differences, used as the independent oracle for every
//! hand-written backward pass.

use crate::linalg::DenseMatrix;

/// Numerical gradient of the scalar `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &DenseMatrix, h: f64, mut f: impl FnMut(&DenseMatrix) -> f64) -> DenseMatrix {
    let mut probe = x.clone();
    let mut grad = DenseMatrix::zeros(x.rows(), x.cols());
    for k in 0..x.data().len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        grad.data_mut()[k] = (up - down) / (2.0 * h);
    }
    grad
}

/// Denominator floor for relative errors of near-zero gradient entries.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// `max_k |a_k - b_k| / max(|a_k|, |b_k|, RELATIVE_FLOOR)`.
pub fn max_relative_error(analytic: &DenseMatrix, numeric: &DenseMatrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}

use crate::model::{GradTarget, ModelInput, NodeClassifier};
use crate::nn::{softmax_cross_entropy, Mode};

/// Largest relative error between the hand-written backward pass of
/// `model` and central differences of the masked cross-entropy, over every
/// parameter (weights and fusion logits).
///
/// Each perturbed evaluation runs on a fresh clone, so dropout masks (if
/// `mode` is `Train`) are identical across evaluations.
pub fn model_gradient_error<M: NodeClassifier + Clone>(
    model: &M,
    input: &ModelInput,
    labels: &[usize],
    mask: &[usize],
    mode: Mode,
    h: f64,
) -> f64 {
    let loss_of = |m: &M| {
        let mut m = m.clone();
        let logits = m.forward(input, mode).expect("forward");
        softmax_cross_entropy(&logits, labels, mask).expect("loss").0
    };
    let mut analytic = model.clone();
    analytic.zero_grad();
    let logits = analytic.forward(input, mode).expect("forward");
    let (_, dlogits) = softmax_cross_entropy(&logits, labels, mask).expect("loss");
    analytic.backward(&dlogits, GradTarget::Both).expect("backward");

    let n_weights = analytic.weight_params_mut().len();
    let n_fusion = analytic.fusion_params_mut().len();
    let mut worst = 0.0f64;
    for k in 0..n_weights + n_fusion {
        let grad = param_at(&mut analytic, k, n_weights).grad.clone();
        let value = param_at(&mut analytic, k, n_weights).value.clone();
        let numeric = central_difference(&value, h, |v| {
            let mut probe = model.clone();
            param_at(&mut probe, k, n_weights).value = v.clone();
            loss_of(&probe)
        });
        worst = worst.max(max_relative_error(&grad, &numeric));
    }
    worst
}

fn param_at<M: NodeClassifier>(m: &mut M, k: usize, n_weights: usize) -> &mut crate::nn::Param {
    if k < n_weights {
        m.weight_params_mut().into_iter().nth(k).expect("index in range")
    } else {
        m.fusion_params_mut().into_iter().nth(k - n_weights).expect("index in range")
    }
}
