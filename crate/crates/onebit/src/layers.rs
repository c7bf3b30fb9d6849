//! Normalization and activation layers.
//!
//! Batch normalization follows one frozen convention throughout the crate:
//! the per-channel statistics are the biased mean and variance over all
//! `K*H*W` sites of the channel, and epsilon sits *inside* the square root,
//!
//! ```text
//! y = g * (x - mean) / sqrt(var + eps) + o        eps = 1e-5
//! ```
//!
//! Training mode uses the current minibatch's statistics and its backward
//! pass differentiates through them; inference mode uses finalized
//! statistics and is a pure per-channel affine map. Derivative conventions
//! at kinks are fixed so gradient tests are deterministic: ReLU and the
//! shifted ReLU use the right derivative (1) at their threshold.

use crate::error::{Error, Result};
use crate::tensor::{from_f64, Element, Tensor};

/// Default epsilon for batch normalization.
pub const BN_EPSILON: f64 = 1e-5;

/// Per-channel batch statistics from one training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnBatchStats<E> {
    pub mean: Vec<E>,
    pub var: Vec<E>,
}

/// Batch-normalization parameters and finalized statistics for one layer.
///
/// When `affine_learned` is false the gain stays 1 and the shift stays 0
/// forever. `mean_only` selects centering without variance division (and
/// without any learned terms).
#[derive(Clone, Debug)]
pub struct BNParams<E> {
    pub gain: Vec<E>,
    pub shift: Vec<E>,
    pub epsilon: E,
    pub finalized_mean: Option<Vec<E>>,
    pub finalized_var: Option<Vec<E>>,
    pub affine_learned: bool,
    pub mean_only: bool,
}

impl<E: Element> BNParams<E> {
    /// Learned gain/shift, initialized to 1 and 0.
    pub fn affine(channels: usize) -> Self {
        BNParams {
            gain: vec![E::one(); channels],
            shift: vec![E::zero(); channels],
            epsilon: from_f64(BN_EPSILON),
            finalized_mean: None,
            finalized_var: None,
            affine_learned: true,
            mean_only: false,
        }
    }

    /// Fixed gain 1 / shift 0 (pure standardization).
    pub fn non_affine(channels: usize) -> Self {
        BNParams { affine_learned: false, ..Self::affine(channels) }
    }

    /// Mean-only centering, no variance division, no learned terms.
    pub fn mean_only(channels: usize) -> Self {
        BNParams { affine_learned: false, mean_only: true, ..Self::affine(channels) }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized_mean.is_some() && (self.mean_only || self.finalized_var.is_some())
    }

    /// Training-mode forward using this layer's parameters. Returns the
    /// batch statistics for the finalization procedure.
    pub fn train(&self, x: &Tensor<E>) -> (Tensor<E>, BnBatchStats<E>) {
        if self.mean_only {
            let (y, mean) = mean_only_bn_train(x);
            let var = vec![E::zero(); mean.len()];
            (y, BnBatchStats { mean, var })
        } else {
            let affine = self.affine_learned.then(|| (self.gain.as_slice(), self.shift.as_slice()));
            batch_norm_train(x, affine, self.epsilon)
        }
    }

    /// Inference-mode forward using finalized statistics.
    ///
    /// # Errors
    /// `Error::NotFinalized` if the statistics have not been computed.
    pub fn infer(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let mean = self.finalized_mean.as_deref().ok_or(Error::NotFinalized(0))?;
        if self.mean_only {
            Ok(mean_only_bn_infer(x, mean))
        } else {
            let var = self.finalized_var.as_deref().ok_or(Error::NotFinalized(0))?;
            Ok(batch_norm_infer(x, mean, var, &self.gain, &self.shift, self.epsilon))
        }
    }
}

fn channel_mean_var<E: Element>(x: &Tensor<E>) -> (Vec<E>, Vec<E>) {
    let [k, h, w, c] = x.shape();
    let m = k * h * w;
    let inv_m = E::one() / from_f64::<E>(m as f64);
    let mut mean = vec![E::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (acc, &v) in mean.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    for v in mean.iter_mut() {
        *v = *v * inv_m;
    }
    let mut var = vec![E::zero(); c];
    for row in x.data().chunks_exact(c) {
        for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - mu;
            *acc = *acc + d * d;
        }
    }
    for v in var.iter_mut() {
        *v = *v * inv_m;
    }
    (mean, var)
}

/// Training-mode batch normalization.
///
/// Normalizes each channel by its biased batch mean/variance, then applies
/// `gain`/`shift` when given (otherwise they are fixed at 1/0). Returns the
/// batch statistics.
///
/// # Panics
/// Panics if the batch has a single site per channel (`K*H*W == 1`), which
/// makes the statistics degenerate.
pub fn batch_norm_train<E: Element>(
    x: &Tensor<E>,
    affine: Option<(&[E], &[E])>,
    epsilon: E,
) -> (Tensor<E>, BnBatchStats<E>) {
    let [k, h, w, c] = x.shape();
    assert!(k * h * w > 1, "batch_norm_train: degenerate statistics over a single site");
    if let Some((g, o)) = affine {
        assert!(g.len() == c && o.len() == c, "batch_norm_train: affine length mismatch");
    }
    let (mean, var) = channel_mean_var(x);
    let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + epsilon).sqrt()).collect();
    let mut y = Tensor::zeros(x.shape());
    let yd = y.data_mut();
    for (row_in, row_out) in x.data().chunks_exact(c).zip(yd.chunks_exact_mut(c)) {
        for cc in 0..c {
            let xhat = (row_in[cc] - mean[cc]) * inv_std[cc];
            row_out[cc] = match affine {
                Some((g, o)) => g[cc] * xhat + o[cc],
                None => xhat,
            };
        }
    }
    (y, BnBatchStats { mean, var })
}

/// Backward of `batch_norm_train`, differentiating through the batch
/// statistics. Returns the input gradient and, when affine terms were used,
/// the gain/shift gradients.
pub fn batch_norm_train_backward<E: Element>(
    x: &Tensor<E>,
    stats: &BnBatchStats<E>,
    gain: Option<&[E]>,
    epsilon: E,
    grad_out: &Tensor<E>,
) -> (Tensor<E>, Option<(Vec<E>, Vec<E>)>) {
    let [k, h, w, c] = x.shape();
    assert_eq!(grad_out.shape(), x.shape(), "bn backward: shape mismatch");
    let m = from_f64::<E>((k * h * w) as f64);
    let inv_std: Vec<E> = stats.var.iter().map(|&v| E::one() / (v + epsilon).sqrt()).collect();

    // Per-channel reductions over dxhat and dxhat*xhat.
    let mut sum_dxhat = vec![E::zero(); c];
    let mut sum_dxhat_xhat = vec![E::zero(); c];
    let mut sum_dy = vec![E::zero(); c];
    let mut sum_dy_xhat = vec![E::zero(); c];
    for (row_x, row_g) in x.data().chunks_exact(c).zip(grad_out.data().chunks_exact(c)) {
        for cc in 0..c {
            let xhat = (row_x[cc] - stats.mean[cc]) * inv_std[cc];
            let dy = row_g[cc];
            let dxhat = match gain {
                Some(g) => g[cc] * dy,
                None => dy,
            };
            sum_dxhat[cc] = sum_dxhat[cc] + dxhat;
            sum_dxhat_xhat[cc] = sum_dxhat_xhat[cc] + dxhat * xhat;
            sum_dy[cc] = sum_dy[cc] + dy;
            sum_dy_xhat[cc] = sum_dy_xhat[cc] + dy * xhat;
        }
    }

    let mut dx = Tensor::zeros(x.shape());
    let dxd = dx.data_mut();
    for ((row_x, row_g), row_dx) in x
        .data()
        .chunks_exact(c)
        .zip(grad_out.data().chunks_exact(c))
        .zip(dxd.chunks_exact_mut(c))
    {
        for cc in 0..c {
            let xhat = (row_x[cc] - stats.mean[cc]) * inv_std[cc];
            let dxhat = match gain {
                Some(g) => g[cc] * row_g[cc],
                None => row_g[cc],
            };
            row_dx[cc] = inv_std[cc] / m
                * (m * dxhat - sum_dxhat[cc] - xhat * sum_dxhat_xhat[cc]);
        }
    }
    let affine_grads = gain.map(|_| (sum_dy_xhat, sum_dy));
    (dx, affine_grads)
}

/// Inference-mode batch normalization: a per-channel affine map using
/// finalized statistics, independent across samples.
pub fn batch_norm_infer<E: Element>(
    x: &Tensor<E>,
    mean: &[E],
    var: &[E],
    gain: &[E],
    shift: &[E],
    epsilon: E,
) -> Tensor<E> {
    let c = x.shape()[3];
    assert!(
        mean.len() == c && var.len() == c && gain.len() == c && shift.len() == c,
        "batch_norm_infer: per-channel length mismatch"
    );
    let scale: Vec<E> = var
        .iter()
        .zip(gain)
        .map(|(&v, &g)| g / (v + epsilon).sqrt())
        .collect();
    let bias: Vec<E> = mean
        .iter()
        .zip(&scale)
        .zip(shift)
        .map(|((&mu, &s), &o)| o - mu * s)
        .collect();
    let mut y = Tensor::zeros(x.shape());
    for (row_in, row_out) in x.data().chunks_exact(c).zip(y.data_mut().chunks_exact_mut(c)) {
        for cc in 0..c {
            row_out[cc] = row_in[cc] * scale[cc] + bias[cc];
        }
    }
    y
}

/// Training-mode mean-only normalization: subtract the per-channel batch
/// mean. No variance division and no learned terms. Returns the means.
pub fn mean_only_bn_train<E: Element>(x: &Tensor<E>) -> (Tensor<E>, Vec<E>) {
    let (mean, _) = channel_mean_var(x);
    let c = x.shape()[3];
    let mut y = Tensor::zeros(x.shape());
    for (row_in, row_out) in x.data().chunks_exact(c).zip(y.data_mut().chunks_exact_mut(c)) {
        for cc in 0..c {
            row_out[cc] = row_in[cc] - mean[cc];
        }
    }
    (y, mean)
}

/// Backward of `mean_only_bn_train`: `g - mean(g)` per channel.
pub fn mean_only_bn_backward<E: Element>(grad_out: &Tensor<E>) -> Tensor<E> {
    let (gmean, _) = channel_mean_var(grad_out);
    let c = grad_out.shape()[3];
    let mut dx = Tensor::zeros(grad_out.shape());
    for (row_g, row_dx) in grad_out.data().chunks_exact(c).zip(dx.data_mut().chunks_exact_mut(c)) {
        for cc in 0..c {
            row_dx[cc] = row_g[cc] - gmean[cc];
        }
    }
    dx
}

/// Inference-mode mean-only normalization using a finalized mean.
pub fn mean_only_bn_infer<E: Element>(x: &Tensor<E>, mean: &[E]) -> Tensor<E> {
    let c = x.shape()[3];
    assert_eq!(mean.len(), c, "mean_only_bn_infer: length mismatch");
    let mut y = Tensor::zeros(x.shape());
    for (row_in, row_out) in x.data().chunks_exact(c).zip(y.data_mut().chunks_exact_mut(c)) {
        for cc in 0..c {
            row_out[cc] = row_in[cc] - mean[cc];
        }
    }
    y
}

/// Fixed per-channel standardization `(x - mean) * inv_std` with constants
/// taken from dataset statistics. Equivalent to an inference-mode
/// non-affine batch norm; used on the input of networks that have no input
/// batch-norm layer.
pub fn fixed_standardize<E: Element>(x: &Tensor<E>, mean: &[E], inv_std: &[E]) -> Tensor<E> {
    let c = x.shape()[3];
    assert!(mean.len() == c && inv_std.len() == c, "fixed_standardize: length mismatch");
    let mut y = Tensor::zeros(x.shape());
    for (row_in, row_out) in x.data().chunks_exact(c).zip(y.data_mut().chunks_exact_mut(c)) {
        for cc in 0..c {
            row_out[cc] = (row_in[cc] - mean[cc]) * inv_std[cc];
        }
    }
    y
}

/// Shifted ReLU: `max(-1, x)`. Passes negative values down to -1 unchanged.
pub fn srelu<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let neg_one = -E::one();
    x.map(|v| if v > neg_one { v } else { neg_one })
}

/// Backward of `srelu`: derivative 1 for `x >= -1` (right derivative at the
/// kink), 0 below.
pub fn srelu_backward<E: Element>(x: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    let neg_one = -E::one();
    masked_grad(x, grad_out, |v| v >= neg_one)
}

/// ReLU: `max(0, x)`.
pub fn relu<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| if v > E::zero() { v } else { E::zero() })
}

/// Backward of `relu`: derivative 1 for `x >= 0`, 0 below.
pub fn relu_backward<E: Element>(x: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    masked_grad(x, grad_out, |v| v >= E::zero())
}

fn masked_grad<E: Element>(
    x: &Tensor<E>,
    grad_out: &Tensor<E>,
    pass: impl Fn(E) -> bool,
) -> Tensor<E> {
    assert_eq!(x.shape(), grad_out.shape(), "activation backward: shape mismatch");
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if pass(v) { g } else { E::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// ELU: `x` for `x >= 0`, `exp(x) - 1` below.
pub fn elu<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| if v >= E::zero() { v } else { v.exp() - E::one() })
}

/// Backward of `elu`: 1 for `x >= 0`, `exp(x)` below.
pub fn elu_backward<E: Element>(x: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    assert_eq!(x.shape(), grad_out.shape(), "elu backward: shape mismatch");
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v >= E::zero() { g } else { g * v.exp() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Constant scale layer: `x / t`, the same constant for every channel.
/// Dividing pre-pool activations by `t` realizes a temperature-`t` softmax
/// downstream.
///
/// # Panics
/// Panics if `t <= 0`.
pub fn scale_layer<E: Element>(x: &Tensor<E>, t: E) -> Tensor<E> {
    assert!(t > E::zero(), "scale_layer: temperature must be positive");
    let inv = E::one() / t;
    x.map(|v| v * inv)
}

/// Softmax (with max-subtraction for stability) plus mean cross-entropy.
///
/// `logits` must be `(K, 1, 1, N)`; `labels` holds one class index per
/// sample. Returns `(loss, probabilities)` where the loss is the mean over
/// the batch of `-log p[label]`.
///
/// # Panics
/// Panics on a label out of range or a logits tensor with spatial extent.
pub fn softmax_xent<E: Element>(logits: &Tensor<E>, labels: &[usize]) -> (E, Tensor<E>) {
    let [k, h, w, n] = logits.shape();
    assert!(h == 1 && w == 1, "softmax_xent: logits must be pooled to 1x1");
    assert!(n >= 2, "softmax_xent: need at least two classes");
    assert_eq!(labels.len(), k, "softmax_xent: one label per sample");
    let mut probs = Tensor::zeros(logits.shape());
    let mut loss = E::zero();
    for kk in 0..k {
        assert!(labels[kk] < n, "softmax_xent: label {} out of range 0..{n}", labels[kk]);
        let row = &logits.data()[kk * n..(kk + 1) * n];
        let max = row.iter().cloned().fold(row[0], E::max);
        let mut denom = E::zero();
        for &z in row {
            denom = denom + (z - max).exp();
        }
        let out = &mut probs.data_mut()[kk * n..(kk + 1) * n];
        for (p, &z) in out.iter_mut().zip(row) {
            *p = (z - max).exp() / denom;
        }
        loss = loss - out[labels[kk]].ln();
    }
    (loss / from_f64::<E>(k as f64), probs)
}

/// Gradient of the mean cross-entropy w.r.t. the logits:
/// `(p - one_hot) / K`, scaled by the upstream scalar gradient.
pub fn softmax_xent_backward<E: Element>(
    probs: &Tensor<E>,
    labels: &[usize],
    upstream: E,
) -> Tensor<E> {
    let [k, _, _, n] = probs.shape();
    let scale = upstream / from_f64::<E>(k as f64);
    let mut dz = probs.clone();
    for kk in 0..k {
        let row = &mut dz.data_mut()[kk * n..(kk + 1) * n];
        row[labels[kk]] = row[labels[kk]] - E::one();
        for v in row.iter_mut() {
            *v = *v * scale;
        }
    }
    dz
}

/// Softmax head configuration: a constant temperature realized as a
/// `scale_layer` by `1/T` ahead of global average pooling.
#[derive(Clone, Copy, Debug)]
pub struct SoftmaxHead {
    pub temperature: f64,
}

impl SoftmaxHead {
    /// # Panics
    /// Panics if `temperature <= 0`.
    pub fn new(temperature: f64) -> Self {
        assert!(temperature > 0.0, "softmax temperature must be positive");
        SoftmaxHead { temperature }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_value_channel() -> Tensor<f64> {
        Tensor::from_vec([2, 1, 1, 1], vec![1.0, 3.0])
    }

    #[test]
    fn bn_train_standardizes_two_values() {
        let (y, stats) = batch_norm_train(&two_value_channel(), None, 1e-5);
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![1.0]);
        // 1/sqrt(1 + 1e-5) scaled unit deviations.
        let expect = 0.9999950000374997;
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn bn_train_constant_channel_outputs_shift() {
        let x = Tensor::<f64>::filled([3, 2, 2, 1], 4.2);
        let g = [2.0];
        let o = [5.0];
        let (y, _) = batch_norm_train(&x, Some((&g, &o)), 1e-5);
        assert!(y.data().iter().all(|&v| (v - 5.0).abs() < 1e-9));
    }

    #[test]
    fn bn_train_affine_small_epsilon_limit() {
        let g = [2.0];
        let o = [5.0];
        let (y, _) = batch_norm_train(&two_value_channel(), Some((&g, &o)), 1e-14);
        assert!((y.data()[0] - 3.0).abs() < 1e-6);
        assert!((y.data()[1] - 7.0).abs() < 1e-6);
    }

    #[test]
    #[should_panic(expected = "degenerate")]
    fn bn_train_rejects_single_site() {
        let x = Tensor::<f64>::zeros([1, 1, 1, 4]);
        let _ = batch_norm_train(&x, None, 1e-5);
    }

    #[test]
    fn bn_infer_identity_and_constant_cases() {
        let x = Tensor::from_vec([2, 1, 1, 1], vec![0.25, -1.5]);
        let y = batch_norm_infer(&x, &[0.0], &[1.0], &[1.0], &[0.0], 0.0);
        assert_eq!(y, x);
        // x equal to the finalized mean maps to the shift.
        let m = Tensor::<f64>::filled([2, 1, 1, 1], 3.0);
        let y = batch_norm_infer(&m, &[3.0], &[2.0], &[4.0], &[7.0], 1e-5);
        assert!(y.data().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn bn_infer_matches_train_on_its_own_batch() {
        let x = Tensor::<f64>::from_fn([4, 2, 2, 3], |k, h, w, c| {
            ((k * 5 + h * 3 + w * 7 + c * 2) % 13) as f64 * 0.37 - 1.8
        });
        let (y_train, stats) = batch_norm_train(&x, None, 1e-5);
        let y_infer = batch_norm_infer(
            &x,
            &stats.mean,
            &stats.var,
            &vec![1.0; 3],
            &vec![0.0; 3],
            1e-5,
        );
        for (a, b) in y_train.data().iter().zip(y_infer.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_only_centers_and_zeroes_constants() {
        let (y, mean) = mean_only_bn_train(&two_value_channel());
        assert_eq!(mean, vec![2.0]);
        assert_eq!(y.data(), &[-1.0, 1.0]);
        let c = Tensor::<f64>::filled([2, 3, 3, 2], 9.0);
        let (y, _) = mean_only_bn_train(&c);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_only_backward_centers_gradient() {
        let g = Tensor::from_vec([2, 1, 1, 1], vec![3.0, 5.0]);
        let dx = mean_only_bn_backward(&g);
        assert_eq!(dx.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn srelu_values() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![2.0f64, -0.5, -3.0]);
        assert_eq!(srelu(&x).data(), &[2.0, -0.5, -1.0]);
    }

    #[test]
    fn srelu_equals_shifted_relu_identity() {
        // Dense dyadic grid over [-4, 4] including the kink itself; dyadic
        // steps keep x + 1 exactly representable so the comparison is
        // bit-exact, not approximate.
        for i in -4096i64..=4096 {
            let v = i as f64 / 1024.0;
            let x = Tensor::from_vec([1, 1, 1, 1], vec![v]);
            let lhs = srelu(&x).scalar();
            let shifted = Tensor::from_vec([1, 1, 1, 1], vec![v + 1.0]);
            let rhs = relu(&shifted).scalar() - 1.0;
            assert_eq!(lhs, rhs, "x = {v}");
        }
    }

    #[test]
    fn elu_values_and_lower_bounds() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![0.0f64, 1.5, -1.0]);
        let y = elu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 1.5);
        assert!((y.data()[2] - (-0.6321205588285577)).abs() < 1e-15);
        for i in -100..100 {
            let v = i as f64 * 0.37;
            let t = Tensor::from_vec([1, 1, 1, 1], vec![v]);
            assert!(elu(&t).scalar() >= -1.0);
            assert!(srelu(&t).scalar() >= -1.0);
            if v >= 0.0 {
                assert_eq!(elu(&t).scalar(), srelu(&t).scalar());
            }
        }
    }

    #[test]
    fn relu_kink_convention() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![2.0f64, -2.0, 0.0]);
        assert_eq!(relu(&x).data(), &[2.0, 0.0, 0.0]);
        let g = Tensor::<f64>::filled([1, 1, 1, 3], 1.0);
        assert_eq!(relu_backward(&x, &g).data(), &[1.0, 0.0, 1.0]);
        let xs = Tensor::from_vec([1, 1, 1, 3], vec![0.5f64, -1.0, -1.5]);
        assert_eq!(srelu_backward(&xs, &g).data(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn scale_layer_divides() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![70.0f64, 7.0]);
        let y = scale_layer(&x, 70.0);
        assert!((y.data()[0] - 1.0).abs() < 1e-15);
        let id = scale_layer(&x, 1.0);
        assert_eq!(id, x);
    }

    #[test]
    fn softmax_closed_forms() {
        let logits = Tensor::from_vec([1, 1, 1, 2], vec![(2.0f64).ln(), 0.0]);
        let (_, p) = softmax_xent(&logits, &[0]);
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-15);

        let eq = Tensor::<f64>::zeros([1, 1, 1, 5]);
        let (loss, p) = softmax_xent(&eq, &[3]);
        assert!(p.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!((loss - (5.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn softmax_rejects_bad_label() {
        let logits = Tensor::<f64>::zeros([1, 1, 1, 3]);
        let _ = softmax_xent(&logits, &[3]);
    }

    #[test]
    fn scale_then_softmax_equals_temperature_softmax() {
        let logits = Tensor::from_vec([1, 1, 1, 4], vec![1.0f64, -2.0, 0.5, 3.0]);
        let t = 37.0;
        let (_, via_scale) = softmax_xent(&scale_layer(&logits, t), &[0]);
        // Direct temperature form exp(z/T)/sum exp(z/T).
        let denom: f64 = logits.data().iter().map(|z| (z / t).exp()).sum();
        for (i, &p) in via_scale.data().iter().enumerate() {
            let direct = (logits.data()[i] / t).exp() / denom;
            assert!((p - direct).abs() < 1e-15);
        }
    }
}
