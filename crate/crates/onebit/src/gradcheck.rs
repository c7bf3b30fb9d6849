//! Finite-difference verification of every backward pass.
//!
//! `finite_difference_check` compares a tape's analytic gradient against
//! central differences at 64-bit precision. The check suite covers each
//! differentiable operation plus a composed network chain; inputs are
//! seeded and resampled away from activation kinks so the comparisons are
//! deterministic and meaningful.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::conv::Padding;
use crate::rng::{stream, Purpose};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Default perturbation for 64-bit checks.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative-error tolerance every backward pass must satisfy.
pub const TOLERANCE: f64 = 1e-4;

/// Compare the analytic gradient of a scalar-valued tape program against
/// central finite differences.
///
/// `build` receives a fresh tape and the id of the input leaf and must
/// return the loss node; it is invoked once per perturbed evaluation and
/// must be deterministic. Returns the maximum over elements of
/// `|analytic - central| / max(|analytic|, |central|, 1e-12)`.
pub fn finite_difference_check<F>(build: F, x: &Tensor<f64>, eps: f64) -> f64
where
    F: Fn(&mut Tape<f64>, NodeId) -> NodeId,
{
    assert!(eps > 0.0, "finite_difference_check: eps must be positive");

    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let loss = build(&mut tape, xid);
    tape.backward(loss);
    let analytic = tape
        .grad(xid)
        .expect("finite_difference_check: input unreachable from loss")
        .clone();

    let eval = |probe: &Tensor<f64>| -> f64 {
        let mut t = Tape::new();
        let id = t.leaf(probe.clone());
        let l = build(&mut t, id);
        t.value(l).scalar()
    };

    let mut max_rel = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe);
        probe.data_mut()[i] = orig;

        let central = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - central).abs() / a.abs().max(central.abs()).max(1e-12);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

/// One row of the gradient suite: an operation name and its measured
/// maximum relative error.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub max_rel_err: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Random tensor resampled so no entry lies within `margin` of `kink`.
fn rand_tensor_away_from(
    rng: &mut ChaCha8Rng,
    shape: [usize; 4],
    kink: f64,
    margin: f64,
) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| loop {
        let v = rng.gen_range(-2.0..2.0);
        if (v - kink).abs() > margin {
            return v;
        }
    })
}

/// Run finite-difference checks over every differentiable operation.
///
/// Entries named `op/input` perturb the data path, `op/weights` (etc.) the
/// parameter path. The `ste_chain` entries exercise a convolution through
/// the sign quantizer: the input gradient is a true derivative and is
/// checked by finite differences; the shadow-weight rule is checked as the
/// exact identity `grad(shadow) == sigma0 * grad(binarized)` (the sign
/// function itself has zero derivative almost everywhere, so differencing
/// the shadow weights would measure nothing).
pub fn gradient_suite(seed: u64) -> Vec<SuiteEntry> {
    let mut rng = stream(seed, Purpose::Check);
    let mut entries = Vec::new();

    // Shared fixtures.
    let conv_x = rand_tensor(&mut rng, [2, 6, 6, 3], -1.5, 1.5);
    let conv_w = rand_tensor(&mut rng, [3, 3, 3, 4], -1.0, 1.0);
    let coeff_seed: u64 = rng.gen();

    // Deterministic per-shape loss coefficients so every check reduces to a
    // scalar with nontrivial upstream gradients.
    let coeffs = move |shape: [usize; 4]| -> Tensor<f64> {
        let mut r = stream(coeff_seed, Purpose::Check);
        Tensor::from_fn(shape, |_, _, _, _| r.gen_range(-1.0..1.0))
    };

    {
        let w = conv_w.clone();
        let err = finite_difference_check(
            |tape, x| {
                let wid = tape.leaf(w.clone());
                let y = tape.conv2d(x, wid, 2, Padding::Same);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &conv_x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "conv2d/input", max_rel_err: err });
    }
    {
        let x = conv_x.clone();
        let err = finite_difference_check(
            |tape, wid| {
                let xid = tape.leaf(x.clone());
                let y = tape.conv2d(xid, wid, 1, Padding::Same);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &conv_w,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "conv2d/weights", max_rel_err: err });
    }

    // Batch norm with learned affine terms: input, gain and shift paths.
    let bn_x = rand_tensor(&mut rng, [4, 3, 3, 2], -2.0, 2.0);
    let bn_gain = rand_tensor(&mut rng, [1, 1, 1, 2], 0.5, 1.5);
    let bn_shift = rand_tensor(&mut rng, [1, 1, 1, 2], -0.5, 0.5);
    {
        let (g, o) = (bn_gain.clone(), bn_shift.clone());
        let err = finite_difference_check(
            |tape, x| {
                let gid = tape.leaf(g.clone());
                let oid = tape.leaf(o.clone());
                let y = tape.batch_norm_train(x, Some(gid), Some(oid), 1e-5);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &bn_x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "batch_norm_train/input", max_rel_err: err });
    }
    {
        let (x, o) = (bn_x.clone(), bn_shift.clone());
        let err = finite_difference_check(
            |tape, gid| {
                let xid = tape.leaf(x.clone());
                let oid = tape.leaf(o.clone());
                let y = tape.batch_norm_train(xid, Some(gid), Some(oid), 1e-5);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &bn_gain,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "batch_norm_train/gain", max_rel_err: err });
    }
    {
        let (x, g) = (bn_x.clone(), bn_gain.clone());
        let err = finite_difference_check(
            |tape, oid| {
                let xid = tape.leaf(x.clone());
                let gid = tape.leaf(g.clone());
                let y = tape.batch_norm_train(xid, Some(gid), Some(oid), 1e-5);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &bn_shift,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "batch_norm_train/shift", max_rel_err: err });
    }

    {
        let x = rand_tensor(&mut rng, [3, 2, 2, 3], -2.0, 2.0);
        let err = finite_difference_check(
            |tape, xid| {
                let y = tape.mean_only_bn(xid);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "mean_only_bn", max_rel_err: err });
    }

    {
        let x = rand_tensor_away_from(&mut rng, [2, 4, 4, 2], -1.0, 0.05);
        let err = finite_difference_check(
            |tape, xid| {
                let y = tape.srelu(xid);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "srelu", max_rel_err: err });
    }
    {
        let x = rand_tensor_away_from(&mut rng, [2, 4, 4, 2], 0.0, 0.05);
        let err = finite_difference_check(
            |tape, xid| {
                let y = tape.relu(xid);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "relu", max_rel_err: err });
    }
    {
        let x = rand_tensor_away_from(&mut rng, [2, 4, 4, 2], 0.0, 0.05);
        let err = finite_difference_check(
            |tape, xid| {
                let y = tape.elu(xid);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "elu", max_rel_err: err });
    }

    {
        let x = rand_tensor(&mut rng, [2, 3, 3, 4], -3.0, 3.0);
        let err = finite_difference_check(
            |tape, xid| {
                let y = tape.scale(xid, 50.0);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "scale_layer", max_rel_err: err });
    }

    {
        let x = rand_tensor(&mut rng, [2, 4, 4, 3], -2.0, 2.0);
        let err = finite_difference_check(
            |tape, xid| {
                let y = tape.global_average_pool(xid);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "global_average_pool", max_rel_err: err });
    }

    {
        let x = rand_tensor(&mut rng, [2, 4, 4, 2], -2.0, 2.0);
        let b = rand_tensor(&mut rng, [2, 4, 4, 2], -2.0, 2.0);
        let err = finite_difference_check(
            |tape, xid| {
                let bid = tape.leaf(b.clone());
                let y = tape.add(xid, bid);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "add", max_rel_err: err });
    }

    {
        let x = rand_tensor(&mut rng, [2, 4, 4, 2], -2.0, 2.0);
        let err = finite_difference_check(
            |tape, xid| {
                let y = tape.avg_pool_downsample(xid, 4);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "avg_pool_downsample", max_rel_err: err });
    }

    {
        // Continuous random draws never tie, so the argmax is stable under
        // the probe perturbations.
        let x = rand_tensor(&mut rng, [2, 6, 6, 2], -2.0, 2.0);
        let err = finite_difference_check(
            |tape, xid| {
                let y = tape.max_pool(xid, 3, 2, Padding::Same);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "max_pool", max_rel_err: err });
    }

    {
        let logits = rand_tensor(&mut rng, [4, 1, 1, 5], -2.0, 2.0);
        let labels = vec![0usize, 2, 4, 1];
        let err = finite_difference_check(
            |tape, xid| tape.softmax_xent(xid, &labels),
            &logits,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "softmax_xent", max_rel_err: err });
    }

    {
        // STE chain, data path: true derivative through conv with
        // binarized (constant) weights.
        let x = rand_tensor(&mut rng, [1, 5, 5, 2], -1.0, 1.0);
        let shadow = rand_tensor(&mut rng, [3, 3, 2, 3], -1.0, 1.0);
        let err = finite_difference_check(
            |tape, xid| {
                let wid = tape.leaf(shadow.clone());
                let bid = tape.binarize_ste(wid, 0.2);
                let y = tape.conv2d(xid, bid, 1, Padding::Same);
                let cs = coeffs(tape.value(y).shape());
                tape.weighted_sum(y, cs)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "ste_chain/input", max_rel_err: err });
    }
    {
        // STE chain, shadow path: exact algebraic identity.
        let x = rand_tensor(&mut rng, [1, 5, 5, 2], -1.0, 1.0);
        let shadow = rand_tensor(&mut rng, [3, 3, 2, 3], -1.0, 1.0);
        let sigma0 = 0.2;
        let mut tape = Tape::new();
        let xid = tape.leaf(x);
        let wid = tape.leaf(shadow);
        let bid = tape.binarize_ste(wid, sigma0);
        let y = tape.conv2d(xid, bid, 1, Padding::Same);
        let cs = coeffs(tape.value(y).shape());
        let loss = tape.weighted_sum(y, cs);
        tape.backward(loss);
        let g_bin = tape.grad(bid).unwrap();
        let g_shadow = tape.grad(wid).unwrap();
        let mut max_err = 0.0f64;
        for (&gs, &gb) in g_shadow.data().iter().zip(g_bin.data()) {
            let want = gb * sigma0;
            max_err = max_err.max((gs - want).abs() / want.abs().max(1e-12));
        }
        entries.push(SuiteEntry { name: "ste_chain/shadow_identity", max_rel_err: max_err });
    }

    {
        // Composed network chain: conv -> batch norm -> shifted relu ->
        // conv -> shortcut add -> global pool -> cross-entropy.
        let x = rand_tensor(&mut rng, [3, 4, 4, 2], -1.0, 1.0);
        let w1 = rand_tensor(&mut rng, [3, 3, 2, 4], -0.7, 0.7);
        let w2 = rand_tensor(&mut rng, [3, 3, 4, 4], -0.7, 0.7);
        let labels = vec![1usize, 0, 2];
        let err = finite_difference_check(
            |tape, xid| {
                let w1id = tape.leaf(w1.clone());
                let w2id = tape.leaf(w2.clone());
                let c1 = tape.conv2d(xid, w1id, 1, Padding::Same);
                let n1 = tape.batch_norm_train(c1, None, None, 1e-5);
                let a1 = tape.srelu(n1);
                let c2 = tape.conv2d(a1, w2id, 1, Padding::Same);
                let sum = tape.add(c2, a1);
                let pooled = tape.global_average_pool(sum);
                tape.softmax_xent(pooled, &labels)
            },
            &x,
            DEFAULT_EPS,
        );
        entries.push(SuiteEntry { name: "composite_chain", max_rel_err: err });
    }

    entries
}
