//! Training: cosine learning-rate schedule, SGD with momentum, the epoch
//! loop with divergence detection, statistic finalization, and evaluation.

use rand::seq::SliceRandom;

use crate::augment::{augment, AugmentCfg};
use crate::data::{batch_from_rows, DataSplit, Dataset};
use crate::error::{Error, Result};
use crate::exec::{
    finalize_norm_statistics, forward_infer, init_params, set_input_standardization, ModelParams,
    TrainForward,
};
use crate::models::ModelGraph;
use crate::rng::{stream, Purpose};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Optimizer and schedule settings. Defaults follow the standard recipe:
/// batch 125, momentum 0.9, weight decay 5e-4, cosine 0.1 -> 1e-5.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerCfg {
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerCfg {
    fn default() -> Self {
        OptimizerCfg {
            lr_start: 0.1,
            lr_end: 1e-5,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 300,
            batch_size: 125,
        }
    }
}

/// Cosine annealing evaluated once per epoch. The endpoints are exact:
/// epoch 0 yields `lr_start` and epoch `total` yields `lr_end`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr_start: f64, lr_end: f64) -> f64 {
    assert!(total_epochs > 0, "schedule needs at least one epoch");
    if epoch == 0 {
        return lr_start;
    }
    if epoch >= total_epochs {
        return lr_end;
    }
    let t = epoch as f64 / total_epochs as f64;
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// One SGD-with-momentum update on a flat parameter slice:
/// `g' = g + wd * w; v = m * v + g'; w = w - lr * v`.
pub fn sgd_momentum_update(
    w: &mut [f32],
    v: &mut [f32],
    g: &[f32],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    assert!(w.len() == v.len() && v.len() == g.len(), "optimizer slice length mismatch");
    let (lr, m, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for ((wi, vi), &gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        let g_eff = gi + wd * *wi;
        *vi = m * *vi + g_eff;
        *wi -= lr * *vi;
    }
}

/// Momentum buffers mirroring the learnable parameters.
pub struct OptimizerState {
    conv: Vec<Vec<f32>>,
    gain: Vec<Vec<f32>>,
    shift: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            conv: params.conv.iter().map(|w| vec![0.0; w.numel()]).collect(),
            gain: params.norms.iter().map(|n| vec![0.0; n.channels()]).collect(),
            shift: params.norms.iter().map(|n| vec![0.0; n.channels()]).collect(),
        }
    }
}

/// Pull gradients off the tape and update every learnable parameter.
/// Weight decay applies to conv weights only; norm gains and shifts are
/// decay-free.
pub fn apply_gradients(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    tape: &mut Tape<f32>,
    fwd: &TrainForward,
    lr: f64,
    opt: &OptimizerCfg,
) {
    for (slot, &leaf) in fwd.conv_leaves.iter().enumerate() {
        let g = tape.take_grad(leaf).expect("conv leaf missing gradient");
        sgd_momentum_update(
            params.conv[slot].data_mut(),
            &mut state.conv[slot],
            g.data(),
            lr,
            opt.momentum,
            opt.weight_decay,
        );
    }
    for (slot, leaf) in fwd.gain_leaves.iter().enumerate() {
        if let Some(leaf) = leaf {
            let g = tape.take_grad(*leaf).expect("gain leaf missing gradient");
            sgd_momentum_update(
                &mut params.norms[slot].gain,
                &mut state.gain[slot],
                g.data(),
                lr,
                opt.momentum,
                0.0,
            );
        }
    }
    for (slot, leaf) in fwd.shift_leaves.iter().enumerate() {
        if let Some(leaf) = leaf {
            let g = tape.take_grad(*leaf).expect("shift leaf missing gradient");
            sgd_momentum_update(
                &mut params.norms[slot].shift,
                &mut state.shift[slot],
                g.data(),
                lr,
                opt.momentum,
                0.0,
            );
        }
    }
}

/// One line of training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Fraction of training samples misclassified (training-mode forward).
    pub train_err: f64,
    /// Populated only when a run evaluates mid-training; the standard loop
    /// reports test error once, after finalization.
    pub test_err: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub samples: usize,
    pub top1_err: f64,
    /// Present when the task has more than five classes.
    pub top5_err: Option<f64>,
}

/// Completed run: final parameters plus the per-epoch trace.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub final_test: Option<EvalResult>,
}

fn count_top1_errors(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let [k, _, _, c] = logits.shape();
    let mut errors = 0;
    for (kk, &label) in labels.iter().enumerate() {
        let row = &logits.data()[kk * c..(kk + 1) * c];
        // total_cmp keeps this well-defined even if a degenerate run
        // produced NaN logits.
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        if pred != label {
            errors += 1;
        }
    }
    debug_assert_eq!(k, labels.len());
    errors
}

fn count_top5_errors(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let [_, _, _, c] = logits.shape();
    let mut errors = 0;
    for (kk, &label) in labels.iter().enumerate() {
        let row = &logits.data()[kk * c..(kk + 1) * c];
        let target = row[label];
        // The label is in the top five iff fewer than five entries beat it.
        let beaten_by = row.iter().filter(|&&v| v > target).count();
        if beaten_by >= 5 {
            errors += 1;
        }
    }
    errors
}

/// Inference-mode evaluation over a split, in batches.
pub fn evaluate(
    graph: &ModelGraph,
    params: &ModelParams,
    ds: &Dataset,
    split: &DataSplit,
    batch_size: usize,
) -> Result<EvalResult> {
    assert!(batch_size > 0);
    let n = split.len();
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size) {
        let (batch, labels) = ds.to_batch(split, chunk);
        let logits = forward_infer(graph, params, &batch, None)?;
        top1 += count_top1_errors(&logits, &labels);
        top5 += count_top5_errors(&logits, &labels);
    }
    Ok(EvalResult {
        samples: n,
        top1_err: top1 as f64 / n as f64,
        top5_err: (ds.num_classes > 5).then(|| top5 as f64 / n as f64),
    })
}

/// Enumerate training batches for statistic finalization: unshuffled,
/// unaugmented, same batch size as training.
fn finalization_batches(ds: &Dataset, batch_size: usize) -> Vec<Tensor<f32>> {
    let indices: Vec<usize> = (0..ds.train.len()).collect();
    indices
        .chunks(batch_size)
        .map(|chunk| ds.to_batch(&ds.train, chunk).0)
        .collect()
}

/// Every number a finished model depends on must be finite. Saturated
/// activations can hold the loss finite while activations (and therefore
/// finalized statistics) overflow, so the loss check alone is not enough.
fn params_numerically_sound(params: &ModelParams) -> bool {
    let finite = |vs: &[f32]| vs.iter().all(|v| v.is_finite());
    params.conv.iter().all(|w| w.all_finite())
        && params.norms.iter().all(|n| {
            finite(&n.gain)
                && finite(&n.shift)
                && n.finalized_mean.as_deref().is_none_or(finite)
                && n.finalized_var.as_deref().is_none_or(finite)
        })
        && params.stds.iter().all(|s| finite(&s.mean) && finite(&s.inv_std))
}

/// Full training run. Deterministic given `(graph, ds, opt, aug, seed)`:
/// initialization, shuffling, and augmentation each draw from their own
/// seeded substream.
///
/// # Errors
/// `Error::Divergence` as soon as a batch loss stops being finite, or
/// (reported with `epoch == opt.epochs`) when the finished parameters or
/// finalized statistics contain non-finite values.
pub fn train(
    graph: &ModelGraph,
    ds: &Dataset,
    opt: &OptimizerCfg,
    aug: &AugmentCfg,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut params = init_params(graph, seed);
    set_input_standardization(&mut params, &ds.channel_mean, &ds.channel_std);
    let mut state = OptimizerState::new(&params);
    let mut shuffle_rng = stream(seed, Purpose::Shuffle);
    let mut augment_rng = stream(seed, Purpose::Augment);
    let mut history = Vec::with_capacity(opt.epochs);

    let n = ds.train.len();
    assert!(n > 0, "empty training split");
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..opt.epochs {
        let lr = cosine_lr(epoch, opt.epochs, opt.lr_start, opt.lr_end);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        let mut err_sum = 0usize;
        for (step, chunk) in order.chunks(opt.batch_size).enumerate() {
            let labels: Vec<usize> = chunk.iter().map(|&i| ds.train.labels[i]).collect();
            let batch = if aug.is_noop() {
                ds.to_batch(&ds.train, chunk).0
            } else {
                let rows: Vec<Vec<u8>> = chunk
                    .iter()
                    .map(|&i| augment(&ds.train.images[i], ds.h, ds.w, aug, &mut augment_rng))
                    .collect();
                let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
                batch_from_rows(&refs, ds.h, ds.w)
            };

            let mut tape = Tape::new();
            let fwd = crate::exec::forward_train(graph, &params, &mut tape, batch, &labels);
            let loss = tape.value(fwd.loss).scalar() as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            err_sum += count_top1_errors(tape.value(fwd.logits), &labels);
            loss_sum += loss * chunk.len() as f64;

            tape.backward(fwd.loss);
            apply_gradients(&mut params, &mut state, &mut tape, &fwd, lr, opt);
        }

        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            train_err: err_sum as f64 / n as f64,
            test_err: None,
        };
        on_epoch(&record);
        history.push(record);
    }

    if graph.has_norm_layers() {
        finalize_norm_statistics(graph, &mut params, finalization_batches(ds, opt.batch_size));
    }
    // Epoch index `opt.epochs` marks the finalization pass.
    if !params_numerically_sound(&params) {
        return Err(Error::Divergence { epoch: opt.epochs, step: 0 });
    }
    let final_test = if ds.test.is_empty() {
        None
    } else {
        Some(evaluate(graph, &params, ds, &ds.test, opt.batch_size)?)
    };
    Ok(TrainOutcome { params, history, final_test })
}
