//! Graph execution: parameter storage, initialization, inference walks,
//! training-tape construction, and normalization statistic finalization.

use rand_distr::{Distribution, Normal};

use crate::binary::{binarize_forward, he_std, pack_weights, packed_conv2d, PackedConvWeights};
use crate::conv::{self, Padding};
use crate::error::{Error, Result};
use crate::layers::{fixed_standardize, scale_layer, BNParams, BnBatchStats};
use crate::models::{Activation, LayerOp, ModelGraph, NormKind};
use crate::rng::{stream, Purpose};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Fixed per-channel standardization constants (dataset statistics).
#[derive(Clone, Debug)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
}

/// All learned and derived state for one model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    /// Real-valued conv weights, one tensor per conv slot. For quantized
    /// models these are the latent weights behind the sign.
    pub conv: Vec<Tensor<f32>>,
    /// Frozen per-layer quantization scale (the initialization std).
    pub sigma0: Vec<f64>,
    pub norms: Vec<BNParams<f32>>,
    pub stds: Vec<ChannelStats>,
}

/// He-style initialization: each conv weight drawn from a normal with
/// std `sqrt(2 / fan_in)`. The same value is frozen as the layer's
/// quantization scale. Norm gains start at 1, shifts at 0; standardization
/// slots start as the identity until dataset statistics are installed.
pub fn init_params(graph: &ModelGraph, seed: u64) -> ModelParams {
    let mut rng = stream(seed, Purpose::Init);
    let mut conv = Vec::with_capacity(graph.conv_shapes.len());
    let mut sigma0 = Vec::with_capacity(graph.conv_shapes.len());
    for &[r, s, cin, cout] in &graph.conv_shapes {
        let fan_in = r * s * cin;
        let std = he_std(fan_in);
        let dist = Normal::new(0.0, std).expect("he std is positive and finite");
        let data: Vec<f32> = (0..r * s * cin * cout)
            .map(|_| dist.sample(&mut rng) as f32)
            .collect();
        conv.push(Tensor::from_vec([r, s, cin, cout], data));
        sigma0.push(std);
    }
    let norms = graph
        .norm_slots
        .iter()
        .map(|slot| match slot.kind {
            NormKind::BnAffine => BNParams::affine(slot.channels),
            NormKind::BnFixed => BNParams::non_affine(slot.channels),
            NormKind::MeanOnly => BNParams::mean_only(slot.channels),
        })
        .collect();
    let stds = graph
        .std_slots
        .iter()
        .map(|&c| ChannelStats { mean: vec![0.0; c], inv_std: vec![1.0; c] })
        .collect();
    ModelParams { conv, sigma0, norms, stds }
}

/// Install dataset channel statistics into every standardization slot.
/// `std` is clamped away from zero before inversion.
pub fn set_input_standardization(params: &mut ModelParams, mean: &[f64], std: &[f64]) {
    for slot in params.stds.iter_mut() {
        assert_eq!(slot.mean.len(), mean.len(), "standardization channel mismatch");
        slot.mean = mean.iter().map(|&m| m as f32).collect();
        slot.inv_std = std.iter().map(|&s| (1.0 / s.max(1e-8)) as f32).collect();
    }
}

/// Pack every conv slot's signs for multiplier-free inference.
pub fn pack_model(params: &ModelParams) -> Vec<PackedConvWeights> {
    params
        .conv
        .iter()
        .zip(&params.sigma0)
        .map(|(w, &s)| pack_weights(w, s))
        .collect()
}

fn use_counts(ops: &[LayerOp]) -> Vec<usize> {
    let mut uses = vec![0usize; ops.len()];
    for op in ops {
        match op {
            LayerOp::Input => {}
            LayerOp::Conv { input, .. }
            | LayerOp::Norm { input, .. }
            | LayerOp::Standardize { input, .. }
            | LayerOp::Act { input, .. }
            | LayerOp::Scale { input }
            | LayerOp::Downsample { input, .. }
            | LayerOp::MaxPool { input, .. }
            | LayerOp::GlobalAvgPool { input } => uses[*input] += 1,
            LayerOp::Add { a, b } => {
                uses[*a] += 1;
                uses[*b] += 1;
            }
        }
    }
    // The last op is the graph output and is always kept.
    *uses.last_mut().unwrap() += 1;
    uses
}

/// Holds op outputs during a walk, dropping each as its last consumer runs
/// so peak memory stays near the widest layer rather than the whole net.
struct ValueStore {
    values: Vec<Option<Tensor<f32>>>,
    uses: Vec<usize>,
}

impl ValueStore {
    fn new(uses: Vec<usize>) -> Self {
        let n = uses.len();
        ValueStore { values: vec![None; n], uses }
    }

    fn put(&mut self, i: usize, v: Tensor<f32>) {
        self.values[i] = Some(v);
    }

    fn get(&self, i: usize) -> &Tensor<f32> {
        self.values[i].as_ref().expect("value consumed before use; op order violated")
    }

    fn consume(&mut self, i: usize) {
        self.uses[i] -= 1;
        if self.uses[i] == 0 {
            self.values[i] = None;
        }
    }

    fn take_last(mut self) -> Tensor<f32> {
        self.values
            .pop()
            .flatten()
            .expect("graph output missing")
    }
}

fn apply_act(x: &Tensor<f32>, act: Activation) -> Tensor<f32> {
    match act {
        Activation::Relu => crate::layers::relu(x),
        Activation::Srelu => crate::layers::srelu(x),
        Activation::Elu => crate::layers::elu(x),
    }
}

/// How conv weights are realized during an inference walk.
enum ConvMode<'a> {
    /// Use the stored real weights directly.
    Float,
    /// Binarize the stored weights on the fly (`sigma0 * sign(w)`).
    Binarized,
    /// Use pre-packed sign bits via the multiplier-free kernel.
    Packed(&'a [PackedConvWeights]),
}

fn infer_walk(
    graph: &ModelGraph,
    params: &ModelParams,
    input: &Tensor<f32>,
    mode: ConvMode,
) -> Result<Tensor<f32>> {
    let t = graph.temperature as f32;
    let mut store = ValueStore::new(use_counts(&graph.ops));
    for (i, op) in graph.ops.iter().enumerate() {
        let value = match op {
            LayerOp::Input => input.clone(),
            LayerOp::Conv { input, slot, stride } => {
                let x = store.get(*input);
                let y = match mode {
                    ConvMode::Float => conv::conv2d(x, &params.conv[*slot], *stride, Padding::Same),
                    ConvMode::Binarized => {
                        let q = binarize_forward(&params.conv[*slot], params.sigma0[*slot] as f32);
                        conv::conv2d(x, &q, *stride, Padding::Same)
                    }
                    ConvMode::Packed(packed) => {
                        packed_conv2d(x, &packed[*slot], *stride, Padding::Same)
                    }
                };
                store.consume(*input);
                y
            }
            LayerOp::Norm { input, slot } => {
                let y = params.norms[*slot].infer(store.get(*input)).map_err(|e| match e {
                    Error::NotFinalized(_) => Error::NotFinalized(*slot),
                    other => other,
                })?;
                store.consume(*input);
                y
            }
            LayerOp::Standardize { input, slot } => {
                let st = &params.stds[*slot];
                let y = fixed_standardize(store.get(*input), &st.mean, &st.inv_std);
                store.consume(*input);
                y
            }
            LayerOp::Act { input, act } => {
                let y = apply_act(store.get(*input), *act);
                store.consume(*input);
                y
            }
            LayerOp::Scale { input } => {
                let y = scale_layer(store.get(*input), t);
                store.consume(*input);
                y
            }
            LayerOp::Add { a, b } => {
                let (va, vb) = (store.get(*a), store.get(*b));
                assert_eq!(va.shape(), vb.shape(), "shortcut join shape mismatch");
                let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
                let y = Tensor::from_vec(va.shape(), data);
                store.consume(*a);
                store.consume(*b);
                y
            }
            LayerOp::Downsample { input, out_c } => {
                let y = conv::avg_pool_downsample(store.get(*input), *out_c);
                store.consume(*input);
                y
            }
            LayerOp::MaxPool { input, window, stride } => {
                let (y, _) = conv::max_pool2d(store.get(*input), *window, *stride, Padding::Same);
                store.consume(*input);
                y
            }
            LayerOp::GlobalAvgPool { input } => {
                let y = conv::global_average_pool(store.get(*input));
                store.consume(*input);
                y
            }
        };
        store.put(i, value);
    }
    Ok(store.take_last())
}

/// Inference forward pass; returns `(K, 1, 1, num_classes)` logits.
///
/// Quantized graphs run on `sigma0 * sign(w)`; pass `packed` to use the
/// multiplier-free kernel instead of materializing the quantized weights.
///
/// # Errors
/// `Error::NotFinalized` when a norm layer lacks finalized statistics.
pub fn forward_infer(
    graph: &ModelGraph,
    params: &ModelParams,
    input: &Tensor<f32>,
    packed: Option<&[PackedConvWeights]>,
) -> Result<Tensor<f32>> {
    let mode = match (graph.spec.quantized, packed) {
        (true, Some(p)) => {
            assert_eq!(p.len(), params.conv.len(), "packed weight count mismatch");
            ConvMode::Packed(p)
        }
        (true, None) => ConvMode::Binarized,
        (false, _) => ConvMode::Float,
    };
    infer_walk(graph, params, input, mode)
}

/// Node handles produced while taping a training forward pass.
pub struct TrainForward {
    /// Scalar mean cross-entropy node.
    pub loss: NodeId,
    /// Logits node (pre-softmax), for error-rate bookkeeping.
    pub logits: NodeId,
    /// Leaf node per conv slot (the real-valued weights).
    pub conv_leaves: Vec<NodeId>,
    /// Gain/shift leaves per norm slot; `None` for slots without learned
    /// terms.
    pub gain_leaves: Vec<Option<NodeId>>,
    pub shift_leaves: Vec<Option<NodeId>>,
    /// The norm op's output node per norm slot (batch-stat source).
    pub norm_nodes: Vec<Option<NodeId>>,
}

/// Build the training-mode graph on `tape` and return the loss plus leaf
/// handles. Norm layers use batch statistics; quantized convs go through
/// the straight-through estimator.
pub fn forward_train(
    graph: &ModelGraph,
    params: &ModelParams,
    tape: &mut Tape<f32>,
    input: Tensor<f32>,
    labels: &[usize],
) -> TrainForward {
    let t = graph.temperature as f32;
    let mut conv_leaves = Vec::with_capacity(params.conv.len());
    let mut conv_used = Vec::with_capacity(params.conv.len());
    for (slot, w) in params.conv.iter().enumerate() {
        let leaf = tape.leaf(w.clone());
        conv_leaves.push(leaf);
        conv_used.push(if graph.spec.quantized {
            tape.binarize_ste(leaf, params.sigma0[slot] as f32)
        } else {
            leaf
        });
    }
    let mut gain_leaves = vec![None; params.norms.len()];
    let mut shift_leaves = vec![None; params.norms.len()];
    let mut norm_nodes = vec![None; params.norms.len()];

    let mut node_of = vec![0usize; graph.ops.len()];
    for (i, op) in graph.ops.iter().enumerate() {
        let node = match op {
            LayerOp::Input => tape.leaf(input.clone()),
            LayerOp::Conv { input, slot, stride } => {
                tape.conv2d(node_of[*input], conv_used[*slot], *stride, Padding::Same)
            }
            LayerOp::Norm { input, slot } => {
                let np = &params.norms[*slot];
                let node = if np.mean_only {
                    tape.mean_only_bn(node_of[*input])
                } else if np.affine_learned {
                    let c = np.channels();
                    let g = tape.leaf(Tensor::from_vec([1, 1, 1, c], np.gain.clone()));
                    let s = tape.leaf(Tensor::from_vec([1, 1, 1, c], np.shift.clone()));
                    gain_leaves[*slot] = Some(g);
                    shift_leaves[*slot] = Some(s);
                    tape.batch_norm_train(node_of[*input], Some(g), Some(s), np.epsilon)
                } else {
                    tape.batch_norm_train(node_of[*input], None, None, np.epsilon)
                };
                norm_nodes[*slot] = Some(node);
                node
            }
            LayerOp::Standardize { input, slot } => {
                let st = &params.stds[*slot];
                tape.fixed_standardize(node_of[*input], &st.mean, &st.inv_std)
            }
            LayerOp::Act { input, act } => match act {
                Activation::Relu => tape.relu(node_of[*input]),
                Activation::Srelu => tape.srelu(node_of[*input]),
                Activation::Elu => tape.elu(node_of[*input]),
            },
            LayerOp::Scale { input } => tape.scale(node_of[*input], t),
            LayerOp::Add { a, b } => tape.add(node_of[*a], node_of[*b]),
            LayerOp::Downsample { input, out_c } => {
                tape.avg_pool_downsample(node_of[*input], *out_c)
            }
            LayerOp::MaxPool { input, window, stride } => {
                tape.max_pool(node_of[*input], *window, *stride, Padding::Same)
            }
            LayerOp::GlobalAvgPool { input } => tape.global_average_pool(node_of[*input]),
        };
        node_of[i] = node;
    }
    let logits = *node_of.last().unwrap();
    let loss = tape.softmax_xent(logits, labels);
    TrainForward { loss, logits, conv_leaves, gain_leaves, shift_leaves, norm_nodes }
}

/// Training-mode walk that only harvests per-batch norm statistics (no
/// tape, intermediates dropped eagerly). Returns one entry per norm slot.
pub fn collect_batch_stats(
    graph: &ModelGraph,
    params: &ModelParams,
    input: &Tensor<f32>,
) -> Vec<BnBatchStats<f32>> {
    let t = graph.temperature as f32;
    let mut stats: Vec<Option<BnBatchStats<f32>>> = vec![None; params.norms.len()];
    let mut store = ValueStore::new(use_counts(&graph.ops));
    for (i, op) in graph.ops.iter().enumerate() {
        let value = match op {
            LayerOp::Input => input.clone(),
            LayerOp::Conv { input, slot, stride } => {
                let x = store.get(*input);
                let y = if graph.spec.quantized {
                    let q = binarize_forward(&params.conv[*slot], params.sigma0[*slot] as f32);
                    conv::conv2d(x, &q, *stride, Padding::Same)
                } else {
                    conv::conv2d(x, &params.conv[*slot], *stride, Padding::Same)
                };
                store.consume(*input);
                y
            }
            LayerOp::Norm { input, slot } => {
                let (y, s) = params.norms[*slot].train(store.get(*input));
                stats[*slot] = Some(s);
                store.consume(*input);
                y
            }
            LayerOp::Standardize { input, slot } => {
                let st = &params.stds[*slot];
                let y = fixed_standardize(store.get(*input), &st.mean, &st.inv_std);
                store.consume(*input);
                y
            }
            LayerOp::Act { input, act } => {
                let y = apply_act(store.get(*input), *act);
                store.consume(*input);
                y
            }
            LayerOp::Scale { input } => {
                let y = scale_layer(store.get(*input), t);
                store.consume(*input);
                y
            }
            LayerOp::Add { a, b } => {
                let (va, vb) = (store.get(*a), store.get(*b));
                let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
                let y = Tensor::from_vec(va.shape(), data);
                store.consume(*a);
                store.consume(*b);
                y
            }
            LayerOp::Downsample { input, out_c } => {
                let y = conv::avg_pool_downsample(store.get(*input), *out_c);
                store.consume(*input);
                y
            }
            LayerOp::MaxPool { input, window, stride } => {
                let (y, _) = conv::max_pool2d(store.get(*input), *window, *stride, Padding::Same);
                store.consume(*input);
                y
            }
            LayerOp::GlobalAvgPool { input } => {
                let y = conv::global_average_pool(store.get(*input));
                store.consume(*input);
                y
            }
        };
        store.put(i, value);
    }
    stats
        .into_iter()
        .map(|s| s.expect("every norm slot is visited by the walk"))
        .collect()
}

/// Freeze inference statistics for every norm layer by averaging per-batch
/// training statistics over `batches`. Weights must not change between
/// batches. Running this again with the same batches reproduces the same
/// statistics (the procedure is idempotent).
pub fn finalize_norm_statistics<I>(graph: &ModelGraph, params: &mut ModelParams, batches: I)
where
    I: IntoIterator<Item = Tensor<f32>>,
{
    if params.norms.is_empty() {
        return;
    }
    let mut acc_mean: Vec<Vec<f64>> =
        params.norms.iter().map(|n| vec![0.0; n.channels()]).collect();
    let mut acc_var: Vec<Vec<f64>> =
        params.norms.iter().map(|n| vec![0.0; n.channels()]).collect();
    let mut count = 0usize;
    for batch in batches {
        let stats = collect_batch_stats(graph, params, &batch);
        for (slot, s) in stats.iter().enumerate() {
            for (acc, &m) in acc_mean[slot].iter_mut().zip(&s.mean) {
                *acc += m as f64;
            }
            for (acc, &v) in acc_var[slot].iter_mut().zip(&s.var) {
                *acc += v as f64;
            }
        }
        count += 1;
    }
    assert!(count > 0, "finalization needs at least one batch");
    let inv = 1.0 / count as f64;
    for (slot, np) in params.norms.iter_mut().enumerate() {
        np.finalized_mean = Some(acc_mean[slot].iter().map(|&m| (m * inv) as f32).collect());
        if !np.mean_only {
            np.finalized_var = Some(acc_var[slot].iter().map(|&v| (v * inv) as f32).collect());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_cifar, ArchFamily, ArchitectureSpec, ModelVariant};
    use rand::Rng;

    fn tiny_spec(variant: ModelVariant, quantized: bool) -> (ModelGraph, ModelParams) {
        let spec = ArchitectureSpec {
            family: ArchFamily::Cifar,
            depth: 8,
            width: 0.5,
            num_classes: 3,
            quantized,
        };
        let t = if variant.uses_temperature() { 50.0 } else { 1.0 };
        let graph = build_cifar(spec, variant, t).unwrap();
        let params = init_params(&graph, 7);
        (graph, params)
    }

    fn rand_input(k: usize, hw: usize, seed: u64) -> Tensor<f32> {
        let mut rng = stream(seed, Purpose::Data);
        let data = (0..k * hw * hw * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec([k, hw, hw, 3], data)
    }

    #[test]
    fn init_matches_graph_slots_and_freezes_he_scale() {
        let (graph, params) = tiny_spec(ModelVariant::SreluOnly, true);
        assert_eq!(params.conv.len(), graph.conv_shapes.len());
        for (w, &[r, s, cin, cout]) in params.conv.iter().zip(&graph.conv_shapes) {
            assert_eq!(w.shape(), [r, s, cin, cout]);
        }
        for (&s0, &[r, s, cin, _]) in params.sigma0.iter().zip(&graph.conv_shapes) {
            assert_eq!(s0, he_std(r * s * cin));
        }
        assert_eq!(params.norms.len(), 0);
        assert_eq!(params.stds.len(), 1);
    }

    #[test]
    fn norm_nets_refuse_inference_until_finalized() {
        let (graph, mut params) = tiny_spec(ModelVariant::Baseline1, false);
        let x = rand_input(4, 16, 1);
        match forward_infer(&graph, &params, &x, None) {
            Err(Error::NotFinalized(_)) => {}
            other => panic!("expected NotFinalized, got {other:?}"),
        }
        finalize_norm_statistics(&graph, &mut params, vec![rand_input(8, 16, 2)]);
        let logits = forward_infer(&graph, &params, &x, None).unwrap();
        assert_eq!(logits.shape(), [4, 1, 1, 3]);
        assert!(logits.all_finite());
    }

    #[test]
    fn finalize_is_idempotent() {
        let (graph, mut params) = tiny_spec(ModelVariant::FinalBnOnly, false);
        let batches = || vec![rand_input(8, 16, 2), rand_input(8, 16, 3)];
        finalize_norm_statistics(&graph, &mut params, batches());
        let first: Vec<_> =
            params.norms.iter().map(|n| n.finalized_mean.clone().unwrap()).collect();
        finalize_norm_statistics(&graph, &mut params, batches());
        let second: Vec<_> =
            params.norms.iter().map(|n| n.finalized_mean.clone().unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn mean_only_finalization_skips_variance() {
        let (graph, mut params) = tiny_spec(ModelVariant::MeanOnlyFinal, false);
        finalize_norm_statistics(&graph, &mut params, vec![rand_input(8, 16, 2)]);
        let np = &params.norms[0];
        assert!(np.mean_only);
        assert!(np.finalized_mean.is_some());
        assert!(np.finalized_var.is_none());
        assert!(np.is_finalized());
        let logits = forward_infer(&graph, &params, &rand_input(2, 16, 4), None).unwrap();
        assert_eq!(logits.shape(), [2, 1, 1, 3]);
    }

    #[test]
    fn norm_free_training_forward_equals_inference_forward() {
        // Without batch statistics, train mode and infer mode compute the
        // same function, and the taped walk must agree exactly with the
        // value-dropping walk, quantized or not.
        for quantized in [false, true] {
            let (graph, params) = tiny_spec(ModelVariant::SreluOnly, quantized);
            let x = rand_input(4, 16, 5);
            let infer = forward_infer(&graph, &params, &x, None).unwrap();
            let mut tape = Tape::new();
            let fwd = forward_train(&graph, &params, &mut tape, x, &[0, 1, 2, 0]);
            assert_eq!(tape.value(fwd.logits).data(), infer.data());
        }
    }

    #[test]
    fn packed_inference_tracks_float_binarized_path() {
        let (graph, params) = tiny_spec(ModelVariant::EluOnly, true);
        let x = rand_input(2, 16, 6);
        let reference = forward_infer(&graph, &params, &x, None).unwrap();
        let packed = pack_model(&params);
        let fast = forward_infer(&graph, &params, &x, Some(&packed)).unwrap();
        assert_eq!(reference.shape(), fast.shape());
        for (&a, &b) in reference.data().iter().zip(fast.data()) {
            let denom = a.abs().max(b.abs()).max(1e-3);
            assert!((a - b).abs() / denom < 1e-3, "packed {b} vs float {a}");
        }
    }

    #[test]
    fn training_forward_exposes_learnable_leaves() {
        let (graph, params) = tiny_spec(ModelVariant::Baseline1, false);
        let x = rand_input(4, 16, 8);
        let mut tape = Tape::new();
        let fwd = forward_train(&graph, &params, &mut tape, x, &[0, 1, 2, 0]);
        assert_eq!(fwd.conv_leaves.len(), graph.conv_shapes.len());
        // Affine norms expose gain and shift; the fixed input norm does not.
        let learned = fwd.gain_leaves.iter().filter(|g| g.is_some()).count();
        let affine = graph.norm_slots.iter().filter(|s| s.kind == NormKind::BnAffine).count();
        assert_eq!(learned, affine);
        tape.backward(fwd.loss);
        for leaf in &fwd.conv_leaves {
            assert!(tape.grad(*leaf).is_some(), "conv leaf without gradient");
        }
    }
}
