//! Reverse-mode automatic differentiation.
//!
//! A `Tape` records operations in the order they execute, so node ids are
//! already a topological order: every operation's inputs have smaller ids.
//! `backward` walks the ids in reverse from a scalar loss, accumulating
//! gradients of identical shape to each node's value.
//!
//! One training step builds and consumes one tape; tapes are not shared
//! across threads (individual kernels may parallelize internally).

use crate::binary;
use crate::conv::{self, Padding};
use crate::layers::{self, BnBatchStats};
use crate::tensor::{Element, Tensor};

/// Index of a node on the tape.
pub type NodeId = usize;

enum Op<E: Element> {
    Leaf,
    Conv2d { input: NodeId, weights: NodeId, stride: usize, pad: Padding },
    BinarizeSte { input: NodeId, sigma0: E },
    BatchNormTrain {
        input: NodeId,
        gain: Option<NodeId>,
        shift: Option<NodeId>,
        epsilon: E,
        stats: BnBatchStats<E>,
    },
    MeanOnlyBn { input: NodeId },
    FixedStandardize { input: NodeId, inv_std: Vec<E> },
    Srelu { input: NodeId },
    Relu { input: NodeId },
    Elu { input: NodeId },
    Scale { input: NodeId, t: E },
    Add { a: NodeId, b: NodeId },
    GlobalAvgPool { input: NodeId },
    AvgPoolDownsample { input: NodeId },
    MaxPool { input: NodeId, argmax: Vec<usize> },
    SoftmaxXent { logits: NodeId, labels: Vec<usize>, probs: Tensor<E> },
    WeightedSum { input: NodeId, coeffs: Tensor<E> },
}

struct Node<E: Element> {
    value: Tensor<E>,
    grad: Option<Tensor<E>>,
    op: Op<E>,
}

/// Recorded computation graph for one forward/backward pass.
pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> NodeId {
        self.nodes.push(Node { value, grad: None, op });
        self.nodes.len() - 1
    }

    /// Record an input or parameter node.
    pub fn leaf(&mut self, value: Tensor<E>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Value produced by a node.
    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id].value
    }

    /// Gradient accumulated at a node, if it was reached by `backward`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<E>> {
        self.nodes[id].grad.as_ref()
    }

    /// Remove and return a node's gradient.
    pub fn take_grad(&mut self, id: NodeId) -> Option<Tensor<E>> {
        self.nodes[id].grad.take()
    }

    pub fn conv2d(&mut self, input: NodeId, weights: NodeId, stride: usize, pad: Padding) -> NodeId {
        let y = conv::conv2d(&self.nodes[input].value, &self.nodes[weights].value, stride, pad);
        self.push(y, Op::Conv2d { input, weights, stride, pad })
    }

    /// Quantized view of a shadow weight node: `sigma0 * sign(w)` forward,
    /// straight-through `sigma0 * g` backward.
    pub fn binarize_ste(&mut self, input: NodeId, sigma0: E) -> NodeId {
        let y = binary::binarize_forward(&self.nodes[input].value, sigma0);
        self.push(y, Op::BinarizeSte { input, sigma0 })
    }

    /// Training-mode batch norm; differentiates through the batch
    /// statistics. `gain`/`shift` are optional `(1,1,1,C)` parameter nodes.
    pub fn batch_norm_train(
        &mut self,
        input: NodeId,
        gain: Option<NodeId>,
        shift: Option<NodeId>,
        epsilon: E,
    ) -> NodeId {
        let affine = gain.map(|g| {
            let s = shift.expect("batch_norm_train: gain without shift");
            (self.nodes[g].value.data(), self.nodes[s].value.data())
        });
        let (y, stats) = layers::batch_norm_train(&self.nodes[input].value, affine, epsilon);
        self.push(y, Op::BatchNormTrain { input, gain, shift, epsilon, stats })
    }

    /// Batch statistics recorded by a `batch_norm_train` node.
    pub fn bn_stats(&self, id: NodeId) -> &BnBatchStats<E> {
        match &self.nodes[id].op {
            Op::BatchNormTrain { stats, .. } => stats,
            _ => panic!("bn_stats: node {id} is not a batch_norm_train node"),
        }
    }

    pub fn mean_only_bn(&mut self, input: NodeId) -> NodeId {
        let (y, _) = layers::mean_only_bn_train(&self.nodes[input].value);
        self.push(y, Op::MeanOnlyBn { input })
    }

    /// Fixed per-channel standardization by dataset constants.
    pub fn fixed_standardize(&mut self, input: NodeId, mean: &[E], inv_std: &[E]) -> NodeId {
        let y = layers::fixed_standardize(&self.nodes[input].value, mean, inv_std);
        self.push(y, Op::FixedStandardize { input, inv_std: inv_std.to_vec() })
    }

    pub fn srelu(&mut self, input: NodeId) -> NodeId {
        let y = layers::srelu(&self.nodes[input].value);
        self.push(y, Op::Srelu { input })
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let y = layers::relu(&self.nodes[input].value);
        self.push(y, Op::Relu { input })
    }

    pub fn elu(&mut self, input: NodeId) -> NodeId {
        let y = layers::elu(&self.nodes[input].value);
        self.push(y, Op::Elu { input })
    }

    pub fn scale(&mut self, input: NodeId, t: E) -> NodeId {
        let y = layers::scale_layer(&self.nodes[input].value, t);
        self.push(y, Op::Scale { input, t })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let y = Tensor::from_vec(va.shape(), data);
        self.push(y, Op::Add { a, b })
    }

    pub fn global_average_pool(&mut self, input: NodeId) -> NodeId {
        let y = conv::global_average_pool(&self.nodes[input].value);
        self.push(y, Op::GlobalAvgPool { input })
    }

    pub fn avg_pool_downsample(&mut self, input: NodeId, out_c: usize) -> NodeId {
        let y = conv::avg_pool_downsample(&self.nodes[input].value, out_c);
        self.push(y, Op::AvgPoolDownsample { input })
    }

    pub fn max_pool(&mut self, input: NodeId, window: usize, stride: usize, pad: Padding) -> NodeId {
        let (y, argmax) = conv::max_pool2d(&self.nodes[input].value, window, stride, pad);
        self.push(y, Op::MaxPool { input, argmax })
    }

    /// Mean cross-entropy over softmax probabilities; yields a scalar node.
    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let (loss, probs) = layers::softmax_xent(&self.nodes[logits].value, labels);
        let value = Tensor::from_vec([1, 1, 1, 1], vec![loss]);
        self.push(value, Op::SoftmaxXent { logits, labels: labels.to_vec(), probs })
    }

    /// Scalar loss `sum(coeffs * x)`; handy for exercising layer gradients.
    pub fn weighted_sum(&mut self, input: NodeId, coeffs: Tensor<E>) -> NodeId {
        let v = &self.nodes[input].value;
        assert_eq!(v.shape(), coeffs.shape(), "weighted_sum: shape mismatch");
        let s = v
            .data()
            .iter()
            .zip(coeffs.data())
            .fold(E::zero(), |acc, (&x, &c)| acc + x * c);
        let value = Tensor::from_vec([1, 1, 1, 1], vec![s]);
        self.push(value, Op::WeightedSum { input, coeffs })
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor<E>) {
        match &mut self.nodes[id].grad {
            Some(g) => {
                assert_eq!(g.shape(), delta.shape(), "gradient shape mismatch at node {id}");
                for (a, &d) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse pass from a scalar loss node. Gradients of every node
    /// reachable from the loss become available through `grad`.
    ///
    /// # Panics
    /// Panics if the loss node is not `1x1x1x1`.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(
            self.nodes[loss].value.shape(),
            [1, 1, 1, 1],
            "backward: loss must be scalar"
        );
        self.nodes[loss].grad = Some(Tensor::filled([1, 1, 1, 1], E::one()));

        for i in (0..=loss).rev() {
            let Some(g) = self.nodes[i].grad.clone() else { continue };
            let contribs: Vec<(NodeId, Tensor<E>)> = match &self.nodes[i].op {
                Op::Leaf => Vec::new(),
                Op::Conv2d { input, weights, stride, pad } => {
                    let x = &self.nodes[*input].value;
                    let w = &self.nodes[*weights].value;
                    vec![
                        (*input, conv::conv2d_grad_input(&g, w, x.shape(), *stride, *pad)),
                        (*weights, conv::conv2d_grad_weights(x, &g, w.shape(), *stride, *pad)),
                    ]
                }
                Op::BinarizeSte { input, sigma0 } => {
                    vec![(*input, binary::binarize_backward(&g, *sigma0))]
                }
                Op::BatchNormTrain { input, gain, shift, epsilon, stats } => {
                    let x = &self.nodes[*input].value;
                    let gain_vals = gain.map(|gi| self.nodes[gi].value.data());
                    let (dx, affine) =
                        layers::batch_norm_train_backward(x, stats, gain_vals, *epsilon, &g);
                    let mut out = vec![(*input, dx)];
                    if let Some((dg, ds)) = affine {
                        let c = dg.len();
                        out.push((gain.unwrap(), Tensor::from_vec([1, 1, 1, c], dg)));
                        out.push((shift.unwrap(), Tensor::from_vec([1, 1, 1, c], ds)));
                    }
                    out
                }
                Op::MeanOnlyBn { input } => {
                    vec![(*input, layers::mean_only_bn_backward(&g))]
                }
                Op::FixedStandardize { input, inv_std } => {
                    let c = inv_std.len();
                    let data = g
                        .data()
                        .chunks_exact(c)
                        .flat_map(|row| row.iter().zip(inv_std).map(|(&gv, &s)| gv * s))
                        .collect();
                    vec![(*input, Tensor::from_vec(g.shape(), data))]
                }
                Op::Srelu { input } => {
                    vec![(*input, layers::srelu_backward(&self.nodes[*input].value, &g))]
                }
                Op::Relu { input } => {
                    vec![(*input, layers::relu_backward(&self.nodes[*input].value, &g))]
                }
                Op::Elu { input } => {
                    vec![(*input, layers::elu_backward(&self.nodes[*input].value, &g))]
                }
                Op::Scale { input, t } => {
                    let inv = E::one() / *t;
                    vec![(*input, g.map(|v| v * inv))]
                }
                Op::Add { a, b } => vec![(*a, g.clone()), (*b, g)],
                Op::GlobalAvgPool { input } => {
                    let shape = self.nodes[*input].value.shape();
                    vec![(*input, conv::global_average_pool_backward(&g, shape))]
                }
                Op::AvgPoolDownsample { input } => {
                    let shape = self.nodes[*input].value.shape();
                    vec![(*input, conv::avg_pool_downsample_backward(&g, shape))]
                }
                Op::MaxPool { input, argmax } => {
                    let shape = self.nodes[*input].value.shape();
                    vec![(*input, conv::max_pool2d_backward(&g, argmax, shape))]
                }
                Op::SoftmaxXent { logits, labels, probs } => {
                    let up = g.scalar();
                    vec![(*logits, layers::softmax_xent_backward(probs, labels, up))]
                }
                Op::WeightedSum { input, coeffs } => {
                    let up = g.scalar();
                    vec![(*input, coeffs.map(|c| c * up))]
                }
            };
            for (id, delta) in contribs {
                self.accumulate(id, delta);
            }
        }
    }
}
