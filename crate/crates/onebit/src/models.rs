//! Network topology builders, parameter counting, and graph description.
//!
//! Two families are supported:
//!
//! * a compact residual family for 32x32-class inputs: one 3x3 stem conv,
//!   three stages of `(depth - 2) / 6` two-conv residual blocks at channel
//!   widths `(16, 32, 64) * width`, stride-2 downsampling entering stages
//!   two and three, then a final 1x1 conv to the class count;
//! * a larger-image family (depth 18): 7x7 stride-2 stem, 3x3 stride-2 max
//!   pool, four stages of two blocks at widths `(64, 128, 256, 512) *
//!   width`, stride-2 entering stages two through four, final 1x1 conv.
//!
//! Blocks are post-activation: conv -> (norm) -> act -> conv -> (norm) ->
//! shortcut add -> act. Downsampling shortcuts are parameter-free: 2x2
//! stride-2 average pooling with zero-padded new channels. No convolution
//! carries a bias.
//!
//! The variant decides normalization placement and the head:
//! batch norm after every conv (baselines), a single non-affine batch norm
//! at the head, or no batch norm at all with a constant `1/T` scale before
//! global average pooling (with an optional mean-only centering first).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The six network flavours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    /// Batch norm after every conv plus an input batch norm; learned
    /// gain/shift; ReLU activations.
    Baseline1,
    /// As `Baseline1` but every gain fixed at 1 and shift at 0.
    Baseline2,
    /// A single non-affine batch norm between the final 1x1 conv and the
    /// pool; shifted ReLU everywhere else, no other norms.
    FinalBnOnly,
    /// No batch norm anywhere; shifted ReLU activations and a `1/T` scale
    /// before the pool.
    SreluOnly,
    /// As `SreluOnly` with ELU activations.
    EluOnly,
    /// As `SreluOnly` plus a mean-only centering layer before the scale.
    MeanOnlyFinal,
}

pub const ALL_VARIANTS: [ModelVariant; 6] = [
    ModelVariant::Baseline1,
    ModelVariant::Baseline2,
    ModelVariant::FinalBnOnly,
    ModelVariant::SreluOnly,
    ModelVariant::EluOnly,
    ModelVariant::MeanOnlyFinal,
];

impl ModelVariant {
    /// Canonical lowercase name (used by config files and the CLI).
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Baseline1 => "baseline1",
            ModelVariant::Baseline2 => "baseline2",
            ModelVariant::FinalBnOnly => "finalbnonly",
            ModelVariant::SreluOnly => "sreluonly",
            ModelVariant::EluOnly => "eluonly",
            ModelVariant::MeanOnlyFinal => "meanonlyfinal",
        }
    }

    /// Parse a name, ignoring case, dashes and underscores.
    pub fn parse(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_lowercase();
        for v in ALL_VARIANTS {
            if v.name() == norm {
                return Ok(v);
            }
        }
        Err(Error::Config(format!(
            "unknown variant '{s}'; expected one of baseline1, baseline2, finalbnonly, \
             sreluonly, eluonly, meanonlyfinal"
        )))
    }

    pub fn tag(self) -> u32 {
        ALL_VARIANTS.iter().position(|v| *v == self).unwrap() as u32
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        ALL_VARIANTS
            .get(tag as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown variant tag {tag}")))
    }

    fn bn_everywhere(self) -> bool {
        matches!(self, ModelVariant::Baseline1 | ModelVariant::Baseline2)
    }

    fn activation(self) -> Activation {
        match self {
            ModelVariant::Baseline1 | ModelVariant::Baseline2 => Activation::Relu,
            ModelVariant::EluOnly => Activation::Elu,
            _ => Activation::Srelu,
        }
    }

    fn bn_affine(self) -> bool {
        matches!(self, ModelVariant::Baseline1)
    }

    /// Whether the head divides activations by a temperature constant.
    pub fn uses_temperature(self) -> bool {
        matches!(
            self,
            ModelVariant::SreluOnly | ModelVariant::EluOnly | ModelVariant::MeanOnlyFinal
        )
    }
}

/// Input-size family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchFamily {
    /// 32x32-style inputs, depth `6n + 2`.
    Cifar,
    /// 224x224-style inputs, depth 18.
    ImageNet,
}

impl ArchFamily {
    pub fn name(self) -> &'static str {
        match self {
            ArchFamily::Cifar => "cifar",
            ArchFamily::ImageNet => "imagenet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cifar" => Ok(ArchFamily::Cifar),
            "imagenet" => Ok(ArchFamily::ImageNet),
            other => Err(Error::Config(format!("unknown family '{other}' (cifar|imagenet)"))),
        }
    }

    /// Conventional evaluation input extent.
    pub fn default_input_hw(self) -> usize {
        match self {
            ArchFamily::Cifar => 32,
            ArchFamily::ImageNet => 224,
        }
    }
}

/// Requested architecture.
#[derive(Clone, Copy, Debug)]
pub struct ArchitectureSpec {
    pub family: ArchFamily,
    pub depth: usize,
    pub width: f64,
    pub num_classes: usize,
    /// Single-bit conv weights when true.
    pub quantized: bool,
}

/// Activation function selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Srelu,
    Elu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Srelu => "srelu",
            Activation::Elu => "elu",
        }
    }
}

/// Kind of a normalization slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Batch norm with learned gain/shift.
    BnAffine,
    /// Batch norm with gain fixed at 1, shift at 0.
    BnFixed,
    /// Mean-only centering.
    MeanOnly,
}

/// One normalization slot: channel count plus kind.
#[derive(Clone, Copy, Debug)]
pub struct NormSlot {
    pub channels: usize,
    pub kind: NormKind,
}

/// Graph operation. Each op consumes previously produced values (by index
/// into the op list; the op's own index names its output).
#[derive(Clone, Debug)]
pub enum LayerOp {
    /// The network input; always op 0.
    Input,
    /// Convolution reading weight slot `slot`.
    Conv { input: usize, slot: usize, stride: usize },
    /// Batch norm / mean-only norm reading norm slot `slot`.
    Norm { input: usize, slot: usize },
    /// Fixed per-channel input standardization reading std slot `slot`.
    Standardize { input: usize, slot: usize },
    Act { input: usize, act: Activation },
    /// Constant division by the graph temperature.
    Scale { input: usize },
    Add { a: usize, b: usize },
    /// Parameter-free shortcut: 2x2 stride-2 average pool, channels
    /// zero-padded to `out_c`.
    Downsample { input: usize, out_c: usize },
    MaxPool { input: usize, window: usize, stride: usize },
    GlobalAvgPool { input: usize },
}

/// An executable layer listing for one variant. The last op produces the
/// `(K, 1, 1, num_classes)` logits; softmax/cross-entropy live outside the
/// graph.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub variant: ModelVariant,
    pub spec: ArchitectureSpec,
    pub temperature: f64,
    pub ops: Vec<LayerOp>,
    /// Weight shapes per conv slot, `(R, S, Cin, Cout)`.
    pub conv_shapes: Vec<[usize; 4]>,
    pub norm_slots: Vec<NormSlot>,
    /// Channel counts per standardization slot.
    pub std_slots: Vec<usize>,
}

struct GraphBuilder {
    ops: Vec<LayerOp>,
    conv_shapes: Vec<[usize; 4]>,
    norm_slots: Vec<NormSlot>,
    std_slots: Vec<usize>,
}

impl GraphBuilder {
    fn new() -> Self {
        GraphBuilder {
            ops: vec![LayerOp::Input],
            conv_shapes: Vec::new(),
            norm_slots: Vec::new(),
            std_slots: Vec::new(),
        }
    }

    fn push(&mut self, op: LayerOp) -> usize {
        self.ops.push(op);
        self.ops.len() - 1
    }

    fn conv(&mut self, input: usize, r: usize, s: usize, cin: usize, cout: usize, stride: usize) -> usize {
        self.conv_shapes.push([r, s, cin, cout]);
        let slot = self.conv_shapes.len() - 1;
        self.push(LayerOp::Conv { input, slot, stride })
    }

    fn norm(&mut self, input: usize, channels: usize, kind: NormKind) -> usize {
        self.norm_slots.push(NormSlot { channels, kind });
        let slot = self.norm_slots.len() - 1;
        self.push(LayerOp::Norm { input, slot })
    }

    fn standardize(&mut self, input: usize, channels: usize) -> usize {
        self.std_slots.push(channels);
        let slot = self.std_slots.len() - 1;
        self.push(LayerOp::Standardize { input, slot })
    }

    fn act(&mut self, input: usize, act: Activation) -> usize {
        self.push(LayerOp::Act { input, act })
    }

    /// Input handling: baselines standardize through a non-affine batch
    /// norm; the batch-norm-free variants use fixed dataset statistics.
    fn input_handling(&mut self, variant: ModelVariant, channels: usize) -> usize {
        if variant.bn_everywhere() {
            self.norm(0, channels, NormKind::BnFixed)
        } else {
            self.standardize(0, channels)
        }
    }

    /// Norm (when the variant has one per conv) followed by activation.
    fn norm_act(&mut self, variant: ModelVariant, input: usize, channels: usize) -> usize {
        let mut cur = input;
        if variant.bn_everywhere() {
            let kind = if variant.bn_affine() { NormKind::BnAffine } else { NormKind::BnFixed };
            cur = self.norm(cur, channels, kind);
        }
        self.act(cur, variant.activation())
    }

    /// Two-conv post-activation residual block.
    fn block(
        &mut self,
        variant: ModelVariant,
        x: usize,
        in_c: usize,
        out_c: usize,
        stride: usize,
    ) -> usize {
        if stride == 1 {
            assert_eq!(in_c, out_c, "non-downsampling block cannot change channels");
        }
        let bn = variant.bn_everywhere();
        let kind = if variant.bn_affine() { NormKind::BnAffine } else { NormKind::BnFixed };

        let mut cur = self.conv(x, 3, 3, in_c, out_c, stride);
        if bn {
            cur = self.norm(cur, out_c, kind);
        }
        cur = self.act(cur, variant.activation());
        cur = self.conv(cur, 3, 3, out_c, out_c, 1);
        if bn {
            cur = self.norm(cur, out_c, kind);
        }
        let shortcut = if stride == 2 {
            self.push(LayerOp::Downsample { input: x, out_c })
        } else {
            x
        };
        cur = self.push(LayerOp::Add { a: cur, b: shortcut });
        self.act(cur, variant.activation())
    }

    /// Final 1x1 conv plus the variant-specific head, ending in the pool.
    fn head(&mut self, variant: ModelVariant, input: usize, in_c: usize, classes: usize) -> usize {
        let mut cur = self.conv(input, 1, 1, in_c, classes, 1);
        match variant {
            ModelVariant::Baseline1 => cur = self.norm(cur, classes, NormKind::BnAffine),
            ModelVariant::Baseline2 | ModelVariant::FinalBnOnly => {
                cur = self.norm(cur, classes, NormKind::BnFixed)
            }
            ModelVariant::MeanOnlyFinal => {
                cur = self.norm(cur, classes, NormKind::MeanOnly);
                cur = self.push(LayerOp::Scale { input: cur });
            }
            ModelVariant::SreluOnly | ModelVariant::EluOnly => {
                cur = self.push(LayerOp::Scale { input: cur });
            }
        }
        self.push(LayerOp::GlobalAvgPool { input: cur })
    }

    fn finish(self, variant: ModelVariant, spec: ArchitectureSpec, temperature: f64) -> ModelGraph {
        ModelGraph {
            variant,
            spec,
            temperature,
            ops: self.ops,
            conv_shapes: self.conv_shapes,
            norm_slots: self.norm_slots,
            std_slots: self.std_slots,
        }
    }
}

fn scaled(base: usize, width: f64) -> usize {
    ((base as f64 * width).round() as usize).max(1)
}

/// Build the 32x32-family graph: depth `6n + 2`, stage widths
/// `(16, 32, 64) * width`.
///
/// # Errors
/// Rejects depths not of the form `6n + 2` and non-positive temperatures.
pub fn build_cifar(spec: ArchitectureSpec, variant: ModelVariant, t: f64) -> Result<ModelGraph> {
    if spec.depth < 8 || (spec.depth - 2) % 6 != 0 {
        return Err(Error::Model(format!(
            "depth {} unsupported: expected 6n + 2 (8, 14, 20, ...)",
            spec.depth
        )));
    }
    if t <= 0.0 {
        return Err(Error::Model(format!("temperature {t} must be positive")));
    }
    let blocks = (spec.depth - 2) / 6;
    let widths = [scaled(16, spec.width), scaled(32, spec.width), scaled(64, spec.width)];

    let mut b = GraphBuilder::new();
    let mut cur = b.input_handling(variant, 3);
    cur = b.conv(cur, 3, 3, 3, widths[0], 1);
    cur = b.norm_act(variant, cur, widths[0]);

    let mut channels = widths[0];
    for (stage, &w) in widths.iter().enumerate() {
        for blk in 0..blocks {
            let stride = if stage > 0 && blk == 0 { 2 } else { 1 };
            cur = b.block(variant, cur, channels, w, stride);
            channels = w;
        }
    }
    b.head(variant, cur, channels, spec.num_classes);
    Ok(b.finish(variant, spec, t))
}

/// Build the large-image family graph (depth 18): 7x7/2 stem, 3x3/2 max
/// pool, stage widths `(64, 128, 256, 512) * width`, two blocks per stage.
pub fn build_imagenet(spec: ArchitectureSpec, variant: ModelVariant, t: f64) -> Result<ModelGraph> {
    if spec.depth != 18 {
        return Err(Error::Model(format!("depth {} unsupported: expected 18", spec.depth)));
    }
    if t <= 0.0 {
        return Err(Error::Model(format!("temperature {t} must be positive")));
    }
    let widths = [
        scaled(64, spec.width),
        scaled(128, spec.width),
        scaled(256, spec.width),
        scaled(512, spec.width),
    ];

    let mut b = GraphBuilder::new();
    let mut cur = b.input_handling(variant, 3);
    cur = b.conv(cur, 7, 7, 3, widths[0], 2);
    cur = b.norm_act(variant, cur, widths[0]);
    cur = b.push(LayerOp::MaxPool { input: cur, window: 3, stride: 2 });

    let mut channels = widths[0];
    for (stage, &w) in widths.iter().enumerate() {
        for blk in 0..2 {
            let stride = if stage > 0 && blk == 0 { 2 } else { 1 };
            cur = b.block(variant, cur, channels, w, stride);
            channels = w;
        }
    }
    b.head(variant, cur, channels, spec.num_classes);
    Ok(b.finish(variant, spec, t))
}

/// Build for whichever family the spec names.
pub fn build(spec: ArchitectureSpec, variant: ModelVariant, t: f64) -> Result<ModelGraph> {
    match spec.family {
        ArchFamily::Cifar => build_cifar(spec, variant, t),
        ArchFamily::ImageNet => build_imagenet(spec, variant, t),
    }
}

impl ModelGraph {
    /// Number of weight-carrying conv layers.
    pub fn conv_count(&self) -> usize {
        self.conv_shapes.len()
    }

    /// Total conv weight element count (independent of representation).
    pub fn conv_weight_count(&self) -> usize {
        self.conv_shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Number of batch-norm layers (full norms; mean-only not included).
    pub fn bn_count(&self) -> usize {
        self.norm_slots
            .iter()
            .filter(|s| matches!(s.kind, NormKind::BnAffine | NormKind::BnFixed))
            .count()
    }

    /// True when any norm slot exists (batch or mean-only); such graphs
    /// need statistic finalization before inference.
    pub fn has_norm_layers(&self) -> bool {
        !self.norm_slots.is_empty()
    }

    /// Count of scale layers in the graph.
    pub fn scale_count(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, LayerOp::Scale { .. })).count()
    }

    /// Propagate shapes from a `(K, H, W, 3)` input through every op.
    ///
    /// # Panics
    /// Panics if a shortcut join sees unequal shapes; builders guarantee
    /// this never fires for supported specs.
    pub fn value_shapes(&self, input: [usize; 4]) -> Vec<[usize; 4]> {
        use crate::conv::{conv_geometry, Padding};
        let mut shapes: Vec<[usize; 4]> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let shape = match op {
                LayerOp::Input => input,
                LayerOp::Conv { input, slot, stride } => {
                    let [k, h, w, c] = shapes[*input];
                    let [r, s, cin, cout] = self.conv_shapes[*slot];
                    assert_eq!(c, cin, "conv slot {slot}: channel mismatch");
                    let g = conv_geometry(h, w, r, s, *stride, Padding::Same);
                    [k, g.out_h, g.out_w, cout]
                }
                LayerOp::Norm { input, .. }
                | LayerOp::Standardize { input, .. }
                | LayerOp::Act { input, .. }
                | LayerOp::Scale { input } => shapes[*input],
                LayerOp::Add { a, b } => {
                    assert_eq!(shapes[*a], shapes[*b], "shortcut join shape mismatch");
                    shapes[*a]
                }
                LayerOp::Downsample { input, out_c } => {
                    let [k, h, w, _] = shapes[*input];
                    [k, h / 2, w / 2, *out_c]
                }
                LayerOp::MaxPool { input, window, stride } => {
                    let [k, h, w, c] = shapes[*input];
                    let g = conv_geometry(h, w, *window, *window, *stride, Padding::Same);
                    [k, g.out_h, g.out_w, c]
                }
                LayerOp::GlobalAvgPool { input } => {
                    let [k, _, _, c] = shapes[*input];
                    [k, 1, 1, c]
                }
            };
            shapes.push(shape);
        }
        shapes
    }

    /// Per-layer learned-parameter rows and the total. Conv weights always
    /// count; norm gains/shifts count only when learned. Finalized
    /// statistics and fixed standardization constants are computed, not
    /// learned, and are excluded.
    pub fn count_parameters(&self) -> ParamCount {
        let mut rows = Vec::new();
        let mut total = 0usize;
        for (i, op) in self.ops.iter().enumerate() {
            match op {
                LayerOp::Conv { slot, stride, .. } => {
                    let [r, s, cin, cout] = self.conv_shapes[*slot];
                    let n = r * s * cin * cout;
                    rows.push((format!("{i:>3} conv {r}x{s} {cin}->{cout} /{stride}"), n));
                    total += n;
                }
                LayerOp::Norm { slot, .. } => {
                    let ns = self.norm_slots[*slot];
                    let n = match ns.kind {
                        NormKind::BnAffine => 2 * ns.channels,
                        NormKind::BnFixed | NormKind::MeanOnly => 0,
                    };
                    if n > 0 {
                        rows.push((format!("{i:>3} norm gain+shift c={}", ns.channels), n));
                        total += n;
                    }
                }
                _ => {}
            }
        }
        ParamCount { rows, total }
    }

    /// Human-readable layer listing (one line per op) for docs and diffing.
    pub fn to_text(&self, input_hw: usize) -> String {
        use std::fmt::Write;
        let shapes = self.value_shapes([1, input_hw, input_hw, 3]);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# variant={} family={} depth={} width={} classes={} bits={} temperature={}",
            self.variant.name(),
            self.spec.family.name(),
            self.spec.depth,
            self.spec.width,
            self.spec.num_classes,
            if self.spec.quantized { 1 } else { 32 },
            self.temperature,
        );
        for (i, op) in self.ops.iter().enumerate() {
            let desc = match op {
                LayerOp::Input => "input".to_string(),
                LayerOp::Conv { input, slot, stride } => {
                    let [r, s, cin, cout] = self.conv_shapes[*slot];
                    format!(
                        "conv {r}x{s} {cin}->{cout} stride={stride} in=%{input} params={}",
                        r * s * cin * cout
                    )
                }
                LayerOp::Norm { input, slot } => {
                    let ns = self.norm_slots[*slot];
                    let kind = match ns.kind {
                        NormKind::BnAffine => "bn affine",
                        NormKind::BnFixed => "bn fixed",
                        NormKind::MeanOnly => "mean-only",
                    };
                    format!("{kind} c={} in=%{input}", ns.channels)
                }
                LayerOp::Standardize { input, slot } => {
                    format!("standardize c={} in=%{input}", self.std_slots[*slot])
                }
                LayerOp::Act { input, act } => format!("{} in=%{input}", act.name()),
                LayerOp::Scale { input } => {
                    format!("scale 1/{} in=%{input}", self.temperature)
                }
                LayerOp::Add { a, b } => format!("add %{a} + %{b}"),
                LayerOp::Downsample { input, out_c } => {
                    format!("downsample 2x2/2 pad->{out_c}c in=%{input}")
                }
                LayerOp::MaxPool { input, window, stride } => {
                    format!("maxpool {window}x{window} stride={stride} in=%{input}")
                }
                LayerOp::GlobalAvgPool { input } => format!("gap in=%{input}"),
            };
            let [k, h, w, c] = shapes[i];
            let _ = writeln!(out, "%{i:<3} {desc:<48} out={k}x{h}x{w}x{c}");
        }
        out
    }
}

/// Output of `ModelGraph::count_parameters`.
#[derive(Clone, Debug)]
pub struct ParamCount {
    pub rows: Vec<(String, usize)>,
    pub total: usize,
}

/// Softmax probabilities from logits, applied per sample. (Used outside the
/// training tape, e.g. for reporting.)
pub fn softmax_probs(logits: &Tensor<f32>) -> Tensor<f32> {
    let [k, _, _, n] = logits.shape();
    let mut out = logits.clone();
    for kk in 0..k {
        let row = &mut out.data_mut()[kk * n..(kk + 1) * n];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    out
}
