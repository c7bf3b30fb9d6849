//! Inference cost census: per-layer multiply / add / comparison counts for
//! one input, plus weight storage size.
//!
//! Counting rules (per output element unless noted):
//!
//! * float conv: `R*S*Cin` multiplies, `R*S*Cin - 1` adds (padded taps are
//!   counted; this is the nominal MAC census);
//! * single-bit conv: `R*S*Cin` sign-selected adds and exactly 1 multiply
//!   (the shared weight scale applied once per output);
//! * activations: 1 comparison (the ELU exponential on the negative branch
//!   is not modeled; the census tracks multiplier cost, not transcendental
//!   cost);
//! * batch norm at inference and fixed standardization: 1 multiply, 1 add;
//! * mean-only centering: 1 add;
//! * constant scale: 1 multiply;
//! * shortcut add: 1 add;
//! * downsampling shortcut: 3 adds and 1 multiply per pooled element over
//!   the original channels (zero-padded channels are free);
//! * max pool: `window^2 - 1` comparisons;
//! * global average pool: `H*W - 1` adds and 1 multiply per channel.

use crate::models::{LayerOp, ModelGraph, NormKind};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCost {
    pub mults: u64,
    pub adds: u64,
    pub comparisons: u64,
}

impl OpCost {
    fn accumulate(&mut self, other: &OpCost) {
        self.mults += other.mults;
        self.adds += other.adds;
        self.comparisons += other.comparisons;
    }
}

#[derive(Clone, Debug)]
pub struct CostRow {
    pub label: String,
    pub cost: OpCost,
}

#[derive(Clone, Debug)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total: OpCost,
    /// Conv weight storage in bits (1 or 32 per weight).
    pub conv_weight_bits: u64,
    /// Learned norm gain/shift storage in bits (32 per value).
    pub norm_param_bits: u64,
    pub input_hw: usize,
}

/// Census for a single input of extent `input_hw`.
pub fn census(graph: &ModelGraph, input_hw: usize) -> CostReport {
    let shapes = graph.value_shapes([1, input_hw, input_hw, 3]);
    let quantized = graph.spec.quantized;
    let mut rows = Vec::new();
    let mut total = OpCost::default();

    for (i, op) in graph.ops.iter().enumerate() {
        let [_, h, w, c] = shapes[i];
        let elems = (h * w * c) as u64;
        let (label, cost) = match op {
            LayerOp::Input => continue,
            LayerOp::Conv { slot, stride, .. } => {
                let [r, s, cin, cout] = graph.conv_shapes[*slot];
                let taps = (r * s * cin) as u64;
                let outs = elems;
                let cost = if quantized {
                    OpCost { mults: outs, adds: outs * taps, comparisons: 0 }
                } else {
                    OpCost { mults: outs * taps, adds: outs * (taps - 1), comparisons: 0 }
                };
                (format!("conv {r}x{s} {cin}->{cout} /{stride}"), cost)
            }
            LayerOp::Norm { slot, .. } => {
                let kind = graph.norm_slots[*slot].kind;
                match kind {
                    NormKind::MeanOnly => (
                        "mean-only".to_string(),
                        OpCost { mults: 0, adds: elems, comparisons: 0 },
                    ),
                    _ => (
                        "batch norm".to_string(),
                        OpCost { mults: elems, adds: elems, comparisons: 0 },
                    ),
                }
            }
            LayerOp::Standardize { .. } => (
                "standardize".to_string(),
                OpCost { mults: elems, adds: elems, comparisons: 0 },
            ),
            LayerOp::Act { act, .. } => (
                act.name().to_string(),
                OpCost { mults: 0, adds: 0, comparisons: elems },
            ),
            LayerOp::Scale { .. } => {
                ("scale".to_string(), OpCost { mults: elems, adds: 0, comparisons: 0 })
            }
            LayerOp::Add { .. } => {
                ("add".to_string(), OpCost { mults: 0, adds: elems, comparisons: 0 })
            }
            LayerOp::Downsample { input, .. } => {
                let [_, _, _, in_c] = shapes[*input];
                let pooled = (h * w * in_c) as u64;
                (
                    "downsample".to_string(),
                    OpCost { mults: pooled, adds: 3 * pooled, comparisons: 0 },
                )
            }
            LayerOp::MaxPool { window, stride, .. } => {
                let per = (window * window - 1) as u64;
                (
                    format!("maxpool {window}x{window} /{stride}"),
                    OpCost { mults: 0, adds: 0, comparisons: elems * per },
                )
            }
            LayerOp::GlobalAvgPool { input } => {
                let [_, ih, iw, ic] = shapes[*input];
                let per_channel = (ih * iw - 1) as u64;
                (
                    "global avg pool".to_string(),
                    OpCost { mults: ic as u64, adds: ic as u64 * per_channel, comparisons: 0 },
                )
            }
        };
        total.accumulate(&cost);
        rows.push(CostRow { label: format!("%{i:<3} {label}"), cost });
    }

    let bits_per_weight = if quantized { 1 } else { 32 };
    let conv_weight_bits = graph.conv_weight_count() as u64 * bits_per_weight;
    let norm_param_bits: u64 = graph
        .norm_slots
        .iter()
        .filter(|s| s.kind == NormKind::BnAffine)
        .map(|s| 2 * s.channels as u64 * 32)
        .sum();

    CostReport { rows, total, conv_weight_bits, norm_param_bits, input_hw }
}

impl CostReport {
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<40} {:>14} {:>14} {:>14}",
            format!("layer (input {0}x{0})", self.input_hw),
            "mults",
            "adds",
            "cmps"
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<40} {:>14} {:>14} {:>14}",
                row.label, row.cost.mults, row.cost.adds, row.cost.comparisons
            );
        }
        let _ = writeln!(
            out,
            "{:<40} {:>14} {:>14} {:>14}",
            "total", self.total.mults, self.total.adds, self.total.comparisons
        );
        let _ = writeln!(out, "conv weight storage: {} bits", self.conv_weight_bits);
        let _ = writeln!(out, "norm parameter storage: {} bits", self.norm_param_bits);
        out
    }
}
