//! Model file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "BNWM"
//! version u32      currently 1
//! variant u32      ModelVariant tag
//! count   u32      number of records
//! records ...
//! crc     u32      CRC-32 of everything above
//! ```
//!
//! Each record is `kind: u32`, `shape: 4 x u32`, `quantized: u8`, then
//! `sigma0: f64` (present only when `quantized == 1`), `payload_len: u64`,
//! and `payload_len` payload bytes.
//!
//! Record kinds:
//! * 0: architecture metadata. `shape = [family, depth, num_classes,
//!   quantized]`, payload = `width: f64, temperature: f64`. Always first;
//!   lets a reader rebuild the graph without side information.
//! * 1: conv weights, `shape = (R, S, Cin, Cout)`. Float payload is `f32`
//!   weights in storage order; quantized payload is LSB-first sign bits
//!   (1 bit per weight, `sigma0` in the header).
//! * 2: batch norm, `shape = [C, affine, 0, 0]`, payload = gain, shift,
//!   finalized mean, finalized variance (each `C x f32`).
//! * 3: mean-only norm, `shape = [C, 0, 0, 0]`, payload = finalized mean.
//! * 4: input standardization, `shape = [C, 0, 0, 0]`, payload = mean and
//!   inverse std (each `C x f32`).
//!
//! Exported models are inference artifacts: norm statistics must be
//! finalized, and quantized files carry only sign bits plus the per-layer
//! scale (the real-valued training weights are not stored).

use std::fs;
use std::path::Path;

use crate::binary::{he_std, pack_weights, unpack_weights, PackedConvWeights};
use crate::error::{Error, Result};
use crate::exec::{ChannelStats, ModelParams};
use crate::layers::{BNParams, BN_EPSILON};
use crate::models::{build, ArchFamily, ArchitectureSpec, ModelGraph, ModelVariant, NormKind};

pub const MAGIC: &[u8; 4] = b"BNWM";
pub const VERSION: u32 = 1;

const KIND_ARCH: u32 = 0;
const KIND_CONV: u32 = 1;
const KIND_BN: u32 = 2;
const KIND_MEAN_ONLY: u32 = 3;
const KIND_STANDARDIZE: u32 = 4;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32_slice(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_record(
    out: &mut Vec<u8>,
    kind: u32,
    shape: [u32; 4],
    sigma0: Option<f64>,
    payload: &[u8],
) {
    put_u32(out, kind);
    for s in shape {
        put_u32(out, s);
    }
    out.push(u8::from(sigma0.is_some()));
    if let Some(s) = sigma0 {
        put_f64(out, s);
    }
    put_u64(out, payload.len() as u64);
    out.extend_from_slice(payload);
}

/// Serialize a finalized model to bytes.
///
/// # Errors
/// `Error::NotFinalized` when any norm layer lacks inference statistics.
pub fn encode_model(graph: &ModelGraph, params: &ModelParams) -> Result<Vec<u8>> {
    for (slot, np) in params.norms.iter().enumerate() {
        if !np.is_finalized() {
            return Err(Error::NotFinalized(slot));
        }
    }
    let spec = graph.spec;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, graph.variant.tag());
    let count = 1 + params.conv.len() + params.norms.len() + params.stds.len();
    put_u32(&mut out, count as u32);

    let mut payload = Vec::with_capacity(16);
    put_f64(&mut payload, spec.width);
    put_f64(&mut payload, graph.temperature);
    let family = match spec.family {
        ArchFamily::Cifar => 0,
        ArchFamily::ImageNet => 1,
    };
    put_record(
        &mut out,
        KIND_ARCH,
        [family, spec.depth as u32, spec.num_classes as u32, u32::from(spec.quantized)],
        None,
        &payload,
    );

    for (w, &sigma0) in params.conv.iter().zip(&params.sigma0) {
        let shape = w.shape().map(|s| s as u32);
        if spec.quantized {
            let packed = pack_weights(w, sigma0);
            put_record(&mut out, KIND_CONV, shape, Some(sigma0), &packed.sign_bits);
        } else {
            let mut payload = Vec::with_capacity(4 * w.numel());
            put_f32_slice(&mut payload, w.data());
            put_record(&mut out, KIND_CONV, shape, None, &payload);
        }
    }

    for np in &params.norms {
        let c = np.channels() as u32;
        if np.mean_only {
            let mut payload = Vec::with_capacity(4 * np.channels());
            put_f32_slice(&mut payload, np.finalized_mean.as_ref().unwrap());
            put_record(&mut out, KIND_MEAN_ONLY, [c, 0, 0, 0], None, &payload);
        } else {
            let mut payload = Vec::with_capacity(16 * np.channels());
            put_f32_slice(&mut payload, &np.gain);
            put_f32_slice(&mut payload, &np.shift);
            put_f32_slice(&mut payload, np.finalized_mean.as_ref().unwrap());
            put_f32_slice(&mut payload, np.finalized_var.as_ref().unwrap());
            put_record(&mut out, KIND_BN, [c, u32::from(np.affine_learned), 0, 0], None, &payload);
        }
    }

    for st in &params.stds {
        let c = st.mean.len() as u32;
        let mut payload = Vec::with_capacity(8 * st.mean.len());
        put_f32_slice(&mut payload, &st.mean);
        put_f32_slice(&mut payload, &st.inv_std);
        put_record(&mut out, KIND_STANDARDIZE, [c, 0, 0, 0], None, &payload);
    }

    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

pub fn export_model(path: &Path, graph: &ModelGraph, params: &ModelParams) -> Result<()> {
    let bytes = encode_model(graph, params)?;
    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn f32_vec(payload: &[u8], at: usize, n: usize) -> Vec<f32> {
    payload[at..at + 4 * n]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

struct RawRecord<'a> {
    kind: u32,
    shape: [u32; 4],
    sigma0: Option<f64>,
    payload: &'a [u8],
}

impl<'a> RawRecord<'a> {
    fn expect_payload(&self, len: usize) -> Result<()> {
        if self.payload.len() != len {
            return Err(Error::Format(format!(
                "record kind {}: payload is {} bytes, expected {len}",
                self.kind,
                self.payload.len()
            )));
        }
        Ok(())
    }
}

/// A model read back from disk: the rebuilt graph, inference-ready
/// parameters, and (for quantized files) the packed weights as stored.
pub struct ImportedModel {
    pub graph: ModelGraph,
    pub params: ModelParams,
    pub packed: Option<Vec<PackedConvWeights>>,
}

/// Parse and validate model bytes.
///
/// Structure is checked first (magic, version, record framing), then the
/// checksum, and only then are parameters materialized.
pub fn decode_model(bytes: &[u8]) -> Result<ImportedModel> {
    if bytes.len() < 4 {
        return Err(Error::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 20 {
        return Err(Error::Truncated);
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());

    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let variant = ModelVariant::from_tag(r.u32()?)?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.u32()?;
        let mut shape = [0u32; 4];
        for s in shape.iter_mut() {
            *s = r.u32()?;
        }
        let quantized = r.u8()?;
        let sigma0 = match quantized {
            0 => None,
            1 => Some(r.f64()?),
            other => return Err(Error::Format(format!("bad quantized flag {other}"))),
        };
        let len = r.u64()? as usize;
        let payload = r.take(len)?;
        records.push(RawRecord { kind, shape, sigma0, payload });
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes after records", body.len() - r.pos)));
    }

    let computed = crc32fast::hash(body);
    if computed != stored {
        return Err(Error::Checksum { stored, computed });
    }

    // Semantic pass: rebuild the graph from the metadata record, then fill
    // parameter slots in export order.
    let mut records = records.into_iter();
    let arch = records.next().ok_or_else(|| Error::Format("no records".into()))?;
    if arch.kind != KIND_ARCH {
        return Err(Error::Format(format!("first record kind {} is not metadata", arch.kind)));
    }
    arch.expect_payload(16)?;
    let family = match arch.shape[0] {
        0 => ArchFamily::Cifar,
        1 => ArchFamily::ImageNet,
        other => return Err(Error::Format(format!("unknown family tag {other}"))),
    };
    let width = f64::from_le_bytes(arch.payload[0..8].try_into().unwrap());
    let temperature = f64::from_le_bytes(arch.payload[8..16].try_into().unwrap());
    let spec = ArchitectureSpec {
        family,
        depth: arch.shape[1] as usize,
        width,
        num_classes: arch.shape[2] as usize,
        quantized: arch.shape[3] != 0,
    };
    let graph = build(spec, variant, temperature)?;

    let mut conv = Vec::with_capacity(graph.conv_shapes.len());
    let mut sigma0s = Vec::with_capacity(graph.conv_shapes.len());
    let mut packed = Vec::new();
    for (slot, &expect) in graph.conv_shapes.iter().enumerate() {
        let rec = records
            .next()
            .ok_or_else(|| Error::Format(format!("missing conv record {slot}")))?;
        if rec.kind != KIND_CONV {
            return Err(Error::Format(format!("record kind {} where conv expected", rec.kind)));
        }
        let shape = rec.shape.map(|s| s as usize);
        if shape != expect {
            return Err(Error::Format(format!(
                "conv {slot}: stored shape {shape:?} does not match architecture {expect:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if spec.quantized {
            let sigma0 = rec
                .sigma0
                .ok_or_else(|| Error::Format(format!("conv {slot}: missing weight scale")))?;
            if !(sigma0 > 0.0) {
                return Err(Error::Format(format!("conv {slot}: weight scale {sigma0}")));
            }
            rec.expect_payload(n.div_ceil(8))?;
            let pw =
                PackedConvWeights { shape, sign_bits: rec.payload.to_vec(), sigma0 };
            conv.push(unpack_weights::<f32>(&pw));
            sigma0s.push(sigma0);
            packed.push(pw);
        } else {
            rec.expect_payload(4 * n)?;
            conv.push(crate::tensor::Tensor::from_vec(shape, f32_vec(rec.payload, 0, n)));
            sigma0s.push(he_std(shape[0] * shape[1] * shape[2]));
        }
    }

    let mut norms = Vec::with_capacity(graph.norm_slots.len());
    for (slot, ns) in graph.norm_slots.iter().enumerate() {
        let rec = records
            .next()
            .ok_or_else(|| Error::Format(format!("missing norm record {slot}")))?;
        let c = ns.channels;
        if rec.shape[0] as usize != c {
            return Err(Error::Format(format!(
                "norm {slot}: stored {} channels, architecture has {c}",
                rec.shape[0]
            )));
        }
        let np = match (ns.kind, rec.kind) {
            (NormKind::MeanOnly, KIND_MEAN_ONLY) => {
                rec.expect_payload(4 * c)?;
                let mut np = BNParams::mean_only(c);
                np.finalized_mean = Some(f32_vec(rec.payload, 0, c));
                np
            }
            (NormKind::BnAffine | NormKind::BnFixed, KIND_BN) => {
                rec.expect_payload(16 * c)?;
                let affine = rec.shape[1] != 0;
                if affine != (ns.kind == NormKind::BnAffine) {
                    return Err(Error::Format(format!(
                        "norm {slot}: affine flag does not match architecture"
                    )));
                }
                let mut np =
                    if affine { BNParams::affine(c) } else { BNParams::non_affine(c) };
                np.gain = f32_vec(rec.payload, 0, c);
                np.shift = f32_vec(rec.payload, 4 * c, c);
                np.finalized_mean = Some(f32_vec(rec.payload, 8 * c, c));
                np.finalized_var = Some(f32_vec(rec.payload, 12 * c, c));
                np.epsilon = BN_EPSILON as f32;
                np
            }
            (_, kind) => {
                return Err(Error::Format(format!(
                    "norm {slot}: record kind {kind} does not match architecture"
                )))
            }
        };
        norms.push(np);
    }

    let mut stds = Vec::with_capacity(graph.std_slots.len());
    for (slot, &c) in graph.std_slots.iter().enumerate() {
        let rec = records
            .next()
            .ok_or_else(|| Error::Format(format!("missing standardize record {slot}")))?;
        if rec.kind != KIND_STANDARDIZE || rec.shape[0] as usize != c {
            return Err(Error::Format(format!("standardize {slot}: bad record")));
        }
        rec.expect_payload(8 * c)?;
        stds.push(ChannelStats {
            mean: f32_vec(rec.payload, 0, c),
            inv_std: f32_vec(rec.payload, 4 * c, c),
        });
    }
    if records.next().is_some() {
        return Err(Error::Format("more records than the architecture expects".into()));
    }

    let params = ModelParams { conv, sigma0: sigma0s, norms, stds };
    Ok(ImportedModel { graph, params, packed: spec.quantized.then_some(packed) })
}

pub fn import_model(path: &Path) -> Result<ImportedModel> {
    let bytes = fs::read(path)?;
    decode_model(&bytes)
}
