//! Single-bit weight representation.
//!
//! During training each convolution keeps a full-precision "shadow" weight
//! tensor; the forward pass sees only `sigma0 * sign(shadow)`, where
//! `sigma0 = sqrt(2 / fan_in)` is the layer's He-init standard deviation,
//! frozen at initialization. The backward pass treats the sign as identity
//! (straight-through): the shadow gradient is `sigma0` times the upstream
//! gradient, with no clipping of gradients or weights.
//!
//! For inference only the signs are kept. Bit order: weights enumerate in
//! `(R, S, Cin, Cout)` row-major order, least-significant bit first within
//! each byte; bit 1 means weight >= 0 (sign(0) := +1); trailing padding
//! bits are zero.

use crate::conv::{conv_geometry, Padding};
use crate::tensor::{from_f64, Element, Tensor};

/// Per-layer quantization constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantSpec {
    /// The frozen scale constant, `sqrt(2 / fan_in)`.
    pub sigma0: f64,
    pub enabled: bool,
}

impl QuantSpec {
    pub fn for_fan_in(fan_in: usize, enabled: bool) -> Self {
        QuantSpec { sigma0: he_std(fan_in), enabled }
    }
}

/// He-init standard deviation `sqrt(2 / fan_in)`.
///
/// # Panics
/// Panics if `fan_in == 0`.
pub fn he_std(fan_in: usize) -> f64 {
    assert!(fan_in >= 1, "he_std: fan_in must be at least 1");
    (2.0 / fan_in as f64).sqrt()
}

/// Quantized view of a weight tensor: `sigma0 * sign(w)` elementwise, with
/// `sign(0) := +1`. The shadow tensor `w` itself is left untouched.
pub fn binarize_forward<E: Element>(w: &Tensor<E>, sigma0: E) -> Tensor<E> {
    assert!(sigma0 > E::zero(), "binarize_forward: sigma0 must be positive");
    w.map(|v| if v >= E::zero() { sigma0 } else { -sigma0 })
}

/// Straight-through gradient onto the shadow weights: `sigma0 * grad_out`.
pub fn binarize_backward<E: Element>(grad_out: &Tensor<E>, sigma0: E) -> Tensor<E> {
    grad_out.map(|g| g * sigma0)
}

/// Bit-packed signs of one convolution's weights plus the layer scale.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedConvWeights {
    /// `(R, S, Cin, Cout)`.
    pub shape: [usize; 4],
    /// `ceil(R*S*Cin*Cout / 8)` bytes, LSB-first, padding bits zero.
    pub sign_bits: Vec<u8>,
    pub sigma0: f64,
}

impl PackedConvWeights {
    pub fn weight_count(&self) -> usize {
        self.shape.iter().product()
    }

    #[inline]
    fn bit(&self, i: usize) -> bool {
        (self.sign_bits[i >> 3] >> (i & 7)) & 1 == 1
    }
}

/// Pack the signs of `w` (enumerated in storage order, which is
/// `(R, S, Cin, Cout)` row-major) into a bitfield.
pub fn pack_weights<E: Element>(w: &Tensor<E>, sigma0: f64) -> PackedConvWeights {
    let n = w.numel();
    let mut sign_bits = vec![0u8; n.div_ceil(8)];
    for (i, &v) in w.data().iter().enumerate() {
        if v >= E::zero() {
            sign_bits[i >> 3] |= 1 << (i & 7);
        }
    }
    PackedConvWeights { shape: w.shape(), sign_bits, sigma0 }
}

/// Reconstruct the quantized weight tensor `sigma0 * sign(w)` from packed
/// bits. `unpack_weights(pack_weights(w, s)) == binarize_forward(w, s)`.
pub fn unpack_weights<E: Element>(pw: &PackedConvWeights) -> Tensor<E> {
    let sigma0: E = from_f64(pw.sigma0);
    let data = (0..pw.weight_count())
        .map(|i| if pw.bit(i) { sigma0 } else { -sigma0 })
        .collect();
    Tensor::from_vec(pw.shape, data)
}

/// Multiplier-free convolution over packed sign bits.
///
/// Each output element accumulates the receptive field with additions and
/// subtractions selected by the sign bits, then applies a single
/// multiplication by `sigma0`. The accumulation order (window rows, window
/// cols, input channels) matches `conv2d`, so the result agrees with the
/// float path on binarized weights up to rounding from the deferred scale.
pub fn packed_conv2d<E: Element>(
    input: &Tensor<E>,
    pw: &PackedConvWeights,
    stride: usize,
    pad: Padding,
) -> Tensor<E> {
    let [k, in_h, in_w, in_c] = input.shape();
    let [r, s, w_in, out_c] = pw.shape;
    assert_eq!(in_c, w_in, "packed_conv2d: input has {in_c} channels, weights expect {w_in}");
    let g = conv_geometry(in_h, in_w, r, s, stride, pad);
    let sigma0: E = from_f64(pw.sigma0);

    let in_d = input.data();
    let mut out = Tensor::zeros([k, g.out_h, g.out_w, out_c]);
    let od = out.data_mut();
    for kk in 0..k {
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let acc = &mut od[((kk * g.out_h + oh) * g.out_w + ow) * out_c..][..out_c];
                for rr in 0..r {
                    let ih = (oh * stride + rr) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= in_h as isize {
                        continue;
                    }
                    for ss in 0..s {
                        let iw = (ow * stride + ss) as isize - g.pad_left as isize;
                        if iw < 0 || iw >= in_w as isize {
                            continue;
                        }
                        let x_base = ((kk * in_h + ih as usize) * in_w + iw as usize) * in_c;
                        for ci in 0..in_c {
                            let x = in_d[x_base + ci];
                            let bit_base = ((rr * s + ss) * in_c + ci) * out_c;
                            for (co, a) in acc.iter_mut().enumerate() {
                                if pw.bit(bit_base + co) {
                                    *a = *a + x;
                                } else {
                                    *a = *a - x;
                                }
                            }
                        }
                    }
                }
                // The only multiplication for this output element.
                for a in acc.iter_mut() {
                    *a = *a * sigma0;
                }
            }
        }
    }
    out
}
