//! Convolution and pooling kernels with explicit backward passes.
//!
//! All kernels are deterministic: every output element is produced by one
//! fixed sequential accumulation order (window rows, window cols, input
//! channels), and parallelism only splits work across *disjoint* output
//! regions. Results are therefore bit-identical across thread counts.
//!
//! Convolutions carry no bias term anywhere in this crate.

use rayon::prelude::*;

use crate::tensor::{Element, Tensor};

/// Spatial padding policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding chosen so the output extent is `ceil(in / stride)`.
    /// When the total padding is odd the extra row/column goes at the
    /// bottom/right.
    Same,
    /// Fixed zero padding on every border.
    Explicit(usize),
}

/// Resolved output extents and leading padding for one convolution or
/// pooling window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// Compute output geometry for a `win_h x win_w` window.
///
/// # Panics
/// Panics if `stride == 0`, or if an explicit padding leaves the window
/// larger than the padded input.
pub fn conv_geometry(
    in_h: usize,
    in_w: usize,
    win_h: usize,
    win_w: usize,
    stride: usize,
    pad: Padding,
) -> ConvGeometry {
    assert!(stride >= 1, "stride must be positive");
    let axis = |n: usize, win: usize| -> (usize, usize) {
        match pad {
            Padding::Same => {
                let out = n.div_ceil(stride);
                let total = ((out - 1) * stride + win).saturating_sub(n);
                (out, total / 2)
            }
            Padding::Explicit(p) => {
                assert!(n + 2 * p >= win, "window {win} exceeds padded input {n}+2*{p}");
                ((n + 2 * p - win) / stride + 1, p)
            }
        }
    };
    let (out_h, pad_top) = axis(in_h, win_h);
    let (out_w, pad_left) = axis(in_w, win_w);
    ConvGeometry { out_h, out_w, pad_top, pad_left }
}

/// 2-D convolution.
///
/// `input` is `(K, H, W, Cin)`, `weights` is `(R, S, Cin, Cout)`; the output
/// is `(K, out_h, out_w, Cout)` where each entry is the dot product of the
/// zero-padded receptive field with the filter.
///
/// # Panics
/// Panics on channel mismatch or zero stride.
pub fn conv2d<E: Element>(
    input: &Tensor<E>,
    weights: &Tensor<E>,
    stride: usize,
    pad: Padding,
) -> Tensor<E> {
    let [k, in_h, in_w, in_c] = input.shape();
    let [r, s, w_in, out_c] = weights.shape();
    assert_eq!(in_c, w_in, "conv2d: input has {in_c} channels, weights expect {w_in}");
    let g = conv_geometry(in_h, in_w, r, s, stride, pad);

    let in_d = input.data();
    let w_d = weights.data();
    let mut out = Tensor::zeros([k, g.out_h, g.out_w, out_c]);
    let row_len = g.out_w * out_c;

    out.data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(row, out_row)| {
            let kk = row / g.out_h;
            let oh = row % g.out_h;
            for ow in 0..g.out_w {
                let acc = &mut out_row[ow * out_c..(ow + 1) * out_c];
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
                        let w_base = (rr * s + ss) * in_c * out_c;
                        for ci in 0..in_c {
                            let x = in_d[x_base + ci];
                            let w_row = &w_d[w_base + ci * out_c..w_base + (ci + 1) * out_c];
                            for (a, &wv) in acc.iter_mut().zip(w_row) {
                                *a = *a + x * wv;
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_grad_input<E: Element>(
    grad_out: &Tensor<E>,
    weights: &Tensor<E>,
    input_shape: [usize; 4],
    stride: usize,
    pad: Padding,
) -> Tensor<E> {
    let [k, in_h, in_w, in_c] = input_shape;
    let [r, s, w_in, out_c] = weights.shape();
    assert_eq!(in_c, w_in, "grad_input: channel mismatch");
    let g = conv_geometry(in_h, in_w, r, s, stride, pad);
    assert_eq!(grad_out.shape(), [k, g.out_h, g.out_w, out_c], "grad_input: upstream shape");

    let dy = grad_out.data();
    let w_d = weights.data();
    let mut dx = Tensor::zeros(input_shape);
    let sample_len = in_h * in_w * in_c;

    dx.data_mut()
        .par_chunks_mut(sample_len)
        .enumerate()
        .for_each(|(kk, dx_k)| {
            for oh in 0..g.out_h {
                for ow in 0..g.out_w {
                    let dy_row = &dy[((kk * g.out_h + oh) * g.out_w + ow) * out_c..][..out_c];
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
                            let x_base = (ih as usize * in_w + iw as usize) * in_c;
                            let w_base = (rr * s + ss) * in_c * out_c;
                            for ci in 0..in_c {
                                let w_row = &w_d[w_base + ci * out_c..w_base + (ci + 1) * out_c];
                                let mut acc = E::zero();
                                for (&gy, &wv) in dy_row.iter().zip(w_row) {
                                    acc = acc + gy * wv;
                                }
                                dx_k[x_base + ci] = dx_k[x_base + ci] + acc;
                            }
                        }
                    }
                }
            }
        });
    dx
}

/// Batch-chunk size for the weight-gradient reduction. A fixed constant (not
/// tied to the thread count) keeps the partial-sum split, and therefore the
/// floating-point result, identical however many threads run.
const WGRAD_CHUNK: usize = 8;

/// Gradient of `conv2d` with respect to its weights.
pub fn conv2d_grad_weights<E: Element>(
    input: &Tensor<E>,
    grad_out: &Tensor<E>,
    weight_shape: [usize; 4],
    stride: usize,
    pad: Padding,
) -> Tensor<E> {
    let [k, in_h, in_w, in_c] = input.shape();
    let [r, s, w_in, out_c] = weight_shape;
    assert_eq!(in_c, w_in, "grad_weights: channel mismatch");
    let g = conv_geometry(in_h, in_w, r, s, stride, pad);
    assert_eq!(grad_out.shape(), [k, g.out_h, g.out_w, out_c], "grad_weights: upstream shape");

    let in_d = input.data();
    let dy = grad_out.data();
    let w_len: usize = weight_shape.iter().product();

    let chunks = k.div_ceil(WGRAD_CHUNK).max(1);
    let partials: Vec<Vec<E>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut local = vec![E::zero(); w_len];
            let k_end = ((chunk + 1) * WGRAD_CHUNK).min(k);
            for kk in chunk * WGRAD_CHUNK..k_end {
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        let dy_row = &dy[((kk * g.out_h + oh) * g.out_w + ow) * out_c..][..out_c];
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
                                let x_base =
                                    ((kk * in_h + ih as usize) * in_w + iw as usize) * in_c;
                                let w_base = (rr * s + ss) * in_c * out_c;
                                for ci in 0..in_c {
                                    let x = in_d[x_base + ci];
                                    let dst = &mut local
                                        [w_base + ci * out_c..w_base + (ci + 1) * out_c];
                                    for (d, &gy) in dst.iter_mut().zip(dy_row) {
                                        *d = *d + x * gy;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            local
        })
        .collect();

    let mut dw = vec![E::zero(); w_len];
    for part in partials {
        for (d, p) in dw.iter_mut().zip(part) {
            *d = *d + p;
        }
    }
    Tensor::from_vec(weight_shape, dw)
}

/// Spatial mean per channel: `(K, H, W, C)` -> `(K, 1, 1, C)`.
pub fn global_average_pool<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let [k, h, w, c] = x.shape();
    assert!(h >= 1 && w >= 1, "global_average_pool: empty spatial extent");
    let inv = E::one() / crate::tensor::from_f64::<E>((h * w) as f64);
    let mut out = Tensor::zeros([k, 1, 1, c]);
    let xd = x.data();
    let od = out.data_mut();
    for kk in 0..k {
        let acc = &mut od[kk * c..(kk + 1) * c];
        for site in 0..h * w {
            let row = &xd[(kk * h * w + site) * c..][..c];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a = *a + v;
            }
        }
        for a in acc.iter_mut() {
            *a = *a * inv;
        }
    }
    out
}

/// Backward of `global_average_pool`: spreads `g/(H*W)` to every site.
pub fn global_average_pool_backward<E: Element>(
    grad_out: &Tensor<E>,
    input_shape: [usize; 4],
) -> Tensor<E> {
    let [k, h, w, c] = input_shape;
    assert_eq!(grad_out.shape(), [k, 1, 1, c], "gap backward: upstream shape");
    let inv = E::one() / crate::tensor::from_f64::<E>((h * w) as f64);
    let gd = grad_out.data();
    Tensor::from_fn(input_shape, |kk, _, _, cc| gd[kk * c + cc] * inv)
}

/// 2x2 stride-2 average pooling followed by zero-padding the channel axis to
/// `out_c`. This is the parameter-free shortcut used by downsampling
/// residual blocks.
///
/// # Panics
/// Panics if H or W is odd, or `out_c < C`.
pub fn avg_pool_downsample<E: Element>(x: &Tensor<E>, out_c: usize) -> Tensor<E> {
    let [k, h, w, c] = x.shape();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool_downsample: odd extent {h}x{w}");
    assert!(out_c >= c, "avg_pool_downsample: cannot shrink channels {c} -> {out_c}");
    let quarter = crate::tensor::from_f64::<E>(0.25);
    let mut out = Tensor::zeros([k, h / 2, w / 2, out_c]);
    for kk in 0..k {
        for oh in 0..h / 2 {
            for ow in 0..w / 2 {
                for cc in 0..c {
                    let sum = x.at(kk, 2 * oh, 2 * ow, cc)
                        + x.at(kk, 2 * oh, 2 * ow + 1, cc)
                        + x.at(kk, 2 * oh + 1, 2 * ow, cc)
                        + x.at(kk, 2 * oh + 1, 2 * ow + 1, cc);
                    *out.at_mut(kk, oh, ow, cc) = sum * quarter;
                }
            }
        }
    }
    out
}

/// Backward of `avg_pool_downsample`. Gradient flows only into the original
/// channels; each pooled gradient spreads `g/4` over its 2x2 window.
pub fn avg_pool_downsample_backward<E: Element>(
    grad_out: &Tensor<E>,
    input_shape: [usize; 4],
) -> Tensor<E> {
    let [k, h, w, c] = input_shape;
    let [gk, gh, gw, _] = grad_out.shape();
    assert_eq!((gk, gh, gw), (k, h / 2, w / 2), "downsample backward: upstream shape");
    let quarter = crate::tensor::from_f64::<E>(0.25);
    let mut dx = Tensor::zeros(input_shape);
    for kk in 0..k {
        for oh in 0..h / 2 {
            for ow in 0..w / 2 {
                for cc in 0..c {
                    let g = grad_out.at(kk, oh, ow, cc) * quarter;
                    *dx.at_mut(kk, 2 * oh, 2 * ow, cc) = g;
                    *dx.at_mut(kk, 2 * oh, 2 * ow + 1, cc) = g;
                    *dx.at_mut(kk, 2 * oh + 1, 2 * ow, cc) = g;
                    *dx.at_mut(kk, 2 * oh + 1, 2 * ow + 1, cc) = g;
                }
            }
        }
    }
    dx
}

/// Max pooling over a square window. Returns the pooled tensor and, for the
/// backward pass, the flat input index of each selected maximum (first
/// maximum wins on ties, scanning the window row-major).
pub fn max_pool2d<E: Element>(
    x: &Tensor<E>,
    window: usize,
    stride: usize,
    pad: Padding,
) -> (Tensor<E>, Vec<usize>) {
    let [k, in_h, in_w, c] = x.shape();
    let g = conv_geometry(in_h, in_w, window, window, stride, pad);
    let mut out = Tensor::zeros([k, g.out_h, g.out_w, c]);
    let mut argmax = vec![0usize; out.numel()];
    for kk in 0..k {
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                for cc in 0..c {
                    let mut best: Option<(E, usize)> = None;
                    for rr in 0..window {
                        let ih = (oh * stride + rr) as isize - g.pad_top as isize;
                        if ih < 0 || ih >= in_h as isize {
                            continue;
                        }
                        for ss in 0..window {
                            let iw = (ow * stride + ss) as isize - g.pad_left as isize;
                            if iw < 0 || iw >= in_w as isize {
                                continue;
                            }
                            let i = x.idx(kk, ih as usize, iw as usize, cc);
                            let v = x.data()[i];
                            if best.map_or(true, |(b, _)| v > b) {
                                best = Some((v, i));
                            }
                        }
                    }
                    let (v, i) = best.expect("max_pool2d: window misses the input entirely");
                    let o = out.idx(kk, oh, ow, cc);
                    out.data_mut()[o] = v;
                    argmax[o] = i;
                }
            }
        }
    }
    (out, argmax)
}

/// Backward of `max_pool2d`: routes each upstream gradient to its argmax.
pub fn max_pool2d_backward<E: Element>(
    grad_out: &Tensor<E>,
    argmax: &[usize],
    input_shape: [usize; 4],
) -> Tensor<E> {
    assert_eq!(grad_out.numel(), argmax.len(), "max pool backward: argmax length");
    let mut dx = Tensor::zeros(input_shape);
    let dxd = dx.data_mut();
    for (o, &i) in argmax.iter().enumerate() {
        dxd[i] = dxd[i] + grad_out.data()[o];
    }
    dx
}
