//! Dense 4-axis tensors.
//!
//! Every activation and weight in this crate is a `Tensor<E>` with shape
//! `(K, H, W, C)`: batch, rows, columns, channels. Data is stored row-major
//! with the channel axis fastest, so `(k, h, w, c)` maps to flat index
//! `((k*H + h)*W + w)*C + c`. Convolution weights reuse the same container
//! with shape `(R, S, Cin, Cout)`.
//!
//! Tensors are plain values: cloning copies the buffer, and all operations
//! in this crate treat their tensor inputs as immutable.

use std::fmt;

/// Scalar element type: `f32` for training/inference, `f64` for gradient
/// verification.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Send + Sync + 'static
{
}

impl Element for f32 {}
impl Element for f64 {}

/// Convert an `f64` into the element type (used for constants like epsilon).
#[inline]
pub fn from_f64<E: Element>(v: f64) -> E {
    num_traits::cast(v).expect("f64 -> element cast")
}

/// Convert an element into `f64` (used for metric accumulation).
#[inline]
pub fn to_f64<E: Element>(v: E) -> f64 {
    num_traits::cast(v).expect("element -> f64 cast")
}

/// Dense 4-axis array. See the module docs for the layout contract.
#[derive(Clone, PartialEq)]
pub struct Tensor<E> {
    shape: [usize; 4],
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor { shape, data: vec![E::zero(); shape.iter().product()] }
    }

    /// Tensor filled with one value.
    pub fn filled(shape: [usize; 4], value: E) -> Self {
        Tensor { shape, data: vec![value; shape.iter().product()] }
    }

    /// Wrap an existing buffer.
    ///
    /// # Panics
    /// Panics if `data.len()` does not equal the product of `shape`.
    pub fn from_vec(shape: [usize; 4], data: Vec<E>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    /// Build a tensor by evaluating `f(k, h, w, c)` at every site.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> E) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for k in 0..shape[0] {
            for h in 0..shape[1] {
                for w in 0..shape[2] {
                    for c in 0..shape[3] {
                        data.push(f(k, h, w, c));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Flat index of `(k, h, w, c)`.
    #[inline]
    pub fn idx(&self, k: usize, h: usize, w: usize, c: usize) -> usize {
        debug_assert!(k < self.shape[0] && h < self.shape[1] && w < self.shape[2] && c < self.shape[3]);
        ((k * self.shape[1] + h) * self.shape[2] + w) * self.shape[3] + c
    }

    #[inline]
    pub fn at(&self, k: usize, h: usize, w: usize, c: usize) -> E {
        self.data[self.idx(k, h, w, c)]
    }

    #[inline]
    pub fn at_mut(&mut self, k: usize, h: usize, w: usize, c: usize) -> &mut E {
        let i = self.idx(k, h, w, c);
        &mut self.data[i]
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// True when every entry is finite (no NaN/Inf).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single entry of a `1x1x1x1` tensor.
    ///
    /// # Panics
    /// Panics if the tensor is not scalar-shaped.
    pub fn scalar(&self) -> E {
        assert_eq!(self.shape, [1, 1, 1, 1], "expected scalar tensor, got {:?}", self.shape);
        self.data[0]
    }

    /// Convert between element precisions.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| from_f64(to_f64(v))).collect(),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor<{}>{:?}",
            std::any::type_name::<E>(),
            self.shape
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_channels_fastest() {
        let t = Tensor::<f32>::from_fn([2, 3, 4, 5], |k, h, w, c| {
            (((k * 3 + h) * 4 + w) * 5 + c) as f32
        });
        assert_eq!(t.at(0, 0, 0, 1), 1.0);
        assert_eq!(t.at(0, 0, 1, 0), 5.0);
        assert_eq!(t.at(1, 2, 3, 4), (t.numel() - 1) as f32);
        assert_eq!(t.idx(1, 0, 0, 0), 60);
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn from_vec_rejects_wrong_length() {
        let _ = Tensor::<f32>::from_vec([1, 2, 2, 1], vec![0.0; 3]);
    }

    #[test]
    fn finiteness_check_detects_nan_and_inf() {
        let mut t = Tensor::<f64>::zeros([1, 2, 2, 1]);
        assert!(t.all_finite());
        t.data_mut()[2] = f64::NAN;
        assert!(!t.all_finite());
        t.data_mut()[2] = f64::INFINITY;
        assert!(!t.all_finite());
    }

    #[test]
    fn cast_round_trips_f32_values() {
        let t = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.5, -2.25, 0.0, 3.0]);
        let d = t.cast::<f64>();
        let back = d.cast::<f32>();
        assert_eq!(t, back);
    }
}
