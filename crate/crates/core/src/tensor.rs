//! Dense f64 tensor used for images, logits, gradients and per-pixel magnitudes.
//!
//! Storage is a flat row-major `Vec<f64>` with an explicit shape (rank 1 or 2).
//! There are no views or strides; every operation returns a fresh tensor.

use crate::error::{Error, Result};

/// Elementwise binary operation selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

/// Dense floating-point array with shape. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor after checking that `data` fills `shape` exactly and is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite element {bad} in tensor data"
            )));
        }
        Ok(Self { shape, data })
    }

    /// Rank-1 tensor over `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Rank-2 tensor with `rows * cols` elements in row-major order.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(len: usize) -> Self {
        Self::from_vec(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self::from_vec(vec![value; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element of a rank-2 tensor at (row, col).
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    /// sqrt(sum of squares). Errors on an empty tensor.
    pub fn l2_norm(&self) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::EmptyTensor);
        }
        Ok(self.data.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Rescale to unit L2 norm, preserving direction.
    ///
    /// A zero-norm input has no direction and yields `Error::DegenerateGradient`;
    /// attack loops treat that as a failed example rather than dividing by zero.
    pub fn normalize_l2(&self) -> Result<Tensor> {
        let norm = self.l2_norm()?;
        if norm == 0.0 {
            return Err(Error::DegenerateGradient);
        }
        Ok(self.scale(1.0 / norm))
    }

    /// Elementwise add/sub/mul of equally-shaped tensors.
    pub fn elementwise(&self, other: &Tensor, op: ElementwiseOp) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| match op {
                ElementwiseOp::Add => a + b,
                ElementwiseOp::Sub => a - b,
                ElementwiseOp::Mul => a * b,
            })
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Mul)
    }

    /// Multiply every element by `s`.
    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Clamp every element into [lo, hi].
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!(
                "clamp bounds inverted: lo {lo} > hi {hi}"
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.clamp(lo, hi)).collect(),
        })
    }

    /// Inner product of equally-shaped tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

/// ‖a − b‖₂ without keeping the intermediate difference.
pub fn l2_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyTensor);
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Cosine similarity between two nonzero tensors of equal shape.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    let na = a.l2_norm()?;
    let nb = b.l2_norm()?;
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateGradient);
    }
    Ok(a.dot(b)? / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn l2_norm_pythagorean() {
        let t = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(t.l2_norm().unwrap(), 5.0);
    }

    #[test]
    fn l2_norm_zero_vector() {
        let t = Tensor::from_vec(vec![0.0, 0.0, 0.0]);
        assert_eq!(t.l2_norm().unwrap(), 0.0);
    }

    #[test]
    fn l2_norm_ones() {
        let t = Tensor::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(t.l2_norm().unwrap(), 2.0);
    }

    #[test]
    fn l2_norm_empty_is_error() {
        let t = Tensor::from_vec(vec![]);
        assert!(matches!(t.l2_norm(), Err(Error::EmptyTensor)));
    }

    #[test]
    fn normalize_basic() {
        let t = Tensor::from_vec(vec![3.0, 4.0]).normalize_l2().unwrap();
        assert!((t.data()[0] - 0.6).abs() < 1e-15);
        assert!((t.data()[1] - 0.8).abs() < 1e-15);

        let t = Tensor::from_vec(vec![0.0, -2.0]).normalize_l2().unwrap();
        assert_eq!(t.data(), &[0.0, -1.0]);
    }

    #[test]
    fn normalize_zero_is_degenerate() {
        let t = Tensor::from_vec(vec![0.0, 0.0]);
        assert!(matches!(t.normalize_l2(), Err(Error::DegenerateGradient)));
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let b = Tensor::from_vec(vec![2.0, 0.0, -1.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[2.0, 0.0, -3.0]);

        let c = Tensor::from_vec(vec![-0.5, 0.5, 1.5]);
        assert_eq!(c.clamp(0.0, 1.0).unwrap().data(), &[0.0, 0.5, 1.0]);

        assert_eq!(a.sub(&a).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn clamp_inverted_bounds_rejected() {
        let a = Tensor::from_vec(vec![1.0]);
        assert!(a.clamp(1.0, 0.0).is_err());
    }

    #[test]
    fn new_rejects_bad_length_and_nonfinite() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2], vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn matrix_indexing_row_major() {
        let m = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.at(0, 2), 3.0);
        assert_eq!(m.at(1, 0), 4.0);
    }

    fn small_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1e3..1e3f64, 1..32)
    }

    proptest! {
        #[test]
        fn normalized_tensors_have_unit_norm(data in small_vec()) {
            let t = Tensor::from_vec(data);
            prop_assume!(t.l2_norm().unwrap() > 1e-9);
            let n = t.normalize_l2().unwrap().l2_norm().unwrap();
            prop_assert!((n - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn norm_is_absolutely_homogeneous(data in small_vec(), s in -1e3..1e3f64) {
            let t = Tensor::from_vec(data);
            let lhs = t.scale(s).l2_norm().unwrap();
            let rhs = s.abs() * t.l2_norm().unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }

        #[test]
        fn add_commutes_and_mul_associates(a in small_vec(), b in small_vec(), c in small_vec()) {
            let n = a.len().min(b.len()).min(c.len());
            let a = Tensor::from_vec(a[..n].to_vec());
            let b = Tensor::from_vec(b[..n].to_vec());
            let c = Tensor::from_vec(c[..n].to_vec());

            let ab = a.add(&b).unwrap();
            let ba = b.add(&a).unwrap();
            for (x, y) in ab.data().iter().zip(ba.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }

            let lhs = a.mul(&b).unwrap().mul(&c).unwrap();
            let rhs = a.mul(&b.mul(&c).unwrap()).unwrap();
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn clamp_output_always_within_bounds(data in small_vec(), lo in -10.0..0.0f64, hi in 0.0..10.0f64) {
            let t = Tensor::from_vec(data).clamp(lo, hi).unwrap();
            prop_assert!(t.data().iter().all(|v| *v >= lo && *v <= hi));
        }
    }
}
