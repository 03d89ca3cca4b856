use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with shape metadata.
///
/// Weight tensors of convolutional layers are `[filters, channels, height, width]`;
/// fully connected weights are `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl ElementwiseOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} holds {numel} elements but {} values were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// One-dimensional tensor holding `values`.
    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row-major flat offset of `coords`.
    pub fn flat_index(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.shape.len() {
            return Err(Error::shape("flat_index", &self.shape, coords));
        }
        let mut idx = 0;
        for (&c, &extent) in coords.iter().zip(&self.shape) {
            if c >= extent {
                return Err(Error::invalid(format!(
                    "coordinate {coords:?} outside shape {:?}",
                    self.shape
                )));
            }
            idx = idx * extent + c;
        }
        Ok(idx)
    }

    /// Inverse of [`Tensor::flat_index`].
    pub fn coords(&self, mut flat: usize) -> Result<Vec<usize>> {
        if flat >= self.data.len() {
            return Err(Error::invalid(format!(
                "flat index {flat} outside tensor of {} elements",
                self.data.len()
            )));
        }
        let mut coords = vec![0; self.shape.len()];
        for (c, &extent) in coords.iter_mut().zip(&self.shape).rev() {
            *c = flat % extent;
            flat /= extent;
        }
        Ok(coords)
    }

    pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape != b.shape {
            return Err(Error::shape("elementwise", &a.shape, &b.shape));
        }
        Ok(Tensor {
            shape: a.shape.clone(),
            data: a
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| op.apply(x, y))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        Self::elementwise(ElementwiseOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        Self::elementwise(ElementwiseOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        Self::elementwise(ElementwiseOp::Mul, self, other)
    }

    /// `self += scale * other`, in place.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_scaled", &self.shape, &other.shape));
        }
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += scale * y;
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|x| x * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Sum of squares of all entries.
    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Entrywise sign with `sign(0) == 0`.
    pub fn sign(&self) -> Tensor {
        self.map(sign)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid(format!(
                "clamp bounds [{lo}, {hi}] are empty"
            )));
        }
        Ok(self.map(|x| x.clamp(lo, hi)))
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn elementwise_examples() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.sub(&a).unwrap().data(), &[0.0, 0.0]);
        let c = Tensor::vector(vec![2.0, 3.0]);
        let d = Tensor::vector(vec![0.0, 5.0]);
        assert_eq!(c.mul(&d).unwrap().data(), &[0.0, 15.0]);
    }

    #[test]
    fn elementwise_rejects_mismatch() {
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(Tensor::vector(vec![3.0, 4.0]).frobenius_norm_sq(), 25.0);
        assert_eq!(Tensor::zeros(&[3, 3]).frobenius_norm_sq(), 0.0);
        assert_eq!(Tensor::full(&[4], 1.0).frobenius_norm_sq(), 4.0);
    }

    #[test]
    fn sign_examples() {
        let t = Tensor::vector(vec![-0.3, 0.0, 7.0]);
        assert_eq!(t.sign().data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(Tensor::zeros(&[3]).sign(), Tensor::zeros(&[3]));
    }

    #[test]
    fn clamp_examples() {
        let t = Tensor::vector(vec![-1.0, 0.5, 2.0]);
        assert_eq!(t.clamp(0.0, 1.0).unwrap().data(), &[0.0, 0.5, 1.0]);
        assert_eq!(t.clamp(-1e300, 1e300).unwrap(), t);
        assert!(t.clamp(1.0, 0.0).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        for shape in [vec![5], vec![3, 4], vec![2, 3, 5], vec![5, 5, 5, 5]] {
            let t = Tensor::zeros(&shape);
            for flat in 0..t.len() {
                let c = t.coords(flat).unwrap();
                assert_eq!(t.flat_index(&c).unwrap(), flat);
            }
        }
        let t = Tensor::zeros(&[3, 4]);
        assert_eq!(t.flat_index(&[2, 1]).unwrap(), 2 * 4 + 1);
    }

    proptest! {
        #[test]
        fn sign_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..32)) {
            let t = Tensor::vector(v);
            prop_assert_eq!(t.sign().sign(), t.sign());
        }

        #[test]
        fn clamp_is_idempotent(v in prop::collection::vec(-3.0f64..3.0, 1..32)) {
            let t = Tensor::vector(v);
            let once = t.clamp(0.0, 1.0).unwrap();
            prop_assert_eq!(once.clamp(0.0, 1.0).unwrap(), once.clone());
            prop_assert!(once.data().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
