//! Dense N-dimensional tensors.
//!
//! Storage is row-major with the last index varying fastest. Every linear
//! index in the crate (vectorization, unfolding columns, Khatri-Rao and
//! Kronecker row orders, mask entries) follows this one convention.
//!
//! Modes are zero-based: mode `n` of an order-`N` tensor satisfies `n < N`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mask::ObservationMask;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Number of entries of a tensor with the given shape.
pub fn num_entries(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("order must be at least 1".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::InvalidShape(format!("dimension {pos} has size 0")));
    }
    Ok(())
}

/// Row-major strides (last index has stride 1).
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for n in (0..shape.len().saturating_sub(1)).rev() {
        strides[n] = strides[n + 1] * shape[n + 1];
    }
    strides
}

pub fn linear_index(shape: &[usize], index: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), index.len());
    index
        .iter()
        .zip(shape)
        .fold(0, |acc, (&i, &dim)| acc * dim + i)
}

pub fn multi_index(shape: &[usize], mut linear: usize) -> Vec<usize> {
    let mut index = vec![0; shape.len()];
    for n in (0..shape.len()).rev() {
        index[n] = linear % shape[n];
        linear /= shape[n];
    }
    index
}

/// Splits a linear index into `(i_n, column)` of the mode-`n` unfolding.
pub(crate) fn unfolding_position(shape: &[usize], mode: usize, linear: usize) -> (usize, usize) {
    let inner: usize = shape[mode + 1..].iter().product();
    let dim = shape[mode];
    let outer_idx = linear / (inner * dim);
    let row = (linear / inner) % dim;
    let col = outer_idx * inner + linear % inner;
    (row, col)
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let expected = num_entries(&shape);
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "shape {shape:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let len = num_entries(&shape);
        Ok(Self {
            shape,
            data: vec![0.0; len],
        })
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_shape(&shape)?;
        let len = num_entries(&shape);
        let data = (0..len).map(|l| f(&multi_index(&shape, l))).collect();
        Ok(Self { shape, data })
    }

    /// Inverse of [`DenseTensor::vectorize`].
    pub fn devectorize(shape: Vec<usize>, vec: Vec<f64>) -> Result<Self> {
        Self::new(shape, vec)
    }

    /// Wraps a matrix as an order-2 tensor.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "expected an order-2 tensor, got order {}",
                self.order()
            )));
        }
        Ok(DMatrix::from_row_slice(self.shape[0], self.shape[1], &self.data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[linear_index(&self.shape, index)]
    }

    /// Entries in the declared linear order.
    pub fn vectorize(&self) -> Vec<f64> {
        self.data.clone()
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// Mode-`n` unfolding: an `I_n x I_{!=n}` matrix whose rows are the
    /// mode-`n` fibers; columns enumerate the remaining indices in
    /// lexicographic order (last index fastest).
    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        self.check_mode(mode)?;
        let dim = self.shape[mode];
        let inner: usize = self.shape[mode + 1..].iter().product();
        let outer: usize = self.shape[..mode].iter().product();
        let mut m = DMatrix::zeros(dim, outer * inner);
        for o in 0..outer {
            for i in 0..dim {
                let base = (o * dim + i) * inner;
                for j in 0..inner {
                    m[(i, o * inner + j)] = self.data[base + j];
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &DMatrix<f64>, mode: usize, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if mode >= shape.len() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: shape.len(),
            });
        }
        let dim = shape[mode];
        let inner: usize = shape[mode + 1..].iter().product();
        let outer: usize = shape[..mode].iter().product();
        if m.nrows() != dim || m.ncols() != outer * inner {
            return Err(Error::DimensionMismatch(format!(
                "a {}x{} matrix cannot be folded into shape {shape:?} along mode {mode}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut data = vec![0.0; num_entries(shape)];
        for o in 0..outer {
            for i in 0..dim {
                let base = (o * dim + i) * inner;
                for j in 0..inner {
                    data[base + j] = m[(i, o * inner + j)];
                }
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// `self x_n m`: multiplies every mode-`n` fiber by `m` (`J x I_n`).
    pub fn mode_product(&self, m: &DMatrix<f64>, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let dim = self.shape[mode];
        if m.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "mode-{mode} product needs {dim} columns, matrix has {}",
                m.ncols()
            )));
        }
        let out_dim = m.nrows();
        let inner: usize = self.shape[mode + 1..].iter().product();
        let outer: usize = self.shape[..mode].iter().product();
        let mut shape = self.shape.clone();
        shape[mode] = out_dim;
        check_shape(&shape)?;
        let mut data = vec![0.0; outer * out_dim * inner];
        for o in 0..outer {
            for j in 0..out_dim {
                let dst = (o * out_dim + j) * inner;
                for i in 0..dim {
                    let coef = m[(j, i)];
                    if coef == 0.0 {
                        continue;
                    }
                    let src = (o * dim + i) * inner;
                    for k in 0..inner {
                        data[dst + k] += coef * self.data[src + k];
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch(format!(
                "shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Values at the mask's entries, in mask order.
    pub fn gather(&self, mask: &ObservationMask) -> Result<Vec<f64>> {
        if mask.shape() != self.shape() {
            return Err(Error::DimensionMismatch(format!(
                "mask shape {:?} does not match tensor shape {:?}",
                mask.shape(),
                self.shape
            )));
        }
        Ok(mask.indices().iter().map(|&l| self.data[l]).collect())
    }
}

/// Relative reconstruction error `||(est - truth)_Omega|| / ||truth_Omega||`,
/// or over all entries when `mask` is `None`.
pub fn rre(estimate: &DenseTensor, truth: &DenseTensor, mask: Option<&ObservationMask>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::DimensionMismatch(format!(
            "estimate shape {:?} vs reference shape {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let (num, den) = match mask {
        Some(mask) => {
            if mask.shape() != truth.shape() {
                return Err(Error::DimensionMismatch("mask shape differs from tensor shape".into()));
            }
            mask.indices().iter().fold((0.0, 0.0), |(n, d), &l| {
                let t = truth.data[l];
                let r = estimate.data[l] - t;
                (n + r * r, d + t * t)
            })
        }
        None => estimate
            .data
            .iter()
            .zip(&truth.data)
            .fold((0.0, 0.0), |(n, d), (&e, &t)| (n + (e - t) * (e - t), d + t * t)),
    };
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((num / den).sqrt())
}
