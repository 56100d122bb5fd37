//! Observation masks: sorted sets of revealed linear indices.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{check_shape, DenseTensor, multi_index, num_entries, unfolding_position};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    shape: Vec<usize>,
    indices: Vec<usize>,
}

/// Observed entries of one mode-`n` slice: unfolding columns and the
/// matching linear indices into the tensor, both ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SliceEntries {
    pub columns: Vec<usize>,
    pub linear: Vec<usize>,
}

impl ObservationMask {
    /// Builds a mask from linear indices; they are sorted, and duplicates or
    /// out-of-range entries are rejected.
    pub fn new(shape: Vec<usize>, mut indices: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let total = num_entries(&shape);
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidMask(format!("duplicate index {}", w[0])));
        }
        if let Some(&last) = indices.last() {
            if last >= total {
                return Err(Error::InvalidMask(format!(
                    "index {last} out of bounds for {total} entries"
                )));
            }
        }
        Ok(Self { shape, indices })
    }

    pub fn full(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let total = num_entries(&shape);
        Ok(Self {
            shape,
            indices: (0..total).collect(),
        })
    }

    /// Uniform sample of exactly `round(p * I)` entries without replacement.
    pub fn random<R: Rng + ?Sized>(shape: Vec<usize>, p: f64, rng: &mut R) -> Result<Self> {
        check_shape(&shape)?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidConfig(format!("observation rate {p} not in (0, 1]")));
        }
        let total = num_entries(&shape);
        let count = ((p * total as f64).round() as usize).min(total);
        let mut indices = sample(rng, total, count).into_vec();
        indices.sort_unstable();
        Ok(Self { shape, indices })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn total(&self) -> usize {
        num_entries(&self.shape)
    }

    /// Observation rate `|Omega| / I`.
    pub fn rate(&self) -> f64 {
        self.len() as f64 / self.total() as f64
    }

    pub fn contains(&self, linear: usize) -> bool {
        self.indices.binary_search(&linear).is_ok()
    }

    pub fn complement(&self) -> ObservationMask {
        let mut out = Vec::with_capacity(self.total() - self.len());
        let mut it = self.indices.iter().peekable();
        for l in 0..self.total() {
            if it.peek() == Some(&&l) {
                it.next();
            } else {
                out.push(l);
            }
        }
        ObservationMask {
            shape: self.shape.clone(),
            indices: out,
        }
    }

    pub fn multi_indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.indices.iter().map(|&l| multi_index(&self.shape, l))
    }

    /// Groups observed entries by their mode-`n` index: element `i` lists the
    /// observed columns of row `i` of the mode-`n` unfolding.
    pub fn mode_slices(&self, mode: usize) -> Result<Vec<SliceEntries>> {
        if mode >= self.shape.len() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.shape.len(),
            });
        }
        let mut slices = vec![SliceEntries::default(); self.shape[mode]];
        for &l in &self.indices {
            let (row, col) = unfolding_position(&self.shape, mode, l);
            slices[row].columns.push(col);
            slices[row].linear.push(l);
        }
        // Linear order and column order agree within a slice.
        debug_assert!(slices.iter().all(|s| s.columns.windows(2).all(|w| w[0] < w[1])));
        Ok(slices)
    }
}

/// Observed values of a tensor, aligned with the mask's sorted indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTensor {
    mask: ObservationMask,
    values: Vec<f64>,
}

impl MaskedTensor {
    pub fn new(mask: ObservationMask, values: Vec<f64>) -> Result<Self> {
        if mask.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} observed entries but {} values",
                mask.len(),
                values.len()
            )));
        }
        Ok(Self { mask, values })
    }

    pub fn from_dense(t: &DenseTensor, mask: ObservationMask) -> Result<Self> {
        let values = t.gather(&mask)?;
        Ok(Self { mask, values })
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        self.mask.shape()
    }

    pub fn value_at(&self, linear: usize) -> Option<f64> {
        self.mask.indices.binary_search(&linear).ok().map(|k| self.values[k])
    }

    /// Values at `linear`, which must all be observed.
    pub fn values_at(&self, linear: &[usize]) -> Vec<f64> {
        linear
            .iter()
            .map(|&l| self.value_at(l).expect("index is not observed"))
            .collect()
    }

    /// `||(estimate - X)_Omega|| / ||X_Omega||`.
    pub fn rre(&self, estimate: &DenseTensor) -> Result<f64> {
        if estimate.shape() != self.shape() {
            return Err(Error::DimensionMismatch(format!(
                "estimate shape {:?} vs observed shape {:?}",
                estimate.shape(),
                self.shape()
            )));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (&l, &v) in self.mask.indices.iter().zip(&self.values) {
            num += (estimate.data()[l] - v).powi(2);
            den += v * v;
        }
        if den == 0.0 {
            return Err(Error::ZeroReference);
        }
        Ok((num / den).sqrt())
    }
}
