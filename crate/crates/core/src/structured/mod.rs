//! Implicit structured design matrices.
//!
//! A [`StructuredOperator`] is a tall `I x R` matrix that is never formed
//! explicitly by the solvers: rows are evaluated on demand and the Gram
//! matrix is assembled from the factors. Row order of every product kind
//! follows the crate-wide convention (first factor's index slowest), so
//! row `i` of a Khatri-Rao operator over the non-`n` CP factors is column
//! `i` of the mode-`n` unfolding.

mod leverage;
mod sketch;

pub use leverage::{estimate_beta, beta_from_grams, BetaPolicy, Incoherence, LeverageProfile};
pub use sketch::{
    sample_sketch, solve_least_squares, LstsqSolution, PreparedOperator, RowSampler, Sketch,
    SketchConfig,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{kron, kron_all, kron_rows};

/// Default cap on `rows * cols` for [`StructuredOperator::materialize`].
pub const MATERIALIZE_LIMIT: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    Dense(DMatrix<f64>),
    /// Column-wise Kronecker product of factors with a common column count.
    KhatriRao(Vec<DMatrix<f64>>),
    Kronecker(Vec<DMatrix<f64>>),
    /// `(factors[0] (x) factors[1] (x) ...) * right`.
    KroneckerTimesMatrix {
        factors: Vec<DMatrix<f64>>,
        right: DMatrix<f64>,
    },
    /// `left (x) right`, with `left = A_{<n}` and `right = A_{>n}^T` of a TT model.
    TtChain { left: DMatrix<f64>, right: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub struct StructuredOperator {
    kind: OperatorKind,
    nrows: usize,
    ncols: usize,
    /// Row-major copies of the factor matrices, for fast row evaluation.
    row_major: Vec<Vec<f64>>,
    /// Row count of each factor (digit bases of the row index).
    factor_rows: Vec<usize>,
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Splits `i` into per-factor row indices, first factor slowest.
fn split_index(mut i: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = i % dims[k];
        i /= dims[k];
    }
}

impl StructuredOperator {
    pub fn new(kind: OperatorKind) -> Result<Self> {
        let (nrows, ncols, mats): (usize, usize, Vec<&DMatrix<f64>>) = match &kind {
            OperatorKind::Dense(m) => (m.nrows(), m.ncols(), vec![m]),
            OperatorKind::KhatriRao(fs) => {
                if fs.is_empty() {
                    return Err(Error::DimensionMismatch("Khatri-Rao of zero factors".into()));
                }
                let r = fs[0].ncols();
                if fs.iter().any(|f| f.ncols() != r) {
                    return Err(Error::DimensionMismatch(
                        "Khatri-Rao factors must share a column count".into(),
                    ));
                }
                (fs.iter().map(|f| f.nrows()).product(), r, fs.iter().collect())
            }
            OperatorKind::Kronecker(fs) => {
                if fs.is_empty() {
                    return Err(Error::DimensionMismatch("Kronecker of zero factors".into()));
                }
                (
                    fs.iter().map(|f| f.nrows()).product(),
                    fs.iter().map(|f| f.ncols()).product(),
                    fs.iter().collect(),
                )
            }
            OperatorKind::KroneckerTimesMatrix { factors, right } => {
                let inner: usize = factors.iter().map(|f| f.ncols()).product();
                if right.nrows() != inner {
                    return Err(Error::DimensionMismatch(format!(
                        "right matrix has {} rows, Kronecker part has {inner} columns",
                        right.nrows()
                    )));
                }
                (
                    factors.iter().map(|f| f.nrows()).product(),
                    right.ncols(),
                    factors.iter().collect(),
                )
            }
            OperatorKind::TtChain { left, right } => (
                left.nrows() * right.nrows(),
                left.ncols() * right.ncols(),
                vec![left, right],
            ),
        };
        if nrows == 0 || ncols == 0 {
            return Err(Error::DimensionMismatch("operator must be nonempty".into()));
        }
        let row_major = mats.iter().map(|m| to_row_major(m)).collect();
        let factor_rows = mats.iter().map(|m| m.nrows()).collect();
        Ok(Self {
            kind,
            nrows,
            ncols,
            row_major,
            factor_rows,
        })
    }

    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        Self::new(OperatorKind::Dense(m))
    }

    pub fn khatri_rao(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(OperatorKind::KhatriRao(factors))
    }

    pub fn kronecker(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(OperatorKind::Kronecker(factors))
    }

    pub fn kronecker_times_matrix(factors: Vec<DMatrix<f64>>, right: DMatrix<f64>) -> Result<Self> {
        Self::new(OperatorKind::KroneckerTimesMatrix { factors, right })
    }

    pub fn tt_chain(left: DMatrix<f64>, right: DMatrix<f64>) -> Result<Self> {
        Self::new(OperatorKind::TtChain { left, right })
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Factors whose Kronecker product is this operator, if it is one.
    pub(crate) fn kronecker_factors(&self) -> Option<Vec<&DMatrix<f64>>> {
        match &self.kind {
            OperatorKind::Kronecker(fs) => Some(fs.iter().collect()),
            OperatorKind::TtChain { left, right } => Some(vec![left, right]),
            _ => None,
        }
    }

    pub(crate) fn factor_rows(&self) -> &[usize] {
        &self.factor_rows
    }

    fn factor_row(&self, k: usize, i: usize) -> &[f64] {
        let width = self.row_major[k].len() / self.factor_rows[k];
        &self.row_major[k][i * width..(i + 1) * width]
    }

    /// Writes row `i` into `out` (resized to `ncols`).
    pub fn row_into(&self, i: usize, out: &mut Vec<f64>) {
        debug_assert!(i < self.nrows);
        match &self.kind {
            OperatorKind::Dense(_) => {
                out.clear();
                out.extend_from_slice(self.factor_row(0, i));
            }
            OperatorKind::KhatriRao(_) => {
                let mut idx = vec![0; self.factor_rows.len()];
                split_index(i, &self.factor_rows, &mut idx);
                out.clear();
                out.resize(self.ncols, 1.0);
                for (k, &ik) in idx.iter().enumerate() {
                    for (o, v) in out.iter_mut().zip(self.factor_row(k, ik)) {
                        *o *= v;
                    }
                }
            }
            OperatorKind::Kronecker(_) | OperatorKind::TtChain { .. } => {
                let mut idx = vec![0; self.factor_rows.len()];
                split_index(i, &self.factor_rows, &mut idx);
                let parts: Vec<&[f64]> = idx
                    .iter()
                    .enumerate()
                    .map(|(k, &ik)| self.factor_row(k, ik))
                    .collect();
                kron_rows(&parts, out);
            }
            OperatorKind::KroneckerTimesMatrix { right, .. } => {
                let mut idx = vec![0; self.factor_rows.len()];
                split_index(i, &self.factor_rows, &mut idx);
                let parts: Vec<&[f64]> = idx
                    .iter()
                    .enumerate()
                    .map(|(k, &ik)| self.factor_row(k, ik))
                    .collect();
                let mut kr = Vec::new();
                kron_rows(&parts, &mut kr);
                out.clear();
                out.resize(self.ncols, 0.0);
                for (k, &v) in kr.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    for (c, o) in out.iter_mut().enumerate() {
                        *o += v * right[(k, c)];
                    }
                }
            }
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ncols);
        self.row_into(i, &mut out);
        out
    }

    /// Rows `rows` stacked into a `rows.len() x R` matrix.
    pub fn rows(&self, rows: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows.len(), self.ncols);
        let mut buf = Vec::with_capacity(self.ncols);
        for (k, &i) in rows.iter().enumerate() {
            self.row_into(i, &mut buf);
            for (c, &v) in buf.iter().enumerate() {
                m[(k, c)] = v;
            }
        }
        m
    }

    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        self.materialize_with_limit(MATERIALIZE_LIMIT)
    }

    pub fn materialize_with_limit(&self, limit: usize) -> Result<DMatrix<f64>> {
        if self.nrows.saturating_mul(self.ncols) > limit {
            return Err(Error::TooLarge {
                rows: self.nrows,
                cols: self.ncols,
                limit,
            });
        }
        if let OperatorKind::Dense(m) = &self.kind {
            return Ok(m.clone());
        }
        let all: Vec<usize> = (0..self.nrows).collect();
        Ok(self.rows(&all))
    }

    /// `A^T A`, assembled from the factors for structured kinds.
    pub fn gram(&self) -> DMatrix<f64> {
        let g = match &self.kind {
            OperatorKind::Dense(m) => m.transpose() * m,
            OperatorKind::KhatriRao(fs) => fs
                .iter()
                .map(|f| f.transpose() * f)
                .reduce(|acc, g| acc.component_mul(&g))
                .expect("nonempty factor list"),
            OperatorKind::Kronecker(fs) => {
                let grams: Vec<DMatrix<f64>> = fs.iter().map(|f| f.transpose() * f).collect();
                kron_all(grams.iter())
            }
            OperatorKind::KroneckerTimesMatrix { factors, right } => {
                let grams: Vec<DMatrix<f64>> = factors.iter().map(|f| f.transpose() * f).collect();
                right.transpose() * kron_all(grams.iter()) * right
            }
            OperatorKind::TtChain { left, right } => {
                kron(&(left.transpose() * left), &(right.transpose() * right))
            }
        };
        crate::linalg::symmetrize(&g)
    }

    /// `A x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut buf = Vec::with_capacity(self.ncols);
        DVector::from_iterator(
            self.nrows,
            (0..self.nrows).map(|i| {
                self.row_into(i, &mut buf);
                crate::linalg::dot(&buf, x.as_slice())
            }),
        )
    }

    /// `A^T b`.
    pub fn transpose_apply(&self, b: &[f64]) -> Result<DVector<f64>> {
        if b.len() != self.nrows {
            return Err(Error::DimensionMismatch(format!(
                "rhs has {} entries, operator has {} rows",
                b.len(),
                self.nrows
            )));
        }
        let mut out = DVector::zeros(self.ncols);
        let mut buf = Vec::with_capacity(self.ncols);
        for (i, &bi) in b.iter().enumerate() {
            if bi == 0.0 {
                continue;
            }
            self.row_into(i, &mut buf);
            for (o, v) in out.iter_mut().zip(&buf) {
                *o += bi * v;
            }
        }
        Ok(out)
    }

    pub fn leverage_scores(&self) -> LeverageProfile {
        LeverageProfile::of(self)
    }

    pub fn ridge_leverage_scores(&self, alpha: f64) -> Result<Vec<f64>> {
        leverage::ridge_leverage_scores(self, alpha)
    }

    pub fn incoherence(&self) -> Incoherence {
        leverage::incoherence(self)
    }
}
