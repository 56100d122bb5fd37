//! Leverage scores, ridge leverage scores, incoherence and the spectral
//! approximation factor beta of a masked row subset.

use nalgebra::DMatrix;

use super::StructuredOperator;
use crate::error::{Error, Result};
use crate::linalg::{dot, max_generalized_eigenvalue, PsdPinv, RANK_TOL};

/// Row leverage scores `l_i = (A (A^T A)^+ A^T)_ii`.
#[derive(Debug, Clone)]
pub struct LeverageProfile {
    pub scores: Vec<f64>,
    /// Sum of the scores; equals `rank` up to rounding.
    pub total: f64,
    pub rank: usize,
    /// Per-factor score tables for Kronecker-type operators, whose row
    /// scores are products of the factor scores.
    pub factor_scores: Option<Vec<Vec<f64>>>,
}

fn exact_scores(op: &StructuredOperator, pinv: &DMatrix<f64>) -> Vec<f64> {
    let mut buf = Vec::with_capacity(op.ncols());
    let mut tmp = vec![0.0; op.ncols()];
    (0..op.nrows())
        .map(|i| {
            op.row_into(i, &mut buf);
            for (c, t) in tmp.iter_mut().enumerate() {
                *t = pinv.column(c).iter().zip(&buf).map(|(p, a)| p * a).sum();
            }
            dot(&buf, &tmp).clamp(0.0, 1.0)
        })
        .collect()
}

fn dense_factor_scores(m: &DMatrix<f64>) -> (Vec<f64>, usize) {
    let pinv = PsdPinv::new(&(m.transpose() * m));
    let scores = (0..m.nrows())
        .map(|i| {
            let row = m.row(i);
            (row * &pinv.pinv * row.transpose())[(0, 0)].clamp(0.0, 1.0)
        })
        .collect();
    (scores, pinv.rank)
}

impl LeverageProfile {
    pub fn of(op: &StructuredOperator) -> Self {
        if let Some(factors) = op.kronecker_factors() {
            let (tables, ranks): (Vec<Vec<f64>>, Vec<usize>) =
                factors.iter().map(|f| dense_factor_scores(f)).unzip();
            let dims = op.factor_rows().to_vec();
            let mut idx = vec![0; dims.len()];
            let scores: Vec<f64> = (0..op.nrows())
                .map(|i| {
                    super::split_index(i, &dims, &mut idx);
                    idx.iter().zip(&tables).map(|(&k, t)| t[k]).product()
                })
                .collect();
            let total = scores.iter().sum();
            return Self {
                scores,
                total,
                rank: ranks.iter().product(),
                factor_scores: Some(tables),
            };
        }
        let pinv = PsdPinv::new(&op.gram());
        let scores = exact_scores(op, &pinv.pinv);
        let total = scores.iter().sum();
        Self {
            scores,
            total,
            rank: pinv.rank,
            factor_scores: None,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.total > 0.0)
    }
}

/// `a_i^T (A^T A + alpha zeta^2 I)^{-1} a_i` with `zeta = max_i ||a_i||`.
/// Each score is at most `1 / alpha`.
pub(super) fn ridge_leverage_scores(op: &StructuredOperator, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha >= 1.0) {
        return Err(Error::InvalidConfig(format!("ridge parameter alpha = {alpha} must be >= 1")));
    }
    let mut buf = Vec::with_capacity(op.ncols());
    let mut zeta2 = 0.0f64;
    for i in 0..op.nrows() {
        op.row_into(i, &mut buf);
        zeta2 = zeta2.max(dot(&buf, &buf));
    }
    if zeta2 == 0.0 {
        return Ok(vec![0.0; op.nrows()]);
    }
    let n = op.ncols();
    let reg = op.gram() + DMatrix::identity(n, n) * (alpha * zeta2);
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("ridge-regularized Gram is not positive definite".into()))?;
    let inv = chol.inverse();
    Ok(exact_scores(op, &inv))
}

/// Incoherence parameters of the row and column spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incoherence {
    /// `(I / s) max_i ||e_i^T U||^2`.
    pub row_mu: f64,
    /// `(R / s) max_r ||V^T e_r||^2`.
    pub col_mu: f64,
    pub rank: usize,
}

pub(super) fn incoherence(op: &StructuredOperator) -> Incoherence {
    let prof = LeverageProfile::of(op);
    let s = prof.rank.max(1) as f64;
    let max_row = prof.scores.iter().fold(0.0f64, |m, &v| m.max(v));
    let row_mu = op.nrows() as f64 / s * max_row;

    // Right singular vectors from the eigenvectors of the Gram matrix.
    let eig = op.gram().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] > RANK_TOL * top && eig.eigenvalues[k] > 0.0)
        .collect();
    let max_col = (0..op.ncols())
        .map(|r| keep.iter().map(|&k| eig.eigenvectors[(r, k)].powi(2)).sum::<f64>())
        .fold(0.0f64, f64::max);
    let col_mu = op.ncols() as f64 / s * max_col;
    Incoherence {
        row_mu,
        col_mu,
        rank: prof.rank,
    }
}

/// How the spectral factor beta of a masked subproblem is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaPolicy {
    /// Largest generalized eigenvalue of `(A^T A, A_Omega^T A_Omega)`.
    Exact,
    /// `2 / p` with `p = |Omega| / I`.
    Heuristic,
    Fixed(f64),
    /// Exact for small problems (`R <= 64`, `I <= 1e5`), otherwise the
    /// heuristic scaled by a safety factor of 1.5.
    Auto,
}

impl BetaPolicy {
    pub const AUTO_MAX_COLS: usize = 64;
    pub const AUTO_MAX_ROWS: usize = 100_000;
    pub const AUTO_SAFETY: f64 = 1.5;
}

/// Beta from a precomputed full Gram and masked Gram.
pub fn beta_from_grams(
    gram: &DMatrix<f64>,
    masked_gram: &DMatrix<f64>,
    rows: usize,
    observed: usize,
    policy: BetaPolicy,
) -> Result<f64> {
    let heuristic = || -> Result<f64> {
        if observed == 0 {
            return Err(Error::SingularMaskedGram {
                observed,
                unknowns: gram.nrows(),
            });
        }
        Ok(2.0 * rows as f64 / observed as f64)
    };
    let beta = match policy {
        BetaPolicy::Fixed(b) => {
            if !(b >= 1.0) {
                return Err(Error::InvalidConfig(format!("beta = {b} must be >= 1")));
            }
            b
        }
        BetaPolicy::Heuristic => heuristic()?,
        BetaPolicy::Exact => max_generalized_eigenvalue(gram, masked_gram).ok_or(
            Error::SingularMaskedGram {
                observed,
                unknowns: gram.nrows(),
            },
        )?,
        BetaPolicy::Auto => {
            if gram.nrows() <= BetaPolicy::AUTO_MAX_COLS && rows <= BetaPolicy::AUTO_MAX_ROWS {
                return beta_from_grams(gram, masked_gram, rows, observed, BetaPolicy::Exact);
            }
            BetaPolicy::AUTO_SAFETY * heuristic()?
        }
    };
    Ok(beta.max(1.0))
}

/// Beta for the row subset `omega` of `op`.
pub fn estimate_beta(op: &StructuredOperator, omega: &[usize], policy: BetaPolicy) -> Result<f64> {
    let masked = op.rows(omega);
    let masked_gram = masked.transpose() * &masked;
    beta_from_grams(&op.gram(), &masked_gram, op.nrows(), omega.len(), policy)
}
