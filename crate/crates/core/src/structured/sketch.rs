//! Leverage-score row sampling and sketched least-squares solves.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{LeverageProfile, StructuredOperator};
use crate::error::{Error, Result};
use crate::linalg::PsdPinv;

/// Accuracy and sample-count settings of a sketched regression.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchConfig {
    /// Target accuracy; `0` means an exact, unsampled solve.
    pub epsilon_hat: f64,
    /// Failure probability budget.
    pub delta: f64,
    /// Fixed number of sampled rows, overriding the formula.
    pub sample_count: Option<usize>,
    /// Fixed fraction of the operator's rows to sample, `ceil(f I)`.
    pub sample_fraction: Option<f64>,
    /// Oversampling constant `c` of the sample-count formula.
    pub oversample: f64,
    pub seed: u64,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            epsilon_hat: 0.0,
            delta: 0.1,
            sample_count: None,
            sample_fraction: None,
            oversample: 10.0,
            seed: 0,
        }
    }
}

impl SketchConfig {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon_hat) {
            return Err(Error::InvalidConfig(format!(
                "epsilon_hat = {} not in [0, 1)",
                self.epsilon_hat
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta = {} not in (0, 1)", self.delta)));
        }
        if !(self.oversample > 0.0) {
            return Err(Error::InvalidConfig("oversampling constant must be positive".into()));
        }
        if self.sample_count == Some(0) {
            return Err(Error::InvalidConfig("sample count must be positive".into()));
        }
        if let Some(f) = self.sample_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!("sample fraction {f} not in (0, 1]")));
            }
        }
        Ok(())
    }

    /// `ceil(c R log(max(R,2)) / (epsilon_hat delta))`, clamped to `rows`.
    pub fn formula_count(&self, cols: usize, rows: usize) -> usize {
        let r = cols as f64;
        let s = (self.oversample * r * r.max(2.0).ln() / (self.epsilon_hat * self.delta)).ceil();
        if s.is_finite() && s < rows as f64 {
            (s as usize).max(1)
        } else {
            rows
        }
    }

    /// Number of rows to sample, or `None` for an exact solve. An explicit
    /// count or fraction always samples; a formula count that reaches `rows`
    /// means exact.
    pub fn sample_size(&self, cols: usize, rows: usize) -> Option<usize> {
        if self.epsilon_hat == 0.0 {
            return None;
        }
        if let Some(s) = self.sample_count {
            return Some(s);
        }
        if let Some(f) = self.sample_fraction {
            return Some(((f * rows as f64).ceil() as usize).max(1));
        }
        let s = self.formula_count(cols, rows);
        (s < rows).then_some(s)
    }
}

/// Draws row indices with probability `l_i / sum(l)`.
#[derive(Debug, Clone)]
pub enum RowSampler {
    Flat {
        dist: WeightedIndex<f64>,
        probs: Vec<f64>,
    },
    /// Independent draws per Kronecker factor; the row probability is the
    /// product of the factor probabilities.
    Product {
        dists: Vec<WeightedIndex<f64>>,
        probs: Vec<Vec<f64>>,
        dims: Vec<usize>,
    },
}

fn normalized(scores: &[f64]) -> Result<(WeightedIndex<f64>, Vec<f64>)> {
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateProfile);
    }
    let probs: Vec<f64> = scores.iter().map(|&s| s.max(0.0) / total).collect();
    let dist = WeightedIndex::new(&probs).map_err(|_| Error::DegenerateProfile)?;
    Ok((dist, probs))
}

impl RowSampler {
    pub fn new(op: &StructuredOperator, profile: &LeverageProfile) -> Result<Self> {
        if profile.is_degenerate() {
            return Err(Error::DegenerateProfile);
        }
        if let Some(tables) = &profile.factor_scores {
            let mut dists = Vec::with_capacity(tables.len());
            let mut probs = Vec::with_capacity(tables.len());
            for t in tables {
                let (d, p) = normalized(t)?;
                dists.push(d);
                probs.push(p);
            }
            return Ok(RowSampler::Product {
                dists,
                probs,
                dims: op.factor_rows().to_vec(),
            });
        }
        let (dist, probs) = normalized(&profile.scores)?;
        Ok(RowSampler::Flat { dist, probs })
    }

    /// One row index and its sampling probability.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        match self {
            RowSampler::Flat { dist, probs } => {
                let i = dist.sample(rng);
                (i, probs[i])
            }
            RowSampler::Product { dists, probs, dims } => {
                let mut row = 0;
                let mut p = 1.0;
                for ((d, pr), &dim) in dists.iter().zip(probs).zip(dims) {
                    let k = d.sample(rng);
                    row = row * dim + k;
                    p *= pr[k];
                }
                (row, p)
            }
        }
    }

    pub fn probability(&self, row: usize) -> f64 {
        match self {
            RowSampler::Flat { probs, .. } => probs[row],
            RowSampler::Product { probs, dims, .. } => {
                let mut idx = vec![0; dims.len()];
                super::split_index(row, dims, &mut idx);
                idx.iter().zip(probs).map(|(&k, p)| p[k]).product()
            }
        }
    }
}

/// An operator with its Gram pseudo-inverse and (optionally) a leverage
/// sampler, computed once and shared by every solve against it.
#[derive(Debug, Clone)]
pub struct PreparedOperator {
    op: StructuredOperator,
    gram: DMatrix<f64>,
    gram_pinv: PsdPinv,
    sampler: Option<RowSampler>,
}

impl PreparedOperator {
    pub fn new(op: StructuredOperator, with_sampler: bool) -> Result<Self> {
        let gram = op.gram();
        let gram_pinv = PsdPinv::new(&gram);
        let sampler = if with_sampler {
            Some(RowSampler::new(&op, &op.leverage_scores())?)
        } else {
            None
        };
        Ok(Self {
            op,
            gram,
            gram_pinv,
            sampler,
        })
    }

    pub fn operator(&self) -> &StructuredOperator {
        &self.op
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_pinv(&self) -> &PsdPinv {
        &self.gram_pinv
    }

    pub fn sampler(&self) -> Option<&RowSampler> {
        self.sampler.as_ref()
    }

    pub fn rank_deficient(&self) -> bool {
        !self.gram_pinv.is_full_rank()
    }

    /// Solves `min ||S (A x - b)||` for a leverage sketch `S` of `s` rows,
    /// requesting `b_i` only for sampled rows.
    pub(crate) fn sketched_solve<R: Rng + ?Sized>(
        &self,
        s: usize,
        mut rhs: impl FnMut(usize) -> f64,
        rng: &mut R,
    ) -> Result<(DVector<f64>, bool)> {
        let sampler = self.sampler.as_ref().ok_or_else(|| {
            Error::InvalidConfig("operator was prepared without a leverage sampler".into())
        })?;
        let r = self.op.ncols();
        let mut sts = DMatrix::zeros(r, r);
        let mut stb = DVector::zeros(r);
        let mut buf = Vec::with_capacity(r);
        for _ in 0..s {
            let (i, p) = sampler.sample(rng);
            let w2 = 1.0 / (s as f64 * p);
            self.op.row_into(i, &mut buf);
            let bi = rhs(i);
            for a in 0..r {
                let va = buf[a] * w2;
                stb[a] += va * bi;
                for b in 0..=a {
                    sts[(a, b)] += va * buf[b];
                }
            }
        }
        for a in 0..r {
            for b in 0..a {
                sts[(b, a)] = sts[(a, b)];
            }
        }
        let pinv = PsdPinv::new(&sts);
        Ok((pinv.apply(&stb), !pinv.is_full_rank()))
    }
}

/// A row-sampled, reweighted copy of a regression problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    /// Sampled row indices (a multiset, in draw order).
    pub rows: Vec<usize>,
    /// Weights `1 / sqrt(s p_i)` applied to each sampled row and rhs entry.
    pub weights: Vec<f64>,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Leverage-sampled sketch of `(A, b)`. `rhs(i)` is called only for sampled
/// rows. With `epsilon_hat = 0` the full system is returned unweighted.
pub fn sample_sketch<R: Rng + ?Sized>(
    op: &StructuredOperator,
    sampler: &RowSampler,
    rhs: impl Fn(usize) -> f64,
    cfg: &SketchConfig,
    rng: &mut R,
) -> Result<Sketch> {
    cfg.validate()?;
    match cfg.sample_size(op.ncols(), op.nrows()) {
        None => {
            let rows: Vec<usize> = (0..op.nrows()).collect();
            let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|&i| rhs(i)));
            Ok(Sketch {
                matrix: op.rows(&rows),
                weights: vec![1.0; rows.len()],
                rows,
                rhs,
            })
        }
        Some(s) => {
            let mut rows = Vec::with_capacity(s);
            let mut weights = Vec::with_capacity(s);
            for _ in 0..s {
                let (i, p) = sampler.sample(rng);
                rows.push(i);
                weights.push(1.0 / (s as f64 * p).sqrt());
            }
            let mut matrix = op.rows(&rows);
            for (k, &w) in weights.iter().enumerate() {
                matrix.row_mut(k).scale_mut(w);
            }
            let rhs = DVector::from_iterator(s, rows.iter().zip(&weights).map(|(&i, &w)| w * rhs(i)));
            Ok(Sketch {
                rows,
                weights,
                matrix,
                rhs,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub x: DVector<f64>,
    /// The (sketched) Gram matrix was numerically singular; `x` is the
    /// pseudo-inverse solution.
    pub rank_deficient: bool,
    /// Rows drawn, or `None` for an exact solve.
    pub sampled_rows: Option<usize>,
}

/// `argmin_x ||A x - b||`, exactly for `epsilon_hat = 0`, otherwise from a
/// leverage-score sketch.
pub fn solve_least_squares<R: Rng + ?Sized>(
    op: &StructuredOperator,
    rhs: &[f64],
    cfg: &SketchConfig,
    rng: &mut R,
) -> Result<LstsqSolution> {
    cfg.validate()?;
    if rhs.len() != op.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs has {} entries, operator has {} rows",
            rhs.len(),
            op.nrows()
        )));
    }
    match cfg.sample_size(op.ncols(), op.nrows()) {
        None => {
            let prep = PreparedOperator::new(op.clone(), false)?;
            let atb = op.transpose_apply(rhs)?;
            Ok(LstsqSolution {
                x: prep.gram_pinv().apply(&atb),
                rank_deficient: prep.rank_deficient(),
                sampled_rows: None,
            })
        }
        Some(s) => {
            let prep = PreparedOperator::new(op.clone(), true)?;
            let (x, rank_deficient) = prep.sketched_solve(s, |i| rhs[i], rng)?;
            Ok(LstsqSolution {
                x,
                rank_deficient,
                sampled_rows: Some(s),
            })
        }
    }
}
