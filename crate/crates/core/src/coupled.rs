//! Coupled matrix completion: `A X B^T + C Y D^T = E` with `E` partially
//! observed, solved by alternating masked Kronecker regressions.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::inner::{derive_seed, InnerSolver};
use crate::lifted::LiftedProblem;
use crate::mask::{MaskedTensor, ObservationMask};
use crate::structured::StructuredOperator;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    X,
    Y,
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Half::X => "X",
            Half::Y => "Y",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledInstance {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Observed entries of the `n x n` right-hand side.
    pub e: MaskedTensor,
    /// The full right-hand side, when known.
    pub e_full: Option<DMatrix<f64>>,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

fn vec_rm(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

fn unvec_rm(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

/// Checks `vec(L Z R^T) = op vec(Z)` for the operator built from `(L, R)`.
fn check_kronecker_identity(l: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let op = StructuredOperator::kronecker(vec![l.clone(), r.clone()])?;
    let z = DMatrix::from_fn(l.ncols(), r.ncols(), |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5);
    let direct = vec_rm(&(l * &z * r.transpose()));
    let via_op = op.apply(&vec_rm(&z));
    if (&direct - via_op).norm() > 1e-10 * direct.norm().max(1.0) {
        return Err(Error::DimensionMismatch(
            "Kronecker operator does not reproduce vec(L Z R^T)".into(),
        ));
    }
    Ok(())
}

impl CoupledInstance {
    /// Validates shapes and starts from `X = Y = I`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        e: MaskedTensor,
        e_full: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let (n, k) = a.shape();
        if n == 0 || k == 0 {
            return Err(Error::InvalidShape("coupled factors must be nonempty".into()));
        }
        for (name, m) in [("B", &b), ("C", &c), ("D", &d)] {
            if m.shape() != (n, k) {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {n}x{k}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        if e.shape() != [n, n] {
            return Err(Error::DimensionMismatch(format!("E has shape {:?}, expected [{n}, {n}]", e.shape())));
        }
        if let Some(full) = &e_full {
            if full.shape() != (n, n) {
                return Err(Error::DimensionMismatch("full E has the wrong shape".into()));
            }
        }
        check_kronecker_identity(&a, &b)?;
        check_kronecker_identity(&c, &d)?;
        Ok(Self {
            a,
            b,
            c,
            d,
            e,
            e_full,
            x: DMatrix::identity(k, k),
            y: DMatrix::identity(k, k),
        })
    }

    /// Planted instance: all factors and the true `X`, `Y` uniform on
    /// `[0, 1)`, with `round(p n^2)` entries of `E` observed. Returns the
    /// instance and the planted `(X, Y)`.
    pub fn planted<R: Rng + ?Sized>(
        n: usize,
        d: usize,
        p: f64,
        rng: &mut R,
    ) -> Result<(Self, DMatrix<f64>, DMatrix<f64>)> {
        let mut uniform = |r: usize, c: usize| {
            let mut m = DMatrix::zeros(r, c);
            for i in 0..r {
                for j in 0..c {
                    m[(i, j)] = rng.gen::<f64>();
                }
            }
            m
        };
        let (a, b, c, dd) = (uniform(n, d), uniform(n, d), uniform(n, d), uniform(n, d));
        let (x, y) = (uniform(d, d), uniform(d, d));
        let e_full = &a * &x * b.transpose() + &c * &y * dd.transpose();
        let mask = ObservationMask::random(vec![n, n], p, rng)?;
        let e = MaskedTensor::from_dense(&DenseTensor::from_matrix(&e_full), mask)?;
        Ok((Self::new(a, b, c, dd, e, Some(e_full))?, x, y))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn d(&self) -> usize {
        self.a.ncols()
    }

    pub fn prediction(&self) -> DMatrix<f64> {
        &self.a * &self.x * self.b.transpose() + &self.c * &self.y * self.d.transpose()
    }

    /// Mean squared error over observed entries.
    pub fn mse_train(&self) -> f64 {
        let pred = self.prediction();
        let n = self.n();
        let sum: f64 = self
            .e
            .mask()
            .indices()
            .iter()
            .zip(self.e.values())
            .map(|(&l, &v)| (pred[(l / n, l % n)] - v).powi(2))
            .sum();
        sum / self.e.values().len().max(1) as f64
    }

    /// Mean squared error over all entries, when the full `E` is known.
    pub fn mse_full(&self) -> Option<f64> {
        let full = self.e_full.as_ref()?;
        Some((self.prediction() - full).norm_squared() / full.len() as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HalfStepStats {
    pub inner_iters: usize,
    pub beta: Option<f64>,
}

/// Re-fits `X` (or `Y`) with the other unknown fixed.
pub fn coupled_half_step<R: Rng + ?Sized>(
    inst: &mut CoupledInstance,
    which: Half,
    solver: &InnerSolver,
    rng: &mut R,
) -> Result<HalfStepStats> {
    let n = inst.n();
    let k = inst.d();
    let (left, right, other) = match which {
        Half::X => (&inst.a, &inst.b, &inst.c * &inst.y * inst.d.transpose()),
        Half::Y => (&inst.c, &inst.d, &inst.a * &inst.x * inst.b.transpose()),
    };
    let op = StructuredOperator::kronecker(vec![left.clone(), right.clone()])?;
    let prep = solver.prepare(op)?;
    let omega = inst.e.mask().indices().to_vec();
    let q = omega
        .iter()
        .zip(inst.e.values())
        .map(|(&l, &v)| v - other[(l / n, l % n)])
        .collect();
    let prob = LiftedProblem::new(&prep, omega, q)?;
    let current = vec_rm(match which {
        Half::X => &inst.x,
        Half::Y => &inst.y,
    });
    let out = solver.solve(&prob, &current, rng)?;
    let next = unvec_rm(&out.x, k, k);
    match which {
        Half::X => inst.x = next,
        Half::Y => inst.y = next,
    }
    Ok(HalfStepStats {
        inner_iters: out.iterations,
        beta: out.beta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRecord {
    pub round: usize,
    pub half: Half,
    pub mse_train: f64,
    pub mse_full: Option<f64>,
    pub wall_ms: f64,
    pub stats: HalfStepStats,
}

/// Alternates `X` and `Y` half-steps for `rounds` rounds, recording the
/// errors after every half-step.
pub fn coupled_solve(
    inst: &mut CoupledInstance,
    rounds: usize,
    solver: &InnerSolver,
    seed: u64,
) -> Result<Vec<CoupledRecord>> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("at least one round is required".into()));
    }
    solver.validate()?;
    let mut trace = Vec::with_capacity(2 * rounds);
    for round in 1..=rounds {
        for (h, half) in [Half::X, Half::Y].into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, round as u64, h as u64]));
            let start = Instant::now();
            let stats = coupled_half_step(inst, half, solver, &mut rng)?;
            trace.push(CoupledRecord {
                round,
                half,
                mse_train: inst.mse_train(),
                mse_full: inst.mse_full(),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                stats,
            });
        }
    }
    Ok(trace)
}
