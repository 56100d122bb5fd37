//! Low-rank model families and their reconstruction into dense tensors.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mask::ObservationMask;
use crate::tensor::{check_shape, multi_index, DenseTensor};

/// Columns with norm below this are left as-is when normalizing.
const ZERO_COLUMN: f64 = 1e-300;

/// Rank-`R` CP model: `x[i..] = sum_r weights[r] * prod_n factors[n][i_n, r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    pub weights: Vec<f64>,
    pub factors: Vec<DMatrix<f64>>,
}

/// Tucker model: core of shape `(R_1..R_N)` and factors `I_n x R_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerModel {
    pub core: DenseTensor,
    pub factors: Vec<DMatrix<f64>>,
}

/// Tensor-train model with cores of shape `(R_{n-1}, I_n, R_n)`, `R_0 = R_N = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TtModel {
    pub cores: Vec<DenseTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Cp(CpModel),
    Tucker(TuckerModel),
    Tt(TtModel),
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Row-major draw order so that generated data does not depend on storage order.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.gen::<f64>();
        }
    }
    m
}

fn uniform_tensor<R: Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Result<DenseTensor> {
    DenseTensor::from_fn(shape, |_| rng.gen::<f64>())
}

impl CpModel {
    pub fn new(weights: Vec<f64>, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidShape("CP model needs at least one factor".into()));
        }
        let rank = weights.len();
        if rank == 0 {
            return Err(Error::InvalidShape("CP rank must be positive".into()));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.ncols() != rank || f.nrows() == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "factor {n} is {}x{}, expected I_n x {rank}",
                    f.nrows(),
                    f.ncols()
                )));
            }
        }
        Ok(Self { weights, factors })
    }

    /// Factors with i.i.d. uniform `[0,1)` entries, then normalized.
    pub fn random<R: Rng + ?Sized>(shape: &[usize], rank: usize, rng: &mut R) -> Result<Self> {
        check_shape(shape)?;
        let factors = shape.iter().map(|&d| uniform_matrix(d, rank, rng)).collect();
        let mut model = Self::new(vec![1.0; rank], factors)?;
        model.normalize();
        Ok(model)
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    /// Moves column norms of every factor into the weights.
    pub fn normalize(&mut self) {
        for f in &mut self.factors {
            for r in 0..f.ncols() {
                let norm = f.column(r).norm();
                if norm > ZERO_COLUMN {
                    f.column_mut(r).scale_mut(1.0 / norm);
                    self.weights[r] *= norm;
                }
            }
        }
    }

    /// Replaces factor `n` by `unnormalized`, setting `weights[r]` to its
    /// column norms and storing the normalized columns.
    pub fn set_factor_unnormalized(&mut self, n: usize, mut unnormalized: DMatrix<f64>) {
        for r in 0..unnormalized.ncols() {
            let norm = unnormalized.column(r).norm();
            if norm > ZERO_COLUMN {
                unnormalized.column_mut(r).scale_mut(1.0 / norm);
            }
            self.weights[r] = norm;
        }
        self.factors[n] = unnormalized;
    }

    pub fn entry(&self, index: &[usize]) -> f64 {
        (0..self.rank())
            .map(|r| {
                self.weights[r]
                    * self
                        .factors
                        .iter()
                        .zip(index)
                        .map(|(f, &i)| f[(i, r)])
                        .product::<f64>()
            })
            .sum()
    }

    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let shape = self.shape();
        let mut out = DenseTensor::zeros(shape.clone())?;
        // Accumulate rank-one terms through a running outer product.
        for r in 0..self.rank() {
            let mut term = vec![self.weights[r]];
            for f in &self.factors {
                let col = f.column(r);
                term = term
                    .iter()
                    .flat_map(|&a| col.iter().map(move |&b| a * b))
                    .collect();
            }
            for (o, t) in out.data_mut().iter_mut().zip(&term) {
                *o += t;
            }
        }
        Ok(out)
    }
}

impl TuckerModel {
    pub fn new(core: DenseTensor, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if core.order() != factors.len() {
            return Err(Error::DimensionMismatch(format!(
                "core of order {} with {} factors",
                core.order(),
                factors.len()
            )));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.ncols() != core.shape()[n] || f.nrows() == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "factor {n} is {}x{}, core dimension is {}",
                    f.nrows(),
                    f.ncols(),
                    core.shape()[n]
                )));
            }
        }
        Ok(Self { core, factors })
    }

    pub fn random<R: Rng + ?Sized>(shape: &[usize], ranks: &[usize], rng: &mut R) -> Result<Self> {
        check_shape(shape)?;
        check_shape(ranks)?;
        if shape.len() != ranks.len() {
            return Err(Error::DimensionMismatch("one Tucker rank per mode is required".into()));
        }
        let factors = shape
            .iter()
            .zip(ranks)
            .map(|(&d, &r)| uniform_matrix(d, r, rng))
            .collect();
        let core = uniform_tensor(ranks.to_vec(), rng)?;
        Self::new(core, factors)
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.shape()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    /// Modes whose rank exceeds the dimension (legal, but wasteful).
    pub fn oversized_modes(&self) -> Vec<usize> {
        (0..self.factors.len())
            .filter(|&n| self.ranks()[n] > self.factors[n].nrows())
            .collect()
    }

    pub fn entry(&self, index: &[usize]) -> f64 {
        let ranks = self.ranks();
        let mut total = 0.0;
        for (l, &g) in self.core.data().iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let r = multi_index(ranks, l);
            let mut term = g;
            for (n, f) in self.factors.iter().enumerate() {
                term *= f[(index[n], r[n])];
            }
            total += term;
        }
        total
    }

    /// `core x_1 A_1 x_2 ... x_N A_N`.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        self.factors
            .iter()
            .enumerate()
            .try_fold(self.core.clone(), |t, (n, f)| t.mode_product(f, n))
    }
}

impl TtModel {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidShape("TT model needs at least one core".into()));
        }
        for (n, c) in cores.iter().enumerate() {
            if c.order() != 3 {
                return Err(Error::DimensionMismatch(format!("TT core {n} is not third-order")));
            }
        }
        if cores[0].shape()[0] != 1 || cores[cores.len() - 1].shape()[2] != 1 {
            return Err(Error::DimensionMismatch("TT boundary ranks must equal 1".into()));
        }
        for n in 1..cores.len() {
            if cores[n - 1].shape()[2] != cores[n].shape()[0] {
                return Err(Error::DimensionMismatch(format!(
                    "TT ranks disagree between cores {} and {n}",
                    n - 1
                )));
            }
        }
        Ok(Self { cores })
    }

    /// `interior` holds the `N - 1` ranks `R_1..R_{N-1}`.
    pub fn random<R: Rng + ?Sized>(shape: &[usize], interior: &[usize], rng: &mut R) -> Result<Self> {
        check_shape(shape)?;
        if interior.len() + 1 != shape.len() || interior.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "an order-{} TT model needs {} positive interior ranks",
                shape.len(),
                shape.len() - 1
            )));
        }
        let ranks = full_ranks(interior);
        let cores = shape
            .iter()
            .enumerate()
            .map(|(n, &d)| uniform_tensor(vec![ranks[n], d, ranks[n + 1]], rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    /// All ranks `R_0..R_N` including the unit boundary ranks.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape()[0]).collect();
        r.push(1);
        r
    }

    /// Slice `A^(n)[:, i, :]` as an `R_{n-1} x R_n` matrix.
    pub fn core_slice(&self, n: usize, i: usize) -> DMatrix<f64> {
        let s = self.cores[n].shape();
        DMatrix::from_fn(s[0], s[2], |a, b| self.cores[n].get(&[a, i, b]))
    }

    pub fn entry(&self, index: &[usize]) -> f64 {
        let mut acc = DMatrix::from_element(1, 1, 1.0);
        for (n, &i) in index.iter().enumerate() {
            acc = acc * self.core_slice(n, i);
        }
        acc[(0, 0)]
    }

    /// Left chain `A_{<n}`: `(I_1 ... I_{n-1}) x R_{n-1}`, rows in
    /// lexicographic order (last index fastest). `left_chain(0)` is `[1]`.
    pub fn left_chain(&self, n: usize) -> DMatrix<f64> {
        let mut chain = DMatrix::from_element(1, 1, 1.0);
        for core in &self.cores[..n] {
            let s = core.shape();
            let (r_in, dim, r_out) = (s[0], s[1], s[2]);
            let rows = chain.nrows();
            let mut next = DMatrix::zeros(rows * dim, r_out);
            for row in 0..rows {
                for i in 0..dim {
                    for b in 0..r_out {
                        let mut acc = 0.0;
                        for a in 0..r_in {
                            acc += chain[(row, a)] * core.data()[(a * dim + i) * r_out + b];
                        }
                        next[(row * dim + i, b)] = acc;
                    }
                }
            }
            chain = next;
        }
        chain
    }

    /// Right chain `A_{>n}`: `R_n x (I_{n+1} ... I_N)`. `right_chain(N-1)` is `[1]`.
    pub fn right_chain(&self, n: usize) -> DMatrix<f64> {
        let mut chain = DMatrix::from_element(1, 1, 1.0);
        for core in self.cores[n + 1..].iter().rev() {
            let s = core.shape();
            let (r_in, dim, r_out) = (s[0], s[1], s[2]);
            let cols = chain.ncols();
            let mut next = DMatrix::zeros(r_in, dim * cols);
            for a in 0..r_in {
                for i in 0..dim {
                    for col in 0..cols {
                        let mut acc = 0.0;
                        for b in 0..r_out {
                            acc += core.data()[(a * dim + i) * r_out + b] * chain[(b, col)];
                        }
                        next[(a, i * cols + col)] = acc;
                    }
                }
            }
            chain = next;
        }
        chain
    }

    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let full = self.left_chain(self.order());
        DenseTensor::new(self.shape(), full.column(0).iter().copied().collect())
    }
}

/// `[1, interior.., 1]`.
pub fn full_ranks(interior: &[usize]) -> Vec<usize> {
    let mut r = Vec::with_capacity(interior.len() + 2);
    r.push(1);
    r.extend_from_slice(interior);
    r.push(1);
    r
}

impl Model {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Model::Cp(m) => m.shape(),
            Model::Tucker(m) => m.shape(),
            Model::Tt(m) => m.shape(),
        }
    }

    pub fn reconstruct(&self) -> Result<DenseTensor> {
        match self {
            Model::Cp(m) => m.reconstruct(),
            Model::Tucker(m) => m.reconstruct(),
            Model::Tt(m) => m.reconstruct(),
        }
    }

    pub fn entry(&self, index: &[usize]) -> f64 {
        match self {
            Model::Cp(m) => m.entry(index),
            Model::Tucker(m) => m.entry(index),
            Model::Tt(m) => m.entry(index),
        }
    }

    /// Model values at the mask's entries, in mask order.
    pub fn entries_at(&self, mask: &ObservationMask) -> Vec<f64> {
        mask.multi_indices().map(|idx| self.entry(&idx)).collect()
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Cp(_) => "cp",
            Model::Tucker(_) => "tucker",
            Model::Tt(_) => "tt",
        }
    }
}
