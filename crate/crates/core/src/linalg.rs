//! Small dense kernels shared by the structured operators and solvers.

use nalgebra::{DMatrix, DVector};

/// Relative cutoff below which singular values count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Pseudo-inverse of a symmetric positive semi-definite matrix.
#[derive(Debug, Clone)]
pub struct PsdPinv {
    pub pinv: DMatrix<f64>,
    pub rank: usize,
}

impl PsdPinv {
    pub fn new(gram: &DMatrix<f64>) -> Self {
        let n = gram.nrows();
        if n == 0 {
            return Self {
                pinv: DMatrix::zeros(0, 0),
                rank: 0,
            };
        }
        let sym = symmetrize(gram);
        let eig = sym.symmetric_eigen();
        let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let cutoff = RANK_TOL * max;
        let mut pinv = DMatrix::zeros(n, n);
        let mut rank = 0;
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > cutoff && lambda > 0.0 {
                rank += 1;
                let v = eig.eigenvectors.column(k);
                pinv += (v * v.transpose()) / lambda;
            }
        }
        Self {
            pinv: symmetrize(&pinv),
            rank,
        }
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.pinv.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.pinv * v
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Kronecker product with the first factor's index varying slowest.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Kronecker product of a list of factors (`factors[0]` slowest).
pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    factors
        .into_iter()
        .fold(DMatrix::from_element(1, 1, 1.0), |acc, f| kron(&acc, f))
}

/// Kronecker product of row vectors given as slices, written into `out`.
pub(crate) fn kron_rows(parts: &[&[f64]], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    let mut next = Vec::new();
    for part in parts {
        next.clear();
        for &a in out.iter() {
            for &b in part.iter() {
                next.push(a * b);
            }
        }
        std::mem::swap(out, &mut next);
    }
}

pub fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest `lambda` with `g v = lambda m v`, for symmetric `g` and symmetric
/// positive definite `m`. Returns `None` when `m` is numerically singular.
pub fn max_generalized_eigenvalue(g: &DMatrix<f64>, m: &DMatrix<f64>) -> Option<f64> {
    let m = symmetrize(m);
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |acc, &v| acc.min(v));
    if max == 0.0 || min <= RANK_TOL * max {
        return None;
    }
    let chol = m.cholesky()?;
    let l = chol.l();
    // L^{-1} G L^{-T}
    let linv_g = l.solve_lower_triangular(&symmetrize(g))?;
    let whitened = l.solve_lower_triangular(&linv_g.transpose())?;
    let top = symmetrize(&whitened)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
    Some(top)
}
