use nalgebra::DMatrix;

use super::{update_rows, BlockStats, UpdateContext};
use crate::error::{Error, Result};
use crate::mask::MaskedTensor;
use crate::model::TtModel;
use crate::structured::StructuredOperator;
use crate::tensor::DenseTensor;

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Thin QR with the factors padded by zeros so that `Q` has `cols` columns.
fn padded_qr(m: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let qr = m.qr();
    let (q, r) = (qr.q(), qr.r());
    if q.ncols() == cols {
        return (q, r);
    }
    let mut qp = DMatrix::zeros(rows, cols);
    qp.columns_mut(0, q.ncols()).copy_from(&q);
    let mut rp = DMatrix::zeros(cols, cols);
    rp.rows_mut(0, r.nrows()).copy_from(&r);
    (qp, rp)
}

/// Moves the gauge so that cores before `n` are left-orthonormal and cores
/// after `n` are right-orthonormal. The represented tensor is unchanged and
/// the chains around core `n` have orthonormal columns (rows), as long as no
/// rank exceeds the size of the unfolding it lives in.
pub fn tt_canonicalize(model: &TtModel, n: usize) -> Result<TtModel> {
    let order = model.order();
    if n >= order {
        return Err(Error::ModeOutOfRange { mode: n, order });
    }
    let mut cores = model.cores.clone();
    for k in 0..n {
        let s = cores[k].shape().to_vec();
        let m = DMatrix::from_row_slice(s[0] * s[1], s[2], cores[k].data());
        let (q, r) = padded_qr(m);
        cores[k] = DenseTensor::new(s, row_major(&q))?;
        let t = cores[k + 1].shape().to_vec();
        let next = DMatrix::from_row_slice(t[0], t[1] * t[2], cores[k + 1].data());
        cores[k + 1] = DenseTensor::new(t, row_major(&(r * next)))?;
    }
    for k in (n + 1..order).rev() {
        let s = cores[k].shape().to_vec();
        let m = DMatrix::from_row_slice(s[0], s[1] * s[2], cores[k].data());
        let (q, r) = padded_qr(m.transpose());
        cores[k] = DenseTensor::new(s, row_major(&q.transpose()))?;
        let t = cores[k - 1].shape().to_vec();
        let prev = DMatrix::from_row_slice(t[0] * t[1], t[2], cores[k - 1].data());
        cores[k - 1] = DenseTensor::new(t, row_major(&(prev * r.transpose())))?;
    }
    TtModel::new(cores)
}

/// The design of core `n`: `A_{<n} (x) A_{>n}^T`.
pub(crate) fn tt_chain_operator(model: &TtModel, n: usize) -> Result<StructuredOperator> {
    StructuredOperator::tt_chain(model.left_chain(n), model.right_chain(n).transpose())
}

/// Re-fits core `n`, one row problem per slice `A^(n)[:, i, :]`.
pub fn tt_core_update(
    data: &MaskedTensor,
    model: &TtModel,
    n: usize,
    ctx: &UpdateContext,
) -> Result<(TtModel, BlockStats)> {
    let order = model.order();
    if n >= order {
        return Err(Error::ModeOutOfRange { mode: n, order });
    }
    if model.shape() != data.shape() {
        return Err(Error::DimensionMismatch("model and data shapes differ".into()));
    }
    let model = if ctx.canonicalize_tt {
        tt_canonicalize(model, n)?
    } else {
        model.clone()
    };
    let prep = ctx.solver.prepare(tt_chain_operator(&model, n)?)?;
    let s = model.cores[n].shape().to_vec();
    let (ra, dim, rb) = (s[0], s[1], s[2]);
    let data_n = model.cores[n].data();
    let current = DMatrix::from_fn(dim, ra * rb, |i, ab| data_n[(ab / rb * dim + i) * rb + ab % rb]);
    let (next, stats) = update_rows(&prep, data, n, &current, ctx, n)?;
    let mut core = vec![0.0; ra * dim * rb];
    for i in 0..dim {
        for ab in 0..ra * rb {
            core[(ab / rb * dim + i) * rb + ab % rb] = next[(i, ab)];
        }
    }
    let mut cores = model.cores;
    cores[n] = DenseTensor::new(s, core)?;
    Ok((TtModel::new(cores)?, stats))
}
