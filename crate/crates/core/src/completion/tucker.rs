use nalgebra::{DMatrix, DVector};

use super::{update_rows, BlockStats, UpdateContext};
use crate::error::{Error, Result};
use crate::lifted::LiftedProblem;
use crate::mask::MaskedTensor;
use crate::model::TuckerModel;
use crate::structured::StructuredOperator;
use crate::tensor::DenseTensor;

/// Re-fits the Tucker core as one regression against the Kronecker product
/// of all factors.
pub fn tucker_core_update(
    data: &MaskedTensor,
    model: &TuckerModel,
    ctx: &UpdateContext,
) -> Result<(TuckerModel, BlockStats)> {
    if model.shape() != data.shape() {
        return Err(Error::DimensionMismatch("model and data shapes differ".into()));
    }
    let unknowns = model.core.len();
    if data.mask().len() < unknowns {
        return Err(Error::SingularMaskedGram {
            observed: data.mask().len(),
            unknowns,
        });
    }
    let op = StructuredOperator::kronecker(model.factors.clone())?;
    let prep = ctx.solver.prepare(op)?;
    let prob = LiftedProblem::new(&prep, data.mask().indices().to_vec(), data.values().to_vec())?;
    let current = DVector::from_column_slice(model.core.data());
    let block = model.factors.len();
    let out = ctx.solver.solve(&prob, &current, &mut ctx.rng(block, 0))?;
    let mut stats = BlockStats::default();
    stats.absorb(&out);
    let core = DenseTensor::new(model.ranks().to_vec(), out.x.iter().copied().collect())?;
    Ok((TuckerModel::new(core, model.factors.clone())?, stats))
}

/// Re-fits factor `n` row by row against `(kron of other factors) G_(n)^T`.
pub fn tucker_factor_update(
    data: &MaskedTensor,
    model: &TuckerModel,
    n: usize,
    ctx: &UpdateContext,
) -> Result<(TuckerModel, BlockStats)> {
    let order = model.factors.len();
    if n >= order {
        return Err(Error::ModeOutOfRange { mode: n, order });
    }
    if model.shape() != data.shape() {
        return Err(Error::DimensionMismatch("model and data shapes differ".into()));
    }
    let others: Vec<DMatrix<f64>> = (0..order).filter(|&m| m != n).map(|m| model.factors[m].clone()).collect();
    let right = model.core.unfold(n)?.transpose();
    let op = if others.is_empty() {
        StructuredOperator::dense(right)?
    } else {
        StructuredOperator::kronecker_times_matrix(others, right)?
    };
    let prep = ctx.solver.prepare(op)?;
    let (next, stats) = update_rows(&prep, data, n, &model.factors[n], ctx, n)?;
    let mut factors = model.factors.clone();
    factors[n] = next;
    Ok((TuckerModel::new(model.core.clone(), factors)?, stats))
}

/// Truncated HOSVD of the zero-imputed observed tensor.
pub fn hosvd_init(data: &MaskedTensor, ranks: &[usize]) -> Result<TuckerModel> {
    let shape = data.shape().to_vec();
    if ranks.len() != shape.len() {
        return Err(Error::DimensionMismatch("one Tucker rank per mode is required".into()));
    }
    let mut filled = DenseTensor::zeros(shape.clone())?;
    for (&l, &v) in data.mask().indices().iter().zip(data.values()) {
        filled.data_mut()[l] = v;
    }
    let mut factors = Vec::with_capacity(shape.len());
    for (n, (&dim, &r)) in shape.iter().zip(ranks).enumerate() {
        if r > dim {
            return Err(Error::InvalidConfig(format!(
                "HOSVD rank {r} exceeds dimension {dim} of mode {n}"
            )));
        }
        let unf = filled.unfold(n)?;
        let eig = (&unf * unf.transpose()).symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        factors.push(DMatrix::from_fn(dim, r, |i, j| eig.eigenvectors[(i, order[j])]));
    }
    let mut core = filled;
    for (n, f) in factors.iter().enumerate() {
        core = core.mode_product(&f.transpose(), n)?;
    }
    TuckerModel::new(core, factors)
}
