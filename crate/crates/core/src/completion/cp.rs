use nalgebra::DMatrix;

use super::{update_rows, BlockStats, UpdateContext};
use crate::error::{Error, Result};
use crate::mask::MaskedTensor;
use crate::model::CpModel;
use crate::structured::StructuredOperator;

/// Re-fits factor `n` of a CP model row by row against the Khatri-Rao
/// product of the other factors, then renormalizes its columns into the
/// weights.
pub fn cp_factor_update(
    data: &MaskedTensor,
    model: &CpModel,
    n: usize,
    ctx: &UpdateContext,
) -> Result<(CpModel, BlockStats)> {
    let order = model.factors.len();
    if n >= order {
        return Err(Error::ModeOutOfRange { mode: n, order });
    }
    if model.shape() != data.shape() {
        return Err(Error::DimensionMismatch("model and data shapes differ".into()));
    }
    let others: Vec<DMatrix<f64>> = (0..order).filter(|&m| m != n).map(|m| model.factors[m].clone()).collect();
    let op = if others.is_empty() {
        // Order-1 tensor: the design is the 1 x R row of ones.
        StructuredOperator::dense(DMatrix::from_element(1, model.rank(), 1.0))?
    } else {
        StructuredOperator::khatri_rao(others)?
    };
    let prep = ctx.solver.prepare(op)?;
    let current = &model.factors[n] * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&model.weights));
    let (next, stats) = update_rows(&prep, data, n, &current, ctx, n)?;
    let mut out = model.clone();
    out.set_factor_unnormalized(n, next);
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::super::tests::{direct_ctx, masked};
    use super::*;
    use crate::inner::{InnerSolver, Strategy};
    use crate::linalg::{kron_all, PsdPinv};
    use crate::lifted::LiftedProblem;
    use crate::mask::ObservationMask;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn khatri_rao_dense(factors: &[&DMatrix<f64>]) -> DMatrix<f64> {
        let rank = factors[0].ncols();
        let cols: Vec<DMatrix<f64>> = (0..rank)
            .map(|r| {
                let cols: Vec<DMatrix<f64>> = factors.iter().map(|f| DMatrix::from_column_slice(f.nrows(), 1, f.column(r).as_slice())).collect();
                kron_all(&cols)
            })
            .collect();
        DMatrix::from_fn(cols[0].nrows(), rank, |i, r| cols[r][(i, 0)])
    }

    fn scaled(m: &CpModel, n: usize) -> DMatrix<f64> {
        &m.factors[n] * DMatrix::from_diagonal(&DVector::from_column_slice(&m.weights))
    }

    #[test]
    fn full_mask_matches_classical_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = CpModel::random(&[4, 5, 3], 2, &mut rng).unwrap().reconstruct().unwrap();
        let data = masked(&truth, 1.0, 1);
        let model = CpModel::random(&[4, 5, 3], 2, &mut rng).unwrap();
        for n in 0..3 {
            let (next, _) = cp_factor_update(&data, &model, n, &direct_ctx()).unwrap();
            let others: Vec<&DMatrix<f64>> = (0..3).filter(|&m| m != n).map(|m| &model.factors[m]).collect();
            let kr = khatri_rao_dense(&others);
            let classical = truth.unfold(n).unwrap() * &kr * (kr.transpose() * &kr).try_inverse().unwrap();
            assert!((scaled(&next, n) - classical).norm() < 1e-10);
        }
    }

    #[test]
    fn columns_are_normalized_after_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = CpModel::random(&[5, 4, 4], 3, &mut rng).unwrap().reconstruct().unwrap();
        let data = masked(&truth, 0.5, 2);
        let model = CpModel::random(&[5, 4, 4], 3, &mut rng).unwrap();
        let (next, _) = cp_factor_update(&data, &model, 1, &direct_ctx()).unwrap();
        for r in 0..3 {
            assert!((next.factors[1].column(r).norm() - 1.0).abs() < 1e-12);
            assert!(next.weights[r] >= 0.0);
        }
    }

    #[test]
    fn planted_factors_recovered_in_one_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let planted = CpModel::random(&[20, 20, 20], 3, &mut rng).unwrap();
        let truth = planted.reconstruct().unwrap();
        let data = masked(&truth, 1.0, 3);
        let mut model = planted.clone();
        model.factors[0] = CpModel::random(&[20, 20, 20], 3, &mut rng).unwrap().factors[0].clone();
        for n in 0..3 {
            model = cp_factor_update(&data, &model, n, &direct_ctx()).unwrap().0;
        }
        assert!(data.rre(&model.reconstruct().unwrap()).unwrap() <= 1e-8);
    }

    #[test]
    fn mini_als_rows_match_direct_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = CpModel::random(&[8, 7, 6], 3, &mut rng).unwrap().reconstruct().unwrap();
        let data = masked(&truth, 0.4, 4);
        let model = CpModel::random(&[8, 7, 6], 3, &mut rng).unwrap();
        let (direct, _) = cp_factor_update(&data, &model, 0, &direct_ctx()).unwrap();
        let a = scaled(&direct, 0);
        let kr = StructuredOperator::khatri_rao(vec![model.factors[1].clone(), model.factors[2].clone()]).unwrap();
        let prep = crate::structured::PreparedOperator::new(kr, false).unwrap();
        let slices = data.mask().mode_slices(0).unwrap();
        for (eps, tol) in [(1e-6, None), (1e-8, Some(1e-4))] {
            let mut solver = InnerSolver::new(Strategy::MiniAls);
            solver.richardson.epsilon = eps;
            let (mini, stats) = cp_factor_update(&data, &model, 0, &super::super::UpdateContext::new(solver)).unwrap();
            assert!(stats.inner_iters > 0);
            let b = scaled(&mini, 0);
            for i in 0..8 {
                // Guaranteed: residual within eps * ||projection of q||^2 of optimal.
                let prob = LiftedProblem::new(&prep, slices[i].columns.clone(), data.values_at(&slices[i].linear)).unwrap();
                let xa = DVector::from_iterator(3, a.row(i).iter().copied());
                let xb = DVector::from_iterator(3, b.row(i).iter().copied());
                let min = prob.residual(&xa).powi(2);
                let proj = (prob.observed_rows() * &xa).norm_squared();
                assert!(prob.residual(&xb).powi(2) <= min + eps * proj + 1e-12);
                if let Some(tol) = tol {
                    assert!((&xa - &xb).norm() <= tol * xa.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = CpModel::random(&[6, 5, 4], 2, &mut rng).unwrap().reconstruct().unwrap();
        let data = masked(&truth, 0.5, 5);
        let model = CpModel::random(&[6, 5, 4], 2, &mut rng).unwrap();
        let (next, _) = cp_factor_update(&data, &model, 0, &direct_ctx()).unwrap();
        let expected = scaled(&next, 0);

        let op = StructuredOperator::khatri_rao(vec![model.factors[1].clone(), model.factors[2].clone()]).unwrap();
        let prep = crate::structured::PreparedOperator::new(op, false).unwrap();
        let slices = data.mask().mode_slices(0).unwrap();
        for i in (0..6).rev() {
            let prob = LiftedProblem::new(&prep, slices[i].columns.clone(), data.values_at(&slices[i].linear)).unwrap();
            let x = PsdPinv::new(prob.masked_gram()).apply(prob.masked_rhs());
            assert!((x.transpose() - expected.row(i)).norm() < 1e-12);
        }
    }

    #[test]
    fn rank_one_matches_scalar_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = super::super::tests::random_tensor(vec![4, 3], 6);
        let mask = ObservationMask::random(vec![4, 3], 0.75, &mut rng).unwrap();
        let data = MaskedTensor::from_dense(&truth, mask).unwrap();
        let model = CpModel::random(&[4, 3], 1, &mut rng).unwrap();
        let (next, _) = cp_factor_update(&data, &model, 0, &direct_ctx()).unwrap();
        let b = &model.factors[1];
        for i in 0..4 {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..3 {
                if let Some(v) = data.value_at(i * 3 + j) {
                    num += v * b[(j, 0)];
                    den += b[(j, 0)] * b[(j, 0)];
                }
            }
            let got = next.factors[0][(i, 0)] * next.weights[0];
            if den > 0.0 {
                assert!((got - num / den).abs() < 1e-12);
            }
        }
    }
}
