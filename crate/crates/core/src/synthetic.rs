//! Seeded synthetic low-rank tensors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::completion::ModelSpec;
use crate::error::Result;
use crate::model::{CpModel, Model, TtModel, TuckerModel};
use crate::tensor::DenseTensor;

/// Random model of the given family with uniform `[0, 1)` parameters, and
/// its reconstruction. Deterministic in `seed`.
pub fn planted(shape: &[usize], spec: &ModelSpec, seed: u64) -> Result<(Model, DenseTensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = match spec {
        ModelSpec::Cp { rank } => {
            let mut m = CpModel::random(shape, *rank, &mut rng)?;
            m.normalize();
            Model::Cp(m)
        }
        ModelSpec::Tucker { ranks } => Model::Tucker(TuckerModel::random(shape, ranks, &mut rng)?),
        ModelSpec::Tt { ranks } => Model::Tt(TtModel::random(shape, ranks, &mut rng)?),
    };
    let tensor = model.reconstruct()?;
    Ok((model, tensor))
}
