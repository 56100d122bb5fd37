//! ALS completion drivers for CP, Tucker and tensor-train models.
//!
//! Every block update is a masked linear regression against a structured
//! design. Factor-type blocks split into independent row problems that
//! share one prepared operator and differ only in their observed slice.

mod cp;
mod tt;
mod tucker;

pub use cp::cp_factor_update;
pub use tt::{tt_canonicalize, tt_core_update};
pub use tucker::{hosvd_init, tucker_core_update, tucker_factor_update};

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inner::{derive_seed, InnerOutcome, InnerSolver, Strategy};
use crate::lifted::{LiftedProblem, RichardsonConfig};
use crate::mask::MaskedTensor;
use crate::model::{CpModel, Model, TtModel, TuckerModel};
use crate::structured::{PreparedOperator, SketchConfig};
use crate::tensor::{rre, DenseTensor};

/// Model family and ranks to fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Cp { rank: usize },
    Tucker { ranks: Vec<usize> },
    /// Interior ranks `R_1..R_{N-1}`.
    Tt { ranks: Vec<usize> },
}

impl ModelSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::Cp { .. } => "cp",
            ModelSpec::Tucker { .. } => "tucker",
            ModelSpec::Tt { .. } => "tt",
        }
    }

    /// Number of blocks in one sweep for an order-`order` tensor.
    pub fn blocks(&self, order: usize) -> usize {
        match self {
            ModelSpec::Tucker { .. } => order + 1,
            _ => order,
        }
    }

    /// Label of the `b`-th block of a sweep.
    pub fn block_label(&self, b: usize) -> String {
        match self {
            ModelSpec::Tucker { .. } if b == 0 => "core".into(),
            ModelSpec::Tucker { .. } => format!("{}", b - 1),
            _ => format!("{b}"),
        }
    }

    /// A scalar summary of the ranks (CP rank, or the largest Tucker/TT rank).
    pub fn max_rank(&self) -> usize {
        match self {
            ModelSpec::Cp { rank } => *rank,
            ModelSpec::Tucker { ranks } | ModelSpec::Tt { ranks } => ranks.iter().copied().max().unwrap_or(1),
        }
    }

    fn validate(&self, order: usize) -> Result<()> {
        match self {
            ModelSpec::Cp { rank } if *rank == 0 => Err(Error::InvalidConfig("CP rank must be positive".into())),
            ModelSpec::Tucker { ranks } if ranks.len() != order || ranks.contains(&0) => Err(
                Error::InvalidConfig(format!("Tucker needs {order} positive ranks, got {ranks:?}")),
            ),
            ModelSpec::Tt { ranks } if ranks.len() + 1 != order || ranks.contains(&0) => Err(
                Error::InvalidConfig(format!("TT needs {} positive interior ranks, got {ranks:?}", order.saturating_sub(1))),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitPolicy {
    /// Entries i.i.d. uniform on `[0, 1)`.
    #[default]
    Uniform,
    /// Truncated HOSVD of the zero-imputed tensor (Tucker only).
    Hosvd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsPlan {
    pub model: ModelSpec,
    pub strategy: Strategy,
    pub rounds: usize,
    pub richardson: RichardsonConfig,
    pub sketch: SketchConfig,
    pub init: InitPolicy,
    pub seed: u64,
    /// Start inner iterations at the current block value instead of zero.
    pub warm_start: bool,
    /// Put TT models in canonical form for the core being updated.
    pub canonicalize_tt: bool,
}

impl AlsPlan {
    pub fn new(model: ModelSpec, strategy: Strategy, rounds: usize) -> Self {
        Self {
            model,
            strategy,
            rounds,
            richardson: RichardsonConfig::default(),
            sketch: SketchConfig::default(),
            init: InitPolicy::Uniform,
            seed: 0,
            warm_start: false,
            canonicalize_tt: true,
        }
    }

    pub fn solver(&self) -> InnerSolver {
        InnerSolver {
            strategy: self.strategy,
            richardson: self.richardson.clone(),
            sketch: self.sketch.clone(),
            warm_start: self.warm_start,
        }
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("at least one round is required".into()));
        }
        self.model.validate(order)?;
        if self.init == InitPolicy::Hosvd && !matches!(self.model, ModelSpec::Tucker { .. }) {
            return Err(Error::InvalidConfig("HOSVD initialization applies to Tucker models only".into()));
        }
        self.solver().validate()
    }

    pub(crate) fn context(&self, round: usize) -> UpdateContext {
        UpdateContext {
            solver: self.solver(),
            seed: self.seed,
            round,
            canonicalize_tt: self.canonicalize_tt,
        }
    }
}

/// Everything a single block update needs besides the data and model.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateContext {
    pub solver: InnerSolver,
    pub seed: u64,
    pub round: usize,
    pub canonicalize_tt: bool,
}

impl UpdateContext {
    pub fn new(solver: InnerSolver) -> Self {
        Self {
            solver,
            seed: 0,
            round: 0,
            canonicalize_tt: true,
        }
    }

    fn rng(&self, block: usize, row: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, self.round as u64, block as u64, row as u64]))
    }
}

/// Aggregates over the row solves of one block update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockStats {
    pub inner_iters: usize,
    /// Largest beta over the block's subproblems; `None` for direct solves.
    pub beta: Option<f64>,
    /// Rows with no observations, left unchanged.
    pub empty_rows: usize,
    /// Subproblems whose masked Gram was singular (heuristic beta used).
    pub beta_fallbacks: usize,
}

impl BlockStats {
    fn absorb(&mut self, out: &InnerOutcome) {
        self.inner_iters += out.iterations;
        if out.beta_fallback {
            self.beta_fallbacks += 1;
        }
        if let Some(b) = out.beta {
            self.beta = Some(self.beta.map_or(b, |m: f64| m.max(b)));
        }
    }
}

/// Solves the row problems of the mode-`mode` unfolding against the shared
/// design `prep`, whose row order is the unfolding's column order. Rows with
/// no observations keep their value from `current`.
pub(crate) fn update_rows(
    prep: &PreparedOperator,
    data: &MaskedTensor,
    mode: usize,
    current: &DMatrix<f64>,
    ctx: &UpdateContext,
    block: usize,
) -> Result<(DMatrix<f64>, BlockStats)> {
    let slices = data.mask().mode_slices(mode)?;
    let outcomes: Vec<Result<Option<InnerOutcome>>> = slices
        .par_iter()
        .enumerate()
        .map(|(i, slice)| {
            if slice.columns.is_empty() {
                return Ok(None);
            }
            let prob = LiftedProblem::new(prep, slice.columns.clone(), data.values_at(&slice.linear))?;
            let x = DVector::from_iterator(current.ncols(), current.row(i).iter().copied());
            ctx.solver.solve(&prob, &x, &mut ctx.rng(block, i)).map(Some)
        })
        .collect();
    let mut next = current.clone();
    let mut stats = BlockStats::default();
    for (i, out) in outcomes.into_iter().enumerate() {
        match out? {
            None => stats.empty_rows += 1,
            Some(out) => {
                stats.absorb(&out);
                for (j, v) in out.x.iter().enumerate() {
                    next[(i, j)] = *v;
                }
            }
        }
    }
    Ok((next, stats))
}

/// One `(round, block)` entry of a completion run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub round: usize,
    pub block: String,
    pub train_rre: f64,
    pub test_rre: Option<f64>,
    pub wall_ms: f64,
    pub stats: BlockStats,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub records: Vec<FitRecord>,
}

impl FitTrace {
    pub fn last(&self) -> Option<&FitRecord> {
        self.records.last()
    }

    /// Records that close a round (the last block of each sweep).
    pub fn round_ends(&self) -> Vec<&FitRecord> {
        let mut out: Vec<&FitRecord> = Vec::new();
        for r in &self.records {
            match out.last() {
                Some(prev) if prev.round == r.round => *out.last_mut().unwrap() = r,
                _ => out.push(r),
            }
        }
        out
    }

    pub fn total_inner_iters(&self) -> usize {
        self.records.iter().map(|r| r.stats.inner_iters).sum()
    }

    pub fn total_wall_ms(&self) -> f64 {
        self.records.iter().map(|r| r.wall_ms).sum()
    }
}

/// Initial model for `plan` on data of `shape`.
pub fn initial_model(data: &MaskedTensor, plan: &AlsPlan) -> Result<Model> {
    let shape = data.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[plan.seed, u64::MAX]));
    Ok(match (&plan.model, plan.init) {
        (ModelSpec::Cp { rank }, _) => Model::Cp(CpModel::random(shape, *rank, &mut rng)?),
        (ModelSpec::Tucker { ranks }, InitPolicy::Uniform) => Model::Tucker(TuckerModel::random(shape, ranks, &mut rng)?),
        (ModelSpec::Tucker { ranks }, InitPolicy::Hosvd) => Model::Tucker(hosvd_init(data, ranks)?),
        (ModelSpec::Tt { ranks }, _) => Model::Tt(TtModel::random(shape, ranks, &mut rng)?),
    })
}

/// Runs `plan.rounds` ALS sweeps from the plan's initial model.
pub fn run_completion(
    data: &MaskedTensor,
    plan: &AlsPlan,
    truth: Option<&DenseTensor>,
) -> Result<(Model, FitTrace)> {
    let model = initial_model(data, plan)?;
    run_completion_from(data, plan, model, truth)
}

/// Runs `plan.rounds` ALS sweeps starting from `model`.
pub fn run_completion_from(
    data: &MaskedTensor,
    plan: &AlsPlan,
    mut model: Model,
    truth: Option<&DenseTensor>,
) -> Result<(Model, FitTrace)> {
    let order = data.shape().len();
    plan.validate(order)?;
    if data.mask().is_empty() {
        return Err(Error::InvalidMask("no observed entries".into()));
    }
    if model.shape() != data.shape() {
        return Err(Error::DimensionMismatch(format!(
            "model shape {:?} vs data shape {:?}",
            model.shape(),
            data.shape()
        )));
    }
    if let Some(t) = truth {
        if t.shape() != data.shape() {
            return Err(Error::DimensionMismatch("ground truth shape differs from data shape".into()));
        }
    }
    let mut trace = FitTrace::default();
    for round in 1..=plan.rounds {
        let ctx = plan.context(round);
        for b in 0..plan.model.blocks(order) {
            let start = Instant::now();
            let (next, stats) = update_block(data, model, b, &ctx)?;
            model = next;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let estimate = model.reconstruct()?;
            let test_rre = truth.map(|t| rre(&estimate, t, None)).transpose()?;
            trace.records.push(FitRecord {
                round,
                block: plan.model.block_label(b),
                train_rre: data.rre(&estimate)?,
                test_rre,
                wall_ms,
                stats,
            });
        }
    }
    Ok((model, trace))
}

fn update_block(data: &MaskedTensor, model: Model, b: usize, ctx: &UpdateContext) -> Result<(Model, BlockStats)> {
    Ok(match model {
        Model::Cp(m) => {
            let (m, s) = cp_factor_update(data, &m, b, ctx)?;
            (Model::Cp(m), s)
        }
        Model::Tucker(m) if b == 0 => {
            let (m, s) = tucker_core_update(data, &m, ctx)?;
            (Model::Tucker(m), s)
        }
        Model::Tucker(m) => {
            let (m, s) = tucker_factor_update(data, &m, b - 1, ctx)?;
            (Model::Tucker(m), s)
        }
        Model::Tt(m) => {
            let (m, s) = tt_core_update(data, &m, b, ctx)?;
            (Model::Tt(m), s)
        }
    })
}
