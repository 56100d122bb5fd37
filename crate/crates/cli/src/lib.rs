//! Command-line driver: synthetic data, masks, completion runs, coupled
//! matrix runs and strategy benchmarks, with CSV traces.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensor_lift::completion::{run_completion, AlsPlan, FitTrace, InitPolicy, ModelSpec};
use tensor_lift::coupled::{coupled_solve, CoupledInstance, CoupledRecord};
use tensor_lift::inner::{derive_seed, InnerSolver, Strategy};
use tensor_lift::io::{read_mask, read_tensor, write_mask, write_model, write_tensor};
use tensor_lift::lifted::{EpsilonHat, RichardsonConfig};
use tensor_lift::structured::{BetaPolicy, SketchConfig};
use tensor_lift::synthetic::planted;
use tensor_lift::{DenseTensor, Error, MaskedTensor, ObservationMask};

pub const COMPLETE_HEADER: [&str; 12] = [
    "round",
    "block",
    "strategy",
    "epsilon",
    "epsilon_hat",
    "p",
    "R",
    "train_rre",
    "test_rre",
    "wall_ms",
    "inner_iters",
    "beta",
];

pub const COUPLED_HEADER: [&str; 12] = [
    "round",
    "block",
    "strategy",
    "epsilon",
    "epsilon_hat",
    "p",
    "R",
    "mse_train",
    "mse_full",
    "wall_ms",
    "inner_iters",
    "beta",
];

pub const BENCH_HEADER: [&str; 11] = [
    "strategy",
    "p",
    "seed",
    "epsilon",
    "epsilon_hat",
    "R",
    "rounds",
    "train_rre",
    "test_rre",
    "total_wall_ms",
    "total_inner_iters",
];

/// Coupled-matrix files written by `generate --kind coupled`.
pub const COUPLED_FILES: [&str; 8] = ["a.dtf", "b.dtf", "c.dtf", "d.dtf", "e.dtf", "e.msk", "x.dtf", "y.dtf"];

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    BadArgs,
    Io,
    Solver,
}

impl Failure {
    pub fn exit_code(self) -> i32 {
        match self {
            Failure::BadArgs => 2,
            Failure::Io => 3,
            Failure::Solver => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub failure: Failure,
    pub message: String,
}

impl CliError {
    pub fn bad_args(message: impl Into<String>) -> Self {
        Self {
            failure: Failure::BadArgs,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self {
            failure: Failure::Io,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let failure = match e {
            Error::Io(_) | Error::Format(_) => Failure::Io,
            Error::InvalidShape(_)
            | Error::ModeOutOfRange { .. }
            | Error::DimensionMismatch(_)
            | Error::InvalidMask(_)
            | Error::InvalidConfig(_) => Failure::BadArgs,
            Error::ZeroReference | Error::TooLarge { .. } | Error::DegenerateProfile | Error::SingularMaskedGram { .. } => {
                Failure::Solver
            }
        };
        Self {
            failure,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self {
            failure: Failure::Io,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self {
            failure: Failure::Io,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "tensor-lift", version, about = "Tensor completion by lifted, sketched ALS")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random low-rank tensor (and its model), or a coupled-matrix instance.
    Generate(GenerateArgs),
    /// Write a uniformly random observation mask for a tensor file.
    Mask(MaskArgs),
    /// Run masked ALS on a tensor and write the per-block trace.
    Complete(CompleteArgs),
    /// Solve a coupled matrix completion instance.
    Coupled(CoupledArgs),
    /// Run completion over a grid of strategies and observation rates.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenerateKind {
    RandomCp,
    RandomTucker,
    RandomTt,
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Cp,
    Tucker,
    Tt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Timing {
    /// Monotonic wall clock.
    Wall,
    /// Report zero, so traces are byte-identical across runs.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Init {
    Uniform,
    Hosvd,
}

/// `exact`, `heuristic`, `auto` or a fixed value `>= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaArg(pub BetaPolicy);

impl FromStr for BetaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(BetaArg(match s {
            "exact" => BetaPolicy::Exact,
            "heuristic" => BetaPolicy::Heuristic,
            "auto" => BetaPolicy::Auto,
            v => {
                let b: f64 = v.parse().map_err(|_| format!("beta must be exact, heuristic, auto or a number, got {v:?}"))?;
                if !(b >= 1.0) {
                    return Err(format!("beta = {b} must be >= 1"));
                }
                BetaPolicy::Fixed(b)
            }
        }))
    }
}

/// An absolute value, or `rel:f` for `f / beta^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonHatArg(pub EpsilonHat);

impl FromStr for EpsilonHatArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (rel, v) = match s.strip_prefix("rel:") {
            Some(v) => (true, v),
            None => (false, s),
        };
        let v: f64 = v.parse().map_err(|_| format!("bad epsilon-hat {s:?}"))?;
        if !(v >= 0.0) {
            return Err(format!("epsilon-hat must be non-negative, got {s:?}"));
        }
        Ok(EpsilonHatArg(if rel {
            EpsilonHat::RelativeToBeta(v)
        } else {
            EpsilonHat::Absolute(v)
        }))
    }
}

impl fmt::Display for EpsilonHatArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            EpsilonHat::Absolute(v) => write!(f, "{v}"),
            EpsilonHat::RelativeToBeta(v) => write!(f, "rel:{v}"),
        }
    }
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| format!("bad list entry {t:?} in {s:?}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsizeList(pub Vec<usize>);

impl FromStr for UsizeList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_list(s).map(UsizeList)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct F64List(pub Vec<f64>);

impl FromStr for F64List {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_list(s).map(F64List)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyList(pub Vec<Strategy>);

impl FromStr for StrategyList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<Strategy>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()
            .map(StrategyList)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: GenerateKind,
    /// Tensor shape, e.g. `30,30,30`.
    #[arg(long)]
    pub shape: Option<UsizeList>,
    /// CP rank, or Tucker / TT ranks (one value is repeated).
    #[arg(long)]
    pub rank: Option<UsizeList>,
    /// Coupled instances: matrix size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Coupled instances: inner dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Coupled instances: fraction of observed entries of `E`.
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Inner solver flags shared by `complete`, `coupled` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Absolute value or `rel:f` for `f / beta^2`.
    #[arg(long, default_value = "0")]
    pub epsilon_hat: EpsilonHatArg,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 10.0)]
    pub oversample_c: f64,
    #[arg(long, default_value = "auto")]
    pub beta: BetaArg,
    /// Sample this fraction of the operator rows in every sampled solve.
    #[arg(long)]
    pub sample_rate: Option<f64>,
    /// Sample exactly this many rows in every sampled solve.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Cap on inner Richardson iterations.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Extrapolate every second inner step (always on for `accel`).
    #[arg(long)]
    pub accelerate: bool,
    /// Start inner iterations at the current block value.
    #[arg(long)]
    pub warm_start: bool,
    #[arg(long, value_enum, default_value = "wall")]
    pub timing: Timing,
}

impl SolverArgs {
    pub fn solver(&self, strategy: Strategy) -> CliResult<InnerSolver> {
        let solver = InnerSolver {
            strategy,
            richardson: RichardsonConfig {
                epsilon: self.epsilon,
                epsilon_hat: self.epsilon_hat.0,
                beta: self.beta.0,
                max_iters: self.max_iters,
                stop_tol: 0.0,
                accelerate: self.accelerate,
            },
            sketch: SketchConfig {
                epsilon_hat: 0.0,
                delta: self.delta,
                sample_count: self.samples,
                sample_fraction: self.sample_rate,
                oversample: self.oversample_c,
                seed: 0,
            },
            warm_start: self.warm_start,
        };
        solver.validate()?;
        Ok(solver)
    }

    fn wall_ms(&self, ms: f64) -> f64 {
        match self.timing {
            Timing::Wall => ms,
            Timing::Off => 0.0,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value = "cp")]
    pub model: ModelKind,
    /// CP rank, or Tucker / TT ranks (one value is repeated).
    #[arg(long)]
    pub rank: UsizeList,
    #[arg(long, default_value = "direct")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    pub init: Init,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    /// Full tensor (DTF1); test error is measured against all of it.
    #[arg(long)]
    pub input: PathBuf,
    /// Training mask (MSK1). Without it, `--p` draws one from the seed.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub fit: FitArgs,
    /// CSV trace; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the fitted model (MDL1).
    #[arg(long)]
    pub save_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoupledArgs {
    /// Directory written by `generate --kind coupled`; a planted instance
    /// is drawn from `--n`, `--d`, `--p` and the seed otherwise.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long, default_value = "direct")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 30)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Full tensor (DTF1). Without it a planted tensor is generated from
    /// `--kind`, `--shape` and `--gen-rank`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "random-cp")]
    pub kind: GenerateKind,
    #[arg(long)]
    pub shape: Option<UsizeList>,
    /// Rank of the planted tensor; defaults to `--rank`.
    #[arg(long)]
    pub gen_rank: Option<UsizeList>,
    #[arg(long, default_value = "direct,parafac,mini-als,accel,approx")]
    pub strategies: StrategyList,
    /// Observation rates.
    #[arg(long = "p", default_value = "0.05,0.1,0.2,0.4")]
    pub rates: F64List,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "cp")]
    pub model: ModelKind,
    #[arg(long)]
    pub rank: UsizeList,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    pub init: Init,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Mask(a) => mask(&a),
        Command::Complete(a) => complete(&a),
        Command::Coupled(a) => coupled(&a),
        Command::Bench(a) => bench(&a),
    }
}

/// Model spec for an order-`order` tensor, repeating a single rank.
pub fn model_spec(kind: ModelKind, ranks: &[usize], order: usize) -> CliResult<ModelSpec> {
    let expand = |want: usize| -> CliResult<Vec<usize>> {
        match ranks {
            [r] => Ok(vec![*r; want]),
            rs if rs.len() == want => Ok(rs.to_vec()),
            rs => Err(CliError::bad_args(format!("expected 1 or {want} ranks, got {}", rs.len()))),
        }
    };
    Ok(match kind {
        ModelKind::Cp => match ranks {
            [r] => ModelSpec::Cp { rank: *r },
            _ => return Err(CliError::bad_args("CP takes a single rank")),
        },
        ModelKind::Tucker => ModelSpec::Tucker { ranks: expand(order)? },
        ModelKind::Tt => ModelSpec::Tt {
            ranks: expand(order.saturating_sub(1))?,
        },
    })
}

fn generated_kind(kind: GenerateKind) -> CliResult<ModelKind> {
    match kind {
        GenerateKind::RandomCp => Ok(ModelKind::Cp),
        GenerateKind::RandomTucker => Ok(ModelKind::Tucker),
        GenerateKind::RandomTt => Ok(ModelKind::Tt),
        GenerateKind::Coupled => Err(CliError::bad_args("coupled instances are not tensors")),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn with_path<T>(path: &Path, r: tensor_lift::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::Io(io) => CliError::io(path, io),
        Error::Format(msg) => CliError::io(path, msg),
        other => other.into(),
    })
}

fn load_tensor(path: &Path) -> CliResult<DenseTensor> {
    with_path(path, read_tensor(path))
}

fn check_rate(p: f64) -> CliResult<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(CliError::bad_args(format!("p = {p} not in (0, 1]")));
    }
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> CliResult<()> {
    create_dir(&a.out)?;
    if a.kind == GenerateKind::Coupled {
        let (n, d) = match (a.n, a.d) {
            (Some(n), Some(d)) => (n, d),
            _ => return Err(CliError::bad_args("coupled generation needs --n and --d")),
        };
        check_rate(a.p)?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let (inst, x, y) = CoupledInstance::planted(n, d, a.p, &mut rng)?;
        let full = inst.e_full.clone().expect("planted instances carry the full E");
        for (name, m) in [("a.dtf", &inst.a), ("b.dtf", &inst.b), ("c.dtf", &inst.c), ("d.dtf", &inst.d), ("e.dtf", &full), ("x.dtf", &x), ("y.dtf", &y)] {
            let path = a.out.join(name);
            with_path(&path, write_tensor(&path, &DenseTensor::from_matrix(m)))?;
        }
        let path = a.out.join("e.msk");
        return with_path(&path, write_mask(&path, inst.e.mask()));
    }
    let shape = a.shape.as_ref().ok_or_else(|| CliError::bad_args("--shape is required"))?;
    let ranks = a.rank.as_ref().ok_or_else(|| CliError::bad_args("--rank is required"))?;
    let spec = model_spec(generated_kind(a.kind)?, &ranks.0, shape.0.len())?;
    let (model, tensor) = planted(&shape.0, &spec, a.seed)?;
    let path = a.out.join("tensor.dtf");
    with_path(&path, write_tensor(&path, &tensor))?;
    let path = a.out.join("model.mdl");
    with_path(&path, write_model(&path, &model))
}

pub fn mask(a: &MaskArgs) -> CliResult<()> {
    check_rate(a.p)?;
    let tensor = load_tensor(&a.input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mask = ObservationMask::random(tensor.shape().to_vec(), a.p, &mut rng)?;
    with_path(&a.out, write_mask(&a.out, &mask))
}

fn plan(fit: &FitArgs, strategy: Strategy, spec: ModelSpec, seed: u64) -> CliResult<AlsPlan> {
    let solver = fit.solver.solver(strategy)?;
    let mut plan = AlsPlan::new(spec, strategy, fit.rounds);
    plan.richardson = solver.richardson;
    plan.sketch = solver.sketch;
    plan.warm_start = solver.warm_start;
    plan.seed = seed;
    plan.init = match fit.init {
        Init::Uniform => InitPolicy::Uniform,
        Init::Hosvd => InitPolicy::Hosvd,
    };
    Ok(plan)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Inner accuracy actually used with the given beta.
fn resolved_epsilon_hat(solver: &InnerSolver, beta: Option<f64>) -> f64 {
    match (solver.strategy, beta) {
        (Strategy::Direct, _) | (_, None) => 0.0,
        (_, Some(b)) => solver.epsilon_hat().resolve(b),
    }
}

fn check_finite(values: &[f64]) -> CliResult<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError {
            failure: Failure::Solver,
            message: "solver produced a non-finite error".into(),
        });
    }
    Ok(())
}

fn open_output(out: Option<&Path>) -> CliResult<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            Box::new(File::create(path).map_err(|e| CliError::io(path, e))?)
        }
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

/// Writes one CSV row per (round, block).
pub fn write_trace<W: Write>(
    w: &mut csv::Writer<W>,
    trace: &FitTrace,
    solver: &InnerSolver,
    p: f64,
    rank: usize,
    timing: Timing,
) -> CliResult<()> {
    w.write_record(COMPLETE_HEADER)?;
    for r in &trace.records {
        let beta = r.stats.beta;
        let wall = if timing == Timing::Off { 0.0 } else { r.wall_ms };
        w.write_record([
            r.round.to_string(),
            r.block.clone(),
            solver.strategy.to_string(),
            fmt_f64(solver.richardson.epsilon),
            fmt_f64(resolved_epsilon_hat(solver, beta)),
            fmt_f64(p),
            rank.to_string(),
            fmt_f64(r.train_rre),
            fmt_opt(r.test_rre),
            fmt_f64(wall),
            r.stats.inner_iters.to_string(),
            fmt_opt(beta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn complete(a: &CompleteArgs) -> CliResult<()> {
    let truth = load_tensor(&a.input)?;
    let mask = match (&a.mask, a.p) {
        (Some(path), None) => with_path(path, read_mask(path))?,
        (None, Some(p)) => {
            check_rate(p)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[a.seed, 0x6d61_736b]));
            ObservationMask::random(truth.shape().to_vec(), p, &mut rng)?
        }
        (Some(_), Some(_)) => return Err(CliError::bad_args("give either --mask or --p, not both")),
        (None, None) => return Err(CliError::bad_args("one of --mask or --p is required")),
    };
    if mask.shape() != truth.shape() {
        return Err(CliError::bad_args(format!(
            "mask shape {:?} differs from tensor shape {:?}",
            mask.shape(),
            truth.shape()
        )));
    }
    let spec = model_spec(a.fit.model, &a.fit.rank.0, truth.order())?;
    let plan = plan(&a.fit, a.fit.strategy, spec, a.seed)?;
    let data = MaskedTensor::from_dense(&truth, mask)?;
    let (model, trace) = run_completion(&data, &plan, Some(&truth))?;
    for r in &trace.records {
        check_finite(&[r.train_rre, r.test_rre.unwrap_or(0.0)])?;
    }
    let mut w = open_output(a.out.as_deref())?;
    write_trace(&mut w, &trace, &plan.solver(), data.mask().rate(), plan.model.max_rank(), a.fit.solver.timing)?;
    if let Some(path) = &a.save_model {
        with_path(path, write_model(path, &model))?;
    }
    Ok(())
}

/// Loads an instance directory written by `generate --kind coupled`.
pub fn load_coupled(dir: &Path) -> CliResult<CoupledInstance> {
    let m = |name: &str| -> CliResult<_> { Ok(load_tensor(&dir.join(name))?.to_matrix()?) };
    let (a, b, c, d, e_full) = (m("a.dtf")?, m("b.dtf")?, m("c.dtf")?, m("d.dtf")?, m("e.dtf")?);
    let path = dir.join("e.msk");
    let mask = with_path(&path, read_mask(&path))?;
    let e = MaskedTensor::from_dense(&DenseTensor::from_matrix(&e_full), mask)?;
    Ok(CoupledInstance::new(a, b, c, d, e, Some(e_full))?)
}

fn write_coupled<W: Write>(
    w: &mut csv::Writer<W>,
    records: &[CoupledRecord],
    solver: &InnerSolver,
    p: f64,
    rank: usize,
    timing: Timing,
) -> CliResult<()> {
    w.write_record(COUPLED_HEADER)?;
    for r in records {
        let beta = r.stats.beta;
        let wall = if timing == Timing::Off { 0.0 } else { r.wall_ms };
        w.write_record([
            r.round.to_string(),
            r.half.to_string(),
            solver.strategy.to_string(),
            fmt_f64(solver.richardson.epsilon),
            fmt_f64(resolved_epsilon_hat(solver, beta)),
            fmt_f64(p),
            rank.to_string(),
            fmt_f64(r.mse_train),
            fmt_opt(r.mse_full),
            fmt_f64(wall),
            r.stats.inner_iters.to_string(),
            fmt_opt(beta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn coupled(a: &CoupledArgs) -> CliResult<()> {
    let mut inst = match (&a.input, a.n, a.d) {
        (Some(dir), None, None) => load_coupled(dir)?,
        (None, Some(n), Some(d)) => {
            check_rate(a.p)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            CoupledInstance::planted(n, d, a.p, &mut rng)?.0
        }
        _ => return Err(CliError::bad_args("give either --input or both --n and --d")),
    };
    let solver = a.solver.solver(a.strategy)?;
    let records = coupled_solve(&mut inst, a.rounds, &solver, a.seed)?;
    for r in &records {
        check_finite(&[r.mse_train, r.mse_full.unwrap_or(0.0)])?;
    }
    let mut w = open_output(a.out.as_deref())?;
    write_coupled(&mut w, &records, &solver, inst.e.mask().rate(), inst.d(), a.solver.timing)
}

/// One finished configuration of a benchmark grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub p: f64,
    pub seed: u64,
    pub train_rre: f64,
    pub test_rre: f64,
    pub total_wall_ms: f64,
    pub total_inner_iters: usize,
}

/// Runs every (strategy, rate) pair; run `k` of the grid uses seed `seed ^ k`.
pub fn bench_rows(a: &BenchArgs, truth: &DenseTensor) -> CliResult<Vec<BenchRow>> {
    let spec = model_spec(a.model, &a.rank.0, truth.order())?;
    let fit = FitArgs {
        model: a.model,
        rank: a.rank.clone(),
        strategy: Strategy::Direct,
        rounds: a.rounds,
        init: a.init,
        solver: a.solver.clone(),
    };
    let mut rows = Vec::new();
    let mut run = 0u64;
    for &p in &a.rates.0 {
        check_rate(p)?;
        for &strategy in &a.strategies.0 {
            let seed = a.seed ^ run;
            run += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x6d61_736b]));
            let mask = ObservationMask::random(truth.shape().to_vec(), p, &mut rng)?;
            let data = MaskedTensor::from_dense(truth, mask)?;
            let plan = plan(&fit, strategy, spec.clone(), seed)?;
            let (_, trace) = run_completion(&data, &plan, Some(truth))?;
            let last = trace.last().expect("at least one round");
            let test_rre = last.test_rre.unwrap_or(f64::NAN);
            check_finite(&[last.train_rre, test_rre])?;
            rows.push(BenchRow {
                strategy,
                p,
                seed,
                train_rre: last.train_rre,
                test_rre,
                total_wall_ms: a.solver.wall_ms(trace.total_wall_ms()),
                total_inner_iters: trace.total_inner_iters(),
            });
        }
    }
    Ok(rows)
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let truth = match &a.input {
        Some(path) => load_tensor(path)?,
        None => {
            let shape = a.shape.as_ref().ok_or_else(|| CliError::bad_args("--shape or --input is required"))?;
            let ranks = a.gen_rank.as_ref().unwrap_or(&a.rank);
            let spec = model_spec(generated_kind(a.kind)?, &ranks.0, shape.0.len())?;
            planted(&shape.0, &spec, a.seed)?.1
        }
    };
    let rows = bench_rows(a, &truth)?;
    let spec = model_spec(a.model, &a.rank.0, truth.order())?;
    let mut w = open_output(a.out.as_deref())?;
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        w.write_record([
            r.strategy.to_string(),
            fmt_f64(r.p),
            r.seed.to_string(),
            fmt_f64(a.solver.epsilon),
            a.solver.epsilon_hat.to_string(),
            spec.max_rank().to_string(),
            a.rounds.to_string(),
            fmt_f64(r.train_rre),
            fmt_f64(r.test_rre),
            fmt_f64(r.total_wall_ms),
            r.total_inner_iters.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Caps the global worker pool from `TENSOR_LIFT_THREADS` when it is set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("TENSOR_LIFT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::bad_args(format!("TENSOR_LIFT_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::bad_args(e.to_string()))
}
