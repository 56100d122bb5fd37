//! Masked least squares through lifting.
//!
//! The masked problem `min ||A_Omega x - q||` is replaced by the full-height
//! problem over `(x, b_unobserved)`. Alternating between imputing the
//! unobserved responses with `A x` and re-solving the full regression is a
//! preconditioned Richardson iteration with preconditioner `A^T A`:
//!
//! ```text
//! x_{k+1} = x_k - (A^T A)^+ (P^T P x_k - P^T q)
//! ```
//!
//! where `P = A_Omega`. Each step only touches the full design through its
//! Gram matrix or through a leverage-score sketch.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, PsdPinv};
use crate::structured::{beta_from_grams, BetaPolicy, PreparedOperator, SketchConfig};

/// A masked regression against a prepared design `A` (`I x R`): observed
/// responses `q` on the sorted row set `omega`.
#[derive(Debug, Clone)]
pub struct LiftedProblem<'a> {
    prep: &'a PreparedOperator,
    omega: Vec<usize>,
    q: Vec<f64>,
    p: DMatrix<f64>,
    ptp: DMatrix<f64>,
    ptq: DVector<f64>,
}

impl<'a> LiftedProblem<'a> {
    pub fn new(prep: &'a PreparedOperator, omega: Vec<usize>, q: Vec<f64>) -> Result<Self> {
        let op = prep.operator();
        if omega.len() != q.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} observed rows but {} responses",
                omega.len(),
                q.len()
            )));
        }
        if omega.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMask("observed rows must be strictly ascending".into()));
        }
        if let Some(&last) = omega.last() {
            if last >= op.nrows() {
                return Err(Error::InvalidMask(format!(
                    "row {last} out of range for {} rows",
                    op.nrows()
                )));
            }
        }
        let p = op.rows(&omega);
        let ptp = p.transpose() * &p;
        let ptq = p.transpose() * DVector::from_column_slice(&q);
        Ok(Self {
            prep,
            omega,
            q,
            p,
            ptp,
            ptq,
        })
    }

    pub fn prepared(&self) -> &PreparedOperator {
        self.prep
    }

    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// `A_Omega`, the nonzero rows of the zero-masked design.
    pub fn observed_rows(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn masked_gram(&self) -> &DMatrix<f64> {
        &self.ptp
    }

    pub fn masked_rhs(&self) -> &DVector<f64> {
        &self.ptq
    }

    pub fn nrows(&self) -> usize {
        self.prep.operator().nrows()
    }

    pub fn ncols(&self) -> usize {
        self.prep.operator().ncols()
    }

    /// `||A_Omega x - q||`, equal to the zero-masked residual.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        let r = &self.p * x - DVector::from_column_slice(&self.q);
        r.norm()
    }

    pub fn beta(&self, policy: BetaPolicy) -> Result<f64> {
        beta_from_grams(
            self.prep.gram(),
            &self.ptp,
            self.nrows(),
            self.omega.len(),
            policy,
        )
    }

    /// Response of the imputed full problem at row `i`: `q` on observed rows,
    /// the current prediction elsewhere.
    fn imputed(&self, i: usize, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        match self.omega.binary_search(&i) {
            Ok(pos) => self.q[pos],
            Err(_) => {
                self.prep.operator().row_into(i, buf);
                dot(buf, x)
            }
        }
    }
}

/// Inner accuracy, either absolute or as a fraction `f` of `1 / beta^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonHat {
    Absolute(f64),
    RelativeToBeta(f64),
}

impl EpsilonHat {
    pub fn resolve(self, beta: f64) -> f64 {
        match self {
            EpsilonHat::Absolute(e) => e,
            EpsilonHat::RelativeToBeta(f) => f / (beta * beta),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RichardsonConfig {
    pub epsilon: f64,
    pub epsilon_hat: EpsilonHat,
    pub beta: BetaPolicy,
    pub max_iters: Option<usize>,
    /// Stop once `||x_{k+1} - x_k|| <= stop_tol * ||x_{k+1}||`; `0` disables.
    pub stop_tol: f64,
    pub accelerate: bool,
}

impl Default for RichardsonConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            epsilon_hat: EpsilonHat::Absolute(0.0),
            beta: BetaPolicy::Auto,
            max_iters: None,
            stop_tol: 0.0,
            accelerate: false,
        }
    }
}

impl RichardsonConfig {
    /// Validates everything that does not depend on the problem. A fixed
    /// beta is checked against `epsilon_hat` here; estimated ones at solve time.
    pub fn new(epsilon: f64, epsilon_hat: EpsilonHat, beta: BetaPolicy) -> Result<Self> {
        let cfg = Self {
            epsilon,
            epsilon_hat,
            beta,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!("epsilon = {} not in (0, 1)", self.epsilon)));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig("stop_tol must be non-negative".into()));
        }
        match self.epsilon_hat {
            EpsilonHat::Absolute(e) if !(e >= 0.0) => {
                return Err(Error::InvalidConfig(format!("epsilon_hat = {e} is negative")))
            }
            EpsilonHat::RelativeToBeta(f) if !(0.0..1.0).contains(&f) => {
                return Err(Error::InvalidConfig(format!(
                    "relative epsilon_hat factor {f} not in [0, 1)"
                )))
            }
            _ => {}
        }
        if let BetaPolicy::Fixed(b) = self.beta {
            if !(b >= 1.0) {
                return Err(Error::InvalidConfig(format!("beta = {b} must be >= 1")));
            }
            check_epsilon_hat(b, self.epsilon_hat.resolve(b))?;
        }
        Ok(())
    }
}

fn check_epsilon_hat(beta: f64, epsilon_hat: f64) -> Result<()> {
    if !(epsilon_hat >= 0.0 && epsilon_hat < 1.0 / (beta * beta)) {
        return Err(Error::InvalidConfig(format!(
            "epsilon_hat = {epsilon_hat} must lie in [0, 1/beta^2) with beta = {beta}"
        )));
    }
    Ok(())
}

/// `ceil(ln(2 beta / epsilon) / (2 (1/beta - sqrt(epsilon_hat))))`.
pub fn iteration_bound(beta: f64, epsilon: f64, epsilon_hat: f64) -> Result<usize> {
    if !(beta >= 1.0) {
        return Err(Error::InvalidConfig(format!("beta = {beta} must be >= 1")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidConfig(format!("epsilon = {epsilon} not in (0, 1)")));
    }
    check_epsilon_hat(beta, epsilon_hat)?;
    let k = ((2.0 * beta / epsilon).ln() / (2.0 * (1.0 / beta - epsilon_hat.sqrt()))).ceil();
    Ok(k.max(0.0) as usize)
}

/// One imputation step: solve the full regression against `q` on observed
/// rows and `A x_k` elsewhere. Exact when `sketch` asks for no sampling;
/// otherwise only the sampled rows of the imputed response are evaluated.
pub fn mini_als_step<R: Rng + ?Sized>(
    prob: &LiftedProblem<'_>,
    x_k: &DVector<f64>,
    sketch: &SketchConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x_k.len() != prob.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "iterate has {} entries, problem has {} unknowns",
            x_k.len(),
            prob.ncols()
        )));
    }
    match sketch.sample_size(prob.ncols(), prob.nrows()) {
        None => {
            // A^T b_k = P^T q + (A^T A - P^T P) x_k
            let rhs = prob.masked_rhs() + prob.prep.gram() * x_k - prob.masked_gram() * x_k;
            Ok(prob.prep.gram_pinv().apply(&rhs))
        }
        Some(s) => {
            let x = x_k.as_slice();
            let mut buf = Vec::with_capacity(prob.ncols());
            let (next, _) = prob.prep.sketched_solve(s, |i| prob.imputed(i, x, &mut buf), rng)?;
            Ok(next)
        }
    }
}

/// The EM / parafac baseline: a single imputation step per outer update.
pub fn em_one_step<R: Rng + ?Sized>(
    prob: &LiftedProblem<'_>,
    x_k: &DVector<f64>,
    sketch: &SketchConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    mini_als_step(prob, x_k, sketch, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// `||A_Omega x - q||` after every step.
    pub residuals: Vec<f64>,
    pub wall_time: Duration,
    /// `None` for the direct solve.
    pub beta: Option<f64>,
    pub epsilon_hat: f64,
    /// Rows drawn per step, or `None` when the steps were exact.
    pub sampled_rows: Option<usize>,
    pub stopped_early: bool,
}

/// Normal-equation solution of the masked problem, `(P^T P)^+ P^T q`.
pub fn solve_direct(prob: &LiftedProblem<'_>) -> SolveReport {
    let start = Instant::now();
    let x = PsdPinv::new(prob.masked_gram()).apply(prob.masked_rhs());
    let residual = prob.residual(&x);
    SolveReport {
        x,
        iterations: 0,
        residuals: vec![residual],
        wall_time: start.elapsed(),
        beta: None,
        epsilon_hat: 0.0,
        sampled_rows: None,
        stopped_early: false,
    }
}

/// Approximate mini-ALS from `x_0 = 0`: `iteration_bound + 1` imputation
/// steps (capped by `max_iters`).
pub fn approx_mini_als<R: Rng + ?Sized>(
    prob: &LiftedProblem<'_>,
    cfg: &RichardsonConfig,
    sketch: &SketchConfig,
    rng: &mut R,
) -> Result<SolveReport> {
    let cfg = RichardsonConfig {
        accelerate: false,
        ..cfg.clone()
    };
    richardson(prob, &cfg, sketch, None, rng)
}

/// Mini-ALS with extrapolation on every second step.
pub fn accelerated_mini_als<R: Rng + ?Sized>(
    prob: &LiftedProblem<'_>,
    cfg: &RichardsonConfig,
    sketch: &SketchConfig,
    rng: &mut R,
) -> Result<SolveReport> {
    let cfg = RichardsonConfig {
        accelerate: true,
        ..cfg.clone()
    };
    richardson(prob, &cfg, sketch, None, rng)
}

/// The general driver behind [`approx_mini_als`] and
/// [`accelerated_mini_als`], with an optional starting point and the
/// problem's beta computed from `cfg.beta`.
pub fn richardson<R: Rng + ?Sized>(
    prob: &LiftedProblem<'_>,
    cfg: &RichardsonConfig,
    sketch: &SketchConfig,
    x0: Option<&DVector<f64>>,
    rng: &mut R,
) -> Result<SolveReport> {
    let beta = prob.beta(cfg.beta)?;
    richardson_with_beta(prob, cfg, beta, sketch, x0, rng)
}

/// As [`richardson`], with beta supplied by the caller.
pub fn richardson_with_beta<R: Rng + ?Sized>(
    prob: &LiftedProblem<'_>,
    cfg: &RichardsonConfig,
    beta: f64,
    sketch: &SketchConfig,
    x0: Option<&DVector<f64>>,
    rng: &mut R,
) -> Result<SolveReport> {
    let start = Instant::now();
    cfg.validate()?;
    let epsilon_hat = cfg.epsilon_hat.resolve(beta);
    let bound = iteration_bound(beta, cfg.epsilon, epsilon_hat)?;
    let mut steps = bound.saturating_add(1);
    if let Some(cap) = cfg.max_iters {
        steps = steps.min(cap);
    }
    let sketch = SketchConfig {
        epsilon_hat,
        ..sketch.clone()
    };
    sketch.validate()?;
    let sampled_rows = sketch.sample_size(prob.ncols(), prob.nrows());

    let mut x = match x0 {
        Some(v) if v.len() != prob.ncols() => {
            return Err(Error::DimensionMismatch(format!(
                "start vector has {} entries, problem has {} unknowns",
                v.len(),
                prob.ncols()
            )))
        }
        Some(v) => v.clone(),
        None => DVector::zeros(prob.ncols()),
    };
    let mut prev: Option<DVector<f64>> = None;
    let mut residuals = Vec::with_capacity(steps.min(1024));
    let mut stopped_early = false;
    let mut iterations = 0;
    for k in 1..=steps {
        let plain = mini_als_step(prob, &x, &sketch, rng)?;
        let next = match (&prev, cfg.accelerate && k % 2 == 0) {
            (Some(p), true) => {
                // Keep the jump only when it does not lose to the plain step.
                let jump = extrapolate(p, &x, &plain);
                if prob.residual(&jump) <= prob.residual(&plain) {
                    jump
                } else {
                    plain
                }
            }
            _ => plain,
        };
        let change = (&next - &x).norm();
        prev = Some(std::mem::replace(&mut x, next));
        residuals.push(prob.residual(&x));
        iterations = k;
        if cfg.stop_tol > 0.0 && change <= cfg.stop_tol * x.norm() {
            stopped_early = k < steps;
            break;
        }
    }
    Ok(SolveReport {
        x,
        iterations,
        residuals,
        wall_time: start.elapsed(),
        beta: Some(beta),
        epsilon_hat,
        sampled_rows,
        stopped_early,
    })
}

/// `x + (x_hat - x) / (1 - alpha)` with `alpha = ||x_hat - x|| / ||x - prev||`,
/// or `x_hat` itself when that ratio is not a contraction.
fn extrapolate(prev: &DVector<f64>, x: &DVector<f64>, x_hat: &DVector<f64>) -> DVector<f64> {
    let denom = (x - prev).norm();
    if denom <= 1e-14 {
        return x_hat.clone();
    }
    let alpha = (x_hat - x).norm() / denom;
    if alpha >= 1.0 {
        return x_hat.clone();
    }
    x + (x_hat - x) / (1.0 - alpha)
}
