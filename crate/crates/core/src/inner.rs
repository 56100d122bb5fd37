//! Inner solve strategies used by every block update.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lifted::{
    mini_als_step, richardson_with_beta, solve_direct, EpsilonHat, LiftedProblem, RichardsonConfig,
};
use crate::structured::{BetaPolicy, PreparedOperator, SketchConfig, StructuredOperator};

/// How a masked block subproblem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Masked normal equations.
    Direct,
    /// One imputation step from the current value (EM).
    Parafac,
    MiniAls,
    /// Mini-ALS with extrapolation on even steps.
    Accelerated,
    /// Mini-ALS with sampled inner solves (extrapolating when the
    /// Richardson config asks for it).
    Approx,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Direct,
        Strategy::Parafac,
        Strategy::MiniAls,
        Strategy::Accelerated,
        Strategy::Approx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Direct => "direct",
            Strategy::Parafac => "parafac",
            Strategy::MiniAls => "mini-als",
            Strategy::Accelerated => "accel",
            Strategy::Approx => "approx",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?}")))
    }
}

/// Default inner accuracy of [`Strategy::Approx`] when none is configured.
pub const APPROX_DEFAULT_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolver {
    pub strategy: Strategy,
    pub richardson: RichardsonConfig,
    pub sketch: SketchConfig,
    /// Start the Richardson iteration at the current value instead of zero.
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub beta: Option<f64>,
    /// The masked Gram was singular and beta fell back to the heuristic.
    pub beta_fallback: bool,
    pub sampled_rows: Option<usize>,
}

impl InnerSolver {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            richardson: RichardsonConfig::default(),
            sketch: SketchConfig::default(),
            warm_start: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.richardson.validate()?;
        self.sketch.validate()
    }

    /// The configured inner accuracy; `Approx` substitutes a default when it is zero.
    pub fn epsilon_hat(&self) -> EpsilonHat {
        let configured = self.richardson.epsilon_hat;
        let zero = matches!(configured, EpsilonHat::Absolute(e) | EpsilonHat::RelativeToBeta(e) if e == 0.0);
        if self.strategy == Strategy::Approx && zero {
            EpsilonHat::RelativeToBeta(APPROX_DEFAULT_FRACTION)
        } else {
            configured
        }
    }

    fn may_sample(&self) -> bool {
        self.strategy != Strategy::Direct
            && !matches!(self.epsilon_hat(), EpsilonHat::Absolute(e) | EpsilonHat::RelativeToBeta(e) if e == 0.0)
    }

    /// Prepares `op`, building a leverage sampler only when solves may sample.
    pub fn prepare(&self, op: StructuredOperator) -> Result<PreparedOperator> {
        PreparedOperator::new(op, self.may_sample())
    }

    pub fn solve<R: Rng + ?Sized>(
        &self,
        prob: &LiftedProblem<'_>,
        current: &DVector<f64>,
        rng: &mut R,
    ) -> Result<InnerOutcome> {
        if self.strategy == Strategy::Direct {
            let rep = solve_direct(prob);
            return Ok(InnerOutcome {
                x: rep.x,
                iterations: 0,
                beta: None,
                beta_fallback: false,
                sampled_rows: None,
            });
        }
        let (beta, beta_fallback) = match prob.beta(self.richardson.beta) {
            Ok(b) => (b, false),
            Err(Error::SingularMaskedGram { .. }) if !prob.omega().is_empty() => {
                let p = prob.omega().len() as f64 / prob.nrows() as f64;
                ((BetaPolicy::AUTO_SAFETY * 2.0 / p).max(1.0), true)
            }
            Err(e) => return Err(e),
        };
        let epsilon_hat = self.epsilon_hat();
        if self.strategy == Strategy::Parafac {
            let eh = epsilon_hat.resolve(beta);
            let sketch = SketchConfig {
                epsilon_hat: eh,
                ..self.sketch.clone()
            };
            sketch.validate()?;
            let x = mini_als_step(prob, current, &sketch, rng)?;
            return Ok(InnerOutcome {
                x,
                iterations: 1,
                beta: Some(beta),
                beta_fallback,
                sampled_rows: sketch.sample_size(prob.ncols(), prob.nrows()),
            });
        }
        let cfg = RichardsonConfig {
            epsilon_hat,
            accelerate: self.strategy == Strategy::Accelerated || self.richardson.accelerate,
            ..self.richardson.clone()
        };
        let x0 = self.warm_start.then_some(current);
        let rep = richardson_with_beta(prob, &cfg, beta, &self.sketch, x0, rng)?;
        Ok(InnerOutcome {
            x: rep.x,
            iterations: rep.iterations,
            beta: Some(beta),
            beta_fallback,
            sampled_rows: rep.sampled_rows,
        })
    }
}

/// Mixes a path of integers into one seed (splitmix64 finalizer per step).
pub fn derive_seed(parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(0x6A09_E667_F3BC_C908, |h, &p| mix(h ^ mix(p)))
}
