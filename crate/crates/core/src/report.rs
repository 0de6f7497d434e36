use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::{CVec, Error, RVec};

/// Estimators known to the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Mmse,
    ModifiedMmse,
    Iga,
    IcIga,
    IcSiga,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Mmse,
        Algorithm::ModifiedMmse,
        Algorithm::Iga,
        Algorithm::IcIga,
        Algorithm::IcSiga,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mmse => "mmse",
            Algorithm::ModifiedMmse => "modified_mmse",
            Algorithm::Iga => "iga",
            Algorithm::IcIga => "ic_iga",
            Algorithm::IcSiga => "ic_siga",
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, Algorithm::Iga | Algorithm::IcIga | Algorithm::IcSiga)
    }

    /// Default damping.
    pub fn default_alpha(self) -> f64 {
        match self {
            Algorithm::Iga => 0.05,
            Algorithm::IcIga => 0.45,
            Algorithm::IcSiga => 0.25,
            Algorithm::Mmse | Algorithm::ModifiedMmse => 1.0,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// Damping, iteration cap and stopping tolerance of an iterative estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterConfig {
    pub alpha: f64,
    pub max_iter: usize,
    /// Stop once the max relative change of the mean drops below this.
    pub tol: f64,
}

impl IterConfig {
    pub const DEFAULT_MAX_ITER: usize = 100;
    pub const DEFAULT_TOL: f64 = 1e-8;

    pub fn new(alpha: f64, max_iter: usize, tol: f64) -> Self {
        Self { alpha, max_iter, tol }
    }

    pub fn for_algorithm(alg: Algorithm) -> Self {
        Self::new(alg.default_alpha(), Self::DEFAULT_MAX_ITER, Self::DEFAULT_TOL)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("damping {} must lie in (0, 1]", self.alpha)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tolerance {} must be non-negative", self.tol)));
        }
        Ok(())
    }
}

/// Result of one estimator run.
#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub algorithm: Algorithm,
    pub mean: CVec,
    pub variances: Option<RVec>,
    /// Relative normal-equation residual
    /// `‖(σ⁻²AᴴA + D⁻¹)μ − σ⁻²Aᴴy‖ / ‖σ⁻²Aᴴy‖`, one entry for the initial
    /// point and one per iteration.
    pub residual_trace: Vec<f64>,
    pub nmse: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: Duration,
    pub seed: Option<u64>,
    pub config: Option<IterConfig>,
}

impl EstimateReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Max relative change `‖new − old‖∞ / ‖new‖∞`.
pub(crate) fn max_relative_change(new: &CVec, old: &CVec) -> f64 {
    let diff = new.iter().zip(old.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let scale = new.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Tracks consecutive residual increases.
pub(crate) struct DivergenceGuard {
    run: usize,
    last: f64,
}

impl DivergenceGuard {
    pub const LIMIT: usize = 20;

    pub fn new(initial: f64) -> Self {
        Self { run: 0, last: initial }
    }

    /// Returns an error once the residual has grown `LIMIT` times in a row or
    /// turned non-finite.
    pub fn observe(&mut self, residual: f64, iteration: usize, trace: &[f64]) -> crate::Result<()> {
        if !residual.is_finite() {
            return Err(Error::Divergence {
                iterations: iteration,
                reason: "residual is not finite".into(),
                trace: trace.to_vec(),
            });
        }
        if residual > self.last {
            self.run += 1;
        } else {
            self.run = 0;
        }
        self.last = residual;
        if self.run >= Self::LIMIT {
            return Err(Error::Divergence {
                iterations: iteration,
                reason: format!("residual increased {} consecutive iterations; reduce damping", Self::LIMIT),
                trace: trace.to_vec(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("icIGA".parse::<Algorithm>().is_err());
    }

    #[test]
    fn guard_trips_after_limit() {
        let mut g = DivergenceGuard::new(1.0);
        for i in 0..DivergenceGuard::LIMIT - 1 {
            g.observe(2.0 + i as f64, i, &[]).unwrap();
        }
        assert!(matches!(g.observe(100.0, 20, &[1.0]), Err(Error::Divergence { .. })));
    }

    #[test]
    fn guard_resets_on_decrease() {
        let mut g = DivergenceGuard::new(1.0);
        for i in 0..100 {
            let r = if i % 10 == 9 { 0.5 } else { 1.0 + i as f64 };
            g.observe(r, i, &[]).unwrap();
        }
    }

    #[test]
    fn config_validation() {
        assert!(IterConfig::new(0.0, 10, 1e-8).validate().is_err());
        assert!(IterConfig::new(1.5, 10, 1e-8).validate().is_err());
        assert!(IterConfig::new(1.0, 0, 1e-8).validate().is_ok());
    }
}
