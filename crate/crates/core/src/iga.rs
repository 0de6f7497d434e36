//! The generic information-geometry message exchange.
//!
//! The posterior natural parameters are split as
//! `σ⁻²Aᴴy = Σ_q b_q` and `σ⁻²AᴴA + D⁻¹ = Σ_q C_q + Λ_c`. Auxiliary point `q`
//! carries `(λ_q + b_q, Λ_q + C_q + Λ_c)`, the target point carries
//! `(λ₀, Λ₀ + Λ_c)`, and each round m-projects every auxiliary point onto the
//! diagonal manifold and redistributes the resulting beliefs.
//!
//! With the rank-1 split (`b_q = σ⁻² a_q y_q`, `C_q = σ⁻² a_q a_qᴴ`,
//! `Λ_c = D⁻¹`, `a_q` the q-th column of `Aᴴ`) this is the IGA baseline.

use std::time::Instant;

use rayon::prelude::*;

use crate::exact::{relative_residual, MeasurementModel};
use crate::geometry::DiagGaussian;
use crate::linalg::cholesky;
use crate::operator::DENSE_ENTRY_CAP;
use crate::report::{max_relative_change, Algorithm, DivergenceGuard, EstimateReport, IterConfig};
use crate::{CMat, CVec, Error, RVec, Result, C64};

/// One `C_q` term of the split.
#[derive(Clone, Debug)]
pub enum SplitMatrix {
    /// `f fᴴ`, stored as the factor `f`.
    Rank1(CVec),
    Diagonal(RVec),
    Dense(CMat),
}

impl SplitMatrix {
    pub fn apply(&self, x: &CVec) -> CVec {
        match self {
            SplitMatrix::Rank1(f) => f * f.dotc(x),
            SplitMatrix::Diagonal(c) => x.component_mul(&c.map(C64::from)),
            SplitMatrix::Dense(c) => c * x,
        }
    }

    pub fn to_dense(&self) -> CMat {
        match self {
            SplitMatrix::Rank1(f) => f * f.adjoint(),
            SplitMatrix::Diagonal(c) => CMat::from_diagonal(&c.map(C64::from)),
            SplitMatrix::Dense(c) => c.clone(),
        }
    }

    fn dim(&self) -> (usize, usize) {
        match self {
            SplitMatrix::Rank1(f) => (f.len(), f.len()),
            SplitMatrix::Diagonal(c) => (c.len(), c.len()),
            SplitMatrix::Dense(c) => c.shape(),
        }
    }
}

/// A split `(b_q, C_q, Λ_c)` of the posterior natural parameters.
#[derive(Clone, Debug)]
pub struct SplitScheme {
    b: Vec<CVec>,
    c: Vec<SplitMatrix>,
    lambda_c: RVec,
    theta_sum: CVec,
}

impl SplitScheme {
    pub fn new(b: Vec<CVec>, c: Vec<SplitMatrix>, lambda_c: RVec) -> Result<Self> {
        let n = lambda_c.len();
        if b.is_empty() || b.len() != c.len() {
            return Err(Error::dim("split term count", b.len().max(1), c.len()));
        }
        if let Some(bq) = b.iter().find(|bq| bq.len() != n) {
            return Err(Error::dim("split vector b_q", n, bq.len()));
        }
        if let Some(cq) = c.iter().find(|cq| cq.dim() != (n, n)) {
            return Err(Error::dim("split matrix C_q", n, cq.dim().0));
        }
        if lambda_c.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("Λ_c must be non-negative".into()));
        }
        let theta_sum = b.iter().fold(CVec::zeros(n), |acc, bq| acc + bq);
        Ok(Self {
            b,
            c,
            lambda_c,
            theta_sum,
        })
    }

    pub fn q(&self) -> usize {
        self.b.len()
    }

    pub fn n(&self) -> usize {
        self.lambda_c.len()
    }

    pub fn b(&self) -> &[CVec] {
        &self.b
    }

    pub fn c(&self) -> &[SplitMatrix] {
        &self.c
    }

    pub fn lambda_c(&self) -> &RVec {
        &self.lambda_c
    }

    /// `Σ_q b_q`.
    pub fn theta_sum(&self) -> &CVec {
        &self.theta_sum
    }

    /// `(Σ_q C_q + Λ_c) x`.
    pub fn precision_apply(&self, x: &CVec) -> CVec {
        let base = x.component_mul(&self.lambda_c.map(C64::from));
        self.c.iter().fold(base, |acc, cq| acc + cq.apply(x))
    }

    /// `Σ_q C_q + Λ_c`, dense.
    pub fn precision_sum(&self) -> CMat {
        let base = CMat::from_diagonal(&self.lambda_c.map(C64::from));
        self.c.iter().fold(base, |acc, cq| acc + cq.to_dense())
    }

    /// Relative residual of `(Σ C_q + Λ_c) μ = Σ b_q`.
    pub fn residual(&self, mu: &CVec) -> f64 {
        relative_residual(&self.precision_apply(mu), &self.theta_sum)
    }
}

/// Rank-1 split over the rows of `A`.
pub fn build_rank1_split(model: &MeasurementModel, y: &CVec) -> Result<SplitScheme> {
    let m = model.m();
    if y.len() != m {
        return Err(Error::dim("received signal y", m, y.len()));
    }
    let owned;
    let a = match model.a().as_dense() {
        Some(a) => a,
        None => {
            owned = model.a().to_dense(DENSE_ENTRY_CAP)?;
            &owned
        }
    };
    let sigma2 = model.sigma2();
    let scale = 1.0 / sigma2.sqrt();
    let (b, c) = (0..m)
        .map(|q| {
            let aq = a.row(q).adjoint();
            let bq = &aq * (y[q] / sigma2);
            (bq, SplitMatrix::Rank1(aq * C64::new(scale, 0.0)))
        })
        .unzip();
    SplitScheme::new(b, c, model.prior_precision())
}

/// Natural parameters of the auxiliary and target points.
#[derive(Clone, Debug)]
pub struct AuxiliaryState {
    pub lambda: Vec<CVec>,
    pub precision: Vec<RVec>,
    pub lambda0: CVec,
    pub precision0: RVec,
    pub iteration: usize,
}

impl AuxiliaryState {
    /// All parameters zero: every point starts at the prior-only point.
    pub fn initial(scheme: &SplitScheme) -> Self {
        let (q, n) = (scheme.q(), scheme.n());
        Self {
            lambda: vec![CVec::zeros(n); q],
            precision: vec![RVec::zeros(n); q],
            lambda0: CVec::zeros(n),
            precision0: RVec::zeros(n),
            iteration: 0,
        }
    }

    /// `max |Σ_q (λ_q, Λ_q) + (1 − Q)(λ₀, Λ₀)|` over all coordinates.
    pub fn e_condition_residual(&self) -> f64 {
        let q = self.lambda.len() as f64;
        let n = self.lambda0.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let ls: C64 = self.lambda.iter().map(|l| l[i]).sum::<C64>() + self.lambda0[i] * (1.0 - q);
            let ps: f64 = self.precision.iter().map(|p| p[i]).sum::<f64>() + self.precision0[i] * (1.0 - q);
            worst = worst.max(ls.norm()).max(ps.abs());
        }
        worst
    }

    /// Target point `(λ₀, Λ₀ + Λ_c)`.
    pub fn target(&self, scheme: &SplitScheme) -> Result<DiagGaussian> {
        DiagGaussian::new(self.lambda0.clone(), &self.precision0 + scheme.lambda_c())
    }

    fn target_mean(&self, scheme: &SplitScheme) -> CVec {
        CVec::from_iterator(
            self.lambda0.len(),
            self.lambda0
                .iter()
                .zip(self.precision0.iter().zip(scheme.lambda_c().iter()))
                .map(|(l, (p, c))| l / (p + c)),
        )
    }
}

/// Belief `(ξ_q, Ξ_q)`: the natural-parameter increment auxiliary point `q`
/// hands to the target after m-projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub xi: CVec,
    pub big_xi: RVec,
}

/// m-project auxiliary point `q` and return its belief.
pub fn project_auxiliary(scheme: &SplitScheme, state: &AuxiliaryState, q: usize) -> Result<Belief> {
    if q >= scheme.q() {
        return Err(Error::IndexOutOfRange {
            what: "auxiliary point",
            index: q + 1,
            max: scheme.q(),
        });
    }
    let lam_q = &state.lambda[q];
    let prec_q = &state.precision[q];
    let delta = prec_q + scheme.lambda_c();
    if let Some((i, v)) = delta.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::State(format!(
            "auxiliary point {}: Λ_q + Λ_c = {v} at coordinate {i} is not positive",
            q + 1
        )));
    }
    let t = lam_q + &scheme.b[q];
    let n = scheme.n();
    let (mu, var): (CVec, RVec) = match &scheme.c[q] {
        SplitMatrix::Rank1(f) => {
            // (Δ + f fᴴ)⁻¹ = Δ⁻¹ − Δ⁻¹ f fᴴ Δ⁻¹ / (1 + fᴴ Δ⁻¹ f)
            let w = CVec::from_iterator(n, f.iter().zip(delta.iter()).map(|(fi, d)| fi / *d));
            let denom = 1.0 + f.dotc(&w).re;
            let proj = w.dotc(&t) / denom;
            let mu = CVec::from_iterator(n, (0..n).map(|i| t[i] / delta[i] - w[i] * proj));
            let var = RVec::from_iterator(n, (0..n).map(|i| 1.0 / delta[i] - w[i].norm_sqr() / denom));
            (mu, var)
        }
        SplitMatrix::Diagonal(c) => {
            let p = &delta + c;
            (
                CVec::from_iterator(n, t.iter().zip(p.iter()).map(|(ti, pi)| ti / *pi)),
                p.map(|v| 1.0 / v),
            )
        }
        SplitMatrix::Dense(c) => {
            let p = c + CMat::from_diagonal(&delta.map(C64::from));
            let ch = cholesky(&p).ok_or_else(|| {
                Error::State(format!("auxiliary point {} has a non-definite precision", q + 1))
            })?;
            let mu = ch.solve(&t);
            let inv = ch.inverse();
            (mu, RVec::from_iterator(n, inv.diagonal().iter().map(|z| z.re)))
        }
    };
    let mut xi = CVec::zeros(n);
    let mut big_xi = RVec::zeros(n);
    for i in 0..n {
        let lam0 = mu[i] / var[i];
        let prec0 = 1.0 / var[i] - scheme.lambda_c[i];
        xi[i] = lam0 - lam_q[i];
        big_xi[i] = prec0 - prec_q[i];
    }
    Ok(Belief { xi, big_xi })
}

/// Redistribute beliefs: `λ₀ ← Σ ξ_q`, `λ_q ← λ₀ − ξ_q` (same for the
/// precisions), each damped as `α·new + (1 − α)·old`.
pub fn update_points(
    scheme: &SplitScheme,
    state: &AuxiliaryState,
    beliefs: &[Belief],
    alpha: f64,
) -> Result<AuxiliaryState> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("damping {alpha} must lie in (0, 1]")));
    }
    if beliefs.len() != state.lambda.len() {
        return Err(Error::dim("belief count", state.lambda.len(), beliefs.len()));
    }
    let n = state.lambda0.len();
    let beta = 1.0 - alpha;
    let lam0_new = beliefs.iter().fold(CVec::zeros(n), |acc, b| acc + &b.xi);
    let prec0_new = beliefs.iter().fold(RVec::zeros(n), |acc, b| acc + &b.big_xi);

    let lambda0 = &lam0_new * C64::from(alpha) + &state.lambda0 * C64::from(beta);
    let precision0 = &prec0_new * alpha + &state.precision0 * beta;
    if let Some((i, v)) = (&precision0 + scheme.lambda_c())
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
    {
        return Err(Error::Divergence {
            iterations: state.iteration + 1,
            reason: format!("target precision Λ₀ + Λ_c = {v} at coordinate {i}; try a smaller damping"),
            trace: Vec::new(),
        });
    }
    let lambda = beliefs
        .iter()
        .zip(&state.lambda)
        .map(|(b, old)| (&lam0_new - &b.xi) * C64::from(alpha) + old * C64::from(beta))
        .collect();
    let precision = beliefs
        .iter()
        .zip(&state.precision)
        .map(|(b, old)| (&prec0_new - &b.big_xi) * alpha + old * beta)
        .collect();
    Ok(AuxiliaryState {
        lambda,
        precision,
        lambda0,
        precision0,
        iteration: state.iteration + 1,
    })
}

/// All beliefs of one round.
pub fn project_all(scheme: &SplitScheme, state: &AuxiliaryState) -> Result<Vec<Belief>> {
    if scheme.q() * scheme.n() >= 1 << 16 {
        (0..scheme.q()).into_par_iter().map(|q| project_auxiliary(scheme, state, q)).collect()
    } else {
        (0..scheme.q()).map(|q| project_auxiliary(scheme, state, q)).collect()
    }
}

pub fn run_iga(scheme: &SplitScheme, config: &IterConfig) -> Result<EstimateReport> {
    run_iga_observed(scheme, config, |_| {})
}

/// [`run_iga`] with a callback invoked on the state after every update.
pub fn run_iga_observed(
    scheme: &SplitScheme,
    config: &IterConfig,
    mut observe: impl FnMut(&AuxiliaryState),
) -> Result<EstimateReport> {
    config.validate()?;
    let start = Instant::now();
    let mut state = AuxiliaryState::initial(scheme);
    let mut mu = state.target_mean(scheme);
    let mut trace = vec![scheme.residual(&mu)];
    let mut guard = DivergenceGuard::new(trace[0]);
    let mut converged = false;

    for t in 0..config.max_iter {
        let beliefs = project_all(scheme, &state)?;
        state = update_points(scheme, &state, &beliefs, config.alpha).map_err(|e| match e {
            Error::Divergence { iterations, reason, .. } => Error::Divergence {
                iterations,
                reason,
                trace: trace.clone(),
            },
            other => other,
        })?;
        observe(&state);
        let next = state.target_mean(scheme);
        let change = max_relative_change(&next, &mu);
        mu = next;
        let r = scheme.residual(&mu);
        trace.push(r);
        guard.observe(r, t + 1, &trace)?;
        if change < config.tol {
            converged = true;
            break;
        }
    }

    let variances = (&state.precision0 + scheme.lambda_c()).map(|p| 1.0 / p);
    Ok(EstimateReport {
        algorithm: Algorithm::Iga,
        mean: mu,
        variances: Some(variances),
        iterations: state.iteration,
        residual_trace: trace,
        nmse: None,
        converged,
        wall_time: start.elapsed(),
        seed: None,
        config: Some(*config),
    })
}
