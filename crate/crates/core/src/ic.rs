//! Interference-cancellation estimators.
//!
//! IC-IGA gives every coefficient `h_n` its own auxiliary point. Its
//! m-projection has a closed form: only coordinate `n` receives a belief,
//! with mean and precision
//!
//! ```text
//! μ_n = σ⁻² c_n⁻¹ (a_nᴴy − a_nᴴA μ + a_nᴴa_n μ_n)
//! r_n = c_n / (1 + e_n),   e_n = σ⁻⁴ c_n⁻¹ ([L v]_n − (a_nᴴa_n)² v_n)
//! ```
//!
//! where `c_n = σ⁻² a_nᴴa_n + 1/d_n`, `L = |AᴴA|²` entry-wise and
//! `v = 1 ./ Λ`. IC-SIGA drops the precision track and iterates the mean
//! alone, which is damped Jacobi on the MMSE normal equations.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::exact::{relative_residual, MeasurementModel};
use crate::geometry::{m_project_to_diag, GaussianNatural};
use crate::operator::SensingMatrix;
use crate::report::{max_relative_change, Algorithm, DivergenceGuard, EstimateReport, IterConfig};
use crate::{CMat, CVec, Error, RVec, Result, C64};

/// How `AᴴA` is made available to the kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GramMode {
    /// Materialize `AᴴA` and `L`.
    Dense,
    /// Keep only a handle computing `Aᴴ(A x)`.
    Operator,
}

#[derive(Clone, Debug)]
struct DenseGram {
    aha: CMat,
    l: DMatrix<f64>,
}

/// Quantities shared by every IC iteration.
#[derive(Clone, Debug)]
pub struct IcPrecomp {
    a: SensingMatrix,
    sigma2: f64,
    ahy: CVec,
    aha_diag: RVec,
    c: RVec,
    prior_precision: RVec,
    dense: Option<DenseGram>,
}

pub fn precompute_ic(model: &MeasurementModel, y: &CVec, mode: GramMode) -> Result<IcPrecomp> {
    if y.len() != model.m() {
        return Err(Error::dim("received signal y", model.m(), y.len()));
    }
    let a = model.a().clone();
    let sigma2 = model.sigma2();
    let ahy = a.apply_adjoint(y)?;
    let prior_precision = model.prior_precision();
    let (aha_diag, dense) = match mode {
        GramMode::Dense => {
            let aha = a.gram()?;
            let diag = RVec::from_iterator(aha.nrows(), aha.diagonal().iter().map(|z| z.re));
            let l = aha.map(|z| z.norm_sqr());
            (diag, Some(DenseGram { aha, l }))
        }
        GramMode::Operator => (a.column_energies(), None),
    };
    let c = aha_diag.zip_map(&prior_precision, |g, p| g / sigma2 + p);
    if let Some((i, v)) = c.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Domain(format!("c[{i}] = {v} is not positive")));
    }
    Ok(IcPrecomp {
        a,
        sigma2,
        ahy,
        aha_diag,
        c,
        prior_precision,
        dense,
    })
}

impl IcPrecomp {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn mode(&self) -> GramMode {
        if self.dense.is_some() {
            GramMode::Dense
        } else {
            GramMode::Operator
        }
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `Aᴴy`.
    pub fn ahy(&self) -> &CVec {
        &self.ahy
    }

    /// `diag(AᴴA)`.
    pub fn aha_diag(&self) -> &RVec {
        &self.aha_diag
    }

    /// `c_n = σ⁻² a_nᴴa_n + 1/d_n`.
    pub fn c(&self) -> &RVec {
        &self.c
    }

    /// `L = (AᴴA) ⊙ (AᴴA)*`, dense mode only.
    pub fn l(&self) -> Option<&DMatrix<f64>> {
        self.dense.as_ref().map(|d| &d.l)
    }

    pub fn gram(&self) -> Option<&CMat> {
        self.dense.as_ref().map(|d| &d.aha)
    }

    /// `AᴴA x`.
    pub fn gram_apply(&self, x: &CVec) -> Result<CVec> {
        match &self.dense {
            Some(d) => Ok(&d.aha * x),
            None => self.a.gram_apply(x),
        }
    }

    fn gram_column(&self, n: usize) -> Result<CVec> {
        match &self.dense {
            Some(d) => Ok(d.aha.column(n).into_owned()),
            None => {
                let mut e = CVec::zeros(self.n());
                e[n] = C64::new(1.0, 0.0);
                self.a.gram_apply(&e)
            }
        }
    }

    /// Relative residual of the MMSE normal equations at `mu`, given
    /// `gram_mu = AᴴA mu`.
    pub fn normal_residual(&self, mu: &CVec, gram_mu: &CVec) -> f64 {
        let s = 1.0 / self.sigma2;
        let n = self.n();
        let lhs = CVec::from_iterator(n, (0..n).map(|i| gram_mu[i] * s + mu[i] * self.prior_precision[i]));
        let rhs = &self.ahy * C64::new(s, 0.0);
        relative_residual(&lhs, &rhs)
    }

    /// The interference-cancelled mean for every coordinate:
    /// `σ⁻² (Aᴴy − AᴴA μ + diag(AᴴA) ⊙ μ) ./ c`.
    fn cancelled_mean(&self, mu: &CVec, gram_mu: &CVec) -> CVec {
        let s = 1.0 / self.sigma2;
        let n = self.n();
        CVec::from_iterator(
            n,
            (0..n).map(|i| (self.ahy[i] - gram_mu[i] + mu[i] * self.aha_diag[i]) * (s / self.c[i])),
        )
    }
}

/// IC-IGA target-point parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct IcState {
    pub lambda: CVec,
    pub precision: RVec,
    /// `1 ./ precision`.
    pub v: RVec,
    /// `lambda ./ precision`.
    pub mu: CVec,
    pub t: usize,
}

impl IcState {
    /// `λ = 0`, `Λ = 1`, `v = 1`, `μ = 0`.
    pub fn initial(n: usize) -> Self {
        Self {
            lambda: CVec::zeros(n),
            precision: RVec::from_element(n, 1.0),
            v: RVec::from_element(n, 1.0),
            mu: CVec::zeros(n),
            t: 0,
        }
    }

    pub fn from_natural(lambda: CVec, precision: RVec, t: usize) -> Result<Self> {
        if lambda.len() != precision.len() {
            return Err(Error::dim("IC state precision", lambda.len(), precision.len()));
        }
        if let Some((i, p)) = precision.iter().enumerate().find(|(_, p)| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::State(format!("precision Λ[{i}] = {p} must be positive")));
        }
        let v = precision.map(|p| 1.0 / p);
        let mu = lambda.zip_map(&precision, |l, p| l / p);
        Ok(Self {
            lambda,
            precision,
            v,
            mu,
            t,
        })
    }
}

/// Per-coordinate m-projection results of one IC-IGA round.
#[derive(Clone, Debug)]
pub struct IcBeliefs {
    /// `μ_n` of every auxiliary point.
    pub mu: CVec,
    /// `r_n = c_n / (1 + e_n)`.
    pub r: RVec,
    pub e: RVec,
}

/// Variants of the `e_n` kernel. Anything but `Exact` is a deliberately
/// broken kernel used to check that the oracle suite detects corruption.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EKernel {
    #[default]
    Exact,
    /// Drop the `j = n` subtraction from `[L v]_n`.
    KeepDiagonalTerm,
}

pub fn ic_iga_beliefs(pre: &IcPrecomp, state: &IcState) -> Result<IcBeliefs> {
    let gram_mu = pre.gram_apply(&state.mu)?;
    beliefs_with(pre, state, &gram_mu, EKernel::Exact)
}

#[doc(hidden)]
pub fn ic_iga_beliefs_with(pre: &IcPrecomp, state: &IcState, kernel: EKernel) -> Result<IcBeliefs> {
    let gram_mu = pre.gram_apply(&state.mu)?;
    beliefs_with(pre, state, &gram_mu, kernel)
}

fn beliefs_with(pre: &IcPrecomp, state: &IcState, gram_mu: &CVec, kernel: EKernel) -> Result<IcBeliefs> {
    let n = pre.n();
    if state.mu.len() != n {
        return Err(Error::dim("IC state", n, state.mu.len()));
    }
    let s4 = 1.0 / (pre.sigma2 * pre.sigma2);
    let mu = pre.cancelled_mean(&state.mu, gram_mu);
    let keep_diag = kernel == EKernel::KeepDiagonalTerm;
    let e = match &pre.dense {
        Some(d) => {
            let lv = &d.l * &state.v;
            RVec::from_iterator(
                n,
                (0..n).map(|i| {
                    let own = if keep_diag { 0.0 } else { pre.aha_diag[i] * pre.aha_diag[i] * state.v[i] };
                    s4 / pre.c[i] * (lv[i] - own)
                }),
            )
        }
        None => {
            let e: Result<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let col = pre.gram_column(i)?;
                    let energy: f64 = col
                        .iter()
                        .zip(state.v.iter())
                        .enumerate()
                        .filter(|(j, _)| keep_diag || *j != i)
                        .map(|(_, (g, v))| g.norm_sqr() * v)
                        .sum();
                    Ok(s4 / pre.c[i] * energy)
                })
                .collect();
            RVec::from_vec(e?)
        }
    };
    if let Some((i, v)) = e.iter().enumerate().find(|(_, v)| !(1.0 + **v > 0.0 && v.is_finite())) {
        return Err(Error::Divergence {
            iterations: state.t,
            reason: format!("1 + e[{i}] = {} is not positive; numerical corruption", 1.0 + v),
            trace: Vec::new(),
        });
    }
    let r = pre.c.zip_map(&e, |c, e| c / (1.0 + e));
    Ok(IcBeliefs { mu, r, e })
}

fn damp(pre_alpha: f64, beliefs: &IcBeliefs, state: &IcState) -> Result<IcState> {
    let a = pre_alpha;
    let b = 1.0 - a;
    let lambda = CVec::from_iterator(
        state.lambda.len(),
        (0..state.lambda.len()).map(|i| beliefs.mu[i] * (a * beliefs.r[i]) + state.lambda[i] * b),
    );
    let precision = beliefs.r.zip_map(&state.precision, |r, p| a * r + b * p);
    IcState::from_natural(lambda, precision, state.t + 1)
}

/// One damped IC-IGA update.
pub fn ic_iga_step(pre: &IcPrecomp, state: &IcState, alpha: f64) -> Result<IcState> {
    check_alpha(alpha)?;
    let beliefs = ic_iga_beliefs(pre, state)?;
    damp(alpha, &beliefs, state)
}

/// One damped IC-SIGA update of the mean.
pub fn ic_siga_step(pre: &IcPrecomp, mu_t: &CVec, alpha: f64) -> Result<CVec> {
    check_alpha(alpha)?;
    if mu_t.len() != pre.n() {
        return Err(Error::dim("IC-SIGA mean", pre.n(), mu_t.len()));
    }
    let gram_mu = pre.gram_apply(mu_t)?;
    Ok(siga_update(pre, mu_t, &gram_mu, alpha))
}

fn siga_update(pre: &IcPrecomp, mu_t: &CVec, gram_mu: &CVec, alpha: f64) -> CVec {
    pre.cancelled_mean(mu_t, gram_mu) * C64::from(alpha) + mu_t * C64::from(1.0 - alpha)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("damping {alpha} must lie in (0, 1]")))
    }
}

/// The two IC estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IcKind {
    IcIga,
    IcSiga,
}

impl From<IcKind> for Algorithm {
    fn from(k: IcKind) -> Self {
        match k {
            IcKind::IcIga => Algorithm::IcIga,
            IcKind::IcSiga => Algorithm::IcSiga,
        }
    }
}

/// Iterate until the max relative change of the mean drops below `tol` or
/// `max_iter` updates have been made.
pub fn run_estimator(kind: IcKind, pre: &IcPrecomp, config: &IterConfig) -> Result<EstimateReport> {
    config.validate()?;
    let start = Instant::now();
    let n = pre.n();
    let mut state = IcState::initial(n);
    let mut gram_mu = pre.gram_apply(&state.mu)?;
    let mut trace = vec![pre.normal_residual(&state.mu, &gram_mu)];
    let mut guard = DivergenceGuard::new(trace[0]);
    let mut converged = false;

    for t in 0..config.max_iter {
        let next = match kind {
            IcKind::IcIga => {
                let beliefs = beliefs_with(pre, &state, &gram_mu, EKernel::Exact).map_err(|e| attach(e, &trace))?;
                damp(config.alpha, &beliefs, &state).map_err(|e| attach(e, &trace))?
            }
            IcKind::IcSiga => {
                let mu = siga_update(pre, &state.mu, &gram_mu, config.alpha);
                IcState {
                    lambda: mu.clone(),
                    precision: RVec::from_element(n, 1.0),
                    v: RVec::from_element(n, 1.0),
                    mu,
                    t: t + 1,
                }
            }
        };
        let change = max_relative_change(&next.mu, &state.mu);
        state = next;
        gram_mu = pre.gram_apply(&state.mu)?;
        let r = pre.normal_residual(&state.mu, &gram_mu);
        trace.push(r);
        guard.observe(r, t + 1, &trace)?;
        if change < config.tol {
            converged = true;
            break;
        }
    }

    let variances = match kind {
        IcKind::IcIga => Some(state.v.clone()),
        IcKind::IcSiga => None,
    };
    Ok(EstimateReport {
        algorithm: kind.into(),
        mean: state.mu,
        variances,
        iterations: state.t,
        residual_trace: trace,
        nmse: None,
        converged,
        wall_time: start.elapsed(),
        seed: None,
        config: Some(*config),
    })
}

fn attach(e: Error, trace: &[f64]) -> Error {
    match e {
        Error::Divergence { iterations, reason, .. } => Error::Divergence {
            iterations,
            reason,
            trace: trace.to_vec(),
        },
        other => other,
    }
}

/// What the dense block-inversion route gives for auxiliary point `n`.
#[derive(Clone, Debug)]
pub struct OracleBelief {
    pub mu_n: C64,
    pub r_n: f64,
    pub xi: CVec,
    pub big_xi: RVec,
}

/// Build auxiliary point `n` literally: precision `Λ₋ₙ + C_n`, mean
/// parameter `λ₋ₙ + b_n`, with `C_n` carrying the `k̄_n k̄_nᴴ / c_n` block,
/// invert it densely, m-project it and read off the beliefs.
pub fn mproj_belief_oracle(model: &MeasurementModel, y: &CVec, state: &IcState, n: usize) -> Result<OracleBelief> {
    let big_n = model.n();
    if n >= big_n {
        return Err(Error::IndexOutOfRange {
            what: "coefficient",
            index: n + 1,
            max: big_n,
        });
    }
    if state.mu.len() != big_n {
        return Err(Error::dim("IC state", big_n, state.mu.len()));
    }
    let a = model
        .a()
        .as_dense()
        .ok_or_else(|| Error::Config("belief oracle needs a dense measurement matrix".into()))?;
    let s2 = 1.0 / model.sigma2();
    let k = a.ad_mul(a) * C64::from(s2);
    let a_n = a.column(n);
    let any = a_n.dotc(y) * s2;
    let c_n = k[(n, n)].re + 1.0 / model.prior_variance()[n];

    // C_n and b_n with coordinate n in place (no reordering needed).
    let mut c_mat = CMat::zeros(big_n, big_n);
    let mut b = CVec::zeros(big_n);
    c_mat[(n, n)] = C64::from(c_n);
    b[n] = any;
    for i in (0..big_n).filter(|&i| i != n) {
        let ki = k[(i, n)];
        c_mat[(n, i)] = ki.conj();
        c_mat[(i, n)] = ki;
        b[i] = ki * (any / c_n);
        for j in (0..big_n).filter(|&j| j != n) {
            c_mat[(i, j)] = ki * k[(j, n)].conj() / c_n;
        }
    }
    let mut lam_minus = state.lambda.clone();
    lam_minus[n] = C64::new(0.0, 0.0);
    let mut prec_minus = state.precision.clone();
    prec_minus[n] = 0.0;
    let precision = &c_mat + CMat::from_diagonal(&prec_minus.map(C64::from));
    let aux = GaussianNatural::new(&lam_minus + &b, -precision)?;
    let proj = m_project_to_diag(&aux);
    let xi = proj.lambda() - &lam_minus;
    let big_xi = proj.precision() - &prec_minus;
    let mean = proj.mean();
    Ok(OracleBelief {
        mu_n: mean[n],
        r_n: proj.precision()[n],
        xi,
        big_xi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn identity_model(n: usize) -> MeasurementModel {
        MeasurementModel::new(CMat::identity(n, n), RVec::from_element(n, 1.0), 1.0).unwrap()
    }

    #[test]
    fn identity_precompute() {
        let pre = precompute_ic(&identity_model(3), &CVec::zeros(3), GramMode::Dense).unwrap();
        assert_eq!(pre.c(), &RVec::from_element(3, 2.0));
        assert_eq!(pre.l().unwrap(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn scalar_precompute() {
        let model = MeasurementModel::new(CMat::from_element(1, 1, c(2.0)), RVec::from_element(1, 1.0), 1.0).unwrap();
        let pre = precompute_ic(&model, &CVec::zeros(1), GramMode::Dense).unwrap();
        assert_eq!(pre.aha_diag()[0], 4.0);
        assert_eq!(pre.c()[0], 5.0);
    }

    #[test]
    fn first_step_on_identity() {
        let y = CVec::from_vec(vec![c(2.0), c(4.0)]);
        let pre = precompute_ic(&identity_model(2), &y, GramMode::Dense).unwrap();
        let b = ic_iga_beliefs(&pre, &IcState::initial(2)).unwrap();
        assert!(b.e.norm() == 0.0);
        assert_eq!(b.r, RVec::from_element(2, 2.0));
        assert!((b.mu[0] - c(1.0)).norm() < 1e-15 && (b.mu[1] - c(2.0)).norm() < 1e-15);

        let mu = ic_siga_step(&pre, &CVec::zeros(2), 1.0).unwrap();
        assert!((mu[0] - c(1.0)).norm() < 1e-15 && (mu[1] - c(2.0)).norm() < 1e-15);
        let again = ic_siga_step(&pre, &mu, 1.0).unwrap();
        assert!((again - mu).norm() < 1e-15);
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let y = CVec::from_vec(vec![c(2.0), c(4.0)]);
        let pre = precompute_ic(&identity_model(2), &y, GramMode::Dense).unwrap();
        for kind in [IcKind::IcIga, IcKind::IcSiga] {
            let r = run_estimator(kind, &pre, &IterConfig::new(0.5, 0, 1e-8)).unwrap();
            assert!(!r.converged);
            assert_eq!(r.mean, CVec::zeros(2));
            assert_eq!(r.residual_trace.len(), 1);
        }
    }

    #[test]
    fn siga_reports_no_variances() {
        let y = CVec::from_vec(vec![c(2.0), c(4.0)]);
        let pre = precompute_ic(&identity_model(2), &y, GramMode::Dense).unwrap();
        let r = run_estimator(IcKind::IcSiga, &pre, &IterConfig::new(1.0, 10, 1e-12)).unwrap();
        assert!(r.variances.is_none());
        assert!(r.converged);
        let r = run_estimator(IcKind::IcIga, &pre, &IterConfig::new(1.0, 10, 1e-12)).unwrap();
        assert_eq!(r.variances.unwrap(), RVec::from_element(2, 0.5));
    }

    #[test]
    fn bad_damping_is_rejected() {
        let pre = precompute_ic(&identity_model(2), &CVec::zeros(2), GramMode::Dense).unwrap();
        assert!(ic_iga_step(&pre, &IcState::initial(2), 0.0).is_err());
        assert!(ic_siga_step(&pre, &CVec::zeros(2), 1.1).is_err());
    }

    #[test]
    fn state_rejects_non_positive_precision() {
        assert!(IcState::from_natural(CVec::zeros(2), RVec::from_vec(vec![1.0, -1.0]), 0).is_err());
    }
}
