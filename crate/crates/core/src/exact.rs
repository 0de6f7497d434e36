//! Exact posterior-mean estimators. These are the references every
//! iterative estimator in the crate is checked against.

use crate::linalg::{solve_hermitian, HermitianSolver};
use crate::operator::SensingMatrix;
use crate::{CMat, CVec, Error, RVec, Result, C64};

/// `y = A h + z` with `h ~ CN(0, diag(d))`, `z ~ CN(0, σ² I)`.
#[derive(Clone, Debug)]
pub struct MeasurementModel {
    a: SensingMatrix,
    d: RVec,
    sigma2: f64,
}

impl MeasurementModel {
    pub fn new(a: impl Into<SensingMatrix>, d: RVec, sigma2: f64) -> Result<Self> {
        let a = a.into();
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::Domain("measurement matrix must be at least 1x1".into()));
        }
        if d.len() != a.ncols() {
            return Err(Error::dim("prior variance vector", a.ncols(), d.len()));
        }
        if let Some((i, v)) = d.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("prior variance d[{i}] = {v} must be positive")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Domain(format!("noise variance {sigma2} must be positive")));
        }
        Ok(Self { a, d, sigma2 })
    }

    pub fn a(&self) -> &SensingMatrix {
        &self.a
    }

    pub fn prior_variance(&self) -> &RVec {
        &self.d
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Number of observations `M`.
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// Number of unknowns `N`.
    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn prior_precision(&self) -> RVec {
        self.d.map(|v| 1.0 / v)
    }

    pub(crate) fn check_y(&self, y: &CVec) -> Result<()> {
        if y.len() != self.m() {
            return Err(Error::dim("received signal y", self.m(), y.len()));
        }
        Ok(())
    }

    /// Original natural parameter `θ_or = σ⁻² Aᴴ y`.
    pub fn theta_or(&self, y: &CVec) -> Result<CVec> {
        self.check_y(y)?;
        Ok(self.a.apply_adjoint(y)? / C64::new(self.sigma2, 0.0))
    }

    /// `σ⁻² AᴴA + D⁻¹`, dense.
    pub fn normal_matrix(&self) -> Result<CMat> {
        let mut k = self.a.gram()? / C64::new(self.sigma2, 0.0);
        for (i, p) in self.prior_precision().iter().enumerate() {
            k[(i, i)] += p;
        }
        Ok(k)
    }

    /// `‖(σ⁻²AᴴA + D⁻¹) μ − σ⁻²Aᴴy‖₂ / ‖σ⁻²Aᴴy‖₂`.
    pub fn normal_residual(&self, mu: &CVec, y: &CVec) -> Result<f64> {
        let rhs = self.theta_or(y)?;
        let lhs = self.a.gram_apply(mu)? / C64::new(self.sigma2, 0.0)
            + mu.component_mul(&self.prior_precision().map(C64::from));
        Ok(relative_residual(&lhs, &rhs))
    }
}

pub(crate) fn relative_residual(lhs: &CVec, rhs: &CVec) -> f64 {
    let r = (lhs - rhs).norm();
    let s = rhs.norm();
    if s == 0.0 {
        r
    } else {
        r / s
    }
}

/// Posterior mean and covariance.
#[derive(Clone, Debug)]
pub struct MmsePosterior {
    pub mean: CVec,
    pub covariance: CMat,
}

/// `μ = (σ⁻²AᴴA + D⁻¹)⁻¹ σ⁻²Aᴴy`, `Σ = (σ⁻²AᴴA + D⁻¹)⁻¹`.
pub fn mmse_estimate(model: &MeasurementModel, y: &CVec) -> Result<MmsePosterior> {
    let k = model.normal_matrix()?;
    let rhs = model.theta_or(y)?;
    let solver = HermitianSolver::factor(&k)?;
    let mean = solver.solve(&rhs);
    let covariance = match &solver {
        HermitianSolver::Cholesky(ch) => ch.inverse(),
        HermitianSolver::Lu(lu) => lu.try_inverse().ok_or(Error::Singular { cond: f64::INFINITY })?,
    };
    Ok(MmsePosterior { mean, covariance })
}

/// Posterior mean only.
pub fn mmse_mean(model: &MeasurementModel, y: &CVec) -> Result<CVec> {
    solve_hermitian(&model.normal_matrix()?, &model.theta_or(y)?)
}

/// Ingredients of the modified MMSE form:
/// `T = K − I⊙K` with `K = σ⁻²AᴴA`, and `Υ = (I⊙K + D⁻¹)⁻¹`.
#[derive(Clone, Debug)]
pub struct ModifiedForm {
    /// `K = σ⁻²AᴴA`.
    pub k: CMat,
    /// Diagonal of `D⁻¹`.
    pub prior_precision: RVec,
    /// Off-diagonal part of `K`, exact zeros on the diagonal.
    pub t: CMat,
    /// Diagonal of `Υ`.
    pub upsilon: RVec,
    /// `T Υ Tᴴ`.
    pub t_upsilon_th: CMat,
}

impl ModifiedForm {
    /// `K + D⁻¹ + T + TΥTᴴ`, summed term by term.
    pub fn system_matrix(&self) -> CMat {
        let mut s = &self.k + &self.t + &self.t_upsilon_th;
        for (i, p) in self.prior_precision.iter().enumerate() {
            s[(i, i)] += p;
        }
        s
    }

    /// `θ + TΥθ` for `θ = σ⁻²Aᴴy`.
    pub fn theta(&self, theta_or: &CVec) -> CVec {
        theta_or + &self.t * theta_or.component_mul(&self.upsilon.map(C64::from))
    }

    /// Natural parameters `(θ_mod, Θ_mod)` of the modified posterior density.
    pub fn natural_parameters(&self, theta_or: &CVec) -> (CVec, CMat) {
        (self.theta(theta_or), -self.system_matrix())
    }
}

pub fn build_modified_form(model: &MeasurementModel) -> Result<ModifiedForm> {
    let k = model.a.gram()? / C64::new(model.sigma2, 0.0);
    let n = model.n();
    let prior_precision = model.prior_precision();
    let mut t = k.clone();
    for i in 0..n {
        t[(i, i)] = C64::new(0.0, 0.0);
    }
    let upsilon = RVec::from_iterator(n, (0..n).map(|i| 1.0 / (k[(i, i)].re + prior_precision[i])));
    let t_ups = {
        let mut m = t.clone();
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= C64::new(upsilon[j], 0.0);
        }
        m
    };
    let t_upsilon_th = &t_ups * t.adjoint();
    Ok(ModifiedForm {
        k,
        prior_precision,
        t,
        upsilon,
        t_upsilon_th,
    })
}

/// Solve `(K + D⁻¹ + T + TΥTᴴ) ĥ = σ⁻²Aᴴy + TΥσ⁻²Aᴴy` as written.
pub fn modified_mmse_estimate(model: &MeasurementModel, y: &CVec) -> Result<CVec> {
    let form = build_modified_form(model)?;
    let theta = model.theta_or(y)?;
    solve_hermitian(&form.system_matrix(), &form.theta(&theta))
}
