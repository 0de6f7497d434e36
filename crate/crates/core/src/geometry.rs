//! Coordinates of multivariate complex Gaussians and the m-projection onto
//! the manifold of independent (diagonal) complex Gaussians.
//!
//! A complex Gaussian `p(x) ∝ exp{xᴴθ + θᴴx + xᴴΘx}` has natural parameters
//! `(θ, Θ)` with `−Θ` Hermitian positive definite, and expectation
//! parameters `(μ, M)` with `μ = E x`, `M = E xxᴴ`. The two are related by
//! the Legendre transform of the free energy
//! `ψ(θ, Θ) = N ln π − ln det(−Θ) − θᴴΘ⁻¹θ`.

use std::f64::consts::PI;

use crate::linalg::{self, cholesky, definiteness_error, is_hermitian};
use crate::{CMat, CVec, Error, RVec, Result};

const HERMITIAN_TOL: f64 = 1e-10;

/// Natural (e-affine) coordinates `(θ, Θ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianNatural {
    theta: CVec,
    theta_matrix: CMat,
}

impl GaussianNatural {
    pub fn new(theta: CVec, theta_matrix: CMat) -> Result<Self> {
        check_square_hermitian("Θ", &theta_matrix, theta.len())?;
        if cholesky(&-&theta_matrix).is_none() {
            return Err(definiteness_error("−Θ", &-&theta_matrix));
        }
        Ok(Self {
            theta,
            theta_matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &CVec {
        &self.theta
    }

    pub fn theta_matrix(&self) -> &CMat {
        &self.theta_matrix
    }

    /// Precision matrix `−Θ`.
    pub fn precision(&self) -> CMat {
        -&self.theta_matrix
    }

    /// Mean and covariance `(μ, Σ)` with `Σ = (−Θ)⁻¹`, `μ = Σθ`.
    pub fn moments(&self) -> (CVec, CMat) {
        let ch = cholesky(&self.precision()).expect("validated at construction");
        let mu = ch.solve(&self.theta);
        (mu, ch.inverse())
    }
}

/// Expectation (m-affine) coordinates `(μ, M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianExpectation {
    mu: CVec,
    second_moment: CMat,
}

impl GaussianExpectation {
    pub fn new(mu: CVec, second_moment: CMat) -> Result<Self> {
        check_square_hermitian("M", &second_moment, mu.len())?;
        let sigma = &second_moment - &mu * mu.adjoint();
        if cholesky(&sigma).is_none() {
            return Err(definiteness_error("Σ = M − μμᴴ", &sigma));
        }
        Ok(Self { mu, second_moment })
    }

    pub fn from_moments(mu: CVec, covariance: &CMat) -> Result<Self> {
        let m = covariance + &mu * mu.adjoint();
        Self::new(mu, m)
    }

    pub fn mu(&self) -> &CVec {
        &self.mu
    }

    pub fn second_moment(&self) -> &CMat {
        &self.second_moment
    }

    pub fn covariance(&self) -> CMat {
        &self.second_moment - &self.mu * self.mu.adjoint()
    }
}

/// Independent complex Gaussian in natural form: `λ` and the diagonal
/// precision `Λ`. Mean `λ ./ Λ`, variance `1 ./ Λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    lambda: CVec,
    precision: RVec,
}

impl DiagGaussian {
    pub fn new(lambda: CVec, precision: RVec) -> Result<Self> {
        if lambda.len() != precision.len() {
            return Err(Error::dim("diagonal precision", lambda.len(), precision.len()));
        }
        if let Some((i, p)) = precision.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
            return Err(Error::Domain(format!(
                "diagonal precision entry {i} is {p}, must be strictly positive"
            )));
        }
        Ok(Self { lambda, precision })
    }

    /// Build from per-coordinate mean and variance.
    pub fn from_mean_variance(mean: &CVec, variance: &RVec) -> Result<Self> {
        let precision = variance.map(|v| 1.0 / v);
        let lambda = mean.component_mul(&precision.map(|p| p.into()));
        Self::new(lambda, precision)
    }

    pub fn lambda(&self) -> &CVec {
        &self.lambda
    }

    pub fn precision(&self) -> &RVec {
        &self.precision
    }

    pub fn mean(&self) -> CVec {
        CVec::from_iterator(
            self.lambda.len(),
            self.lambda.iter().zip(self.precision.iter()).map(|(l, p)| l / *p),
        )
    }

    pub fn variance(&self) -> RVec {
        self.precision.map(|p| 1.0 / p)
    }

    pub fn to_natural(&self) -> GaussianNatural {
        let theta_matrix = CMat::from_diagonal(&self.precision.map(|p| (-p).into()));
        GaussianNatural {
            theta: self.lambda.clone(),
            theta_matrix,
        }
    }
}

fn check_square_hermitian(name: &'static str, m: &CMat, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dim(name, n, if m.nrows() != n { m.nrows() } else { m.ncols() }));
    }
    if !is_hermitian(m, HERMITIAN_TOL) {
        return Err(Error::Domain(format!(
            "{name} is not Hermitian (relative defect {:.3e})",
            linalg::hermitian_defect(m)
        )));
    }
    Ok(())
}

/// `μ = −Θ⁻¹θ`, `M = μμᴴ + (−Θ)⁻¹`.
pub fn natural_to_expectation(p: &GaussianNatural) -> Result<GaussianExpectation> {
    let (mu, sigma) = p.moments();
    let m = &sigma + &mu * mu.adjoint();
    Ok(GaussianExpectation {
        mu,
        second_moment: m,
    })
}

/// `θ = Σ⁻¹μ`, `Θ = −Σ⁻¹` with `Σ = M − μμᴴ`.
pub fn expectation_to_natural(p: &GaussianExpectation) -> Result<GaussianNatural> {
    let sigma = p.covariance();
    let ch = cholesky(&sigma).ok_or_else(|| definiteness_error("Σ", &sigma))?;
    let theta = ch.solve(&p.mu);
    let prec = ch.inverse();
    Ok(GaussianNatural {
        theta,
        theta_matrix: -prec,
    })
}

/// Free energy `ψ(θ, Θ) = N ln π − ln det(−Θ) − θᴴΘ⁻¹θ`.
fn free_energy(p: &GaussianNatural) -> f64 {
    let ch = cholesky(&p.precision()).expect("validated at construction");
    let n = p.dim() as f64;
    // −θᴴΘ⁻¹θ = θᴴ(−Θ)⁻¹θ
    let quad = p.theta.dotc(&ch.solve(&p.theta)).re;
    n * PI.ln() - linalg::log_det(&ch) + quad
}

/// Negative entropy `φ(μ, M) = −N ln(πe) − ln det(M − μμᴴ)`.
fn negative_entropy(mu: &CVec, sigma: &CMat) -> f64 {
    let ch = cholesky(sigma).expect("covariance of a valid Gaussian");
    let n = mu.len() as f64;
    -n * (PI.ln() + 1.0) - linalg::log_det(&ch)
}

/// `D_KL(p1 ‖ p0)` evaluated in mixed coordinates:
/// `φ(μ₁, M₁) + ψ(θ₀, Θ₀) − μ₁ᴴθ₀ − θ₀ᴴμ₁ − tr(M₁Θ₀)`.
pub fn kl_divergence(p1: &GaussianNatural, p0: &GaussianNatural) -> Result<f64> {
    if p1.dim() != p0.dim() {
        return Err(Error::dim("KL divergence operands", p1.dim(), p0.dim()));
    }
    let (mu1, sigma1) = p1.moments();
    let m1 = &sigma1 + &mu1 * mu1.adjoint();
    let cross = 2.0 * mu1.dotc(&p0.theta).re;
    let trace = (&m1 * &p0.theta_matrix).trace().re;
    Ok(negative_entropy(&mu1, &sigma1) + free_energy(p0) - cross - trace)
}

/// m-projection onto the independent-Gaussian manifold: keeps the mean and
/// the diagonal of the covariance, `λ = μ ./ diag(Σ)`, `Λ = 1 ./ diag(Σ)`.
pub fn m_project_to_diag(p: &GaussianNatural) -> DiagGaussian {
    let (mu, sigma) = p.moments();
    let var = RVec::from_iterator(p.dim(), sigma.diagonal().iter().map(|z| z.re));
    DiagGaussian::from_mean_variance(&mu, &var).expect("diagonal of a positive-definite covariance")
}
