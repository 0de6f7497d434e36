//! Dense complex linear algebra used by the exact estimators and oracles.
//!
//! Factorizations come from `nalgebra`; this module adds the Hermitian
//! checks, the definite/indefinite solver fallback and a 1-norm condition
//! estimator.

use nalgebra::{Cholesky, Dyn, LU};

use crate::{CMat, CVec, Error, Result, C64};

/// Largest entry-wise deviation from Hermitian symmetry, relative to the
/// largest entry magnitude.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..=j.min(m.nrows() - 1) {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

pub fn is_hermitian(m: &CMat, rel_tol: f64) -> bool {
    m.is_square() && hermitian_defect(m) <= rel_tol
}

/// Maximum absolute column sum.
pub fn norm1(m: &CMat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Attempt a Cholesky factorization of a Hermitian matrix.
pub fn cholesky(m: &CMat) -> Option<Cholesky<C64, Dyn>> {
    // complex square roots never fail, so the pivots must be checked here
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re.is_finite() && d.re > 0.0 && d.im.abs() <= 1e-12 * d.re
    });
    ok.then_some(chol)
}

/// Smallest eigenvalue of a Hermitian matrix. Only used to build error
/// messages once a factorization has already failed.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Error describing why `m` is not Hermitian positive definite.
pub fn definiteness_error(name: &str, m: &CMat) -> Error {
    let ev = min_eigenvalue(m);
    let sign = if ev < 0.0 {
        "negative"
    } else if ev == 0.0 {
        "zero"
    } else {
        "tiny positive"
    };
    Error::Domain(format!(
        "{name} is not Hermitian positive definite: smallest eigenvalue {ev:.3e} is {sign}"
    ))
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn inverse_hpd(name: &str, m: &CMat) -> Result<CMat> {
    if !is_hermitian(m, 1e-10) {
        return Err(Error::Domain(format!("{name} is not Hermitian")));
    }
    match cholesky(m) {
        Some(ch) => Ok(ch.inverse()),
        None => Err(definiteness_error(name, m)),
    }
}

/// `ln det` from a Cholesky factor.
pub fn log_det(ch: &Cholesky<C64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>()
}

/// Estimate of `‖B⁻¹‖₁` for Hermitian `B`, given a solver for `B x = b`
/// (Hager's method; Hermitian so the adjoint solve is the same solve).
pub fn inv_norm1_estimate(n: usize, solve: impl Fn(&CVec) -> CVec) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut x = CVec::from_element(n, C64::new(1.0 / n as f64, 0.0));
    let mut est = 0.0;
    for _ in 0..5 {
        let y = solve(&x);
        est = y.iter().map(|z| z.norm()).sum::<f64>();
        let signs = y.map(|z| {
            let r = z.norm();
            if r == 0.0 {
                C64::new(1.0, 0.0)
            } else {
                z / r
            }
        });
        let z = solve(&signs);
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.norm()))
            .fold((0, -1.0), |acc, it| if it.1 > acc.1 { it } else { acc });
        if zmax <= z.dotc(&x).re {
            break;
        }
        x = CVec::zeros(n);
        x[jmax] = C64::new(1.0, 0.0);
    }
    est
}

/// A factorized Hermitian system. Positive-definite systems use Cholesky;
/// anything that fails the definiteness check falls back to partial-pivot LU.
pub enum HermitianSolver {
    Cholesky(Cholesky<C64, Dyn>),
    Lu(LU<C64, Dyn, Dyn>),
}

impl HermitianSolver {
    /// Factor `m`. Fails with [`Error::Singular`] when the estimated
    /// condition number exceeds `1 / (n ε)`.
    pub fn factor(m: &CMat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dim("system matrix (columns)", m.nrows(), m.ncols()));
        }
        let n = m.nrows();
        let solver = match cholesky(m) {
            Some(ch) => HermitianSolver::Cholesky(ch),
            None => {
                let lu = m.clone().lu();
                if !lu.is_invertible() {
                    return Err(Error::Singular { cond: f64::INFINITY });
                }
                HermitianSolver::Lu(lu)
            }
        };
        let cond = norm1(m) * inv_norm1_estimate(n, |b| solver.solve(b));
        if !cond.is_finite() || cond > 1.0 / (n.max(1) as f64 * f64::EPSILON) {
            return Err(Error::Singular { cond });
        }
        Ok(solver)
    }

    pub fn solve(&self, b: &CVec) -> CVec {
        match self {
            HermitianSolver::Cholesky(ch) => ch.solve(b),
            HermitianSolver::Lu(lu) => lu.solve(b).unwrap_or_else(|| b.map(|_| C64::new(f64::NAN, 0.0))),
        }
    }

    pub fn is_definite(&self) -> bool {
        matches!(self, HermitianSolver::Cholesky(_))
    }
}

/// Solve a Hermitian system `m x = b`.
pub fn solve_hermitian(m: &CMat, b: &CVec) -> Result<CVec> {
    if b.len() != m.nrows() {
        return Err(Error::dim("right-hand side", m.nrows(), b.len()));
    }
    Ok(HermitianSolver::factor(m)?.solve(b))
}

/// Relative 2-norm distance `‖a − b‖ / ‖b‖` (absolute when `b = 0`).
pub fn rel_err(a: &CVec, b: &CVec) -> f64 {
    let nb = b.norm();
    let d = (a - b).norm();
    if nb == 0.0 {
        d
    } else {
        d / nb
    }
}
