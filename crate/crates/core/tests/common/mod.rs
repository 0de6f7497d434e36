//! Independent reference computations shared by the integration tests.
//! Nothing here calls the estimators under test.
#![allow(dead_code)]

use igachan::{CMat, CVec, RVec, C64};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cgauss<R: Rng>(r: &mut R) -> C64 {
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random();
    // Box-Muller, unit total variance
    let rad = (-u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    C64::new(rad * th.cos(), rad * th.sin())
}

pub fn cmat<R: Rng>(r: &mut R, m: usize, n: usize) -> CMat {
    CMat::from_fn(m, n, |_, _| cgauss(r))
}

pub fn cvec<R: Rng>(r: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| cgauss(r))
}

pub fn rel(a: &CVec, b: &CVec) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn cdiag(v: &RVec) -> CMat {
    CMat::from_diagonal(&v.map(|x| C64::new(x, 0.0)))
}

/// Posterior mean in the data-space form `D Aᴴ (A D Aᴴ + σ² I)⁻¹ y`,
/// which never forms the `N × N` normal matrix.
pub fn mmse_data_space(a: &CMat, d: &RVec, sigma2: f64, y: &CVec) -> CVec {
    let m = a.nrows();
    let dc = cdiag(d);
    let s = a * &dc * a.adjoint() + CMat::identity(m, m) * C64::new(sigma2, 0.0);
    let w = s.lu().solve(y).expect("data-space system is nonsingular");
    dc * a.adjoint() * w
}

/// Mean `μ_n` and precision `1/Σ_nn` of auxiliary point `n`, formed in a
/// permuted basis with coordinate `n` first: precision
/// `diag(0, Λ₋ₙ) + [[c_n, k̄ᴴ], [k̄, k̄k̄ᴴ/c_n]]`, mean parameter
/// `(0, λ₋ₙ) + (s, k̄ s / c_n)` with `s = σ⁻² a_nᴴ y`.
pub fn aux_marginal(a: &CMat, d: &RVec, sigma2: f64, y: &CVec, lambda: &CVec, prec: &RVec, n: usize) -> (C64, f64) {
    let big_n = a.ncols();
    let order: Vec<usize> = std::iter::once(n).chain((0..big_n).filter(|&i| i != n)).collect();
    let k = a.adjoint() * a / C64::new(sigma2, 0.0);
    let c_n = k[(n, n)].re + 1.0 / d[n];
    let s = a.column(n).dotc(y) / sigma2;
    let kbar = CVec::from_iterator(big_n - 1, order[1..].iter().map(|&i| k[(i, n)]));
    let mut p = CMat::zeros(big_n, big_n);
    let mut t = CVec::zeros(big_n);
    p[(0, 0)] = C64::new(c_n, 0.0);
    t[0] = s;
    for i in 1..big_n {
        p[(i, 0)] = kbar[i - 1];
        p[(0, i)] = kbar[i - 1].conj();
        t[i] = kbar[i - 1] * s / c_n + lambda[order[i]];
        for j in 1..big_n {
            p[(i, j)] = kbar[i - 1] * kbar[j - 1].conj() / c_n;
        }
        p[(i, i)] += prec[order[i]];
    }
    let cov = p.try_inverse().expect("auxiliary precision is invertible");
    let mean = &cov * t;
    (mean[0], 1.0 / cov[(0, 0)].re)
}
