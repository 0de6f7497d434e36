mod common;

use common::*;
use igachan::exact::{build_modified_form, mmse_estimate, mmse_mean, modified_mmse_estimate, MeasurementModel};
use igachan::ic::{
    ic_iga_beliefs, ic_iga_step, ic_siga_step, mproj_belief_oracle, precompute_ic, run_estimator, GramMode, IcKind, IcState,
};
use igachan::iga::{build_rank1_split, project_auxiliary, run_iga, run_iga_observed, AuxiliaryState, SplitMatrix, SplitScheme};
use igachan::operator::{LinearOperator, SensingMatrix};
use igachan::report::IterConfig;
use igachan::validate::{gaussian_instance, random_ic_state, random_instance};
use igachan::{CMat, CVec, Error, RVec, C64};
use rand::Rng;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

#[test]
fn mmse_matches_data_space_form() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let (m, n) = (r.random_range(1..40), r.random_range(1..40));
        let inst = random_instance(&mut r, m, n, 1e3, 0.3).unwrap();
        let want = mmse_data_space(&inst.a, inst.model.prior_variance(), 0.3, &inst.y);
        assert!(rel(&mmse_mean(&inst.model, &inst.y).unwrap(), &want) < 1e-10, "seed {seed}");
    }
}

#[test]
fn mmse_scalar_and_covariance() {
    // a = 2, d = 1, σ² = 1: μ = 2y/5, Σ = 1/5
    let model = MeasurementModel::new(CMat::from_element(1, 1, c(2.0)), RVec::from_element(1, 1.0), 1.0).unwrap();
    let post = mmse_estimate(&model, &CVec::from_element(1, c(5.0))).unwrap();
    assert!((post.mean[0] - c(2.0)).norm() < 1e-15);
    assert!((post.covariance[(0, 0)] - c(0.2)).norm() < 1e-15);
}

#[test]
fn modified_form_is_theorem_one_on_many_instances() {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let mut r = rng(1000 + seed);
        let (m, n) = (r.random_range(1..=64), r.random_range(1..=64));
        let s2 = r.random_range(0.01..1.0);
        let inst = random_instance(&mut r, m, n, 1e3, s2).unwrap();
        let a = mmse_mean(&inst.model, &inst.y).unwrap();
        let b = modified_mmse_estimate(&inst.model, &inst.y).unwrap();
        worst = worst.max(rel(&b, &a));
    }
    assert!(worst <= 1e-10, "{worst}");
}

#[test]
fn modified_form_pieces() {
    let mut r = rng(7);
    let inst = gaussian_instance(&mut r, 10, 6, 0.5).unwrap();
    let f = build_modified_form(&inst.model).unwrap();
    // T has a zero diagonal and Υ = (I ⊙ K + D⁻¹)⁻¹
    let k = inst.a.adjoint() * &inst.a / c(0.5);
    for i in 0..6 {
        assert_eq!(f.t[(i, i)], c(0.0));
        let want = 1.0 / (k[(i, i)].re + 1.0 / inst.model.prior_variance()[i]);
        assert!((f.upsilon[i] - want).abs() < 1e-14 * want);
        for j in (0..6).filter(|&j| j != i) {
            assert!((f.t[(i, j)] - k[(i, j)]).norm() < 1e-13);
        }
    }
    let tut = &f.t * cdiag(&f.upsilon) * f.t.adjoint();
    assert!((&f.t_upsilon_th - tut).norm() < 1e-12);
}

#[test]
fn model_rejects_bad_inputs() {
    let a = CMat::identity(2, 2);
    assert!(matches!(MeasurementModel::new(a.clone(), RVec::from_element(3, 1.0), 1.0), Err(Error::Dimension { .. })));
    assert!(MeasurementModel::new(a.clone(), RVec::from_vec(vec![1.0, 0.0]), 1.0).is_err());
    assert!(MeasurementModel::new(a, RVec::from_element(2, 1.0), 0.0).is_err());
}

#[test]
fn belief_kernel_matches_independent_marginal() {
    for seed in 0..20 {
        let mut r = rng(2000 + seed);
        let n = r.random_range(2..=32);
        let (m, s2) = (n + r.random_range(0..n), r.random_range(0.05..1.0));
        let inst = gaussian_instance(&mut r, m, n, s2).unwrap();
        let state = random_ic_state(&mut r, n).unwrap();
        let pre = precompute_ic(&inst.model, &inst.y, GramMode::Dense).unwrap();
        let b = ic_iga_beliefs(&pre, &state).unwrap();
        for i in 0..n {
            let (mu, prec) = aux_marginal(&inst.a, inst.model.prior_variance(), inst.model.sigma2(), &inst.y, &state.lambda, &state.precision, i);
            assert!((b.mu[i] - mu).norm() <= 1e-10 * mu.norm().max(1.0), "seed {seed} n {i}");
            assert!((b.r[i] - prec).abs() <= 1e-10 * prec.max(1.0), "seed {seed} n {i}");
        }
    }
}

#[test]
fn library_oracle_matches_independent_marginal_and_is_local() {
    let mut r = rng(3);
    let inst = gaussian_instance(&mut r, 9, 6, 0.4).unwrap();
    let state = random_ic_state(&mut r, 6).unwrap();
    for i in 0..6 {
        let o = mproj_belief_oracle(&inst.model, &inst.y, &state, i).unwrap();
        let (mu, prec) = aux_marginal(&inst.a, inst.model.prior_variance(), 0.4, &inst.y, &state.lambda, &state.precision, i);
        assert!((o.mu_n - mu).norm() < 1e-10);
        assert!((o.r_n - prec).abs() < 1e-10 * prec);
        for j in (0..6).filter(|&j| j != i) {
            assert!(o.xi[j].norm() <= 1e-12, "ξ[{j}] = {}", o.xi[j]);
            assert!(o.big_xi[j].abs() <= 1e-12);
        }
    }
}

#[test]
fn l_matrix_is_squared_gram_modulus() {
    let mut r = rng(12);
    let inst = gaussian_instance(&mut r, 12, 8, 1.0).unwrap();
    let pre = precompute_ic(&inst.model, &inst.y, GramMode::Dense).unwrap();
    let g = inst.a.adjoint() * &inst.a;
    let l = pre.l().unwrap();
    for i in 0..8 {
        for j in 0..8 {
            assert!((l[(i, j)] - g[(i, j)].norm_sqr()).abs() <= 1e-13 * g[(i, j)].norm_sqr().max(1.0));
            assert_eq!(l[(i, j)], l[(j, i)]);
        }
    }
}

#[test]
fn siga_step_is_damped_jacobi() {
    let mut r = rng(5);
    let inst = gaussian_instance(&mut r, 20, 10, 0.3).unwrap();
    let pre = precompute_ic(&inst.model, &inst.y, GramMode::Dense).unwrap();
    let mu = cvec(&mut r, 10);
    let alpha = 0.3;
    // Jacobi on K μ = b: μ⁺ = μ + diag(K)⁻¹ (b − K μ)
    let k = inst.a.adjoint() * &inst.a / c(0.3) + cdiag(&inst.model.prior_variance().map(|v| 1.0 / v));
    let b = inst.a.adjoint() * &inst.y / c(0.3);
    let res = &b - &k * &mu;
    let jac = CVec::from_fn(10, |i, _| mu[i] + res[i] / k[(i, i)]);
    let want = jac * c(alpha) + &mu * c(1.0 - alpha);
    assert!(rel(&ic_siga_step(&pre, &mu, alpha).unwrap(), &want) < 1e-12);
}

#[test]
fn ic_first_step_on_identity_example() {
    let model = MeasurementModel::new(CMat::identity(2, 2), RVec::from_element(2, 1.0), 1.0).unwrap();
    let y = CVec::from_vec(vec![c(2.0), c(4.0)]);
    let pre = precompute_ic(&model, &y, GramMode::Dense).unwrap();
    let b = ic_iga_beliefs(&pre, &IcState::initial(2)).unwrap();
    assert_eq!(b.e, RVec::zeros(2));
    assert_eq!(b.r, RVec::from_element(2, 2.0));
    assert!(rel(&b.mu, &CVec::from_vec(vec![c(1.0), c(2.0)])) < 1e-15);
    let mu = ic_siga_step(&pre, &CVec::zeros(2), 1.0).unwrap();
    assert!(rel(&mu, &CVec::from_vec(vec![c(1.0), c(2.0)])) < 1e-15);
}

#[derive(Debug)]
struct DenseOp(CMat);

impl LinearOperator for DenseOp {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }
    fn ncols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &CVec) -> CVec {
        &self.0 * x
    }
    fn apply_adjoint(&self, y: &CVec) -> CVec {
        self.0.adjoint() * y
    }
}

#[test]
fn dense_and_operator_modes_agree() {
    let mut r = rng(8);
    let inst = gaussian_instance(&mut r, 24, 12, 0.2).unwrap();
    let op_model = MeasurementModel::new(SensingMatrix::implicit(DenseOp(inst.a.clone())), inst.model.prior_variance().clone(), 0.2).unwrap();
    let dense = precompute_ic(&inst.model, &inst.y, GramMode::Dense).unwrap();
    let op = precompute_ic(&op_model, &inst.y, GramMode::Operator).unwrap();
    let (mut s1, mut s2) = (IcState::initial(12), IcState::initial(12));
    for _ in 0..5 {
        s1 = ic_iga_step(&dense, &s1, 0.45).unwrap();
        s2 = ic_iga_step(&op, &s2, 0.45).unwrap();
    }
    assert!(rel(&s2.mu, &s1.mu) <= 1e-12);
    assert!((&s2.precision - &s1.precision).norm() <= 1e-12 * s1.precision.norm());
}

#[test]
fn ic_estimators_reach_mmse_and_satisfy_equilibrium() {
    for (i, n) in [4usize, 16, 64].into_iter().enumerate() {
        let mut r = rng(40 + i as u64);
        let inst = gaussian_instance(&mut r, 2 * n, n, 0.1).unwrap();
        let want = mmse_mean(&inst.model, &inst.y).unwrap();
        let pre = precompute_ic(&inst.model, &inst.y, GramMode::Dense).unwrap();
        for (kind, alpha) in [(IcKind::IcIga, 0.45), (IcKind::IcSiga, 0.25)] {
            let rep = run_estimator(kind, &pre, &IterConfig::new(alpha, 2000, 1e-10)).unwrap();
            assert!(rep.converged, "{kind:?} N = {n}");
            assert!(rel(&rep.mean, &want) <= 1e-6, "{kind:?} N = {n}");
            assert!(rep.final_residual() <= 1e-8);
            assert_eq!(rep.residual_trace.len(), rep.iterations + 1);
            assert_eq!(rep.variances.is_some(), kind == IcKind::IcIga);
        }
    }
}

#[test]
fn mmse_mean_is_fixed_point_for_every_damping() {
    let mut r = rng(9);
    let inst = gaussian_instance(&mut r, 16, 8, 0.5).unwrap();
    let pre = precompute_ic(&inst.model, &inst.y, GramMode::Dense).unwrap();
    let mmse = mmse_mean(&inst.model, &inst.y).unwrap();
    for alpha in [0.1, 0.5, 1.0] {
        assert!(rel(&ic_siga_step(&pre, &mmse, alpha).unwrap(), &mmse) <= 1e-10);
    }
}

#[test]
fn zero_iterations_returns_initialization() {
    let mut r = rng(10);
    let inst = gaussian_instance(&mut r, 8, 4, 0.5).unwrap();
    let pre = precompute_ic(&inst.model, &inst.y, GramMode::Dense).unwrap();
    let rep = run_estimator(IcKind::IcIga, &pre, &IterConfig::new(0.45, 0, 1e-8)).unwrap();
    assert_eq!(rep.mean, CVec::zeros(4));
    assert!(!rep.converged);
    assert_eq!(rep.residual_trace.len(), 1);
}

#[test]
fn overdamped_jacobi_is_reported_as_divergence() {
    // strongly correlated columns make α = 1 Jacobi unstable
    let mut r = rng(11);
    let base = cvec(&mut r, 20);
    let a = CMat::from_fn(20, 6, |i, j| base[i] + cgauss(&mut r) * c(0.05 * (j as f64 + 1.0)));
    let model = MeasurementModel::new(a.clone(), RVec::from_element(6, 1.0), 1e-3).unwrap();
    let y = &a * cvec(&mut r, 6);
    let pre = precompute_ic(&model, &y, GramMode::Dense).unwrap();
    match run_estimator(IcKind::IcSiga, &pre, &IterConfig::new(1.0, 500, 1e-12)) {
        Err(Error::Divergence { trace, .. }) => assert!(trace.len() > 20),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn rank1_iga_reaches_mmse_with_e_condition() {
    let mut r = rng(50);
    let inst = gaussian_instance(&mut r, 32, 16, 0.1).unwrap();
    let scheme = build_rank1_split(&inst.model, &inst.y).unwrap();
    let mut worst = 0.0f64;
    let rep = run_iga_observed(&scheme, &IterConfig::new(0.05, 5000, 1e-12), |s| worst = worst.max(s.e_condition_residual())).unwrap();
    assert!(rep.converged);
    assert!(rel(&rep.mean, &mmse_mean(&inst.model, &inst.y).unwrap()) <= 1e-6);
    assert!(worst <= 1e-10, "{worst}");
}

#[test]
fn split_sums_to_normal_equations() {
    let mut r = rng(51);
    let inst = gaussian_instance(&mut r, 7, 4, 0.3).unwrap();
    let scheme = build_rank1_split(&inst.model, &inst.y).unwrap();
    let k = inst.a.adjoint() * &inst.a / c(0.3);
    assert!((scheme.precision_sum() - CMat::from_diagonal(&scheme.lambda_c().map(C64::from)) - k).norm() < 1e-12);
    assert!(rel(scheme.theta_sum(), &(inst.a.adjoint() * &inst.y / c(0.3))) < 1e-12);
}

#[test]
fn dense_split_projection_matches_independent_inverse() {
    let mut r = rng(52);
    let n = 5;
    let b0 = cmat(&mut r, n, n);
    let c0 = b0.adjoint() * &b0;
    let theta = cvec(&mut r, n);
    let lc = RVec::from_element(n, 1.5);
    let scheme = SplitScheme::new(vec![theta.clone()], vec![SplitMatrix::Dense(c0.clone())], lc.clone()).unwrap();
    let state = AuxiliaryState::initial(&scheme);
    let belief = project_auxiliary(&scheme, &state, 0).unwrap();
    // auxiliary point: precision C + Λ_c, mean parameter θ
    let cov = (c0 + cdiag(&lc)).try_inverse().unwrap();
    let mean = &cov * &theta;
    for i in 0..n {
        let var = cov[(i, i)].re;
        assert!((belief.xi[i] - mean[i] / var).norm() < 1e-10);
        assert!((belief.big_xi[i] - (1.0 / var - lc[i])).abs() < 1e-10);
    }
}

#[test]
fn iga_on_diagonal_problem_converges_fast() {
    let model = MeasurementModel::new(CMat::identity(3, 3), RVec::from_element(3, 1.0), 1.0).unwrap();
    let y = CVec::from_vec(vec![c(2.0), c(-4.0), c(1.0)]);
    let rep = run_iga(&build_rank1_split(&model, &y).unwrap(), &IterConfig::new(1.0, 10, 1e-12)).unwrap();
    assert!(rel(&rep.mean, &(y * c(0.5))) < 1e-12);
    assert!(rep.iterations <= 3);
}
