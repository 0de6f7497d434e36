//! Oracle suite behind `igachan validate`.
//!
//! Every check runs at a fixed seed, compares one computation against an
//! independent route to the same quantity and reports the observed error
//! next to its tolerance.

use std::fmt;
use std::time::Instant;

use rand::Rng;

use crate::bscm::{build_steering, zc_pilot, ArrayConfig, BscmScenario, ExtractionMap, OfdmConfig, ScenarioConfig};
use crate::exact::{mmse_mean, modified_mmse_estimate, MeasurementModel};
use crate::geometry::{expectation_to_natural, kl_divergence, natural_to_expectation, GaussianNatural};
use crate::harness::true_g;
use crate::ic::{ic_iga_beliefs_with, ic_siga_step, mproj_belief_oracle, precompute_ic, run_estimator, EKernel, GramMode, IcKind, IcState};
use crate::iga::{build_rank1_split, run_iga_observed};
use crate::linalg::rel_err;
use crate::report::IterConfig;
use crate::rng::{complex_gaussian, complex_gaussian_vec, substream, Purpose};
use crate::scenario::{gen_power_matrices_with, sample_channels, synthesize_rx, ClusterParams};
use crate::{CMat, CVec, Error, RVec, Result, C64};

/// A linear-Gaussian test problem with its true coefficients.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: MeasurementModel,
    pub a: CMat,
    pub y: CVec,
    pub h: CVec,
}

fn orthonormal_columns<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let g = CMat::from_fn(rows, cols, |_, _| complex_gaussian(rng, 1.0));
    g.qr().q()
}

/// `A = U diag(s) Wᴴ` with singular values log-spaced from 1 down to
/// `1/cond`, prior variances in `[0.5, 2]` and noise variance `sigma2`.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize, cond: f64, sigma2: f64) -> Result<Instance> {
    let r = m.min(n);
    let u = orthonormal_columns(rng, m, r);
    let w = orthonormal_columns(rng, n, r);
    let s = RVec::from_fn(r, |i, _| if r == 1 { 1.0 } else { cond.powf(-(i as f64) / (r - 1) as f64) });
    let a = &u * CMat::from_diagonal(&s.map(C64::from)) * w.adjoint();
    finish_instance(rng, a, sigma2)
}

/// Gaussian `A` with entries of variance `1/m`.
pub fn gaussian_instance<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize, sigma2: f64) -> Result<Instance> {
    let a = CMat::from_fn(m, n, |_, _| complex_gaussian(rng, 1.0 / m as f64));
    finish_instance(rng, a, sigma2)
}

fn finish_instance<R: Rng + ?Sized>(rng: &mut R, a: CMat, sigma2: f64) -> Result<Instance> {
    let (m, n) = a.shape();
    let d = RVec::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    let h = CVec::from_fn(n, |i, _| complex_gaussian(rng, d[i]));
    let y = &a * &h + complex_gaussian_vec(rng, m, sigma2);
    let model = MeasurementModel::new(a.clone(), d, sigma2)?;
    Ok(Instance { model, a, y, h })
}

/// Random IC state with `λ ~ CN(0, 1)` and `Λ ∈ [0.2, 5]`.
pub fn random_ic_state<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<IcState> {
    let lambda = complex_gaussian_vec(rng, n, 1.0);
    let precision = RVec::from_fn(n, |_, _| rng.random_range(0.2..5.0));
    IcState::from_natural(lambda, precision, 0)
}

/// Largest `|[Theorem-2 kernel] − [block-inversion oracle]|` over the
/// coordinates of one state, for `μ_n` and `r_n` (each relative to scale).
pub fn belief_oracle_error(inst: &Instance, state: &IcState, kernel: EKernel) -> Result<(f64, f64)> {
    let pre = precompute_ic(&inst.model, &inst.y, GramMode::Dense)?;
    let fast = ic_iga_beliefs_with(&pre, state, kernel)?;
    let (mut em, mut er) = (0.0f64, 0.0f64);
    for n in 0..inst.model.n() {
        let o = mproj_belief_oracle(&inst.model, &inst.y, state, n)?;
        em = em.max((fast.mu[n] - o.mu_n).norm() / o.mu_n.norm().max(1.0));
        er = er.max((fast.r[n] - o.r_n).abs() / o.r_n.abs().max(1.0));
    }
    Ok((em, er))
}

/// Tiny BSCM configuration used by the operator checks.
pub fn tiny_config() -> ScenarioConfig {
    ScenarioConfig {
        array: ArrayConfig {
            m_z: 2,
            m_x: 2,
            f_z: 2,
            f_x: 2,
        },
        ofdm: OfdmConfig {
            m_p: 8,
            ..ScenarioConfig::default().ofdm
        },
        k: 4,
        p: 2,
        seed: 0,
    }
}

/// `Y = Σ_k G_k diag(x_k)` from dense steering and pilots, vectorized
/// column-major.
pub fn literal_rx(config: &ScenarioConfig, h: &[CMat]) -> Result<CVec> {
    let st = build_steering(&config.array, &config.ofdm);
    let plan = config.plan()?;
    let mut y = CMat::zeros(config.array.m_r(), config.ofdm.m_p);
    for (k, hk) in h.iter().enumerate() {
        let g = &st.v * hk * st.u.transpose();
        let x = zc_pilot(&plan, &config.ofdm, k + 1)?;
        y += g * CMat::from_diagonal(&x);
    }
    Ok(CVec::from_column_slice(y.as_slice()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            _ => Err(Error::Config(format!("unknown level '{s}' (quick|full)"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ValidateOptions {
    pub level: Level,
    pub seed: u64,
    #[doc(hidden)]
    pub kernel: EKernel,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            level: Level::Quick,
            seed: 20240531,
            kernel: EKernel::Exact,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub observed: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
    pub note: String,
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {:<34} observed {:.3e}  tol {:.1e}  {:>7.3}s  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.observed,
                c.tolerance,
                c.seconds,
                c.note
            )?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

struct Runner {
    report: ValidationReport,
}

impl Runner {
    /// `body` returns the observed error and a note; errors count as failures.
    fn check(&mut self, name: &'static str, tolerance: f64, body: impl FnOnce() -> Result<(f64, String)>) {
        let start = Instant::now();
        let (observed, note) = match body() {
            Ok(v) => v,
            Err(e) => (f64::NAN, format!("error: {e}")),
        };
        self.report.checks.push(Check {
            name,
            observed,
            tolerance,
            passed: observed <= tolerance,
            seconds: start.elapsed().as_secs_f64(),
            note,
        });
    }
}

pub fn validate_suite(opts: &ValidateOptions) -> ValidationReport {
    let full = opts.level == Level::Full;
    let seed = opts.seed;
    let rng = |i: u64| substream(seed, Purpose::Instances, i, 0);
    let mut run = Runner {
        report: ValidationReport::default(),
    };

    run.check("geometry.coordinate_round_trip", 1e-10, || {
        let mut r = rng(1);
        let n = 6;
        let b = CMat::from_fn(n, n, |_, _| complex_gaussian(&mut r, 1.0));
        let prec = b.adjoint() * &b + CMat::identity(n, n);
        let p = GaussianNatural::new(complex_gaussian_vec(&mut r, n, 1.0), -prec)?;
        let back = expectation_to_natural(&natural_to_expectation(&p)?)?;
        let e = rel_err(back.theta(), p.theta()).max((back.theta_matrix() - p.theta_matrix()).norm() / p.theta_matrix().norm());
        Ok((e, "natural → expectation → natural".into()))
    });

    run.check("geometry.kl_closed_form", 1e-14, || {
        let p1 = GaussianNatural::new(CVec::zeros(1), CMat::from_element(1, 1, C64::new(-1.0, 0.0)))?;
        let p0 = GaussianNatural::new(CVec::zeros(1), CMat::from_element(1, 1, C64::new(-0.5, 0.0)))?;
        let kl = kl_divergence(&p1, &p0)?;
        Ok(((kl - (std::f64::consts::LN_2 - 0.5)).abs(), "KL(CN(0,1) ‖ CN(0,2)) = ln 2 − 1/2".into()))
    });

    let t1 = if full { 50 } else { 10 };
    run.check("modified_mmse_equals_mmse", 1e-10, || {
        let mut worst = 0.0f64;
        for i in 0..t1 {
            let mut r = rng(100 + i);
            let (m, n) = (r.random_range(1..=64), r.random_range(1..=64));
            let sigma2 = r.random_range(0.01..1.0);
            let inst = random_instance(&mut r, m, n, 1e3, sigma2)?;
            let a = mmse_mean(&inst.model, &inst.y)?;
            let b = modified_mmse_estimate(&inst.model, &inst.y)?;
            worst = worst.max(rel_err(&b, &a));
        }
        Ok((worst, format!("{t1} instances, M, N ≤ 64")))
    });

    let kernel = opts.kernel;
    run.check("ic_iga_beliefs_vs_block_inversion", 1e-10, || {
        let mut worst = 0.0f64;
        for i in 0..20 {
            let mut r = rng(200 + i);
            let n = r.random_range(2..=32);
            let m = r.random_range(n..=2 * n);
            let sigma2 = r.random_range(0.05..1.0);
            let inst = gaussian_instance(&mut r, m, n, sigma2)?;
            let state = random_ic_state(&mut r, n)?;
            let (em, er) = belief_oracle_error(&inst, &state, kernel)?;
            worst = worst.max(em).max(er);
        }
        Ok((worst, "20 random states, N ≤ 32; max over μ_n and r_n".into()))
    });

    let eq_sizes: &[usize] = if full { &[8, 32, 128] } else { &[8, 32] };
    for (kind, name, alpha) in [
        (IcKind::IcIga, "ic_iga_reaches_mmse", 0.45),
        (IcKind::IcSiga, "ic_siga_reaches_mmse", 0.25),
    ] {
        run.check(name, 1e-6, || {
            let mut worst = 0.0f64;
            let mut worst_res = 0.0f64;
            for (i, &n) in eq_sizes.iter().enumerate() {
                let mut r = rng(300 + i as u64);
                let inst = gaussian_instance(&mut r, 2 * n, n, 0.1)?;
                let pre = precompute_ic(&inst.model, &inst.y, GramMode::Dense)?;
                let rep = run_estimator(kind, &pre, &IterConfig::new(alpha, 2000, 1e-12))?;
                worst = worst.max(rel_err(&rep.mean, &mmse_mean(&inst.model, &inst.y)?));
                worst_res = worst_res.max(rep.final_residual());
            }
            Ok((worst, format!("M = 2N, N ∈ {eq_sizes:?}, α = {alpha}; final residual {worst_res:.1e}")))
        });
    }

    run.check("ic_siga_mmse_fixed_point", 1e-10, || {
        let mut r = rng(400);
        let inst = gaussian_instance(&mut r, 24, 12, 0.2)?;
        let pre = precompute_ic(&inst.model, &inst.y, GramMode::Dense)?;
        let mmse = mmse_mean(&inst.model, &inst.y)?;
        Ok((rel_err(&ic_siga_step(&pre, &mmse, 1.0)?, &mmse), "one undamped step from the MMSE mean".into()))
    });

    let iga = (|| -> Result<(f64, f64, usize)> {
        let mut r = rng(500);
        let n = if full { 16 } else { 8 };
        let inst = gaussian_instance(&mut r, 2 * n, n, 0.1)?;
        let scheme = build_rank1_split(&inst.model, &inst.y)?;
        let mut e_cond = 0.0f64;
        let rep = run_iga_observed(&scheme, &IterConfig::new(0.05, 5000, 1e-12), |s| e_cond = e_cond.max(s.e_condition_residual()))?;
        Ok((rel_err(&rep.mean, &mmse_mean(&inst.model, &inst.y)?), e_cond, rep.iterations))
    })()
    .map_err(|e| e.to_string());
    run.check("iga_rank1_reaches_mmse", 1e-6, || {
        let (err, _, it) = iga.clone().map_err(Error::State)?;
        Ok((err, format!("α = 0.05, {it} iterations")))
    });
    run.check("iga_e_condition_every_iteration", 1e-10, || {
        let (_, e_cond, _) = iga.map_err(Error::State)?;
        Ok((e_cond, "max over iterations".into()))
    });

    run.check("ic_iga_orthogonal_one_step", 1e-10, || {
        let mut r = rng(600);
        let (m, n) = (16, 8);
        let q = orthonormal_columns(&mut r, m, n);
        let scales = RVec::from_fn(n, |_, _| r.random_range(0.5..3.0));
        let a = q * CMat::from_diagonal(&scales.map(C64::from));
        let inst = finish_instance(&mut r, a, 0.3)?;
        let pre = precompute_ic(&inst.model, &inst.y, GramMode::Dense)?;
        let rep = run_estimator(IcKind::IcIga, &pre, &IterConfig::new(1.0, 1, 0.0))?;
        Ok((rel_err(&rep.mean, &mmse_mean(&inst.model, &inst.y)?), "α = 1, one iteration".into()))
    });

    run.check("fast_operator_vs_dense", 1e-10, || {
        let c = tiny_config();
        let s = BscmScenario::full(&c)?;
        let a = s.dense_a()?;
        let mut r = rng(700);
        let x = complex_gaussian_vec(&mut r, s.n(), 1.0);
        let b = complex_gaussian_vec(&mut r, s.m(), 1.0);
        let ax = s.apply_fast(&x)?;
        let ahb = s.apply_adjoint_fast(&b)?;
        let e1 = rel_err(&ax, &(&a * &x));
        let e2 = rel_err(&ahb, &(a.adjoint() * &b));
        let lhs = ax.dotc(&b);
        let rhs = x.dotc(&ahb);
        let e3 = (lhs - rhs).norm() / lhs.norm();
        let diag = a.column_iter().map(|c| c.norm_squared()).fold(0.0f64, |m, e| m.max((e - s.m() as f64).abs()));
        Ok((e1.max(e2).max(e3).max(diag / s.m() as f64), format!("M = {}, N = {}, Q = {}", s.m(), s.n(), s.plan().q)))
    });

    run.check("synthesis_vs_literal_model", 1e-10, || {
        let c = tiny_config();
        let powers = gen_power_matrices_with(&c, seed, 0, &ClusterParams::default())?;
        let ch = sample_channels(&powers, seed, 0);
        let s = BscmScenario::new(&c, crate::scenario::extraction_for(&c, &powers)?)?;
        let y = synthesize_rx(&s, &ch, 0.0, seed, 0, 0)?;
        let hs: Vec<CMat> = ch.iter().map(|c| c.h.clone()).collect();
        Ok((rel_err(&y, &literal_rx(&c, &hs)?), "noise-free y vs Σ_k V H_k Uᵀ diag(x_k)".into()))
    });

    run.check("single_entry_round_trip", 1e-10, || {
        // one beam coefficient per user sharing a root must land back in its
        // own delay block after A then Aᴴ (scaled by the column energy)
        let c = tiny_config();
        let s = BscmScenario::full(&c)?;
        let ex: &ExtractionMap = s.extraction();
        let mut worst = 0.0f64;
        for k in 1..=c.k {
            let idx = crate::bscm::stacked_index(&c, s.plan(), k, 3, c.ofdm.n_f() - 1)?;
            let mut h = CVec::zeros(ex.full_len());
            h[idx] = C64::new(1.0, 0.0);
            let back = s.apply_adjoint_fast(&s.apply_fast(&h)?)?;
            worst = worst.max((back[idx] - C64::new(s.m() as f64, 0.0)).norm() / s.m() as f64);
        }
        Ok((worst, "diagonal gram entry recovered per user".into()))
    });

    if full {
        run.check("stat.channel_entry_variance", 1.0, || {
            let c = ScenarioConfig::desk();
            let powers = gen_power_matrices_with(&c, seed, 0, &ClusterParams::default())?;
            let om = powers[0].omega();
            let (i, j) = (0..om.len()).map(|t| (t % om.nrows(), t / om.nrows())).find(|&(i, j)| om[(i, j)] > 0.0).unwrap();
            let draws = 10_000;
            let mean = (0..draws).map(|t| sample_channels(&powers[..1], seed, t)[0].h[(i, j)].norm_sqr()).sum::<f64>() / draws as f64;
            // |g|² is exponential: standard error ω/√draws; 5% is 5 SE
            let z = (mean / om[(i, j)] - 1.0).abs() / 0.05;
            Ok((z, format!("relative error / 5% over {draws} draws")))
        });
        run.check("stat.noise_variance", 1.0, || {
            let sigma2 = 0.3;
            let mut r = rng(800);
            let n = 10_000;
            let v = complex_gaussian_vec(&mut r, n, sigma2).iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
            Ok(((v / sigma2 - 1.0).abs() / 0.05, format!("relative error / 5% over {n} draws")))
        });
        run.check("stat.space_frequency_energy", 1.0, || {
            let c = ScenarioConfig::desk();
            let s = BscmScenario::full(&c)?;
            let powers = gen_power_matrices_with(&c, seed, 0, &ClusterParams::default())?;
            let draws = 500u64;
            let e: Vec<f64> = (0..draws)
                .map(|t| Ok(true_g(&s, &sample_channels(&powers[..1], seed, t))?[0].norm_squared()))
                .collect::<Result<_>>()?;
            let target = (c.array.m_r() * c.ofdm.m_p) as f64;
            let mean = e.iter().sum::<f64>() / draws as f64;
            let sd = (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
            // the bound is 5% or 5.5 standard errors, whichever is wider
            let tol = 0.05f64.max(5.5 * sd / (draws as f64).sqrt() / target);
            Ok(((mean / target - 1.0).abs() / tol, format!("relative error / {:.1}% over {draws} draws", 100.0 * tol)))
        });
    }

    run.report
}
