//! NMSE, space-frequency reconstruction and benchmark sweeps.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bscm::{BscmScenario, ScenarioConfig};
use crate::exact::{mmse_mean, modified_mmse_estimate, MeasurementModel};
use crate::ic::{precompute_ic, run_estimator, GramMode, IcKind};
use crate::iga::{build_rank1_split, run_iga};
use crate::operator::{SensingMatrix, DENSE_ENTRY_CAP};
use crate::report::{Algorithm, EstimateReport, IterConfig};
use crate::rng::RNG_FAMILY;
use crate::scenario::{draw_trial, synthesize_rx, BeamChannel, ClusterParams, TrialDraw};
use crate::{CMat, CVec, Error, Result};

pub const CSV_HEADER: &str = "snr_db,algorithm,nmse,nmse_db,mean_iterations,converged_fraction,wall_time_ms,seed";

/// `σ² = 10^(−SNR/10)`.
pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// `Ḡ_k = V Ĥ_k Uᵀ` for every user, from an extracted estimate.
pub fn reconstruct_g(scenario: &BscmScenario, h: &CVec) -> Result<Vec<CMat>> {
    if h.len() != scenario.n() {
        return Err(Error::dim("estimate length", scenario.n(), h.len()));
    }
    let full = scenario.extraction().scatter(h);
    (1..=scenario.config().k)
        .map(|k| scenario.space_frequency(&scenario.user_beams(&full, k)?))
        .collect()
}

/// True space-frequency channels `G_k = V H_k Uᵀ`.
pub fn true_g(scenario: &BscmScenario, channels: &[BeamChannel]) -> Result<Vec<CMat>> {
    channels.iter().map(|c| scenario.space_frequency(&c.h)).collect()
}

/// Mean of `‖Ḡ − G‖²_F / ‖G‖²_F` over matching pairs.
pub fn nmse(estimates: &[CMat], truths: &[CMat]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::dim("NMSE pair count", truths.len(), estimates.len()));
    }
    if truths.is_empty() {
        return Err(Error::Domain("NMSE of an empty set".into()));
    }
    let mut total = 0.0;
    for (i, (e, g)) in estimates.iter().zip(truths).enumerate() {
        if e.shape() != g.shape() {
            return Err(Error::dim("NMSE matrix rows", g.nrows(), e.nrows()));
        }
        let energy = g.norm_squared();
        if energy == 0.0 {
            return Err(Error::Domain(format!("true channel {i} has zero norm")));
        }
        total += (e - g).norm_squared() / energy;
    }
    Ok(total / truths.len() as f64)
}

/// How `A` and the IC gram are held for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OperatorChoice {
    /// Dense whenever the matrices fit under the entry cap.
    Auto,
    Dense,
    /// Implicit FFT operator; IC estimators use gram products only.
    Fast,
}

/// Measurement model for one scenario, with `A` dense or implicit.
pub fn build_model(scenario: &BscmScenario, prior: crate::RVec, sigma2: f64, choice: OperatorChoice) -> Result<MeasurementModel> {
    let dense = match choice {
        OperatorChoice::Dense => true,
        OperatorChoice::Fast => false,
        OperatorChoice::Auto => scenario.m() * scenario.n() <= DENSE_ENTRY_CAP,
    };
    let a: SensingMatrix = if dense {
        scenario.dense_a()?.into()
    } else {
        SensingMatrix::implicit(scenario.clone())
    };
    MeasurementModel::new(a, prior, sigma2)
}

/// Run one estimator on `y`.
pub fn estimate(alg: Algorithm, model: &MeasurementModel, y: &CVec, config: &IterConfig) -> Result<EstimateReport> {
    let start = Instant::now();
    let closed = |mean: CVec| EstimateReport {
        algorithm: alg,
        mean,
        variances: None,
        residual_trace: Vec::new(),
        nmse: None,
        iterations: 0,
        converged: true,
        wall_time: start.elapsed(),
        seed: None,
        config: None,
    };
    let mut report = match alg {
        Algorithm::Mmse => closed(mmse_mean(model, y)?),
        Algorithm::ModifiedMmse => closed(modified_mmse_estimate(model, y)?),
        Algorithm::Iga => run_iga(&build_rank1_split(model, y)?, config)?,
        Algorithm::IcIga | Algorithm::IcSiga => {
            let n = model.n();
            let mode = if model.a().as_dense().is_some() && n * n <= DENSE_ENTRY_CAP {
                GramMode::Dense
            } else {
                GramMode::Operator
            };
            let kind = if alg == Algorithm::IcIga { IcKind::IcIga } else { IcKind::IcSiga };
            run_estimator(kind, &precompute_ic(model, y, mode)?, config)?
        }
    };
    if !alg.is_iterative() {
        let r = model.normal_residual(&report.mean, y)?;
        report.residual_trace = vec![r];
    }
    report.wall_time = start.elapsed();
    Ok(report)
}

/// One benchmark sweep.
#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkSpec {
    pub snr_list_db: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub n_sam: usize,
    /// Damping per algorithm, parallel to `algorithms`.
    pub alphas: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub scenario: ScenarioConfig,
    pub seed: u64,
    #[serde(skip)]
    pub clusters: ClusterParams,
    pub operator: OperatorChoice,
    /// Record wall-clock times; off keeps the CSV reproducible byte for byte.
    pub timing: bool,
}

impl BenchmarkSpec {
    pub const DEFAULT_N_SAM: usize = 20;

    pub fn new(scenario: ScenarioConfig, snr_list_db: Vec<f64>, algorithms: Vec<Algorithm>) -> Self {
        let alphas = algorithms.iter().map(|a| a.default_alpha()).collect();
        Self {
            snr_list_db,
            algorithms,
            n_sam: Self::DEFAULT_N_SAM,
            alphas,
            max_iter: IterConfig::DEFAULT_MAX_ITER,
            tol: IterConfig::DEFAULT_TOL,
            seed: scenario.seed,
            scenario,
            clusters: ClusterParams::default(),
            operator: OperatorChoice::Auto,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sam == 0 {
            return Err(Error::Config("trial count must be at least 1".into()));
        }
        if self.snr_list_db.is_empty() || self.algorithms.is_empty() {
            return Err(Error::Config("need at least one SNR point and one algorithm".into()));
        }
        if let Some(s) = self.snr_list_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::Config(format!("SNR {s} dB is not finite")));
        }
        if self.alphas.len() != self.algorithms.len() {
            return Err(Error::dim("damping list", self.algorithms.len(), self.alphas.len()));
        }
        for (alg, &alpha) in self.algorithms.iter().zip(&self.alphas) {
            if alg.is_iterative() {
                IterConfig::new(alpha, self.max_iter, self.tol).validate()?;
            }
        }
        self.scenario.validate()
    }

    fn iter_config(&self, a: usize) -> IterConfig {
        IterConfig::new(self.alphas[a], self.max_iter, self.tol)
    }

    /// Run metadata for the sidecar file.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "rng": RNG_FAMILY,
            "spec": self,
            "clusters": {
                "clusters": self.clusters.clusters,
                "log_power_std": self.clusters.log_power_std,
                "max_support_fraction": self.clusters.max_support_fraction,
                "max_extent": self.clusters.max_extent,
            },
            "snr_definition": "SNR = 1/sigma^2",
        })
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub snr_db: f64,
    pub algorithm: Algorithm,
    /// Mean NMSE over users and non-diverged trials; NaN if every trial diverged.
    pub nmse: f64,
    pub nmse_db: f64,
    pub mean_iterations: f64,
    pub converged_fraction: f64,
    pub wall_time_ms: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
struct Cell {
    /// Mean per-user NMSE of this trial; `None` if the estimator diverged.
    nmse: Option<f64>,
    iterations: usize,
    converged: bool,
    millis: f64,
}

fn run_trial(spec: &BenchmarkSpec, trial: u64) -> Result<Vec<Cell>> {
    let TrialDraw {
        channels, scenario, prior, ..
    } = draw_trial(&spec.scenario, spec.seed, trial, &spec.clusters)?;
    let truth = true_g(&scenario, &channels)?;
    let mut cells = Vec::with_capacity(spec.snr_list_db.len() * spec.algorithms.len());
    for (s, &snr) in spec.snr_list_db.iter().enumerate() {
        let sigma2 = sigma2_from_snr_db(snr);
        let y = synthesize_rx(&scenario, &channels, sigma2, spec.seed, trial, s as u64)?;
        let model = build_model(&scenario, prior.clone(), sigma2, spec.operator)?;
        for (a, &alg) in spec.algorithms.iter().enumerate() {
            let cell = match estimate(alg, &model, &y, &spec.iter_config(a)) {
                Ok(rep) => Cell {
                    nmse: Some(nmse(&reconstruct_g(&scenario, &rep.mean)?, &truth)?),
                    iterations: rep.iterations,
                    converged: rep.converged,
                    millis: rep.wall_time.as_secs_f64() * 1e3,
                },
                Err(Error::Divergence { iterations, .. }) => Cell {
                    nmse: None,
                    iterations,
                    converged: false,
                    millis: 0.0,
                },
                Err(e) => return Err(e),
            };
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// Sweep every `(SNR, algorithm)` pair over `n_sam` trials. Trials run in
/// parallel; each draws its scenario, channels and noise from its own
/// substreams, and all reductions happen in trial order.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<Vec<BenchmarkRow>> {
    spec.validate()?;
    let trials: Vec<Vec<Cell>> = (0..spec.n_sam as u64)
        .into_par_iter()
        .map(|t| run_trial(spec, t))
        .collect::<Result<_>>()?;
    let n_alg = spec.algorithms.len();
    let mut rows = Vec::new();
    for (s, &snr) in spec.snr_list_db.iter().enumerate() {
        for (a, &alg) in spec.algorithms.iter().enumerate() {
            let cells: Vec<&Cell> = trials.iter().map(|t| &t[s * n_alg + a]).collect();
            let ok: Vec<f64> = cells.iter().filter_map(|c| c.nmse).collect();
            let nmse = if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            };
            let n = cells.len() as f64;
            rows.push(BenchmarkRow {
                snr_db: snr,
                algorithm: alg,
                nmse,
                nmse_db: to_db(nmse),
                mean_iterations: cells.iter().map(|c| c.iterations as f64).sum::<f64>() / n,
                converged_fraction: cells.iter().filter(|c| c.converged).count() as f64 / n,
                wall_time_ms: if spec.timing {
                    cells.iter().map(|c| c.millis).sum::<f64>() / n
                } else {
                    0.0
                },
                seed: spec.seed,
            });
        }
    }
    Ok(rows)
}

fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn rows_to_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_float(r.snr_db),
            r.algorithm,
            fmt_float(r.nmse),
            fmt_float(r.nmse_db),
            fmt_float(r.mean_iterations),
            fmt_float(r.converged_fraction),
            fmt_float(r.wall_time_ms),
            r.seed
        );
    }
    out
}

pub fn write_csv(mut w: impl Write, rows: &[BenchmarkRow]) -> Result<()> {
    w.write_all(rows_to_csv(rows).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;

    fn mat(v: &[f64]) -> CMat {
        CMat::from_iterator(2, v.len() / 2, v.iter().map(|x| C64::new(*x, -0.5 * x)))
    }

    #[test]
    fn nmse_identities() {
        let g = vec![mat(&[1.0, 2.0, 3.0, 4.0]), mat(&[0.0, 1.0, 0.0, 0.0])];
        assert_eq!(nmse(&g, &g).unwrap(), 0.0);
        let z: Vec<CMat> = g.iter().map(|m| m * C64::new(0.0, 0.0)).collect();
        assert!((nmse(&z, &g).unwrap() - 1.0).abs() < 1e-15);
        let eps = 0.01;
        let s: Vec<CMat> = g.iter().map(|m| m * C64::new(1.0 + eps, 0.0)).collect();
        assert!((nmse(&s, &g).unwrap() - eps * eps).abs() < 1e-15);
        assert!(nmse(&g, &z).is_err());
        assert!(nmse(&g[..1], &g).is_err());
    }

    #[test]
    fn csv_shape_and_format() {
        let mut spec = BenchmarkSpec::new(ScenarioConfig::desk(), vec![0.0, 10.0], vec![Algorithm::Mmse, Algorithm::IcSiga]);
        spec.n_sam = 2;
        let rows = run_benchmark(&spec).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = rows_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 8);
        assert_eq!(first[0], "0.0000000000000000e0");
        assert_eq!(first[1], "mmse");
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn spec_validation() {
        let mut spec = BenchmarkSpec::new(ScenarioConfig::desk(), vec![0.0], vec![Algorithm::IcIga]);
        spec.n_sam = 0;
        assert!(spec.validate().is_err());
        spec.n_sam = 1;
        spec.alphas = vec![1.5];
        assert!(spec.validate().is_err());
        spec.alphas = vec![];
        assert!(spec.validate().is_err());
    }
}
