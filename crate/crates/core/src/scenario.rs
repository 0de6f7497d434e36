//! Synthetic beam-domain channels.
//!
//! Each user's power matrix `Ω_k` (`N_r × N_f`) is a few clusters: boxes in
//! the (vertical beam, horizontal beam, delay) grid with lognormal powers,
//! normalized to unit total power. Channels are drawn as independent complex
//! Gaussians with those variances and pushed through the implicit operator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bscm::{stacked_index, BscmScenario, ExtractionMap, PilotPlan, ScenarioConfig};
use crate::rng::{complex_gaussian, complex_gaussian_vec, substream, Purpose};
use crate::{CMat, CVec, Error, RVec, Result, C64};

/// Beam-domain power of one user, `N_r × N_f`, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerMatrix {
    omega: DMatrix<f64>,
}

impl PowerMatrix {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = omega.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("power entry {v} is negative or not finite")));
        }
        let s = omega.sum();
        if (s - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::Domain(format!("power matrix sums to {s}, expected 1")));
        }
        Ok(Self { omega })
    }

    /// Scale a nonnegative matrix to unit sum.
    pub fn normalized(mut omega: DMatrix<f64>) -> Result<Self> {
        let s = omega.sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain("power matrix has no positive mass".into()));
        }
        omega /= s;
        // one more pass pins the sum to within a few ulps
        let s = omega.sum();
        omega /= s;
        Self::new(omega)
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn support(&self) -> usize {
        self.omega.iter().filter(|v| **v > 0.0).count()
    }
}

/// Beam channel `H_k`, `N_r × N_f`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamChannel {
    pub h: CMat,
}

/// Shape of the synthetic cluster generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterParams {
    pub clusters: usize,
    /// Standard deviation of the natural log of cluster power.
    pub log_power_std: f64,
    /// Largest fraction of the `N_r × N_f` grid a user may occupy.
    pub max_support_fraction: f64,
    /// Largest cluster extent along (vertical beam, horizontal beam, delay);
    /// zero picks `N_z/4`, `N_x/4`, `N_f/2`.
    pub max_extent: [usize; 3],
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            clusters: 3,
            log_power_std: 1.0,
            max_support_fraction: 0.2,
            max_extent: [0; 3],
        }
    }
}

/// Power matrices of every user for trial 0.
pub fn gen_power_matrices(config: &ScenarioConfig, seed: u64) -> Result<Vec<PowerMatrix>> {
    gen_power_matrices_with(config, seed, 0, &ClusterParams::default())
}

pub fn gen_power_matrices_with(
    config: &ScenarioConfig,
    seed: u64,
    trial: u64,
    params: &ClusterParams,
) -> Result<Vec<PowerMatrix>> {
    config.validate()?;
    if params.clusters == 0 {
        return Err(Error::Config("at least one cluster is required".into()));
    }
    let a = &config.array;
    let (n_z, n_x, n_f) = (a.n_z(), a.n_x(), config.ofdm.n_f());
    let cap = ((params.max_support_fraction * (a.n_r() * n_f) as f64).floor() as usize).max(1);
    let cap_of = |n: usize, div: usize, set: usize| if set == 0 { (n / div).max(1) } else { set.min(n) };
    let (cz, cx, cf) = (
        cap_of(n_z, 4, params.max_extent[0]),
        cap_of(n_x, 4, params.max_extent[1]),
        cap_of(n_f, 2, params.max_extent[2]),
    );
    (0..config.k)
        .map(|k| {
            let mut rng = substream(seed, Purpose::Powers, trial, k as u64);
            let mut omega = DMatrix::<f64>::zeros(a.n_r(), n_f);
            for c in 0..params.clusters {
                let (ez, ex, ef) = (
                    rng.random_range(1..=cz),
                    rng.random_range(1..=cx),
                    rng.random_range(1..=cf),
                );
                let (z0, x0, f0) = (
                    rng.random_range(0..=n_z - ez),
                    rng.random_range(0..=n_x - ex),
                    rng.random_range(0..=n_f - ef),
                );
                let g: f64 = StandardNormal.sample(&mut rng);
                let power = (params.log_power_std * g).exp();
                let mut next = omega.clone();
                for iz in z0..z0 + ez {
                    for ix in x0..x0 + ex {
                        for f in f0..f0 + ef {
                            next[(iz * n_x + ix, f)] += power;
                        }
                    }
                }
                let support = next.iter().filter(|v| **v > 0.0).count();
                if c == 0 || support <= cap {
                    omega = next;
                }
            }
            PowerMatrix::normalized(omega)
        })
        .collect()
}

/// `H_k(i, j) = √Ω_ij · g` with standard complex Gaussian `g`.
pub fn sample_channels(powers: &[PowerMatrix], seed: u64, trial: u64) -> Vec<BeamChannel> {
    powers
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut rng = substream(seed, Purpose::Channels, trial, k as u64);
            let om = p.omega();
            // column-major walk keeps the draw order tied to the layout
            let mut h = CMat::zeros(om.nrows(), om.ncols());
            for j in 0..om.ncols() {
                for i in 0..om.nrows() {
                    let v = om[(i, j)];
                    h[(i, j)] = if v > 0.0 { complex_gaussian(&mut rng, v) } else { C64::default() };
                }
            }
            BeamChannel { h }
        })
        .collect()
}

fn check_user_count(config: &ScenarioConfig, got: usize) -> Result<()> {
    if got != config.k {
        return Err(Error::dim("user count", config.k, got));
    }
    Ok(())
}

fn check_user_shape(config: &ScenarioConfig, rows: usize, cols: usize) -> Result<()> {
    let (n_r, n_f) = (config.array.n_r(), config.ofdm.n_f());
    if rows != n_r {
        return Err(Error::dim("beam rows", n_r, rows));
    }
    if cols != n_f {
        return Err(Error::dim("delay columns", n_f, cols));
    }
    Ok(())
}

/// Per-user matrices laid out in the stacked `Q N_p N_r` vector.
fn stack<T: Copy + Default + nalgebra::Scalar>(
    config: &ScenarioConfig,
    plan: &PilotPlan,
    users: &[&DMatrix<T>],
) -> Result<Vec<T>> {
    check_user_count(config, users.len())?;
    let mut out = vec![T::default(); config.full_len()?];
    for (k, m) in users.iter().enumerate() {
        check_user_shape(config, m.nrows(), m.ncols())?;
        for f in 0..m.ncols() {
            for i in 0..m.nrows() {
                out[stacked_index(config, plan, k + 1, i, f)?] = m[(i, f)];
            }
        }
    }
    Ok(out)
}

/// Stacked prior variances of all `Q N_p N_r` coefficients.
pub fn stack_powers(config: &ScenarioConfig, powers: &[PowerMatrix]) -> Result<RVec> {
    let plan = config.plan()?;
    let users: Vec<_> = powers.iter().map(|p| p.omega()).collect();
    Ok(RVec::from_vec(stack(config, &plan, &users)?))
}

/// Stacked beam vector `h̃`.
pub fn stack_channels(config: &ScenarioConfig, channels: &[BeamChannel]) -> Result<CVec> {
    let plan = config.plan()?;
    let users: Vec<_> = channels.iter().map(|c| &c.h).collect();
    Ok(CVec::from_vec(stack(config, &plan, &users)?))
}

/// Extraction keeping every coefficient with non-negligible power.
pub fn extraction_for(config: &ScenarioConfig, powers: &[PowerMatrix]) -> Result<ExtractionMap> {
    ExtractionMap::from_variances(&stack_powers(config, powers)?)
}

/// Prior variances `d` of the extracted coefficients.
pub fn build_prior(config: &ScenarioConfig, powers: &[PowerMatrix], extraction: &ExtractionMap) -> Result<RVec> {
    let full = stack_powers(config, powers)?;
    if full.len() != extraction.full_len() {
        return Err(Error::dim("extraction map length", full.len(), extraction.full_len()));
    }
    Ok(RVec::from_iterator(extraction.len(), extraction.indices().iter().map(|&i| full[i])))
}

/// Extracted channel vector `h`. Fails if a channel has energy outside the
/// extraction.
pub fn extract_channels(scenario: &BscmScenario, channels: &[BeamChannel]) -> Result<CVec> {
    let full = stack_channels(scenario.config(), channels)?;
    let ex = scenario.extraction();
    let mut keep = vec![false; full.len()];
    ex.indices().iter().for_each(|&i| keep[i] = true);
    if let Some(i) = (0..full.len()).find(|&i| !keep[i] && full[i] != C64::default()) {
        return Err(Error::Domain(format!("channel coefficient {i} lies outside the extraction")));
    }
    Ok(ex.gather(&full))
}

/// `y = A h + z` with circular noise of variance `sigma2` per entry. The
/// noise stream is `(seed, trial, index)`.
pub fn synthesize_rx(
    scenario: &BscmScenario,
    channels: &[BeamChannel],
    sigma2: f64,
    seed: u64,
    trial: u64,
    index: u64,
) -> Result<CVec> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain(format!("noise variance {sigma2} must be finite and nonnegative")));
    }
    let h = extract_channels(scenario, channels)?;
    let mut y = scenario.apply_fast(&h)?;
    if sigma2 > 0.0 {
        let mut rng = substream(seed, Purpose::Noise, trial, index);
        y += complex_gaussian_vec(&mut rng, y.len(), sigma2);
    }
    Ok(y)
}

/// Everything drawn for one benchmark trial except the noise.
#[derive(Clone, Debug)]
pub struct TrialDraw {
    pub powers: Vec<PowerMatrix>,
    pub channels: Vec<BeamChannel>,
    pub scenario: BscmScenario,
    pub prior: RVec,
    pub h: CVec,
}

pub fn draw_trial(config: &ScenarioConfig, seed: u64, trial: u64, params: &ClusterParams) -> Result<TrialDraw> {
    let powers = gen_power_matrices_with(config, seed, trial, params)?;
    let channels = sample_channels(&powers, seed, trial);
    let extraction = extraction_for(config, &powers)?;
    let prior = build_prior(config, &powers, &extraction)?;
    let scenario = BscmScenario::new(config, extraction)?;
    let h = extract_channels(&scenario, &channels)?;
    Ok(TrialDraw {
        powers,
        channels,
        scenario,
        prior,
        h,
    })
}

// Flat binary format, little-endian throughout:
//   magic  b"IGACHAN\0"
//   u32    version (1)
//   u32    kind (1 = real power matrices, 2 = complex channels)
//   u64    users, u64 rows, u64 cols
//   then per user, row-major f64 values (complex entries as re, im).

const MAGIC: &[u8; 8] = b"IGACHAN\0";
const VERSION: u32 = 1;
const KIND_POWER: u32 = 1;
const KIND_CHANNEL: u32 = 2;

fn write_header(w: &mut impl Write, kind: u32, users: usize, rows: usize, cols: usize) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&kind.to_le_bytes())?;
    for v in [users, rows, cols] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_header(r: &mut impl Read, kind: u32) -> Result<(usize, usize, usize)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic; not an igachan data file".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let got = read_u32(r)?;
    if got != kind {
        return Err(Error::Format(format!("file holds kind {got}, expected {kind}")));
    }
    let (users, rows, cols) = (read_u64(r)?, read_u64(r)?, read_u64(r)?);
    let total = users.checked_mul(rows).and_then(|v| v.checked_mul(cols));
    match total {
        Some(t) if t <= 1 << 32 => Ok((users as usize, rows as usize, cols as usize)),
        _ => Err(Error::Format(format!("implausible dimensions {users}×{rows}×{cols}"))),
    }
}

fn common_shape<T: nalgebra::Scalar>(mats: &[&DMatrix<T>]) -> Result<(usize, usize)> {
    let shape = mats.first().map(|m| m.shape()).unwrap_or((0, 0));
    if let Some(m) = mats.iter().find(|m| m.shape() != shape) {
        return Err(Error::dim("matrix rows", shape.0, m.nrows()));
    }
    Ok(shape)
}

pub fn write_power_matrices(path: impl AsRef<Path>, powers: &[PowerMatrix]) -> Result<()> {
    let mats: Vec<_> = powers.iter().map(|p| p.omega()).collect();
    let (rows, cols) = common_shape(&mats)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, KIND_POWER, mats.len(), rows, cols)?;
    for m in mats {
        for i in 0..rows {
            for j in 0..cols {
                w.write_all(&m[(i, j)].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_power_matrices(path: impl AsRef<Path>) -> Result<Vec<PowerMatrix>> {
    let mut r = BufReader::new(File::open(path)?);
    let (users, rows, cols) = read_header(&mut r, KIND_POWER)?;
    (0..users)
        .map(|_| {
            let mut m = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    m[(i, j)] = read_f64(&mut r)?;
                }
            }
            PowerMatrix::new(m)
        })
        .collect()
}

pub fn write_channels(path: impl AsRef<Path>, channels: &[BeamChannel]) -> Result<()> {
    let mats: Vec<_> = channels.iter().map(|c| &c.h).collect();
    let (rows, cols) = common_shape(&mats)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, KIND_CHANNEL, mats.len(), rows, cols)?;
    for m in mats {
        for i in 0..rows {
            for j in 0..cols {
                w.write_all(&m[(i, j)].re.to_le_bytes())?;
                w.write_all(&m[(i, j)].im.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_channels(path: impl AsRef<Path>) -> Result<Vec<BeamChannel>> {
    let mut r = BufReader::new(File::open(path)?);
    let (users, rows, cols) = read_header(&mut r, KIND_CHANNEL)?;
    (0..users)
        .map(|_| {
            let mut h = CMat::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    h[(i, j)] = C64::new(read_f64(&mut r)?, read_f64(&mut r)?);
                }
            }
            Ok(BeamChannel { h })
        })
        .collect()
}
