//! Beam-domain measurement model for a UPA base station with ZC pilots.
//!
//! The received pilot block is `Y = V H P + Z` (`M_r × M_p`), where `V`
//! holds sampled UPA steering vectors, `H = [H̃_1 … H̃_Q]` stacks the beam
//! channels of every root (users sharing root `q` occupy disjoint delay
//! blocks of `H̃_q`) and `P` stacks `(X̃_q U_F)ᵀ`. Vectorized, `y = Ã h̃` with
//! `Ã = Pᵀ ⊗ V`; dropping zero-variance coefficients of `h̃` gives `A`.
//!
//! Conventions: vectors are column-major (`vec(Y)[m + M_r l] = Y[m, l]`),
//! antenna `m = m_z M_x + m_x`, beam `i = i_z N_x + i_x`, all indices
//! zero-based. DFT sign: forward entries are `exp(−j2π kl/N)`.
//!
//! The centered cosine grid `u_i = (2i − N_z)/N_z` makes
//! `[V_z]_{m,i} = (−1)^m exp(−j2π m i/N_z)`: first rows of a DFT matrix with
//! an alternating row sign. The fast path applies that sign explicitly.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::operator::{check_cap, LinearOperator, DENSE_ENTRY_CAP};
use crate::{CMat, CVec, Error, RVec, Result, C64};

/// Uniform planar array with half-wavelength spacing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub m_z: usize,
    pub m_x: usize,
    pub f_z: usize,
    pub f_x: usize,
}

impl ArrayConfig {
    pub fn n_z(&self) -> usize {
        self.f_z * self.m_z
    }
    pub fn n_x(&self) -> usize {
        self.f_x * self.m_x
    }
    /// Antenna count `M_z M_x`.
    pub fn m_r(&self) -> usize {
        self.m_z * self.m_x
    }
    /// Beam count `N_z N_x`.
    pub fn n_r(&self) -> usize {
        self.n_z() * self.n_x()
    }
}

/// OFDM pilot grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub n_c: usize,
    pub delta_f_hz: f64,
    pub m_p: usize,
    pub m_g: usize,
    pub f_p: usize,
}

impl OfdmConfig {
    /// Sampled delays `N_p = F_p M_p`.
    pub fn n_p(&self) -> usize {
        self.f_p * self.m_p
    }

    /// Delay taps covering the cyclic prefix, `⌈N_p M_g / N_c⌉`.
    pub fn n_f(&self) -> usize {
        (self.n_p() * self.m_g).div_ceil(self.n_c)
    }

    /// Sampled delay `τ_r = r / (N_p Δf)` for zero-based `r`.
    pub fn tau(&self, r: usize) -> f64 {
        r as f64 / (self.n_p() as f64 * self.delta_f_hz)
    }
}

/// Largest prime strictly below `n`.
pub fn largest_prime_below(n: usize) -> Option<usize> {
    if n <= 2 {
        return None;
    }
    let mut sieve = vec![true; n];
    sieve[0] = false;
    sieve[1] = false;
    let mut i = 2;
    while i * i < n {
        if sieve[i] {
            (i * i..n).step_by(i).for_each(|j| sieve[j] = false);
        }
        i += 1;
    }
    (2..n).rev().find(|&k| sieve[k])
}

/// Assignment of users to ZC roots and cyclic shifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotPlan {
    /// Users.
    pub k: usize,
    /// Users per root.
    pub p: usize,
    /// Roots, `⌈K/P⌉`.
    pub q: usize,
    /// ZC length parameter: largest prime below `M_p`.
    pub n_l: usize,
}

impl PilotPlan {
    pub fn new(k: usize, p: usize, ofdm: &OfdmConfig) -> Result<Self> {
        if k == 0 || p == 0 {
            return Err(Error::Config("K and P must be at least 1".into()));
        }
        let n_l = largest_prime_below(ofdm.m_p)
            .ok_or_else(|| Error::Config(format!("M_p = {} has no prime below it", ofdm.m_p)))?;
        let p_max = ofdm.n_p() / ofdm.n_f();
        if p > p_max {
            return Err(Error::Config(format!(
                "P = {p} exceeds ⌊N_p/N_f⌋ = {p_max}; users sharing a root would alias"
            )));
        }
        let q = k.div_ceil(p);
        if q > n_l - 1 {
            return Err(Error::Config(format!("{q} roots needed but only N_l − 1 = {} available", n_l - 1)));
        }
        Ok(Self { k, p, q, n_l })
    }

    /// One-based user `k` → one-based `(root q, shift p)`.
    pub fn user(&self, k: usize) -> Result<(usize, usize)> {
        if k == 0 || k > self.k {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: k,
                max: self.k,
            });
        }
        Ok(((k - 1) / self.p + 1, (k - 1) % self.p + 1))
    }
}

/// Complete scenario description, as read from a `key = value` file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub array: ArrayConfig,
    pub ofdm: OfdmConfig,
    pub k: usize,
    pub p: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// 8×16 UPA, 2048 subcarriers at 30 kHz, 120 pilot subcarriers, CP 144,
    /// fine factors 2, 24 users with 12 per root.
    fn default() -> Self {
        Self {
            array: ArrayConfig {
                m_z: 8,
                m_x: 16,
                f_z: 2,
                f_x: 2,
            },
            ofdm: OfdmConfig {
                n_c: 2048,
                delta_f_hz: 30e3,
                m_p: 120,
                m_g: 144,
                f_p: 2,
            },
            k: 24,
            p: 12,
            seed: 0,
        }
    }
}

const CONFIG_KEYS: [&str; 12] = [
    "M_z", "M_x", "F_z", "F_x", "N_c", "delta_f_hz", "M_p", "M_g", "F_p", "K", "P", "seed",
];

impl ScenarioConfig {
    /// 4×4 UPA, 24 pilot subcarriers, fine factors 2, four users on one root.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.array = ArrayConfig {
            m_z: 4,
            m_x: 4,
            f_z: 2,
            f_x: 2,
        };
        c.ofdm.m_p = 24;
        c.k = 4;
        c.p = 4;
        c
    }

    /// Parse `key = value` lines. Blank lines and `#` comments are ignored;
    /// unknown or repeated keys are errors; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key '{key}'", lineno + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            let bad = || Error::Config(format!("line {}: invalid value '{value}' for {key}", lineno + 1));
            match key {
                "delta_f_hz" => cfg.ofdm.delta_f_hz = value.parse::<f64>().map_err(|_| bad())?,
                "seed" => cfg.seed = value.parse::<u64>().map_err(|_| bad())?,
                _ => {
                    let v = value.parse::<usize>().map_err(|_| bad())?;
                    match key {
                        "M_z" => cfg.array.m_z = v,
                        "M_x" => cfg.array.m_x = v,
                        "F_z" => cfg.array.f_z = v,
                        "F_x" => cfg.array.f_x = v,
                        "N_c" => cfg.ofdm.n_c = v,
                        "M_p" => cfg.ofdm.m_p = v,
                        "M_g" => cfg.ofdm.m_g = v,
                        "F_p" => cfg.ofdm.f_p = v,
                        "K" => cfg.k = v,
                        "P" => cfg.p = v,
                        _ => unreachable!(),
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let a = &self.array;
        let o = &self.ofdm;
        format!(
            "M_z = {}\nM_x = {}\nF_z = {}\nF_x = {}\nN_c = {}\ndelta_f_hz = {}\nM_p = {}\nM_g = {}\nF_p = {}\nK = {}\nP = {}\nseed = {}\n",
            a.m_z, a.m_x, a.f_z, a.f_x, o.n_c, o.delta_f_hz, o.m_p, o.m_g, o.f_p, self.k, self.p, self.seed
        )
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.array;
        let o = &self.ofdm;
        for (name, v) in [
            ("M_z", a.m_z),
            ("M_x", a.m_x),
            ("F_z", a.f_z),
            ("F_x", a.f_x),
            ("N_c", o.n_c),
            ("M_p", o.m_p),
            ("M_g", o.m_g),
            ("F_p", o.f_p),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(o.delta_f_hz > 0.0) {
            return Err(Error::Config("delta_f_hz must be positive".into()));
        }
        if o.n_f() > o.n_p() {
            return Err(Error::Config(format!("N_f = {} exceeds N_p = {}", o.n_f(), o.n_p())));
        }
        self.plan().map(|_| ())
    }

    pub fn plan(&self) -> Result<PilotPlan> {
        PilotPlan::new(self.k, self.p, &self.ofdm)
    }

    /// Length `Q N_p N_r` of the stacked beam vector.
    pub fn full_len(&self) -> Result<usize> {
        Ok(self.plan()?.q * self.ofdm.n_p() * self.array.n_r())
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// `exp(−j2π num/den)` with the phase reduced in integers first.
fn twiddle(num: usize, den: usize) -> C64 {
    let r = num % den;
    C64::from_polar(1.0, -2.0 * PI * r as f64 / den as f64)
}

/// Alternating sign `(−1)^m`.
fn alt(m: usize) -> f64 {
    if m % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Sampled directional cosine `(2i − N)/N` for zero-based `i`.
pub fn sampled_cosine(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 - n as f64) / n as f64
}

/// Half-wavelength steering column `[exp(−jπ m u)]_{m < len}`.
pub fn steering_vector(len: usize, u: f64) -> CVec {
    CVec::from_iterator(len, (0..len).map(|m| C64::from_polar(1.0, -PI * m as f64 * u)))
}

/// Frequency steering `u(τ) = [exp(−j2π l Δf τ)]_{l < M_p}`.
pub fn frequency_steering(ofdm: &OfdmConfig, tau: f64) -> CVec {
    CVec::from_iterator(ofdm.m_p, (0..ofdm.m_p).map(|l| C64::from_polar(1.0, -2.0 * PI * l as f64 * ofdm.delta_f_hz * tau)))
}

/// Dense steering matrices.
#[derive(Clone, Debug)]
pub struct Steering {
    pub v_z: CMat,
    pub v_x: CMat,
    /// `V_z ⊗ V_x`, `M_r × N_r`.
    pub v: CMat,
    /// `M_p × N_f`.
    pub u: CMat,
}

pub fn build_steering(array: &ArrayConfig, ofdm: &OfdmConfig) -> Steering {
    let grid = |m: usize, n: usize| {
        let mut out = CMat::zeros(m, n);
        for i in 0..n {
            out.set_column(i, &steering_vector(m, sampled_cosine(i, n)));
        }
        out
    };
    let v_z = grid(array.m_z, array.n_z());
    let v_x = grid(array.m_x, array.n_x());
    let v = v_z.kronecker(&v_x);
    let n_p = ofdm.n_p();
    let u = CMat::from_fn(ofdm.m_p, ofdm.n_f(), |l, r| twiddle(l * r, n_p));
    Steering { v_z, v_x, v, u }
}

/// ZC root sequence `[x̃_q]_l = exp(−jπ (q−1) l (l−1) / N_l)`, `l = 1..M_p`,
/// for one-based root `q`.
pub fn zc_root(q: usize, m_p: usize, n_l: usize) -> CVec {
    CVec::from_iterator(
        m_p,
        (1..=m_p).map(|l| {
            // exp(−jπ x / N_l) = exp(−j2π x / (2 N_l))
            let x = ((q - 1) % (2 * n_l)) * ((l * (l - 1)) % (2 * n_l));
            twiddle(x, 2 * n_l)
        }),
    )
}

/// Pilot of one-based user `k`: `x̃_q ⊙ u(τ_{(p−1)N_f+1})`.
pub fn zc_pilot(plan: &PilotPlan, ofdm: &OfdmConfig, k: usize) -> Result<CVec> {
    let (q, p) = plan.user(k)?;
    let shift = (p - 1) * ofdm.n_f();
    let n_p = ofdm.n_p();
    let root = zc_root(q, ofdm.m_p, plan.n_l);
    Ok(CVec::from_iterator(ofdm.m_p, (0..ofdm.m_p).map(|l| root[l] * twiddle(l * shift, n_p))))
}

/// `P = [X̃_1 U_F, …, X̃_Q U_F]ᵀ`, `(Q N_p) × M_p`, with `U_F` the first `M_p`
/// rows of the `N_p`-point DFT matrix.
pub fn build_p_matrix(plan: &PilotPlan, ofdm: &OfdmConfig) -> CMat {
    let n_p = ofdm.n_p();
    let roots: Vec<CVec> = (1..=plan.q).map(|q| zc_root(q, ofdm.m_p, plan.n_l)).collect();
    CMat::from_fn(plan.q * n_p, ofdm.m_p, |row, l| {
        let (q, r) = (row / n_p, row % n_p);
        roots[q][l] * twiddle(l * r, n_p)
    })
}

/// Positions of the stacked beam vector kept in the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionMap {
    indices: Vec<usize>,
    full_len: usize,
}

impl ExtractionMap {
    /// Relative threshold below which a variance counts as zero.
    pub const ZERO_VARIANCE_REL: f64 = 1e-12;

    pub fn new(indices: Vec<usize>, full_len: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("extraction map selects no coefficients".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("extraction indices must be strictly increasing".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= full_len {
                return Err(Error::IndexOutOfRange {
                    what: "extraction",
                    index: last + 1,
                    max: full_len,
                });
            }
        }
        Ok(Self { indices, full_len })
    }

    pub fn all(full_len: usize) -> Result<Self> {
        Self::new((0..full_len).collect(), full_len)
    }

    /// Keep every index whose variance exceeds `1e-12 · max`.
    pub fn from_variances(variances: &RVec) -> Result<Self> {
        let max = variances.iter().copied().fold(0.0, f64::max);
        let thr = Self::ZERO_VARIANCE_REL * max;
        let idx = variances.iter().enumerate().filter(|(_, v)| **v > thr && max > 0.0).map(|(i, _)| i).collect();
        Self::new(idx, variances.len())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn full_len(&self) -> usize {
        self.full_len
    }

    pub fn gather(&self, full: &CVec) -> CVec {
        CVec::from_iterator(self.len(), self.indices.iter().map(|&i| full[i]))
    }

    pub fn scatter(&self, h: &CVec) -> CVec {
        let mut full = CVec::zeros(self.full_len);
        for (v, &i) in h.iter().zip(&self.indices) {
            full[i] = *v;
        }
        full
    }
}

/// `A`: columns of `Pᵀ ⊗ V` selected by `extraction`, formed densely.
pub fn assemble_dense_a(
    array: &ArrayConfig,
    ofdm: &OfdmConfig,
    plan: &PilotPlan,
    extraction: &ExtractionMap,
) -> Result<CMat> {
    let m_r = array.m_r();
    let n_r = array.n_r();
    let m = m_r * ofdm.m_p;
    if extraction.full_len() != plan.q * ofdm.n_p() * n_r {
        return Err(Error::dim("extraction map length", plan.q * ofdm.n_p() * n_r, extraction.full_len()));
    }
    check_cap(m * extraction.len(), DENSE_ENTRY_CAP)?;
    let v = build_steering(array, ofdm).v;
    let pt = build_p_matrix(plan, ofdm).transpose();
    let mut a = CMat::zeros(m, extraction.len());
    for (col, &idx) in extraction.indices().iter().enumerate() {
        let (i, j) = (idx % n_r, idx / n_r);
        for l in 0..ofdm.m_p {
            let p = pt[(l, j)];
            for mm in 0..m_r {
                a[(l * m_r + mm, col)] = p * v[(mm, i)];
            }
        }
    }
    Ok(a)
}

/// Position of beam `(i, delay f)` of one-based user `k` in the stacked vector.
pub fn stacked_index(config: &ScenarioConfig, plan: &PilotPlan, k: usize, beam: usize, delay: usize) -> Result<usize> {
    let (q, p) = plan.user(k)?;
    let n_r = config.array.n_r();
    let col = (q - 1) * config.ofdm.n_p() + (p - 1) * config.ofdm.n_f() + delay;
    Ok(beam + n_r * col)
}

/// Scenario geometry plus FFT plans: the implicit `A` of one extraction.
#[derive(Clone)]
pub struct BscmScenario {
    config: ScenarioConfig,
    plan: PilotPlan,
    extraction: ExtractionMap,
    roots: Vec<CVec>,
    /// `(root, delay column)` pairs holding at least one extracted index.
    active: Vec<bool>,
    fft_p: Arc<dyn Fft<f64>>,
    ifft_p: Arc<dyn Fft<f64>>,
    fft_z: Arc<dyn Fft<f64>>,
    ifft_z: Arc<dyn Fft<f64>>,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for BscmScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BscmScenario")
            .field("config", &self.config)
            .field("plan", &self.plan)
            .field("n", &self.extraction.len())
            .finish()
    }
}

impl BscmScenario {
    pub fn new(config: &ScenarioConfig, extraction: ExtractionMap) -> Result<Self> {
        config.validate()?;
        let plan = config.plan()?;
        let full = config.full_len()?;
        if extraction.full_len() != full {
            return Err(Error::dim("extraction map length", full, extraction.full_len()));
        }
        let o = &config.ofdm;
        let n_r = config.array.n_r();
        let mut active = vec![false; plan.q * o.n_p()];
        for &i in extraction.indices() {
            active[i / n_r] = true;
        }
        let mut planner = FftPlanner::new();
        let (n_p, n_z, n_x) = (o.n_p(), config.array.n_z(), config.array.n_x());
        Ok(Self {
            roots: (1..=plan.q).map(|q| zc_root(q, o.m_p, plan.n_l)).collect(),
            config: *config,
            plan,
            extraction,
            active,
            fft_p: planner.plan_fft_forward(n_p),
            ifft_p: planner.plan_fft_inverse(n_p),
            fft_z: planner.plan_fft_forward(n_z),
            ifft_z: planner.plan_fft_inverse(n_z),
            fft_x: planner.plan_fft_forward(n_x),
            ifft_x: planner.plan_fft_inverse(n_x),
        })
    }

    /// Scenario keeping every coefficient.
    pub fn full(config: &ScenarioConfig) -> Result<Self> {
        Self::new(config, ExtractionMap::all(config.full_len()?)?)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn plan(&self) -> &PilotPlan {
        &self.plan
    }

    pub fn extraction(&self) -> &ExtractionMap {
        &self.extraction
    }

    /// `M = M_r M_p`.
    pub fn m(&self) -> usize {
        self.config.array.m_r() * self.config.ofdm.m_p
    }

    pub fn n(&self) -> usize {
        self.extraction.len()
    }

    pub fn dense_a(&self) -> Result<CMat> {
        assemble_dense_a(&self.config.array, &self.config.ofdm, &self.plan, &self.extraction)
    }

    /// `diag(AᴴA)`: every column of `Pᵀ ⊗ V` has unit-modulus entries, so
    /// each energy is `M_r M_p`.
    pub fn gram_diag(&self) -> RVec {
        RVec::from_element(self.n(), self.m() as f64)
    }

    /// `V x` for one beam-domain column (`N_r` → `M_r`).
    pub fn spatial_forward(&self, x: &[C64]) -> Vec<C64> {
        let a = &self.config.array;
        let (n_z, n_x, m_z, m_x) = (a.n_z(), a.n_x(), a.m_z, a.m_x);
        let mut grid = x.to_vec();
        let mut scratch = vec![C64::default(); self.fft_x.get_inplace_scratch_len().max(self.fft_z.get_inplace_scratch_len())];
        self.fft_x.process_with_scratch(&mut grid, &mut scratch);
        let mut col = vec![C64::default(); n_z];
        let mut out = vec![C64::default(); m_z * m_x];
        for mx in 0..m_x {
            for iz in 0..n_z {
                col[iz] = grid[iz * n_x + mx];
            }
            self.fft_z.process_with_scratch(&mut col, &mut scratch);
            for mz in 0..m_z {
                out[mz * m_x + mx] = col[mz] * (alt(mz) * alt(mx));
            }
        }
        out
    }

    /// `Vᴴ c` for one antenna-domain column (`M_r` → `N_r`).
    pub fn spatial_adjoint(&self, c: &[C64]) -> Vec<C64> {
        let a = &self.config.array;
        let (n_z, n_x, m_z, m_x) = (a.n_z(), a.n_x(), a.m_z, a.m_x);
        let mut grid = vec![C64::default(); n_z * n_x];
        for mz in 0..m_z {
            for mx in 0..m_x {
                grid[mz * n_x + mx] = c[mz * m_x + mx] * (alt(mz) * alt(mx));
            }
        }
        let mut scratch = vec![C64::default(); self.ifft_x.get_inplace_scratch_len().max(self.ifft_z.get_inplace_scratch_len())];
        self.ifft_x.process_with_scratch(&mut grid[..m_z * n_x], &mut scratch);
        let mut col = vec![C64::default(); n_z];
        for ix in 0..n_x {
            for iz in 0..n_z {
                col[iz] = grid[iz * n_x + ix];
            }
            self.ifft_z.process_with_scratch(&mut col, &mut scratch);
            for iz in 0..n_z {
                grid[iz * n_x + ix] = col[iz];
            }
        }
        grid
    }

    /// `y = A s`, computed as `vec(Σ_q V H̃_q U_Fᵀ X̃_q)`.
    pub fn apply_fast(&self, s: &CVec) -> Result<CVec> {
        if s.len() != self.n() {
            return Err(Error::dim("A·s input", self.n(), s.len()));
        }
        let full = self.extraction.scatter(s);
        Ok(self.apply_full(full.as_slice()))
    }

    /// `Ã h̃` for a full stacked vector.
    pub fn apply_full(&self, full: &[C64]) -> CVec {
        let (m_r, n_r) = (self.config.array.m_r(), self.config.array.n_r());
        let (m_p, n_p) = (self.config.ofdm.m_p, self.config.ofdm.n_p());
        let mut y = CVec::zeros(m_r * m_p);
        let mut scratch = vec![C64::default(); self.fft_p.get_inplace_scratch_len()];
        let mut row = vec![C64::default(); n_p];
        for q in 0..self.plan.q {
            let cols: Vec<usize> = (0..n_p).filter(|&r| self.active[q * n_p + r]).collect();
            if cols.is_empty() && self.extraction.len() != self.extraction.full_len() {
                continue;
            }
            // W = V H̃_q, M_r × N_p, column-major
            let mut w = vec![C64::default(); m_r * n_p];
            for &r in &cols {
                let g = q * n_p + r;
                let vx = self.spatial_forward(&full[g * n_r..(g + 1) * n_r]);
                w[r * m_r..(r + 1) * m_r].copy_from_slice(&vx);
            }
            let root = &self.roots[q];
            for m in 0..m_r {
                for r in 0..n_p {
                    row[r] = w[r * m_r + m];
                }
                self.fft_p.process_with_scratch(&mut row, &mut scratch);
                for l in 0..m_p {
                    y[m + m_r * l] += row[l] * root[l];
                }
            }
        }
        y
    }

    /// `Aᴴ b`, computed as the extracted entries of `vec(Vᴴ B Pᴴ)`.
    pub fn apply_adjoint_fast(&self, b: &CVec) -> Result<CVec> {
        if b.len() != self.m() {
            return Err(Error::dim("Aᴴ·b input", self.m(), b.len()));
        }
        let full = self.apply_adjoint_full(b);
        Ok(self.extraction.gather(&full))
    }

    /// `Ãᴴ b`; entries of inactive delay columns are left at zero.
    pub fn apply_adjoint_full(&self, b: &CVec) -> CVec {
        let (m_r, n_r) = (self.config.array.m_r(), self.config.array.n_r());
        let (m_p, n_p) = (self.config.ofdm.m_p, self.config.ofdm.n_p());
        let mut out = CVec::zeros(self.extraction.full_len());
        let mut scratch = vec![C64::default(); self.ifft_p.get_inplace_scratch_len()];
        let mut row = vec![C64::default(); n_p];
        for q in 0..self.plan.q {
            let cols: Vec<usize> = (0..n_p).filter(|&r| self.active[q * n_p + r]).collect();
            if cols.is_empty() {
                continue;
            }
            let root = &self.roots[q];
            // C = B X̃_q* I F*, M_r × N_p, column-major
            let mut c = vec![C64::default(); m_r * n_p];
            for m in 0..m_r {
                row.iter_mut().for_each(|z| *z = C64::default());
                for l in 0..m_p {
                    row[l] = b[m + m_r * l] * root[l].conj();
                }
                self.ifft_p.process_with_scratch(&mut row, &mut scratch);
                for r in 0..n_p {
                    c[r * m_r + m] = row[r];
                }
            }
            for &r in &cols {
                let g = q * n_p + r;
                let vh = self.spatial_adjoint(&c[r * m_r..(r + 1) * m_r]);
                out.as_mut_slice()[g * n_r..(g + 1) * n_r].copy_from_slice(&vh);
            }
        }
        out
    }

    /// `V H Uᵀ` for one user's `N_r × N_f` beam matrix.
    pub fn space_frequency(&self, h: &CMat) -> Result<CMat> {
        let (m_r, n_r) = (self.config.array.m_r(), self.config.array.n_r());
        let (m_p, n_p, n_f) = (self.config.ofdm.m_p, self.config.ofdm.n_p(), self.config.ofdm.n_f());
        if h.shape() != (n_r, n_f) {
            return Err(Error::dim("beam matrix rows", n_r, h.nrows()));
        }
        let mut vh = CMat::zeros(m_r, n_f);
        for f in 0..n_f {
            let col: Vec<C64> = h.column(f).iter().copied().collect();
            if col.iter().all(|z| *z == C64::default()) {
                continue;
            }
            vh.set_column(f, &CVec::from_vec(self.spatial_forward(&col)));
        }
        let mut g = CMat::zeros(m_r, m_p);
        let mut scratch = vec![C64::default(); self.fft_p.get_inplace_scratch_len()];
        let mut row = vec![C64::default(); n_p];
        for m in 0..m_r {
            row.iter_mut().for_each(|z| *z = C64::default());
            for f in 0..n_f {
                row[f] = vh[(m, f)];
            }
            self.fft_p.process_with_scratch(&mut row, &mut scratch);
            for l in 0..m_p {
                g[(m, l)] = row[l];
            }
        }
        Ok(g)
    }

    /// Beam matrix of one-based user `k`, cut out of a full stacked vector.
    pub fn user_beams(&self, full: &CVec, k: usize) -> Result<CMat> {
        let (n_r, n_f) = (self.config.array.n_r(), self.config.ofdm.n_f());
        let base = stacked_index(&self.config, &self.plan, k, 0, 0)?;
        Ok(CMat::from_fn(n_r, n_f, |i, f| full[base + i + n_r * f]))
    }
}

impl LinearOperator for BscmScenario {
    fn nrows(&self) -> usize {
        self.m()
    }

    fn ncols(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &CVec) -> CVec {
        self.apply_full(self.extraction.scatter(x).as_slice())
    }

    fn apply_adjoint(&self, y: &CVec) -> CVec {
        self.extraction.gather(&self.apply_adjoint_full(y))
    }

    fn column_energies(&self) -> RVec {
        self.gram_diag()
    }
}
