//! Online prediction of the causal feedback reliability for IV DFE filters.
//!
//! The IV DFE needs `v̄_c`, the average variance of its causal soft feedback,
//! before it equalizes the block. It is predicted as the fixed point of
//!
//! ```text
//! v̄_c[n+1] = φ_DEM(φ_REC(σ_w², h, v_p, v̄_c[n]), prior)
//! ```
//!
//! where [`phi_rec`] is the exact output variance of the IV MMSE filter and
//! `φ_DEM` is a Monte Carlo look-up table ([`DemapperLut`]) of the expected
//! demapper feedback variance for a Gaussian equalizer output of variance
//! `v_e`. Two LUT flavours index the prior information differently:
//!
//! - [`Scheme::BinaryMi`]: consistent-Gaussian LLR parameter `μ_p`, measured
//!   online by [`estimate_mu_p`] (the table is stored against the matching
//!   mutual information `I_A`, whose range is bounded).
//! - [`Scheme::SymbolWise`]: mean prior symbol variance `v_p`, which is what
//!   the IV filters already compute for the anti-causal part.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{debug, info, warn};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ChannelModel, ToeplitzChannel};
use crate::equalizer::{DfeVarianceProfile, Feedback};
use crate::linalg::solve_mmse;
use crate::mapping::{
    log_prior, moments, posterior_from_log_prior, Constellation, Modulation, SoftSymbolBlock, EP_GUARD, MAX_ORDER,
};
use crate::rng::{complex_gaussian, gaussian, stream_rng};
use crate::{Error, Result};

/// Environment variable naming the LUT cache directory.
pub const LUT_DIR_ENV: &str = "TURBO_DFE_LUT_DIR";

const LUT_FORMAT: &str = "turbo-dfe-lut";
const LUT_VERSION: u32 = 1;

/// Largest monotonicity violation (absolute, unit symbol energy) tolerated in
/// an APP table row.
pub const MONOTONE_TOLERANCE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "binary")]
    BinaryMi,
    #[serde(rename = "symbol")]
    SymbolWise,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::BinaryMi => "binary",
            Scheme::SymbolWise => "symbol",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "binary-mi" | "bit" => Ok(Scheme::BinaryMi),
            "symbol" | "symbol-wise" | "symbolwise" => Ok(Scheme::SymbolWise),
            other => Err(Error::Parse(format!("unknown prediction scheme '{other}'"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Consistent-Gaussian mutual information
// ---------------------------------------------------------------------------

const J_NODES: usize = 801;
const J_SPAN: f64 = 12.0;

/// `I(μ)`: mutual information between a bit and its LLR `L ~ N(±μ, 2μ)`.
pub fn mutual_information(mu: f64) -> f64 {
    if !(mu > 0.0) {
        return 0.0;
    }
    if mu.is_infinite() {
        return 1.0;
    }
    let sd = (2.0 * mu).sqrt();
    let h = 2.0 * J_SPAN / (J_NODES - 1) as f64;
    let mut acc = 0.0;
    for i in 0..J_NODES {
        let z = -J_SPAN + h * i as f64;
        let l = mu + sd * z;
        // log2(1 + e^{-l})
        let sp = if l > 0.0 {
            (-l).exp().ln_1p()
        } else {
            -l + l.exp().ln_1p()
        };
        let w = if i == 0 || i == J_NODES - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * sp * (-0.5 * z * z).exp();
    }
    let expect = acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt();
    (1.0 - expect / std::f64::consts::LN_2).clamp(0.0, 1.0)
}

/// Inverse of [`mutual_information`]; `I_A = 1` maps to `+∞`.
pub fn mu_from_mutual_information(ia: f64) -> f64 {
    if ia <= 0.0 {
        return 0.0;
    }
    if ia >= 1.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while mutual_information(hi) < ia {
        hi *= 2.0;
        if hi > 1e6 {
            return hi;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mutual_information(mid) < ia {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Prior quality of a block of LLRs: `L ~ N(d̄ μ_p, η_p μ_p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorQuality {
    pub mu_p: f64,
    pub eta_p: f64,
    pub i_a: f64,
}

impl PriorQuality {
    pub fn from_mu(mu_p: f64, eta_p: f64) -> Self {
        PriorQuality {
            mu_p,
            eta_p,
            i_a: mutual_information(mu_p),
        }
    }

    /// Consistent mapping `I_A ↦ μ_p` with the variance ratio `eta_p`.
    pub fn from_mutual_information(i_a: f64, eta_p: f64) -> Self {
        PriorQuality {
            mu_p: mu_from_mutual_information(i_a),
            eta_p,
            i_a,
        }
    }

    /// Draws a prior LLR for a bit with value `bit`.
    pub fn sample_llr<R: Rng + ?Sized>(&self, rng: &mut R, bit: u8) -> f64 {
        let sign = 1.0 - 2.0 * bit as f64;
        if self.mu_p.is_infinite() {
            return sign * f64::INFINITY;
        }
        if self.mu_p <= 0.0 {
            return 0.0;
        }
        gaussian(rng, sign * self.mu_p, self.eta_p * self.mu_p)
    }
}

// ---------------------------------------------------------------------------
// Analytic equalizer model and the μ_p estimator
// ---------------------------------------------------------------------------

/// Output variance of the IV MMSE filter for prior variance `v_p` and causal
/// variance `v_c`: `(h0ᴴ Σ⁻¹ h0)⁻¹ - v_p`.
pub fn phi_rec(ch: &ChannelModel, t: &ToeplitzChannel, v_p: f64, v_c: f64) -> Result<f64> {
    if !(v_p >= 0.0 && v_c >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "phi_rec needs v_p, v_c >= 0 (got {v_p}, {v_c})"
        )));
    }
    let profile = DfeVarianceProfile::new(v_c, v_p);
    let sol = solve_mmse(t, ch.sigma_w2(), &profile.assemble(&t.window))?;
    Ok(1.0 / sol.xi - v_p)
}

/// Which ML estimator of `μ_p` to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MuPFormula {
    /// `sqrt(1 + mean |L|²) - 1`.
    #[default]
    #[serde(rename = "mean")]
    Mean,
    /// `sqrt(1 + Σ |L|²) - 1`, unnormalized.
    #[serde(rename = "paper")]
    Sum,
}

impl FromStr for MuPFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(MuPFormula::Mean),
            "paper" | "sum" => Ok(MuPFormula::Sum),
            other => Err(Error::Parse(format!("unknown mu_p formula '{other}'"))),
        }
    }
}

/// Consistent-Gaussian ML estimate of `μ_p`: since `E[L²] = μ² + 2μ`,
/// `μ = sqrt(1 + E[L²]) - 1`.
pub fn estimate_mu_p(llrs: &[f64], formula: MuPFormula) -> f64 {
    if llrs.is_empty() {
        return 0.0;
    }
    let sum: f64 = llrs.iter().map(|l| l * l).sum();
    let s = match formula {
        MuPFormula::Mean => sum / llrs.len() as f64,
        MuPFormula::Sum => sum,
    };
    (1.0 + s).sqrt() - 1.0
}

/// Invariant EP causal variance from the predicted APP variance,
/// `(1/γ̄ - 1/v_e)⁻¹`, with the Gaussian-division guard.
pub fn ep_variance_from_app(gamma_d_bar: f64, v_e: f64) -> f64 {
    let g = gamma_d_bar.min(EP_GUARD * v_e).max(0.0);
    v_e * g / (v_e - g)
}

/// Inverse of [`ep_variance_from_app`]: the APP variance whose Gaussian
/// division by `N(·, v_e)` yields `v_d`.
pub fn app_variance_from_ep(v_d: f64, v_e: f64) -> f64 {
    if v_d <= 0.0 {
        return 0.0;
    }
    1.0 / (1.0 / v_d + 1.0 / v_e)
}

/// Lower bound on the causal variance: `max(v_c, β v_a)`.
pub fn calibrate(v_c: f64, v_a: f64, beta: f64) -> f64 {
    v_c.max(beta * v_a)
}

// ---------------------------------------------------------------------------
// Demapper look-up tables
// ---------------------------------------------------------------------------

/// Axes of a LUT before generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutGrid {
    /// Equalizer output variances in dB, increasing.
    pub ve_db: Vec<f64>,
    /// Prior mutual information levels in `[0, 1]`, increasing.
    pub i_a: Vec<f64>,
}

impl LutGrid {
    /// `v_e` from -15 to 15 dB in 1 dB steps, 21 prior levels.
    pub fn standard() -> Self {
        LutGrid {
            ve_db: (-15..=15).map(f64::from).collect(),
            i_a: (0..=20).map(|i| i as f64 / 20.0).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inc = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if self.ve_db.len() < 2 || self.i_a.len() < 2 || !inc(&self.ve_db) || !inc(&self.i_a) {
            return Err(Error::InvalidParameter(
                "LUT grids need >= 2 strictly increasing points".into(),
            ));
        }
        if self.i_a[0] < 0.0 || *self.i_a.last().unwrap() > 1.0 {
            return Err(Error::InvalidParameter("I_A grid must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Monte Carlo integration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutSampling {
    /// Symbols per block.
    pub block_len: usize,
    /// Blocks per cell.
    pub blocks: usize,
    pub eta_p: f64,
    pub seed: u64,
}

impl Default for LutSampling {
    fn default() -> Self {
        LutSampling {
            block_len: 1024,
            blocks: 100,
            eta_p: 2.0,
            seed: 0x5eed,
        }
    }
}

/// Descriptive header stored with every table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutMetadata {
    pub format: String,
    pub version: u32,
    pub scheme: Scheme,
    pub feedback: Feedback,
    pub modulation: Modulation,
    pub sampling: LutSampling,
    pub grid: LutGrid,
    /// What `axis_prior` holds: `"i_a"` or `"v_p"`.
    pub prior_axis: String,
}

/// Two-dimensional table `(v_e, prior) ↦ expected causal feedback variance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemapperLut {
    pub meta: LutMetadata,
    /// `10 log10 v_e` coordinates.
    pub axis_ve_db: Vec<f64>,
    /// Row coordinates, increasing: `I_A` for binary tables, the empirical
    /// mean prior variance for symbol-wise tables.
    pub axis_prior: Vec<f64>,
    /// `values[row][col]`.
    pub values: Vec<Vec<f64>>,
}

/// Raw Monte Carlo statistics shared by every table flavour.
#[derive(Clone, Debug)]
pub struct DemapperSurvey {
    pub modulation: Modulation,
    pub grid: LutGrid,
    pub sampling: LutSampling,
    /// Mean APP variance per `[row][col]`.
    pub mean_gamma: Vec<Vec<f64>>,
    /// Empirical mean prior variance per row.
    pub mean_vp: Vec<f64>,
}

/// Per-block demapper statistics for one prior level and a set of `v_e`.
pub(crate) struct BlockDraw {
    pub mean_vp: f64,
    /// Mean APP variance per requested `v_e`.
    pub mean_gamma: Vec<f64>,
    pub llrs: Vec<f64>,
}

/// Simulates one block: uniform symbols, priors drawn at `quality`, and
/// Gaussian equalizer outputs `x_e ~ CN(x, v_e)` sharing one noise draw across
/// all `v_e` values.
pub(crate) fn draw_block<R: Rng + ?Sized>(
    c: &Constellation,
    quality: &PriorQuality,
    v_e: &[f64],
    k: usize,
    rng: &mut R,
    keep_llrs: bool,
) -> BlockDraw {
    let q = c.bits_per_symbol();
    let m = c.order();
    let mut gamma = vec![0.0; v_e.len()];
    let mut vp_sum = 0.0;
    let mut llr = [0.0; 8];
    let mut lp = [0.0; MAX_ORDER];
    let mut probs = [0.0; MAX_ORDER];
    let mut llrs = Vec::with_capacity(if keep_llrs { k * q } else { 0 });
    for _ in 0..k {
        let label = rng.random_range(0..m);
        for (j, l) in llr.iter_mut().enumerate().take(q) {
            *l = quality.sample_llr(rng, c.bit(label, j) as u8);
        }
        if keep_llrs {
            llrs.extend_from_slice(&llr[..q]);
        }
        log_prior(c, &llr[..q], &mut lp);
        {
            let mut p = lp;
            crate::mapping::normalize_log_in_place(&mut p[..m]);
            vp_sum += moments(c, &p[..m]).1;
        }
        let noise = complex_gaussian(rng, 1.0);
        let x = c.points()[label];
        for (g, &ve) in gamma.iter_mut().zip(v_e) {
            let x_e: Complex64 = x + noise * ve.sqrt();
            posterior_from_log_prior(c, x_e, ve, &lp, &mut probs);
            *g += moments(c, &probs[..m]).1;
        }
    }
    gamma.iter_mut().for_each(|g| *g /= k as f64);
    BlockDraw {
        mean_vp: vp_sum / k as f64,
        mean_gamma: gamma,
        llrs,
    }
}

/// Runs the demapper Monte Carlo over the whole grid.
pub fn survey_demapper(c: &Constellation, grid: &LutGrid, sampling: LutSampling) -> Result<DemapperSurvey> {
    grid.validate()?;
    if sampling.block_len * sampling.blocks < 1000 {
        return Err(Error::InvalidParameter(
            "need at least 1000 samples per LUT cell".into(),
        ));
    }
    if !(sampling.eta_p > 0.0) {
        return Err(Error::InvalidParameter("eta_p must be positive".into()));
    }
    let v_e: Vec<f64> = grid.ve_db.iter().map(|d| 10f64.powf(d / 10.0)).collect();
    let rows: Vec<(Vec<f64>, f64)> = grid
        .i_a
        .par_iter()
        .enumerate()
        .map(|(r, &ia)| {
            let quality = PriorQuality::from_mutual_information(ia, sampling.eta_p);
            let mut gamma = vec![0.0; v_e.len()];
            let mut vp = 0.0;
            for b in 0..sampling.blocks {
                let mut rng = stream_rng(sampling.seed, r as u32, b as u32);
                let d = draw_block(c, &quality, &v_e, sampling.block_len, &mut rng, false);
                gamma.iter_mut().zip(&d.mean_gamma).for_each(|(g, x)| *g += x);
                vp += d.mean_vp;
            }
            gamma.iter_mut().for_each(|g| *g /= sampling.blocks as f64);
            (gamma, vp / sampling.blocks as f64)
        })
        .collect();
    let (mean_gamma, mean_vp) = rows.into_iter().unzip();
    Ok(DemapperSurvey {
        modulation: c.modulation(),
        grid: grid.clone(),
        sampling,
        mean_gamma,
        mean_vp,
    })
}

impl DemapperSurvey {
    /// Builds the table of one scheme and feedback type from the survey.
    pub fn table(&self, scheme: Scheme, feedback: Feedback) -> DemapperLut {
        let v_e: Vec<f64> = self.grid.ve_db.iter().map(|d| 10f64.powf(d / 10.0)).collect();
        let mut rows: Vec<(f64, Vec<f64>)> = self
            .mean_gamma
            .iter()
            .enumerate()
            .map(|(r, gamma)| {
                let coord = match scheme {
                    Scheme::BinaryMi => self.grid.i_a[r],
                    Scheme::SymbolWise => self.mean_vp[r],
                };
                let vals = match feedback {
                    Feedback::App => gamma.clone(),
                    Feedback::Ep => gamma
                        .iter()
                        .zip(&v_e)
                        .map(|(&g, &ve)| ep_variance_from_app(g, ve))
                        .collect(),
                };
                (coord, vals)
            })
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Equal coordinates would break interpolation; nudge duplicates apart.
        for i in 1..rows.len() {
            if rows[i].0 <= rows[i - 1].0 {
                rows[i].0 = rows[i - 1].0 + 1e-12;
            }
        }
        let (axis_prior, values) = rows.into_iter().unzip();
        DemapperLut {
            meta: LutMetadata {
                format: LUT_FORMAT.into(),
                version: LUT_VERSION,
                scheme,
                feedback,
                modulation: self.modulation,
                sampling: self.sampling,
                grid: self.grid.clone(),
                prior_axis: match scheme {
                    Scheme::BinaryMi => "i_a".into(),
                    Scheme::SymbolWise => "v_p".into(),
                },
            },
            axis_ve_db: self.grid.ve_db.clone(),
            axis_prior,
            values,
        }
    }
}

/// Generates a demapper LUT by Monte Carlo integration.
///
/// APP tables whose rows decrease in `v_e` by more than
/// [`MONOTONE_TOLERANCE`] are regenerated once with 4× the blocks, then
/// rejected.
pub fn generate_lut(
    scheme: Scheme,
    feedback: Feedback,
    c: &Constellation,
    grid: &LutGrid,
    sampling: LutSampling,
) -> Result<DemapperLut> {
    let lut = survey_demapper(c, grid, sampling)?.table(scheme, feedback);
    match lut.monotonicity_violation() {
        v if v <= MONOTONE_TOLERANCE => Ok(lut),
        v => {
            warn!("LUT row decreases by {v:.4}; regenerating with 4x samples");
            let denser = LutSampling {
                blocks: sampling.blocks * 4,
                ..sampling
            };
            let lut = survey_demapper(c, grid, denser)?.table(scheme, feedback);
            match lut.monotonicity_violation() {
                v if v <= MONOTONE_TOLERANCE => Ok(lut),
                v => Err(Error::NonMonotoneLut(v)),
            }
        }
    }
}

/// Position of `x` on an increasing axis: lower index and weight, saturating.
fn locate(axis: &[f64], x: f64) -> (usize, f64, bool) {
    let n = axis.len();
    if x.is_nan() || x <= axis[0] {
        return (0, 0.0, x < axis[0]);
    }
    if x >= axis[n - 1] {
        return (n - 2, 1.0, x > axis[n - 1]);
    }
    let i = axis.partition_point(|&a| a <= x) - 1;
    let i = i.min(n - 2);
    (i, (x - axis[i]) / (axis[i + 1] - axis[i]), false)
}

impl DemapperLut {
    pub fn scheme(&self) -> Scheme {
        self.meta.scheme
    }

    pub fn feedback(&self) -> Feedback {
        self.meta.feedback
    }

    /// Largest decrease along `v_e` within any row; EP tables are exempt,
    /// their variance legitimately peaks at intermediate `v_e`.
    pub fn monotonicity_violation(&self) -> f64 {
        if self.meta.feedback == Feedback::Ep {
            return 0.0;
        }
        self.values
            .iter()
            .flat_map(|row| row.windows(2).map(|w| w[0] - w[1]))
            .fold(0.0, f64::max)
    }

    /// Converts a caller-side prior parameter to the row coordinate: `μ_p`
    /// for binary tables, `v_p` for symbol-wise tables.
    pub fn prior_coordinate(&self, prior: f64) -> f64 {
        match self.meta.scheme {
            Scheme::BinaryMi => mutual_information(prior),
            Scheme::SymbolWise => prior,
        }
    }

    /// Bilinear interpolation on `(10 log10 v_e, prior)`, saturating at the
    /// grid edges.
    pub fn lookup(&self, v_e: f64, prior: f64) -> f64 {
        self.lookup_coordinate(v_e, self.prior_coordinate(prior))
    }

    /// As [`lookup`](Self::lookup) with the row coordinate given directly.
    pub fn lookup_coordinate(&self, v_e: f64, coord: f64) -> f64 {
        let x = 10.0 * v_e.max(1e-300).log10();
        let (ci, cw, c_sat) = locate(&self.axis_ve_db, x);
        let (ri, rw, r_sat) = locate(&self.axis_prior, coord);
        if c_sat || r_sat {
            debug!("LUT lookup saturated at v_e = {v_e:.3e}, prior = {coord:.4}");
        }
        let v = &self.values;
        let lo = v[ri][ci] * (1.0 - cw) + v[ri][ci + 1] * cw;
        let hi = v[ri + 1][ci] * (1.0 - cw) + v[ri + 1][ci + 1] * cw;
        lo * (1.0 - rw) + hi * rw
    }

    /// Writes the table: one `#`-prefixed JSON metadata line, then CSV.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "#{}", serde_json::to_string(&self.meta)?)?;
        let header: Vec<String> = self.axis_ve_db.iter().map(|d| format!("{d}")).collect();
        writeln!(w, "prior,{}", header.join(","))?;
        for (coord, row) in self.axis_prior.iter().zip(&self.values) {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{coord:e},{}", vals.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut lines = BufReader::new(fs::File::open(path)?).lines();
        let first = lines.next().ok_or_else(|| Error::Parse("empty LUT file".into()))??;
        let meta: LutMetadata = serde_json::from_str(
            first
                .strip_prefix('#')
                .ok_or_else(|| Error::Parse("LUT file lacks metadata line".into()))?,
        )?;
        if meta.format != LUT_FORMAT || meta.version != LUT_VERSION {
            return Err(Error::LutMismatch(format!(
                "unsupported LUT format {} v{}",
                meta.format, meta.version
            )));
        }
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("LUT file lacks header".into()))??;
        let axis_ve_db = header.split(',').skip(1).map(parse).collect::<Result<Vec<_>>>()?;
        let mut axis_prior = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',').map(parse);
            axis_prior.push(cells.next().ok_or_else(|| Error::Parse("empty LUT row".into()))??);
            let row = cells.collect::<Result<Vec<_>>>()?;
            if row.len() != axis_ve_db.len() {
                return Err(Error::LengthMismatch {
                    expected: axis_ve_db.len(),
                    actual: row.len(),
                });
            }
            values.push(row);
        }
        if axis_prior.len() < 2 || axis_ve_db.len() < 2 {
            return Err(Error::Parse("LUT needs at least a 2x2 grid".into()));
        }
        Ok(DemapperLut {
            meta,
            axis_ve_db,
            axis_prior,
            values,
        })
    }

    /// Content hash of the table values, for run manifests.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).unwrap_or_default());
        hex::encode(&h.finalize()[..8])
    }
}

/// Disk cache of generated tables, keyed by everything that determines them.
#[derive(Clone, Debug)]
pub struct LutCache {
    dir: PathBuf,
}

impl LutCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        LutCache { dir: dir.into() }
    }

    /// Directory from `TURBO_DFE_LUT_DIR`, else `./lut-cache`.
    pub fn from_env() -> Self {
        LutCache::new(std::env::var_os(LUT_DIR_ENV).map_or_else(|| PathBuf::from("lut-cache"), PathBuf::from))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(
        modulation: Modulation,
        scheme: Scheme,
        feedback: Feedback,
        grid: &LutGrid,
        sampling: &LutSampling,
    ) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(grid, sampling)).unwrap_or_default());
        format!(
            "{}_{}_{}_eta{}_{}",
            modulation,
            scheme,
            feedback,
            sampling.eta_p,
            hex::encode(&h.finalize()[..6])
        )
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.lut.csv"))
    }

    /// Loads the table if cached, otherwise generates and stores it.
    pub fn get_or_generate(
        &self,
        scheme: Scheme,
        feedback: Feedback,
        c: &Constellation,
        grid: &LutGrid,
        sampling: LutSampling,
    ) -> Result<DemapperLut> {
        let path = self.path_for(&Self::key(c.modulation(), scheme, feedback, grid, &sampling));
        if path.exists() {
            match DemapperLut::load(&path) {
                Ok(lut) if lut.meta.grid == *grid && lut.meta.sampling == sampling => return Ok(lut),
                Ok(_) => warn!("cached LUT {} does not match request; regenerating", path.display()),
                Err(e) => warn!("unreadable cached LUT {}: {e}; regenerating", path.display()),
            }
        }
        info!(
            "generating {scheme}/{feedback} LUT for {} ({})",
            c.modulation(),
            path.display()
        );
        let lut = generate_lut(scheme, feedback, c, grid, sampling)?;
        fs::create_dir_all(&self.dir)?;
        lut.save(&path)?;
        Ok(lut)
    }
}

// ---------------------------------------------------------------------------
// Fixed-point prediction
// ---------------------------------------------------------------------------

/// Starting point of the fixed-point recursion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitRule {
    /// `min(1, σ_w)` when `v_p > 0.5`, else 0.
    Heuristic,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    pub n_pred: usize,
    pub tol: f64,
    /// Calibration factor of `max(v_c, β v_a)`; `None` disables calibration.
    pub beta: Option<f64>,
    pub init: InitRule,
    pub mu_p_formula: MuPFormula,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            n_pred: 3,
            tol: 1e-4,
            beta: Some(0.2),
            init: InitRule::Heuristic,
            mu_p_formula: MuPFormula::Mean,
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pred == 0 {
            return Err(Error::InvalidParameter("n_pred must be >= 1".into()));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::InvalidParameter(format!("beta must lie in (0, 1], got {b}")));
            }
        }
        Ok(())
    }
}

/// Result of [`fixed_point_solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPoint {
    pub v_c: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `v̄_c[0], v̄_c[1], …`.
    pub trajectory: Vec<f64>,
}

pub fn initial_guess(rule: InitRule, sigma_w2: f64, v_p: f64) -> f64 {
    match rule {
        InitRule::Heuristic if v_p > 0.5 => sigma_w2.sqrt().min(1.0),
        InitRule::Heuristic => 0.0,
        InitRule::Fixed(v) => v,
    }
}

/// Picard iteration of `v ↦ φ_DEM(φ_REC(v), prior)`, at most `n_pred` steps
/// or until the update is below `tol`.
pub fn fixed_point_solve(
    ch: &ChannelModel,
    t: &ToeplitzChannel,
    v_p: f64,
    prior_param: f64,
    lut: &DemapperLut,
    cfg: &PredictionConfig,
) -> Result<FixedPoint> {
    let coord = lut.prior_coordinate(prior_param);
    let mut v = initial_guess(cfg.init, ch.sigma_w2(), v_p);
    let mut trajectory = vec![v];
    for n in 1..=cfg.n_pred {
        let v_e = phi_rec(ch, t, v_p, v)?;
        let next = lut.lookup_coordinate(v_e, coord).max(0.0);
        trajectory.push(next);
        let delta = (next - v).abs();
        v = next;
        if delta < cfg.tol {
            return Ok(FixedPoint {
                v_c: v,
                iterations: n,
                converged: true,
                trajectory,
            });
        }
    }
    Ok(FixedPoint {
        v_c: v,
        iterations: cfg.n_pred,
        converged: false,
        trajectory,
    })
}

/// Everything the IV DFE needs for one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPrediction {
    pub profile: DfeVarianceProfile,
    /// Predicted block-invariant APP variance (the EP division input).
    pub gamma_d_bar: f64,
    /// Predicted equalizer output variance.
    pub v_e: f64,
    /// Uncalibrated fixed point.
    pub raw_v_c: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Online predictor: one LUT plus its configuration.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub lut: DemapperLut,
    pub config: PredictionConfig,
}

impl Predictor {
    pub fn new(lut: DemapperLut, config: PredictionConfig) -> Result<Self> {
        config.validate()?;
        Ok(Predictor { lut, config })
    }

    /// Predicts the causal reliability for a block with the given priors.
    pub fn predict(
        &self,
        ch: &ChannelModel,
        t: &ToeplitzChannel,
        priors: &SoftSymbolBlock,
        prior_llrs: &[f64],
    ) -> Result<BlockPrediction> {
        let v_a = priors.mean_variance();
        let prior_param = match self.lut.scheme() {
            Scheme::BinaryMi => estimate_mu_p(prior_llrs, self.config.mu_p_formula),
            Scheme::SymbolWise => v_a,
        };
        let fp = fixed_point_solve(ch, t, v_a, prior_param, &self.lut, &self.config)?;
        // Calibration guards against over-confidence once decoder feedback
        // exists; without priors the prediction is used as is.
        let has_priors = prior_llrs.iter().any(|&l| l != 0.0);
        let v_c = match self.config.beta {
            Some(beta) if has_priors => calibrate(fp.v_c, v_a, beta),
            _ => fp.v_c,
        };
        let v_e = phi_rec(ch, t, v_a, v_c)?;
        let gamma_d_bar = match self.lut.feedback() {
            Feedback::App => v_c,
            Feedback::Ep => app_variance_from_ep(v_c, v_e),
        };
        Ok(BlockPrediction {
            profile: DfeVarianceProfile::new(v_c, v_a),
            gamma_d_bar,
            v_e,
            raw_v_c: fp.v_c,
            iterations: fp.iterations,
            converged: fp.converged,
        })
    }
}
