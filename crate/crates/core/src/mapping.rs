//! Constellations, soft mapping, MAP soft demapping and EP feedback.
//!
//! LLR sign convention: a positive LLR favours bit value 0, i.e. the prior
//! symbol pmf is `P(a) ∝ Π_q exp(-b_q(a) L_q)`. Every module in the crate uses
//! this convention.
//!
//! Bit `q = 0` of a symbol is the first (most significant) bit of its label,
//! so the coded bit `d[Q*k + q]` labels symbol `k`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest supported constellation order.
pub const MAX_ORDER: usize = 16;

/// Magnitude at which LLRs are clipped when a bit class has no mass.
pub const LLR_CAP: f64 = 40.0;

/// Gaussian-division guard: the APP variance is clamped to `RHO * v_e`.
pub const EP_GUARD: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "bpsk")]
    Bpsk,
    #[serde(rename = "qpsk")]
    Qpsk,
    #[serde(rename = "8psk")]
    Psk8,
    #[serde(rename = "16qam")]
    Qam16,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
            Modulation::Psk8 => 3,
            Modulation::Qam16 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
            Modulation::Psk8 => "8psk",
            Modulation::Qam16 => "16qam",
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" | "4qam" => Ok(Modulation::Qpsk),
            "8psk" | "psk8" => Ok(Modulation::Psk8),
            "16qam" | "qam16" => Ok(Modulation::Qam16),
            other => Err(Error::UnsupportedConstellation(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Labeling {
    Gray,
}

impl FromStr for Labeling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gray" => Ok(Labeling::Gray),
            other => Err(Error::UnsupportedConstellation(format!("labeling {other}"))),
        }
    }
}

/// A unit-energy, zero-mean constellation with a bit labeling.
///
/// Points are stored in label order: `points()[a]` carries the label `a`.
#[derive(Clone, Debug)]
pub struct Constellation {
    modulation: Modulation,
    points: Vec<Complex64>,
    bits: usize,
    max_energy: f64,
}

/// Builds a normalized Gray-labelled constellation.
pub fn build_constellation(modulation: Modulation, labeling: Labeling) -> Constellation {
    let Labeling::Gray = labeling;
    let m = 1usize << modulation.bits_per_symbol();
    let mut points = vec![Complex64::new(0.0, 0.0); m];
    match modulation {
        Modulation::Bpsk => {
            points[0] = Complex64::new(1.0, 0.0);
            points[1] = Complex64::new(-1.0, 0.0);
        }
        Modulation::Qpsk => {
            for (label, p) in points.iter_mut().enumerate() {
                let i = 1.0 - 2.0 * ((label >> 1) & 1) as f64;
                let q = 1.0 - 2.0 * (label & 1) as f64;
                *p = Complex64::new(i, q) * FRAC_1_SQRT_2;
            }
        }
        Modulation::Psk8 => {
            for pos in 0..8usize {
                let label = pos ^ (pos >> 1);
                points[label] = Complex64::from_polar(1.0, PI / 8.0 + PI / 4.0 * pos as f64);
            }
        }
        Modulation::Qam16 => {
            // Gray PAM-4 per axis, first bit of each pair is the sign.
            let level = |two_bits: usize| -> f64 {
                match two_bits {
                    0b00 => 3.0,
                    0b01 => 1.0,
                    0b11 => -1.0,
                    _ => -3.0,
                }
            };
            let scale = 1.0 / 10f64.sqrt();
            for (label, p) in points.iter_mut().enumerate() {
                *p = Complex64::new(level(label >> 2), level(label & 3)) * scale;
            }
        }
    }
    let max_energy = points.iter().map(|p| p.norm_sqr()).fold(0.0, f64::max);
    Constellation {
        modulation,
        points,
        bits: modulation.bits_per_symbol(),
        max_energy,
    }
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        build_constellation(modulation, Labeling::Gray)
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Number of points `M`.
    pub fn order(&self) -> usize {
        self.points.len()
    }

    /// Bits per symbol `Q`.
    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    pub fn max_energy(&self) -> f64 {
        self.max_energy
    }

    /// Value of bit `q` in the label of point `label`.
    #[inline]
    pub fn bit(&self, label: usize, q: usize) -> usize {
        (label >> (self.bits - 1 - q)) & 1
    }

    /// Maps `Q` bits (first bit most significant) to a point label.
    pub fn label_of(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b as usize & 1))
    }

    /// Modulates a bit sequence whose length is a multiple of `Q`.
    pub fn modulate(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        if !bits.len().is_multiple_of(self.bits) {
            return Err(Error::LengthMismatch {
                expected: bits.len().next_multiple_of(self.bits),
                actual: bits.len(),
            });
        }
        Ok(bits.chunks(self.bits).map(|c| self.points[self.label_of(c)]).collect())
    }

    /// Writes the `Q` label bits of point `label` into `out`.
    pub fn label_bits(&self, label: usize, out: &mut [u8]) {
        for (q, o) in out.iter_mut().enumerate().take(self.bits) {
            *o = self.bit(label, q) as u8;
        }
    }

    /// Nearest point (ML decision under a uniform prior).
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (a, p) in self.points.iter().enumerate() {
            let d = (p - z).norm_sqr();
            if d < best_d {
                best_d = d;
                best = a;
            }
        }
        best
    }
}

/// Normalized probability mass over the constellation points (label order).
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolPmf(Vec<f64>);

impl SymbolPmf {
    pub fn uniform(order: usize) -> Self {
        SymbolPmf(vec![1.0 / order as f64; order])
    }

    pub fn one_hot(order: usize, label: usize) -> Self {
        let mut p = vec![0.0; order];
        p[label] = 1.0;
        SymbolPmf(p)
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(mut w: Vec<f64>) -> Result<Self> {
        let z: f64 = w.iter().sum();
        if !(z > 0.0) || !z.is_finite() || w.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidParameter(
                "pmf weights must be nonnegative with finite positive sum".into(),
            ));
        }
        w.iter_mut().for_each(|x| *x /= z);
        Ok(SymbolPmf(w))
    }

    fn from_log_weights(logw: &[f64]) -> Self {
        let mut p = logw.to_vec();
        normalize_log_in_place(&mut p);
        SymbolPmf(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (a, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = a;
            }
        }
        best
    }
}

/// Per-symbol Gaussian summaries: complex means with real variances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SoftSymbolBlock {
    pub means: Vec<Complex64>,
    pub variances: Vec<f64>,
}

impl SoftSymbolBlock {
    pub fn with_capacity(k: usize) -> Self {
        SoftSymbolBlock {
            means: Vec::with_capacity(k),
            variances: Vec::with_capacity(k),
        }
    }

    /// `K` symbols with zero mean and unit variance (no prior information).
    pub fn uninformed(k: usize) -> Self {
        SoftSymbolBlock {
            means: vec![Complex64::new(0.0, 0.0); k],
            variances: vec![1.0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn push(&mut self, mean: Complex64, variance: f64) {
        self.means.push(mean);
        self.variances.push(variance);
    }

    pub fn mean_variance(&self) -> f64 {
        if self.variances.is_empty() {
            return 0.0;
        }
        self.variances.iter().sum::<f64>() / self.variances.len() as f64
    }
}

/// Converts `logw` (entries may be `-inf`) into normalized probabilities.
pub(crate) fn normalize_log_in_place(logw: &mut [f64]) {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for w in logw.iter_mut() {
        *w = if *w == f64::NEG_INFINITY { 0.0 } else { (*w - m).exp() };
        z += *w;
    }
    for w in logw.iter_mut() {
        *w /= z;
    }
}

/// `ln(e^a + e^b)` computed exactly through `log1p`.
#[inline]
pub fn max_star(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-weight of bit value `bit` under LLR `llr`, shifted so the favoured
/// value has weight 0. Well defined for infinite LLRs.
#[inline]
fn bit_log_weight(bit: usize, llr: f64) -> f64 {
    let favoured = if llr >= 0.0 { 0 } else { 1 };
    if bit == favoured || llr == 0.0 {
        0.0
    } else {
        -llr.abs()
    }
}

/// Unnormalized log prior over the points for one symbol's `Q` prior LLRs.
pub(crate) fn log_prior(c: &Constellation, llrs: &[f64], out: &mut [f64]) {
    for (a, o) in out.iter_mut().enumerate().take(c.order()) {
        *o = (0..c.bits).map(|q| bit_log_weight(c.bit(a, q), llrs[q])).sum();
    }
}

/// Mean and variance of a normalized pmf over `c`.
#[inline]
pub(crate) fn moments(c: &Constellation, probs: &[f64]) -> (Complex64, f64) {
    let mut mean = Complex64::new(0.0, 0.0);
    let mut energy = 0.0;
    for (p, &w) in c.points.iter().zip(probs) {
        mean += p * w;
        energy += p.norm_sqr() * w;
    }
    let var = (energy - mean.norm_sqr()).clamp(0.0, c.max_energy);
    (mean, var)
}

/// Normalized posterior probabilities from a log prior, written to `out`.
#[inline]
pub(crate) fn posterior_from_log_prior(
    c: &Constellation,
    x_e: Complex64,
    v_e: f64,
    log_prior: &[f64],
    out: &mut [f64],
) {
    let m = c.order();
    for a in 0..m {
        out[a] = log_prior[a] - (c.points[a] - x_e).norm_sqr() / v_e;
    }
    normalize_log_in_place(&mut out[..m]);
}

/// Soft mapper: prior pmfs and their moments from prior LLRs.
pub fn soft_map(llrs: &[f64], c: &Constellation) -> Result<(Vec<SymbolPmf>, SoftSymbolBlock)> {
    let q = c.bits_per_symbol();
    if !llrs.len().is_multiple_of(q) {
        return Err(Error::LengthMismatch {
            expected: llrs.len().next_multiple_of(q),
            actual: llrs.len(),
        });
    }
    let k = llrs.len() / q;
    let mut pmfs = Vec::with_capacity(k);
    let mut block = SoftSymbolBlock::with_capacity(k);
    let mut buf = [0.0; MAX_ORDER];
    for sym in llrs.chunks(q) {
        log_prior(c, sym, &mut buf);
        let pmf = SymbolPmf::from_log_weights(&buf[..c.order()]);
        let (mean, var) = moments(c, pmf.probs());
        block.push(mean, var);
        pmfs.push(pmf);
    }
    Ok((pmfs, block))
}

/// MAP symbol posterior `D(a) ∝ exp(-|a - x_e|²/v_e) P(a)`, in the log domain.
pub fn demap_posterior(x_e: Complex64, v_e: f64, prior: &SymbolPmf, c: &Constellation) -> Result<SymbolPmf> {
    if !(v_e > 0.0) {
        return Err(Error::InvalidParameter(format!("v_e must be positive, got {v_e}")));
    }
    if prior.0.len() != c.order() {
        return Err(Error::LengthMismatch {
            expected: c.order(),
            actual: prior.0.len(),
        });
    }
    let mut buf = [0.0; MAX_ORDER];
    for (b, &p) in buf.iter_mut().zip(&prior.0) {
        *b = p.ln();
    }
    let mut out = [0.0; MAX_ORDER];
    posterior_from_log_prior(c, x_e, v_e, &buf, &mut out);
    Ok(SymbolPmf(out[..c.order()].to_vec()))
}

/// Posterior mean `mu_d` and variance `gamma_d`.
pub fn posterior_moments(pmf: &SymbolPmf, c: &Constellation) -> (Complex64, f64) {
    moments(c, &pmf.0)
}

/// Extrinsic LLRs from a posterior pmf and the prior LLRs it was built with.
///
/// Bits whose class carries no posterior mass are clipped to `±cap`.
pub fn extrinsic_llrs(pmf: &SymbolPmf, priors: &[f64], c: &Constellation, cap: f64) -> Vec<f64> {
    (0..c.bits_per_symbol())
        .map(|j| {
            let (mut s0, mut s1) = (0.0, 0.0);
            for (a, &p) in pmf.0.iter().enumerate() {
                if c.bit(a, j) == 0 {
                    s0 += p;
                } else {
                    s1 += p;
                }
            }
            let full = (s0.ln() - s1.ln()).clamp(-cap, cap);
            (full - priors[j].clamp(-cap, cap)).clamp(-cap, cap)
        })
        .collect()
}

/// Extrinsic LLRs straight from the equalizer output, excluding each bit's
/// own prior inside the log-sum-exp. Exact also for infinite priors.
pub fn demap_extrinsic(x_e: Complex64, v_e: f64, priors: &[f64], c: &Constellation, out: &mut [f64]) {
    let bits = c.bits_per_symbol();
    let mut metric = [0.0; MAX_ORDER];
    let mut bitw = [[0.0; 8]; MAX_ORDER];
    for a in 0..c.order() {
        metric[a] = -(c.points[a] - x_e).norm_sqr() / v_e;
        for q in 0..bits {
            bitw[a][q] = bit_log_weight(c.bit(a, q), priors[q]);
        }
    }
    for j in 0..bits {
        let (mut l0, mut l1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for a in 0..c.order() {
            let others: f64 = (0..bits).filter(|&q| q != j).map(|q| bitw[a][q]).sum();
            let v = metric[a] + others;
            if c.bit(a, j) == 0 {
                l0 = max_star(l0, v);
            } else {
                l1 = max_star(l1, v);
            }
        }
        out[j] = if l0 == f64::NEG_INFINITY && l1 == f64::NEG_INFINITY {
            0.0
        } else {
            (l0 - l1).clamp(-LLR_CAP, LLR_CAP)
        };
    }
}

/// Result of a Gaussian division.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpMessage {
    pub mean: Complex64,
    pub variance: f64,
    /// The APP variance hit the `rho * v_e` guard and was clamped.
    pub clamped: bool,
}

fn gaussian_division(mu_d: Complex64, gamma: f64, x_e: Complex64, v_e: f64, rho: f64) -> EpMessage {
    let limit = rho * v_e;
    let (gamma, clamped) = if gamma >= limit { (limit, true) } else { (gamma, false) };
    let denom = v_e - gamma;
    EpMessage {
        mean: (mu_d * v_e - x_e * gamma) / denom,
        variance: v_e * gamma / denom,
        clamped,
    }
}

/// EP feedback with the block-invariant APP variance `gamma_d_bar`.
///
/// The returned variance is the same for every symbol of a block.
pub fn ep_feedback(mu_d: Complex64, gamma_d_bar: f64, x_e: Complex64, v_e: f64) -> EpMessage {
    gaussian_division(mu_d, gamma_d_bar, x_e, v_e, EP_GUARD)
}

/// Per-symbol Gaussian division used by the TV DFE with EP feedback.
pub fn gaussian_division_tv(mu_d: Complex64, gamma_d_k: f64, x_e: Complex64, v_e: f64) -> EpMessage {
    gaussian_division(mu_d, gamma_d_k, x_e, v_e, EP_GUARD)
}
