//! SISO MMSE FIR equalizers with soft interference cancellation.
//!
//! Four structures are provided:
//!
//! - TV LE / IV LE: cancel interference on the whole window with the prior
//!   soft symbols. TV recomputes the filter for every symbol from the
//!   per-symbol prior variances, IV uses one filter built from their mean.
//! - TV DFE / IV DFE: past symbols are cancelled with soft feedback computed
//!   sequentially by the demapper (APP means, or EP messages from Gaussian
//!   division), future symbols with the priors.
//!
//! The IV DFE needs the reliability of its causal feedback before the block is
//! equalized; [`crate::prediction`] supplies it.
//!
//! Window positions map to symbols as `m ↦ k - N_p' + m`. Symbols outside the
//! block are zero; the TV structures treat them as known (variance 0), the IV
//! structures keep their static profile.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ToeplitzChannel, WindowConfig};
use crate::linalg::{solve_mmse, MmseSolution};
use crate::mapping::{
    ep_feedback, gaussian_division_tv, moments, posterior_from_log_prior, Constellation, SoftSymbolBlock, SymbolPmf,
    MAX_ORDER,
};
use crate::{Error, Result};

/// Soft feedback flavour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feedback {
    /// Posterior mean and variance.
    #[serde(rename = "app")]
    App,
    /// Posterior divided by the equalizer's Gaussian message.
    #[serde(rename = "ep")]
    Ep,
}

impl fmt::Display for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Feedback::App => "app",
            Feedback::Ep => "ep",
        })
    }
}

impl FromStr for Feedback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "app" => Ok(Feedback::App),
            "ep" => Ok(Feedback::Ep),
            other => Err(Error::Parse(format!("unknown feedback '{other}'"))),
        }
    }
}

/// Filter recomputation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Time-varying: new filter per symbol.
    Tv,
    /// Iteration-varying: one filter per block and turbo iteration.
    Iv,
}

/// Reliability of the causal (`v_c`) and anti-causal (`v_a`) estimates used to
/// build static filters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DfeVarianceProfile {
    pub v_c: f64,
    pub v_a: f64,
}

impl DfeVarianceProfile {
    pub fn new(v_c: f64, v_a: f64) -> Self {
        DfeVarianceProfile { v_c, v_a }
    }

    /// `[v_c; N_p'] ++ [v_a; N_d + 1]`.
    pub fn assemble(&self, w: &WindowConfig) -> Vec<f64> {
        let mut v = vec![self.v_c; w.n_p_prime];
        v.extend(std::iter::repeat_n(self.v_a, w.n_d + 1));
        v
    }
}

/// Static equalizer filters.
///
/// `g_c ++ [center] ++ g_a == Hᴴ f`. The centre tap equals `h0ᴴ f = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSet {
    pub f: Vec<Complex64>,
    /// Causal cancellation filter, length `N_p'`.
    pub g_c: Vec<Complex64>,
    pub center: Complex64,
    /// Strictly anti-causal cancellation filter, length `N_d`.
    pub g_a: Vec<Complex64>,
    pub xi: f64,
    /// Profile the filters were computed for.
    pub profile: DfeVarianceProfile,
}

impl FilterSet {
    fn from_solution(sol: MmseSolution, w: &WindowConfig, profile: DfeVarianceProfile) -> Self {
        let g: Vec<Complex64> = sol.g.iter().copied().collect();
        FilterSet {
            f: sol.f.iter().copied().collect(),
            g_c: g[..w.n_p_prime].to_vec(),
            center: g[w.n_p_prime],
            g_a: g[w.n_p_prime + 1..].to_vec(),
            xi: sol.xi,
            profile,
        }
    }

    /// Block-invariant output variance `v_e = 1/ξ - v_a`.
    pub fn output_variance(&self) -> f64 {
        1.0 / self.xi - self.profile.v_a
    }

    /// Filtered estimate of symbol `k` given causal and anti-causal means.
    fn estimate(&self, y: &[Complex64], causal: &[Complex64], anti: &[Complex64], k: usize) -> Complex64 {
        let n_pp = self.g_c.len();
        let n_p = self.f.len() - self.g_a.len() - 1;
        let mut acc = anti[k] - self.center.conj() * anti[k];
        for (n, f) in self.f.iter().enumerate() {
            if let Some(idx) = (k + n).checked_sub(n_p) {
                if idx < y.len() {
                    acc += f.conj() * y[idx];
                }
            }
        }
        for (j, g) in self.g_c.iter().enumerate() {
            if let Some(idx) = (k + j).checked_sub(n_pp) {
                acc -= g.conj() * causal[idx];
            }
        }
        for (j, g) in self.g_a.iter().enumerate() {
            if let Some(x) = anti.get(k + 1 + j) {
                acc -= g.conj() * x;
            }
        }
        acc
    }
}

/// Least-squares anti-causal reliability: the mean prior variance.
pub fn anti_causal_reliability(priors: &SoftSymbolBlock) -> f64 {
    priors.mean_variance()
}

/// IV filters for a variance profile, via Cholesky factorization of `Σ`.
pub fn compute_iv_filters(t: &ToeplitzChannel, sigma_w2: f64, profile: DfeVarianceProfile) -> Result<FilterSet> {
    if !(profile.v_c >= 0.0 && profile.v_a >= 0.0) {
        return Err(Error::InvalidParameter(format!("invalid variance profile {profile:?}")));
    }
    let sol = solve_mmse(t, sigma_w2, &profile.assemble(&t.window))?;
    Ok(FilterSet::from_solution(sol, &t.window, profile))
}

/// Output of a block equalization.
#[derive(Clone, Debug, Default)]
pub struct Equalized {
    /// Equalizer outputs `(x_e, v_e)`.
    pub estimates: SoftSymbolBlock,
    /// Causal feedback that was fed back `(x̄_c, v̄_c)`; empty for LE.
    pub causal: SoftSymbolBlock,
    /// Demapper posterior moments `(μ_d, γ_d)`; empty for LE.
    pub posteriors: SoftSymbolBlock,
    /// Gaussian divisions that hit the guard.
    pub clamp_events: usize,
}

fn check_inputs(priors: &SoftSymbolBlock, pmfs: Option<&[SymbolPmf]>, c: Option<&Constellation>) -> Result<()> {
    if priors.means.len() != priors.variances.len() {
        return Err(Error::LengthMismatch {
            expected: priors.means.len(),
            actual: priors.variances.len(),
        });
    }
    if let Some(p) = pmfs {
        if p.len() != priors.len() {
            return Err(Error::LengthMismatch {
                expected: priors.len(),
                actual: p.len(),
            });
        }
        if let Some(c) = c {
            if p.iter().any(|pmf| pmf.probs().len() != c.order()) {
                return Err(Error::InvalidParameter(
                    "prior pmf order does not match constellation".into(),
                ));
            }
        }
    }
    Ok(())
}

fn log_priors(pmfs: &[SymbolPmf]) -> Vec<[f64; MAX_ORDER]> {
    pmfs.iter()
        .map(|p| {
            let mut buf = [f64::NEG_INFINITY; MAX_ORDER];
            for (b, &v) in buf.iter_mut().zip(p.probs()) {
                *b = v.ln();
            }
            buf
        })
        .collect()
}

/// IV DFE over one block.
///
/// `gamma_d_bar` is the predicted block-invariant APP variance; it is
/// required for EP feedback and ignored for APP feedback, which feeds back
/// the per-symbol posterior means.
pub fn equalize_iv_dfe(
    y: &[Complex64],
    priors: &SoftSymbolBlock,
    pmfs: &[SymbolPmf],
    fs: &FilterSet,
    feedback: Feedback,
    gamma_d_bar: Option<f64>,
    c: &Constellation,
) -> Result<Equalized> {
    check_inputs(priors, Some(pmfs), Some(c))?;
    let gamma_bar = match (feedback, gamma_d_bar) {
        (Feedback::Ep, None) => {
            return Err(Error::InvalidParameter(
                "EP feedback needs a predicted APP variance".into(),
            ))
        }
        (_, g) => g.unwrap_or(0.0),
    };
    let k_len = priors.len();
    let v_e = fs.output_variance();
    if !(v_e > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "non-positive equalizer variance {v_e}"
        )));
    }
    let logp = log_priors(pmfs);
    let mut out = Equalized {
        estimates: SoftSymbolBlock::with_capacity(k_len),
        causal: SoftSymbolBlock::with_capacity(k_len),
        posteriors: SoftSymbolBlock::with_capacity(k_len),
        clamp_events: 0,
    };
    let mut post = [0.0; MAX_ORDER];
    for k in 0..k_len {
        let x_e = fs.estimate(y, &out.causal.means, &priors.means, k);
        posterior_from_log_prior(c, x_e, v_e, &logp[k], &mut post);
        let (mu, gamma) = moments(c, &post[..c.order()]);
        out.estimates.push(x_e, v_e);
        out.posteriors.push(mu, gamma);
        match feedback {
            Feedback::App => out.causal.push(mu, gamma),
            Feedback::Ep => {
                let msg = ep_feedback(mu, gamma_bar, x_e, v_e);
                out.clamp_events += msg.clamped as usize;
                out.causal.push(msg.mean, msg.variance);
            }
        }
    }
    Ok(out)
}

/// Prior means/variances seen by window position `m` around symbol `k`,
/// with zero-valued known guard symbols outside the block.
fn window_symbol(k: usize, m: usize, n_pp: usize, len: usize) -> Option<usize> {
    let idx = (k + m).checked_sub(n_pp)?;
    (idx < len).then_some(idx)
}

/// TV DFE over one block: filters are re-solved for every symbol using the
/// variances of the feedback already produced and of the priors.
pub fn compute_tv_filters_and_equalize(
    y: &[Complex64],
    priors: &SoftSymbolBlock,
    pmfs: &[SymbolPmf],
    feedback: Feedback,
    t: &ToeplitzChannel,
    sigma_w2: f64,
    c: &Constellation,
) -> Result<Equalized> {
    check_inputs(priors, Some(pmfs), Some(c))?;
    let w = t.window;
    let k_len = priors.len();
    let logp = log_priors(pmfs);
    let mut out = Equalized {
        estimates: SoftSymbolBlock::with_capacity(k_len),
        causal: SoftSymbolBlock::with_capacity(k_len),
        posteriors: SoftSymbolBlock::with_capacity(k_len),
        clamp_events: 0,
    };
    let span = w.span();
    let mut vars = vec![0.0; span];
    let mut means = DVector::from_element(span, Complex64::new(0.0, 0.0));
    let mut post = [0.0; MAX_ORDER];
    for k in 0..k_len {
        for m in 0..span {
            let (mean, var) = match window_symbol(k, m, w.n_p_prime, k_len) {
                Some(idx) if m < w.n_p_prime => (out.causal.means[idx], out.causal.variances[idx]),
                Some(idx) => (priors.means[idx], priors.variances[idx]),
                None => (Complex64::new(0.0, 0.0), 0.0),
            };
            vars[m] = var;
            means[m] = mean;
        }
        let sol = solve_mmse(t, sigma_w2, &vars)?;
        let yk = t.window_samples(y, k);
        // x_e = x̄_k + fᴴ (y_k - H x̄_k), the own prior removed through g_k = Hᴴ f.
        let x_e = priors.means[k] + sol.f.dotc(&yk) - sol.g.dotc(&means);
        let v_e = 1.0 / sol.xi - priors.variances[k];
        posterior_from_log_prior(c, x_e, v_e, &logp[k], &mut post);
        let (mu, gamma) = moments(c, &post[..c.order()]);
        out.estimates.push(x_e, v_e);
        out.posteriors.push(mu, gamma);
        match feedback {
            Feedback::App => out.causal.push(mu, gamma),
            Feedback::Ep => {
                let msg = gaussian_division_tv(mu, gamma, x_e, v_e);
                out.clamp_events += msg.clamped as usize;
                out.causal.push(msg.mean, msg.variance);
            }
        }
    }
    Ok(out)
}

/// Linear equalizer: prior soft symbols cancel interference on the whole
/// window, no feedback loop.
pub fn equalize_le(
    y: &[Complex64],
    priors: &SoftSymbolBlock,
    variant: Variant,
    t: &ToeplitzChannel,
    sigma_w2: f64,
) -> Result<SoftSymbolBlock> {
    check_inputs(priors, None, None)?;
    let k_len = priors.len();
    let mut est = SoftSymbolBlock::with_capacity(k_len);
    match variant {
        Variant::Iv => {
            let v_a = anti_causal_reliability(priors);
            let fs = compute_iv_filters(t, sigma_w2, DfeVarianceProfile::new(v_a, v_a))?;
            let v_e = fs.output_variance();
            for k in 0..k_len {
                est.push(fs.estimate(y, &priors.means, &priors.means, k), v_e);
            }
        }
        Variant::Tv => {
            let w = t.window;
            let span = w.span();
            let mut vars = vec![0.0; span];
            let mut means = DVector::from_element(span, Complex64::new(0.0, 0.0));
            for k in 0..k_len {
                for m in 0..span {
                    let (mean, var) = match window_symbol(k, m, w.n_p_prime, k_len) {
                        Some(idx) => (priors.means[idx], priors.variances[idx]),
                        None => (Complex64::new(0.0, 0.0), 0.0),
                    };
                    vars[m] = var;
                    means[m] = mean;
                }
                let sol = solve_mmse(t, sigma_w2, &vars)?;
                let x_e = priors.means[k] + sol.f.dotc(&t.window_samples(y, k)) - sol.g.dotc(&means);
                est.push(x_e, 1.0 / sol.xi - priors.variances[k]);
            }
        }
    }
    Ok(est)
}
