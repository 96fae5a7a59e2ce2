//! Static ISI channel with AWGN and its sliding-window Toeplitz model.
//!
//! Taps are stored in convolution order `h_0 … h_{L-1}`. The window matrix
//! reverses them, so row `n` of `H` holds `h_{L-1} … h_0` starting at
//! column `n`.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::complex_gaussian;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    taps: Vec<Complex64>,
    sigma_w2: f64,
}

impl ChannelModel {
    pub fn new(taps: Vec<Complex64>, sigma_w2: f64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidParameter("channel needs at least one tap".into()));
        }
        let energy: f64 = taps.iter().map(|h| h.norm_sqr()).sum();
        if !(energy > 0.0) || !energy.is_finite() {
            return Err(Error::InvalidParameter(
                "channel taps must be finite and not all zero".into(),
            ));
        }
        if !(sigma_w2 >= 0.0) || !sigma_w2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be >= 0, got {sigma_w2}"
            )));
        }
        Ok(ChannelModel { taps, sigma_w2 })
    }

    /// Proakis-C, `[1, 2, 3, 2, 1] / sqrt(19)`.
    pub fn proakis_c(sigma_w2: f64) -> Self {
        let s = 19f64.sqrt();
        let taps = [1.0, 2.0, 3.0, 2.0, 1.0]
            .iter()
            .map(|&t| Complex64::new(t / s, 0.0))
            .collect();
        ChannelModel { taps, sigma_w2 }
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    /// Delay spread `L`.
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn sigma_w2(&self) -> f64 {
        self.sigma_w2
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|h| h.norm_sqr()).sum()
    }

    pub fn with_sigma_w2(&self, sigma_w2: f64) -> Self {
        ChannelModel {
            taps: self.taps.clone(),
            sigma_w2,
        }
    }

    /// Same taps with the noise set from `SNR = sigma_x² ‖h‖² / sigma_w²`
    /// (unit symbol energy).
    pub fn at_snr_db(&self, snr_db: f64) -> Self {
        self.with_sigma_w2(sigma_w2_from_snr_db(snr_db, self.energy()))
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.energy() / self.sigma_w2).log10()
    }
}

pub fn sigma_w2_from_snr_db(snr_db: f64, channel_energy: f64) -> f64 {
    channel_energy / 10f64.powf(snr_db / 10.0)
}

/// Parses `re` or `re+imj` / `re-imj` tap lists, comma separated.
pub fn parse_taps(s: &str) -> Result<Vec<Complex64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim().replace(' ', "");
            Complex64::from_str(&t).map_err(|_| Error::Parse(format!("bad tap '{t}'")))
        })
        .collect()
}

/// Sends `x` (symbols `1..=K`) through the channel.
///
/// Symbols outside the block are zero. The output carries `K + L - 1`
/// samples: the first `K` are `y_1 … y_K` and the last `L - 1` are the
/// channel tail that the guard interval makes available to the receiver.
pub fn transmit<R: Rng + ?Sized>(x: &[Complex64], ch: &ChannelModel, rng: &mut R) -> Vec<Complex64> {
    if x.is_empty() {
        return Vec::new();
    }
    let l = ch.len();
    let total = x.len() + l - 1;
    (0..total)
        .map(|k| {
            let lo = k.saturating_sub(x.len() - 1);
            let hi = k.min(l - 1);
            let mut y = Complex64::new(0.0, 0.0);
            for tap in lo..=hi {
                y += ch.taps[tap] * x[k - tap];
            }
            if ch.sigma_w2 > 0.0 {
                y += complex_gaussian(rng, ch.sigma_w2);
            }
            y
        })
        .collect()
}

/// FIR window geometry: `n_p` pre-cursor and `n_d` post-cursor samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub n_p: usize,
    pub n_d: usize,
    /// Window length `N = N_p + N_d + 1`.
    pub n: usize,
    /// Causal symbol span `N_p' = N_p + L - 1`.
    pub n_p_prime: usize,
}

impl WindowConfig {
    pub fn new(n_p: usize, n_d: usize, l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidParameter("delay spread must be >= 1".into()));
        }
        Ok(WindowConfig {
            n_p,
            n_d,
            n: n_p + n_d + 1,
            n_p_prime: n_p + l - 1,
        })
    }

    /// Number of symbols covered by the window, `N + L - 1`.
    pub fn span(&self) -> usize {
        self.n_p_prime + self.n_d + 1
    }
}

/// `N = 3L + 2`, `N_d = 2L`.
pub fn default_window(l: usize) -> WindowConfig {
    let n = 3 * l + 2;
    let n_d = 2 * l;
    let n_p = n - n_d - 1;
    WindowConfig {
        n_p,
        n_d,
        n,
        n_p_prime: n_p + l - 1,
    }
}

/// Windowed channel matrix `H` (`N × (N + L - 1)`) and its centre column.
#[derive(Clone, Debug)]
pub struct ToeplitzChannel {
    pub h: DMatrix<Complex64>,
    pub h0: DVector<Complex64>,
    pub window: WindowConfig,
    pub l: usize,
}

pub fn build_toeplitz(ch: &ChannelModel, w: WindowConfig) -> Result<ToeplitzChannel> {
    let l = ch.len();
    if w.n_p_prime != w.n_p + l - 1 || w.n != w.n_p + w.n_d + 1 {
        return Err(Error::InvalidParameter("window does not match channel length".into()));
    }
    let cols = w.n + l - 1;
    let h = DMatrix::from_fn(w.n, cols, |n, m| {
        if m >= n && m - n < l {
            ch.taps[l - 1 - (m - n)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let h0 = h.column(w.n_p_prime).into_owned();
    Ok(ToeplitzChannel { h, h0, window: w, l })
}

impl ToeplitzChannel {
    pub fn for_channel(ch: &ChannelModel) -> Self {
        build_toeplitz(ch, default_window(ch.len())).expect("default window always matches")
    }

    /// Received window `[y_{k-N_p} … y_{k+N_d}]` for 0-based symbol index `k`;
    /// samples outside `y` are zero.
    pub fn window_samples(&self, y: &[Complex64], k: usize) -> DVector<Complex64> {
        let w = self.window;
        DVector::from_fn(w.n, |n, _| {
            let idx = k as isize - w.n_p as isize + n as isize;
            if idx >= 0 && (idx as usize) < y.len() {
                y[idx as usize]
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }
}
