//! Monte Carlo experiments: uncoded and coded BER sweeps, EXIT curves and
//! achievable rates, and the prediction-accuracy study.
//!
//! Every block draws its randomness from `stream_rng(seed, task, block)`, so
//! results are identical for any number of worker threads, and receivers run
//! with the same seed see the same bits and noise.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit, ChannelModel, ToeplitzChannel};
use crate::coding::{
    bcjr_decode, block_layout, conv_encode, depuncture, parse_generators, puncture, BlockLayout, CodeRate, CodeSpec,
    Interleaver, Termination,
};
use crate::equalizer::{
    compute_iv_filters, compute_tv_filters_and_equalize, equalize_iv_dfe, equalize_le, DfeVarianceProfile, Feedback,
    Variant,
};
use crate::mapping::{demap_extrinsic, soft_map, Constellation, Modulation, SoftSymbolBlock};
use crate::prediction::{
    draw_block, ep_variance_from_app, estimate_mu_p, BlockPrediction, DemapperLut, DemapperSurvey, LutCache, LutGrid,
    LutSampling, MuPFormula, PredictionConfig, Predictor, PriorQuality, Scheme,
};
use crate::rng::{random_bits, stream_rng};
use crate::{Error, Result};

/// Blocks simulated in parallel between two checks of the stopping rule.
const BATCH: u32 = 16;

/// Equalizer structure and feedback type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Receiver {
    #[serde(rename = "tv-le")]
    TvLe,
    #[serde(rename = "iv-le")]
    IvLe,
    #[serde(rename = "tv-dfe-app")]
    TvDfeApp,
    #[serde(rename = "tv-dfe-ep")]
    TvDfeEp,
    #[serde(rename = "iv-dfe-app")]
    IvDfeApp,
    #[serde(rename = "iv-dfe-ep")]
    IvDfeEp,
    /// IV DFE that assumes error-free decisions (`v̄_c = 0`).
    #[serde(rename = "iv-dfe-perfect")]
    IvDfePerfect,
}

impl Receiver {
    pub const ALL: [Receiver; 7] = [
        Receiver::TvLe,
        Receiver::IvLe,
        Receiver::TvDfeApp,
        Receiver::TvDfeEp,
        Receiver::IvDfeApp,
        Receiver::IvDfeEp,
        Receiver::IvDfePerfect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Receiver::TvLe => "tv-le",
            Receiver::IvLe => "iv-le",
            Receiver::TvDfeApp => "tv-dfe-app",
            Receiver::TvDfeEp => "tv-dfe-ep",
            Receiver::IvDfeApp => "iv-dfe-app",
            Receiver::IvDfeEp => "iv-dfe-ep",
            Receiver::IvDfePerfect => "iv-dfe-perfect",
        }
    }

    /// Feedback type of the DFE receivers.
    pub fn feedback(self) -> Option<Feedback> {
        match self {
            Receiver::TvDfeApp | Receiver::IvDfeApp | Receiver::IvDfePerfect => Some(Feedback::App),
            Receiver::TvDfeEp | Receiver::IvDfeEp => Some(Feedback::Ep),
            Receiver::TvLe | Receiver::IvLe => None,
        }
    }

    /// Whether the receiver predicts its causal reliability from a LUT.
    pub fn needs_prediction(self) -> bool {
        matches!(self, Receiver::IvDfeApp | Receiver::IvDfeEp)
    }
}

impl fmt::Display for Receiver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Receiver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Receiver::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown receiver '{s}'")))
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeConfig {
    pub generators: [u32; 2],
    pub rate: CodeRate,
    pub interleaver_seed: u64,
}

impl CodeConfig {
    pub fn new(generators: &str, rate: CodeRate, interleaver_seed: u64) -> Result<Self> {
        Ok(CodeConfig {
            generators: parse_generators(generators)?,
            rate,
            interleaver_seed,
        })
    }

    pub fn spec(&self) -> Result<CodeSpec> {
        CodeSpec::new(self.generators, self.rate.pattern(), Termination::Terminated)
    }
}

/// Stopping rule per SNR point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    pub min_errors: u64,
    pub max_blocks: u32,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            min_errors: 200,
            max_blocks: 10_000,
        }
    }
}

/// Where demapper LUTs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutSettings {
    pub grid: LutGrid,
    pub sampling: LutSampling,
}

impl Default for LutSettings {
    fn default() -> Self {
        LutSettings {
            grid: LutGrid::standard(),
            sampling: LutSampling::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Channel impulse response, normalized or not; the SNR is `‖h‖²/σ_w²`.
    pub taps: Vec<Complex64>,
    pub modulation: Modulation,
    pub receiver: Receiver,
    pub scheme: Scheme,
    pub prediction: PredictionConfig,
    pub code: Option<CodeConfig>,
    /// Symbols per block.
    pub block_len: usize,
    pub snr_db: Vec<f64>,
    pub turbo_iters: usize,
    pub stop: StopRule,
    pub seed: u64,
    pub lut: LutSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            taps: ChannelModel::proakis_c(1.0).taps().to_vec(),
            modulation: Modulation::Qpsk,
            receiver: Receiver::IvDfeEp,
            scheme: Scheme::SymbolWise,
            prediction: PredictionConfig::default(),
            code: None,
            block_len: 256,
            snr_db: vec![10.0],
            turbo_iters: 4,
            stop: StopRule::default(),
            seed: 1,
            lut: LutSettings::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() {
            return Err(Error::InvalidParameter("SNR grid is empty".into()));
        }
        if self.block_len == 0 {
            return Err(Error::InvalidParameter("block length must be positive".into()));
        }
        if self.stop.max_blocks == 0 {
            return Err(Error::InvalidParameter("max_blocks must be positive".into()));
        }
        self.prediction.validate()?;
        ChannelModel::new(self.taps.clone(), 1.0)?;
        Ok(())
    }

    pub fn channel_at(&self, snr_db: f64) -> Result<ChannelModel> {
        Ok(ChannelModel::new(self.taps.clone(), 1.0)?.at_snr_db(snr_db))
    }

    /// Loads (or generates) the LUT the receiver needs, if any.
    pub fn load_predictor(&self, cache: &LutCache) -> Result<Option<Predictor>> {
        let Some(feedback) = self.receiver.feedback().filter(|_| self.receiver.needs_prediction()) else {
            return Ok(None);
        };
        let c = Constellation::new(self.modulation);
        let lut = cache.get_or_generate(self.scheme, feedback, &c, &self.lut.grid, self.lut.sampling)?;
        Ok(Some(Predictor::new(lut, self.prediction)?))
    }
}

// ---------------------------------------------------------------------------
// Block detection
// ---------------------------------------------------------------------------

/// A receiver bound to one channel realization and SNR.
#[derive(Clone, Debug)]
pub struct Detector {
    receiver: Receiver,
    channel: ChannelModel,
    toeplitz: ToeplitzChannel,
    constellation: Constellation,
    predictor: Option<Predictor>,
}

/// Output of one detector activation.
#[derive(Clone, Debug, Default)]
pub struct Detection {
    /// Extrinsic LLRs, one per channel bit.
    pub extrinsic: Vec<f64>,
    pub estimates: SoftSymbolBlock,
    pub prediction: Option<BlockPrediction>,
    /// Mean APP variance of the demapper posteriors (DFE receivers).
    pub measured_gamma: Option<f64>,
    pub clamp_events: usize,
}

impl Detector {
    pub fn new(
        receiver: Receiver,
        channel: ChannelModel,
        constellation: Constellation,
        predictor: Option<Predictor>,
    ) -> Result<Self> {
        if receiver.needs_prediction() {
            let p = predictor
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter(format!("{receiver} needs a demapper LUT")))?;
            if Some(p.lut.feedback()) != receiver.feedback() {
                return Err(Error::LutMismatch(format!(
                    "{receiver} cannot use a {} LUT",
                    p.lut.feedback()
                )));
            }
            if p.lut.meta.modulation != constellation.modulation() {
                return Err(Error::LutMismatch(format!(
                    "LUT built for {}, receiver uses {}",
                    p.lut.meta.modulation,
                    constellation.modulation()
                )));
            }
        }
        let toeplitz = ToeplitzChannel::for_channel(&channel);
        Ok(Detector {
            receiver,
            channel,
            toeplitz,
            constellation,
            predictor,
        })
    }

    pub fn receiver(&self) -> Receiver {
        self.receiver
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    /// Equalizes and demaps one block given prior LLRs on its channel bits.
    pub fn detect(&self, y: &[Complex64], prior_llrs: &[f64]) -> Result<Detection> {
        let c = &self.constellation;
        let q = c.bits_per_symbol();
        let (pmfs, priors) = soft_map(prior_llrs, c)?;
        let t = &self.toeplitz;
        let s2 = self.channel.sigma_w2();
        let mut det = Detection::default();
        let eq = match self.receiver {
            Receiver::TvLe => {
                det.estimates = equalize_le(y, &priors, Variant::Tv, t, s2)?;
                None
            }
            Receiver::IvLe => {
                det.estimates = equalize_le(y, &priors, Variant::Iv, t, s2)?;
                None
            }
            Receiver::TvDfeApp | Receiver::TvDfeEp => {
                let fb = self.receiver.feedback().unwrap();
                Some(compute_tv_filters_and_equalize(y, &priors, &pmfs, fb, t, s2, c)?)
            }
            Receiver::IvDfePerfect => {
                let fs = compute_iv_filters(t, s2, DfeVarianceProfile::new(0.0, priors.mean_variance()))?;
                Some(equalize_iv_dfe(y, &priors, &pmfs, &fs, Feedback::App, None, c)?)
            }
            Receiver::IvDfeApp | Receiver::IvDfeEp => {
                let predictor = self.predictor.as_ref().expect("checked in Detector::new");
                let pred = predictor.predict(&self.channel, t, &priors, prior_llrs)?;
                let fs = compute_iv_filters(t, s2, pred.profile)?;
                let fb = self.receiver.feedback().unwrap();
                let out = equalize_iv_dfe(y, &priors, &pmfs, &fs, fb, Some(pred.gamma_d_bar), c)?;
                det.prediction = Some(pred);
                Some(out)
            }
        };
        if let Some(eq) = eq {
            det.measured_gamma = Some(eq.posteriors.mean_variance());
            det.clamp_events = eq.clamp_events;
            det.estimates = eq.estimates;
        }
        det.extrinsic = vec![0.0; prior_llrs.len()];
        for k in 0..det.estimates.len() {
            let r = k * q..(k + 1) * q;
            let v_e = det.estimates.variances[k].max(1e-300);
            demap_extrinsic(
                det.estimates.means[k],
                v_e,
                &prior_llrs[r.clone()],
                c,
                &mut det.extrinsic[r],
            );
        }
        Ok(det)
    }
}

// ---------------------------------------------------------------------------
// BER sweeps
// ---------------------------------------------------------------------------

/// BER at one SNR point and turbo iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerRecord {
    pub receiver: Receiver,
    pub snr_db: f64,
    pub turbo_iter: usize,
    pub bit_errors: u64,
    pub bits_counted: u64,
    pub blocks: u32,
    pub ber: f64,
    /// Mean predicted (calibrated) causal variance.
    pub predicted_vc: Option<f64>,
    /// Mean predicted APP variance `γ̄_d`.
    pub predicted_gamma: Option<f64>,
    /// Mean APP variance actually produced by the demapper.
    pub measured_gamma: Option<f64>,
    pub clamp_events: u64,
    /// Bit errors of every block, in block order.
    #[serde(skip)]
    pub block_errors: Vec<u64>,
}

#[derive(Clone, Debug, Default)]
struct IterStats {
    errors: u64,
    predicted_vc: f64,
    predicted_gamma: f64,
    measured_gamma: f64,
    clamps: u64,
}

impl IterStats {
    fn record(&mut self, det: &Detection) {
        if let Some(p) = &det.prediction {
            self.predicted_vc += p.profile.v_c;
            self.predicted_gamma += p.gamma_d_bar;
        }
        if let Some(g) = det.measured_gamma {
            self.measured_gamma += g;
        }
        self.clamps += det.clamp_events as u64;
    }
}

fn hard_errors(llrs: &[f64], bits: &[u8]) -> u64 {
    llrs.iter().zip(bits).filter(|(&l, &b)| (l < 0.0) as u8 != b).count() as u64
}

/// Runs blocks in deterministic batches until `done` holds for the
/// accumulated results (checked after every block) or `max_blocks` is hit.
fn sweep_blocks<T, F, D>(max_blocks: u32, f: F, mut done: D) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u32) -> Result<T> + Sync,
    D: FnMut(&T) -> bool,
{
    let mut out = Vec::new();
    let mut next = 0;
    while next < max_blocks {
        let end = (next + BATCH).min(max_blocks);
        let batch: Vec<Result<T>> = (next..end).into_par_iter().map(&f).collect();
        for r in batch {
            let r = r?;
            let stop = done(&r);
            out.push(r);
            if stop {
                return Ok(out);
            }
        }
        next = end;
    }
    Ok(out)
}

fn records_from_blocks(
    receiver: Receiver,
    snr_db: f64,
    bits_per_block: u64,
    blocks: &[Vec<IterStats>],
) -> Vec<BerRecord> {
    let iters = blocks.first().map_or(0, Vec::len);
    let n = blocks.len() as u32;
    (0..iters)
        .map(|it| {
            let col: Vec<&IterStats> = blocks.iter().map(|b| &b[it]).collect();
            let errors: u64 = col.iter().map(|s| s.errors).sum();
            let bits = bits_per_block * n as u64;
            let mean = |g: fn(&IterStats) -> f64| col.iter().map(|s| g(s)).sum::<f64>() / n.max(1) as f64;
            let predicted = receiver.needs_prediction();
            let dfe = receiver.feedback().is_some();
            BerRecord {
                receiver,
                snr_db,
                turbo_iter: it,
                bit_errors: errors,
                bits_counted: bits,
                blocks: n,
                ber: if bits > 0 { errors as f64 / bits as f64 } else { 0.0 },
                predicted_vc: predicted.then(|| mean(|s| s.predicted_vc)),
                predicted_gamma: predicted.then(|| mean(|s| s.predicted_gamma)),
                measured_gamma: dfe.then(|| mean(|s| s.measured_gamma)),
                clamp_events: col.iter().map(|s| s.clamps).sum(),
                block_errors: col.iter().map(|s| s.errors).collect(),
            }
        })
        .collect()
}

/// Uncoded BER: detection without priors, hard decisions on the extrinsic
/// LLRs. One record per SNR point.
pub fn run_uncoded_ber(cfg: &SimConfig, predictor: Option<&Predictor>) -> Result<Vec<BerRecord>> {
    cfg.validate()?;
    if cfg.code.is_some() {
        return Err(Error::InvalidParameter("uncoded sweep got a code configuration".into()));
    }
    let c = Constellation::new(cfg.modulation);
    let nbits = cfg.block_len * c.bits_per_symbol();
    let mut records = Vec::new();
    for (si, &snr) in cfg.snr_db.iter().enumerate() {
        let det = Detector::new(cfg.receiver, cfg.channel_at(snr)?, c.clone(), predictor.cloned())?;
        let zeros = vec![0.0; nbits];
        let mut total = 0;
        let blocks = sweep_blocks(
            cfg.stop.max_blocks,
            |b| {
                let mut rng = stream_rng(cfg.seed, si as u32, b);
                let bits = random_bits(&mut rng, nbits);
                let x = c.modulate(&bits)?;
                let y = transmit(&x, det.channel(), &mut rng);
                let d = det.detect(&y, &zeros)?;
                let mut s = IterStats {
                    errors: hard_errors(&d.extrinsic, &bits),
                    ..Default::default()
                };
                s.record(&d);
                Ok(vec![s])
            },
            |s| {
                total += s[0].errors;
                total >= cfg.stop.min_errors
            },
        )?;
        records.extend(records_from_blocks(cfg.receiver, snr, nbits as u64, &blocks));
    }
    Ok(records)
}

/// Bits, layout and interleaver shared by all blocks of a coded sweep.
#[derive(Clone, Debug)]
pub struct CodedLink {
    pub spec: CodeSpec,
    pub layout: BlockLayout,
    pub interleaver: Interleaver,
}

impl CodedLink {
    pub fn new(code: &CodeConfig, channel_bits: usize) -> Result<Self> {
        let spec = code.spec()?;
        let layout = block_layout(channel_bits, &spec)?;
        let interleaver = Interleaver::random(layout.coded_bits, code.interleaver_seed);
        Ok(CodedLink {
            spec,
            layout,
            interleaver,
        })
    }

    /// Encodes, punctures, interleaves and pads with random filler bits.
    pub fn channel_bits<R: Rng + ?Sized>(&self, info: &[u8], rng: &mut R) -> Result<Vec<u8>> {
        let coded = conv_encode(info, &self.spec);
        let coded = match &self.spec.puncture {
            Some(p) => puncture(&coded, p)?,
            None => coded,
        };
        let mut out = self.interleaver.interleave(&coded)?;
        out.extend(random_bits(rng, self.layout.filler_bits));
        Ok(out)
    }

    /// Channel-order equalizer extrinsics to mother-code decoder inputs.
    pub fn to_decoder(&self, channel_llrs: &[f64]) -> Result<Vec<f64>> {
        let coded = self.interleaver.deinterleave(&channel_llrs[..self.layout.coded_bits])?;
        match &self.spec.puncture {
            Some(p) => depuncture(&coded, p, self.layout.trellis_steps),
            None => Ok(coded),
        }
    }

    /// Decoder extrinsics back to channel-order priors (filler priors 0).
    pub fn to_channel(&self, decoder_llrs: &[f64]) -> Result<Vec<f64>> {
        let coded = match &self.spec.puncture {
            Some(p) => puncture(decoder_llrs, p)?,
            None => decoder_llrs.to_vec(),
        };
        let mut out = self.interleaver.interleave(&coded)?;
        out.resize(out.len() + self.layout.filler_bits, 0.0);
        Ok(out)
    }
}

/// Coded BER with turbo iterations: one record per SNR point and iteration
/// `0..=turbo_iters`. Only information bits are counted; the stopping rule
/// looks at the last iteration.
pub fn run_coded_ber(cfg: &SimConfig, predictor: Option<&Predictor>) -> Result<Vec<BerRecord>> {
    cfg.validate()?;
    let code = cfg
        .code
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("coded sweep needs a code configuration".into()))?;
    let c = Constellation::new(cfg.modulation);
    let nbits = cfg.block_len * c.bits_per_symbol();
    let link = CodedLink::new(code, nbits)?;
    let kb = link.layout.info_bits;
    let mut records = Vec::new();
    for (si, &snr) in cfg.snr_db.iter().enumerate() {
        let det = Detector::new(cfg.receiver, cfg.channel_at(snr)?, c.clone(), predictor.cloned())?;
        let mut total = 0;
        let blocks = sweep_blocks(
            cfg.stop.max_blocks,
            |b| {
                let mut rng = stream_rng(cfg.seed, si as u32, b);
                let info = random_bits(&mut rng, kb);
                let bits = link.channel_bits(&info, &mut rng)?;
                let x = c.modulate(&bits)?;
                let y = transmit(&x, det.channel(), &mut rng);
                let mut priors = vec![0.0; nbits];
                let mut stats = Vec::with_capacity(cfg.turbo_iters + 1);
                for it in 0..=cfg.turbo_iters {
                    let d = det.detect(&y, &priors)?;
                    let dec = bcjr_decode(&link.to_decoder(&d.extrinsic)?, &link.spec)?;
                    let mut s = IterStats {
                        errors: dec.hard_bits.iter().zip(&info).filter(|(a, b)| a != b).count() as u64,
                        ..Default::default()
                    };
                    s.record(&d);
                    stats.push(s);
                    if it < cfg.turbo_iters {
                        priors = link.to_channel(&dec.extrinsic)?;
                    }
                }
                Ok(stats)
            },
            |s| {
                total += s.last().map_or(0, |x| x.errors);
                total >= cfg.stop.min_errors
            },
        )?;
        records.extend(records_from_blocks(cfg.receiver, snr, kb as u64, &blocks));
    }
    Ok(records)
}

/// SNR at which a BER curve crosses `target`, by log-linear interpolation
/// between the first bracketing pair of points.
pub fn snr_at_ber(points: &[(f64, f64)], target: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let ((s0, b0), (s1, b1)) = (w[0], w[1]);
        if b0 >= target && b1 <= target && b0 > 0.0 {
            if b1 <= 0.0 || b0 == b1 {
                return Some(s1);
            }
            let t = (b0.ln() - target.ln()) / (b0.ln() - b1.ln());
            Some(s0 + t * (s1 - s0))
        } else {
            None
        }
    })
}

/// Paired comparison of per-block error counts from runs sharing their
/// random numbers: mean of `a - b` per block and its z statistic.
pub fn paired_z(a: &[u64], b: &[u64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::LengthMismatch {
            expected: a.len().max(2),
            actual: b.len(),
        });
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x as f64 - y as f64).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let z = if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    Ok((mean, z))
}

// ---------------------------------------------------------------------------
// EXIT analysis
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitCurve {
    pub receiver: Receiver,
    pub snr_db: f64,
    pub i_a: Vec<f64>,
    pub i_e: Vec<f64>,
}

const MI_BINS: usize = 64;

/// Histogram estimate of `I(b; L)` with 64 bins on `tanh(L/2)`.
pub fn mutual_information_histogram(llrs: &[f64], bits: &[u8]) -> f64 {
    let mut hist = [[0u64; MI_BINS]; 2];
    for (&l, &b) in llrs.iter().zip(bits) {
        let t = (l / 2.0).tanh();
        let i = (((t + 1.0) / 2.0 * MI_BINS as f64) as usize).min(MI_BINS - 1);
        hist[b as usize & 1][i] += 1;
    }
    let n = [hist[0].iter().sum::<u64>() as f64, hist[1].iter().sum::<u64>() as f64];
    let total = n[0] + n[1];
    if n[0] == 0.0 || n[1] == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for i in 0..MI_BINS {
        let joint = hist[0][i] as f64 + hist[1][i] as f64;
        for b in 0..2 {
            let h = hist[b][i] as f64;
            if h > 0.0 {
                // p(b, i) log2 p(i | b) / p(i)
                mi += h / total * ((h / n[b]) / (joint / total)).log2();
            }
        }
    }
    mi.clamp(0.0, 1.0)
}

/// Measures the receiver's transfer curve at one SNR: priors with
/// consistent-Gaussian quality `I_A` on the true bits, extrinsic MI measured
/// over `blocks` blocks.
pub fn measure_exit(
    cfg: &SimConfig,
    predictor: Option<&Predictor>,
    snr_db: f64,
    i_a: &[f64],
    blocks: u32,
) -> Result<ExitCurve> {
    if i_a.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidParameter("I_A grid must lie in [0, 1]".into()));
    }
    let c = Constellation::new(cfg.modulation);
    let nbits = cfg.block_len * c.bits_per_symbol();
    let det = Detector::new(cfg.receiver, cfg.channel_at(snr_db)?, c.clone(), predictor.cloned())?;
    let i_e = i_a
        .iter()
        .enumerate()
        .map(|(ai, &ia)| {
            let quality = PriorQuality::from_mutual_information(ia, 2.0);
            let parts: Vec<(Vec<f64>, Vec<u8>)> = (0..blocks)
                .into_par_iter()
                .map(|b| {
                    let mut rng = stream_rng(cfg.seed, ai as u32, b);
                    let bits = random_bits(&mut rng, nbits);
                    let x = c.modulate(&bits)?;
                    let y = transmit(&x, det.channel(), &mut rng);
                    let priors: Vec<f64> = bits.iter().map(|&bit| quality.sample_llr(&mut rng, bit)).collect();
                    Ok((det.detect(&y, &priors)?.extrinsic, bits))
                })
                .collect::<Result<_>>()?;
            let (llrs, bits): (Vec<f64>, Vec<u8>) = parts.into_iter().flat_map(|(l, b)| l.into_iter().zip(b)).unzip();
            Ok(mutual_information_histogram(&llrs, &bits))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExitCurve {
        receiver: cfg.receiver,
        snr_db,
        i_a: i_a.to_vec(),
        i_e,
    })
}

/// Area-theorem rate `Q ∫₀¹ I_E dI_A`, trapezoid rule.
pub fn achievable_rate(curve: &ExitCurve, bits_per_symbol: usize) -> Result<f64> {
    let n = curve.i_a.len();
    if n < 5 || curve.i_e.len() != n {
        return Err(Error::SparseGrid(n.min(curve.i_e.len())));
    }
    if curve.i_a[0] > 1e-9 || curve.i_a[n - 1] < 1.0 - 1e-9 || curve.i_a.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("EXIT grid must increase from 0 to 1".into()));
    }
    let area: f64 = (1..n)
        .map(|i| 0.5 * (curve.i_e[i] + curve.i_e[i - 1]) * (curve.i_a[i] - curve.i_a[i - 1]))
        .sum();
    Ok(bits_per_symbol as f64 * area)
}

// ---------------------------------------------------------------------------
// Prediction-accuracy study
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub modulation: Modulation,
    pub block_len: usize,
    /// Test grid; LUTs are looked up at these `(v_e, I_A)` cells.
    pub grid: LutGrid,
    /// Variance ratios of the test priors.
    pub eta_test: Vec<f64>,
    /// Blocks per test cell.
    pub trials: usize,
    pub mu_p_formula: MuPFormula,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            modulation: Modulation::Qam16,
            block_len: 1024,
            grid: LutGrid::standard(),
            eta_test: vec![1.0, 2.0, 3.0],
            trials: 10,
            mu_p_formula: MuPFormula::Mean,
            seed: 7,
        }
    }
}

/// The four tables compared by the study, all built from one survey.
#[derive(Clone, Debug)]
pub struct StudyLuts {
    pub binary_app: DemapperLut,
    pub binary_ep: DemapperLut,
    pub symbol_app: DemapperLut,
    pub symbol_ep: DemapperLut,
}

impl StudyLuts {
    pub fn from_survey(s: &DemapperSurvey) -> Self {
        StudyLuts {
            binary_app: s.table(Scheme::BinaryMi, Feedback::App),
            binary_ep: s.table(Scheme::BinaryMi, Feedback::Ep),
            symbol_app: s.table(Scheme::SymbolWise, Feedback::App),
            symbol_ep: s.table(Scheme::SymbolWise, Feedback::Ep),
        }
    }

    fn get(&self, scheme: Scheme, feedback: Feedback) -> &DemapperLut {
        match (scheme, feedback) {
            (Scheme::BinaryMi, Feedback::App) => &self.binary_app,
            (Scheme::BinaryMi, Feedback::Ep) => &self.binary_ep,
            (Scheme::SymbolWise, Feedback::App) => &self.symbol_app,
            (Scheme::SymbolWise, Feedback::Ep) => &self.symbol_ep,
        }
    }
}

/// Prediction MSE for one test `η_p`, scheme and feedback type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub eta_p: f64,
    pub scheme: Scheme,
    pub feedback: Feedback,
    /// Mean over cells and trials of `(predicted - measured)²`.
    pub mse: f64,
    /// Mean over cells of the across-trial variance of the measured value:
    /// the MSE of an oracle that knows each cell's expectation.
    pub noise_floor: f64,
    /// MSE restricted to the `I_A = 0` row.
    pub mse_no_prior: f64,
}

const COMBOS: [(Scheme, Feedback); 4] = [
    (Scheme::BinaryMi, Feedback::App),
    (Scheme::BinaryMi, Feedback::Ep),
    (Scheme::SymbolWise, Feedback::App),
    (Scheme::SymbolWise, Feedback::Ep),
];

/// Compares LUT predictions against the causal variance measured on
/// emulated AWGN equalizer outputs, for priors of every test `η_p`.
pub fn run_prediction_study(cfg: &StudyConfig, luts: &StudyLuts) -> Result<Vec<StudyRow>> {
    cfg.grid.validate()?;
    if cfg.trials < 2 {
        return Err(Error::InvalidParameter(
            "the study needs at least 2 trials per cell".into(),
        ));
    }
    let c = Constellation::new(cfg.modulation);
    let v_e: Vec<f64> = cfg.grid.ve_db.iter().map(|d| 10f64.powf(d / 10.0)).collect();
    let n_ve = v_e.len();
    let n_ia = cfg.grid.i_a.len();
    let mut rows = Vec::new();
    for (ei, &eta) in cfg.eta_test.iter().enumerate() {
        // [ia][combo] -> (sq err sum, floor sum, sq err sum at ia = 0)
        let per_row: Vec<[(f64, f64); 4]> = (0..n_ia)
            .into_par_iter()
            .map(|ri| {
                let quality = PriorQuality::from_mutual_information(cfg.grid.i_a[ri], eta);
                // truth[combo][col][trial], pred[combo][col][trial]
                let mut truth = vec![vec![Vec::with_capacity(cfg.trials); n_ve]; 2];
                let mut pred = vec![vec![Vec::with_capacity(cfg.trials); n_ve]; 4];
                for tr in 0..cfg.trials {
                    let mut rng = stream_rng(cfg.seed, (ei * n_ia + ri) as u32, tr as u32);
                    let d = draw_block(&c, &quality, &v_e, cfg.block_len, &mut rng, true);
                    let mu = estimate_mu_p(&d.llrs, cfg.mu_p_formula);
                    for (col, &ve) in v_e.iter().enumerate() {
                        let g = d.mean_gamma[col];
                        truth[0][col].push(g);
                        truth[1][col].push(ep_variance_from_app(g, ve));
                        for (k, &(scheme, fb)) in COMBOS.iter().enumerate() {
                            let prior = match scheme {
                                Scheme::BinaryMi => mu,
                                Scheme::SymbolWise => d.mean_vp,
                            };
                            pred[k][col].push(luts.get(scheme, fb).lookup(ve, prior));
                        }
                    }
                }
                let mut acc = [(0.0, 0.0); 4];
                for (k, &(_, fb)) in COMBOS.iter().enumerate() {
                    let ti = (fb == Feedback::Ep) as usize;
                    for col in 0..n_ve {
                        let t = &truth[ti][col];
                        let mean = t.iter().sum::<f64>() / t.len() as f64;
                        let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t.len() - 1) as f64;
                        let se: f64 = t.iter().zip(&pred[k][col]).map(|(a, b)| (a - b).powi(2)).sum();
                        acc[k].0 += se / t.len() as f64;
                        acc[k].1 += var;
                    }
                }
                acc
            })
            .collect();
        let cells = (n_ia * n_ve) as f64;
        for (k, &(scheme, feedback)) in COMBOS.iter().enumerate() {
            let mse = per_row.iter().map(|r| r[k].0).sum::<f64>() / cells;
            let noise_floor = per_row.iter().map(|r| r[k].1).sum::<f64>() / cells;
            let zero_row = cfg.grid.i_a.iter().position(|&ia| ia == 0.0);
            let mse_no_prior = zero_row.map_or(f64::NAN, |r| per_row[r][k].0 / n_ve as f64);
            rows.push(StudyRow {
                eta_p: eta,
                scheme,
                feedback,
                mse,
                noise_floor,
                mse_no_prior,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

/// Reproducibility record written next to every result file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// LUT file name to content hash.
    pub lut_hashes: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            lut_hashes: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn add_lut(&mut self, lut: &DemapperLut) {
        let m = &lut.meta;
        let name = format!("{}_{}_{}_eta{}", m.modulation, m.scheme, m.feedback, m.sampling.eta_p);
        self.lut_hashes.insert(name, lut.digest());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::mutual_information;

    fn cfg(receiver: Receiver, modulation: Modulation) -> SimConfig {
        SimConfig {
            receiver,
            modulation,
            block_len: 64,
            stop: StopRule {
                min_errors: 50,
                max_blocks: 40,
            },
            ..Default::default()
        }
    }

    #[test]
    fn receiver_names_round_trip() {
        for r in Receiver::ALL {
            assert_eq!(r.name().parse::<Receiver>().unwrap(), r);
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.name()));
        }
        assert!("tv-dfe".parse::<Receiver>().is_err());
    }

    #[test]
    fn snr_interpolation() {
        let pts = [(0.0, 1e-1), (10.0, 1e-3), (20.0, 1e-5)];
        assert!((snr_at_ber(&pts, 1e-2).unwrap() - 5.0).abs() < 1e-12);
        assert!((snr_at_ber(&pts, 1e-4).unwrap() - 15.0).abs() < 1e-12);
        assert!(snr_at_ber(&pts, 1e-6).is_none());
    }

    #[test]
    fn mi_histogram_limits() {
        let bits: Vec<u8> = (0..2000).map(|i| (i % 2) as u8).collect();
        let perfect: Vec<f64> = bits.iter().map(|&b| if b == 0 { 30.0 } else { -30.0 }).collect();
        assert!((mutual_information_histogram(&perfect, &bits) - 1.0).abs() < 1e-12);
        assert_eq!(mutual_information_histogram(&vec![0.0; 2000], &bits), 0.0);
    }

    #[test]
    fn mi_histogram_matches_j_function() {
        let mut rng = stream_rng(3, 0, 0);
        let q = PriorQuality::from_mu(2.0, 2.0);
        let bits = random_bits(&mut rng, 200_000);
        let llrs: Vec<f64> = bits.iter().map(|&b| q.sample_llr(&mut rng, b)).collect();
        let est = mutual_information_histogram(&llrs, &bits);
        assert!((est - mutual_information(2.0)).abs() < 0.01, "{est}");
    }

    #[test]
    fn paired_statistic() {
        let (m, z) = paired_z(&[3, 4, 5, 4], &[1, 2, 3, 2]).unwrap();
        assert_eq!(m, 2.0);
        assert!(z.is_infinite() && z > 0.0);
        let (m, z) = paired_z(&[2, 0, 2, 0], &[0, 0, 0, 0]).unwrap();
        assert_eq!(m, 1.0);
        assert!((z - 1.0 / (4.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
        assert!(paired_z(&[1], &[1]).is_err());
    }

    #[test]
    fn rate_limits() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let mut curve = ExitCurve {
            receiver: Receiver::TvLe,
            snr_db: 0.0,
            i_a: grid.clone(),
            i_e: vec![1.0; 11],
        };
        assert!((achievable_rate(&curve, 3).unwrap() - 3.0).abs() < 1e-12);
        curve.i_e = vec![0.0; 11];
        assert_eq!(achievable_rate(&curve, 3).unwrap(), 0.0);
        curve.i_a.truncate(4);
        curve.i_e.truncate(4);
        assert!(matches!(achievable_rate(&curve, 3), Err(Error::SparseGrid(4))));
    }

    #[test]
    fn noiseless_flat_channel_is_error_free() {
        for r in [
            Receiver::TvLe,
            Receiver::IvLe,
            Receiver::TvDfeEp,
            Receiver::IvDfePerfect,
        ] {
            let mut c = cfg(r, Modulation::Qam16);
            c.taps = vec![Complex64::new(1.0, 0.0)];
            c.snr_db = vec![80.0];
            let rec = run_uncoded_ber(&c, None).unwrap();
            assert_eq!(rec[0].bit_errors, 0, "{r}");
            assert_eq!(rec[0].blocks, 40);
        }
    }

    #[test]
    fn prediction_receivers_need_a_lut() {
        let c = cfg(Receiver::IvDfeEp, Modulation::Qpsk);
        assert!(run_uncoded_ber(&c, None).is_err());
    }

    #[test]
    fn coded_link_round_trip() {
        let code = CodeConfig::new("7,5", CodeRate::FiveSixths, 3).unwrap();
        let link = CodedLink::new(&code, 768).unwrap();
        let mut rng = stream_rng(0, 0, 0);
        let info = random_bits(&mut rng, link.layout.info_bits);
        let bits = link.channel_bits(&info, &mut rng).unwrap();
        assert_eq!(bits.len(), 768);
        let llrs: Vec<f64> = bits.iter().map(|&b| if b == 0 { 5.0 } else { -5.0 }).collect();
        let dec = bcjr_decode(&link.to_decoder(&llrs).unwrap(), &link.spec).unwrap();
        assert_eq!(dec.hard_bits, info);
        assert_eq!(
            link.to_channel(&vec![0.0; 2 * link.layout.trellis_steps])
                .unwrap()
                .len(),
            768
        );
    }

    #[test]
    fn coded_high_snr_is_error_free_and_deterministic() {
        let mut c = cfg(Receiver::TvDfeEp, Modulation::Psk8);
        c.code = Some(CodeConfig::new("7,5", CodeRate::Half, 1).unwrap());
        c.snr_db = vec![40.0];
        c.turbo_iters = 1;
        c.stop.max_blocks = 4;
        let a = run_coded_ber(&c, None).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|r| r.bit_errors == 0));
        let b = run_coded_ber(&c, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uncoded_results_do_not_depend_on_stop_batching() {
        let mut c = cfg(Receiver::IvLe, Modulation::Qpsk);
        c.snr_db = vec![6.0];
        c.stop = StopRule {
            min_errors: 30,
            max_blocks: 100,
        };
        let a = run_uncoded_ber(&c, None).unwrap();
        c.stop.max_blocks = a[0].blocks;
        c.stop.min_errors = u64::MAX;
        let b = run_uncoded_ber(&c, None).unwrap();
        assert_eq!(a[0].bit_errors, b[0].bit_errors);
        assert_eq!(a[0].block_errors, b[0].block_errors);
    }
}
