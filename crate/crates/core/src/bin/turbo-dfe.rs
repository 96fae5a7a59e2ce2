use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use turbo_dfe::channel::{parse_taps, ChannelModel, ToeplitzChannel};
use turbo_dfe::coding::CodeRate;
use turbo_dfe::equalizer::Feedback;
use turbo_dfe::harness::{
    achievable_rate, measure_exit, run_coded_ber, run_prediction_study, run_uncoded_ber, write_csv, CodeConfig,
    LutSettings, Receiver, RunManifest, SimConfig, StopRule, StudyConfig, StudyLuts,
};
use turbo_dfe::mapping::{soft_map, Constellation, Modulation};
use turbo_dfe::prediction::{
    app_variance_from_ep, ep_variance_from_app, estimate_mu_p, fixed_point_solve, phi_rec, survey_demapper, InitRule,
    LutCache, LutGrid, LutSampling, MuPFormula, PredictionConfig, PriorQuality, Scheme,
};
use turbo_dfe::rng::{random_bits, stream_rng};
use turbo_dfe::{Error, Result};

/// Turbo equalization simulator: TV/IV MMSE linear and decision-feedback
/// equalizers with online prediction of the feedback reliability.
///
/// Every flag can also come from a JSON object passed with `--config`
/// (keys are flag names); flags given on the command line win.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bit error rate sweep, uncoded or with turbo iterations when `--rate` is set.
    #[command(args_override_self = true)]
    Ber(BerArgs),
    /// Generate (or load from the cache) a demapper LUT.
    #[command(name = "lut-gen", args_override_self = true)]
    LutGen(LutGenArgs),
    /// Print the fixed-point trajectory of the feedback-reliability prediction.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// EXIT curves and area-theorem rates.
    #[command(args_override_self = true)]
    Exit(ExitArgs),
    /// Prediction accuracy of binary vs symbol-wise LUTs under mismatched priors.
    #[command(args_override_self = true)]
    Study(StudyArgs),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Ber(a) => &a.common,
            Command::LutGen(a) => &a.common,
            Command::Predict(a) => &a.common,
            Command::Exit(a) => &a.common,
            Command::Study(a) => &a.common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Ber(_) => "ber",
            Command::LutGen(_) => "lut-gen",
            Command::Predict(_) => "predict",
            Command::Exit(_) => "exit",
            Command::Study(_) => "study",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum ChannelName {
    #[value(name = "proakis-c")]
    ProakisC,
}

#[derive(Args, Debug, Serialize)]
struct Common {
    /// JSON file with flag values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Constellation: bpsk, qpsk, 8psk or 16qam.
    #[arg(long = "mod", default_value = "qpsk", value_parser = parse_mod)]
    modulation: Modulation,
    #[arg(long, value_enum, default_value = "proakis-c")]
    channel: ChannelName,
    /// Comma-separated complex taps, e.g. `1,0.5-0.2i`; overrides `--channel`.
    #[arg(long)]
    taps: Option<String>,
    /// Master seed of the Monte Carlo streams.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for CSV files and the run manifest.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Symbols per block.
    #[arg(long, default_value_t = 256)]
    block_len: usize,
}

#[derive(Args, Debug, Serialize)]
struct LutArgs {
    /// Prior model of the LUT rows.
    #[arg(long, default_value = "symbol", value_parser = parse_scheme)]
    scheme: Scheme,
    /// Variance ratio of the consistent-Gaussian priors used to build LUTs.
    #[arg(long, default_value_t = 2.0)]
    eta_p: f64,
    /// Blocks of 1024 symbols per LUT cell.
    #[arg(long, default_value_t = 100)]
    lut_blocks: usize,
    /// Seed of the LUT Monte Carlo.
    #[arg(long, default_value_t = 0x5eed)]
    lut_seed: u64,
}

impl LutArgs {
    fn settings(&self) -> LutSettings {
        LutSettings {
            grid: LutGrid::standard(),
            sampling: LutSampling {
                blocks: self.lut_blocks,
                eta_p: self.eta_p,
                seed: self.lut_seed,
                ..Default::default()
            },
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct PredictionArgs {
    /// Fixed-point iterations per prediction.
    #[arg(long, default_value_t = 3)]
    n_pred: usize,
    /// Calibration factor; 0 disables calibration.
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    /// `mean` (per-bit average) or `paper` (unnormalized sum) estimator of μ_p.
    #[arg(long, default_value = "mean", value_parser = parse_mu_p)]
    mu_p_formula: MuPFormula,
    /// Fixed initial value of the recursion instead of the SNR heuristic.
    #[arg(long)]
    init: Option<f64>,
}

impl PredictionArgs {
    fn config(&self) -> PredictionConfig {
        PredictionConfig {
            n_pred: self.n_pred,
            beta: (self.beta > 0.0).then_some(self.beta),
            init: self.init.map_or(InitRule::Heuristic, InitRule::Fixed),
            mu_p_formula: self.mu_p_formula,
            ..Default::default()
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct BerArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    lut: LutArgs,
    #[command(flatten)]
    prediction: PredictionArgs,
    #[arg(long, value_parser = parse_receiver, default_value = "iv-dfe-ep")]
    receiver: Receiver,
    /// SNR grid `a:b:step` (or a single value) in dB.
    #[arg(long, default_value = "10:20:2", value_parser = parse_range)]
    snr_db: ::std::vec::Vec<f64>,
    /// Code rate; enables the coded link with turbo iterations.
    #[arg(long, value_parser = parse_rate)]
    rate: Option<CodeRate>,
    /// Octal generators of the mother code.
    #[arg(long, default_value = "7,5")]
    code: String,
    #[arg(long, default_value_t = 1)]
    interleaver_seed: u64,
    #[arg(long, default_value_t = 4)]
    turbo_iters: usize,
    /// Stop an SNR point after this many bit errors.
    #[arg(long, default_value_t = 200)]
    min_errors: u64,
    #[arg(long, default_value_t = 10_000)]
    max_blocks: u32,
}

#[derive(Args, Debug, Serialize)]
struct LutGenArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    lut: LutArgs,
    /// Feedback type of the table.
    #[arg(long, default_value = "ep", value_parser = parse_feedback)]
    feedback: Feedback,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    lut: LutArgs,
    #[command(flatten)]
    prediction: PredictionArgs,
    #[arg(long, default_value = "ep", value_parser = parse_feedback)]
    feedback: Feedback,
    /// SNR values in dB (`a:b:step` or a single value).
    #[arg(long, visible_alias = "snr-db", default_value = "15", value_parser = parse_range)]
    snr: ::std::vec::Vec<f64>,
    /// Prior mutual information levels (`a:b:step` or a single value).
    #[arg(long, default_value = "0", value_parser = parse_range)]
    ia: ::std::vec::Vec<f64>,
    /// Symbols of the emulated prior block.
    #[arg(long, default_value_t = 4096)]
    prior_len: usize,
}

#[derive(Args, Debug, Serialize)]
struct ExitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    lut: LutArgs,
    #[command(flatten)]
    prediction: PredictionArgs,
    #[arg(long, value_parser = parse_receiver, default_value = "iv-dfe-ep")]
    receiver: Receiver,
    #[arg(long, default_value = "0:20:4", value_parser = parse_range)]
    snr_db: ::std::vec::Vec<f64>,
    /// Prior mutual information grid; must run from 0 to 1 for rates.
    #[arg(long, default_value = "0:1:0.1", value_parser = parse_range)]
    ia: ::std::vec::Vec<f64>,
    /// Blocks per EXIT point.
    #[arg(long, default_value_t = 40)]
    blocks: u32,
}

#[derive(Args, Debug, Serialize)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    lut: LutArgs,
    #[arg(long, default_value = "mean", value_parser = parse_mu_p)]
    mu_p_formula: MuPFormula,
    /// Variance ratios of the test priors.
    #[arg(long, default_value = "1:3:1", value_parser = parse_range)]
    eta_test: ::std::vec::Vec<f64>,
    /// Blocks per test cell.
    #[arg(long, default_value_t = 10)]
    trials: usize,
}

fn parse_mod(s: &str) -> Result<Modulation> {
    s.parse()
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    s.parse()
}

fn parse_feedback(s: &str) -> Result<Feedback> {
    s.parse()
}

fn parse_receiver(s: &str) -> Result<Receiver> {
    s.parse()
}

fn parse_rate(s: &str) -> Result<CodeRate> {
    s.parse()
}

fn parse_mu_p(s: &str) -> Result<MuPFormula> {
    s.parse()
}

/// `a`, `a:b` (unit step) or `a:b:step`, inclusive of `b`; a comma-separated
/// list is also accepted. Returns the whole grid as one value.
fn parse_range(s: &str) -> std::result::Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number '{t}': {e}"));
    if s.contains(',') {
        return s.split(',').map(num).collect();
    }
    let parts: Vec<&str> = s.split(':').collect();
    let (a, b, step) = match parts.as_slice() {
        [a] => return Ok(vec![num(a)?]),
        [a, b] => (num(a)?, num(b)?, 1.0),
        [a, b, st] => (num(a)?, num(b)?, num(st)?),
        _ => return Err(format!("expected a:b:step, got '{s}'")),
    };
    if step.is_nan() || step <= 0.0 || b < a {
        return Err(format!("empty range '{s}'"));
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| a + i as f64 * step).collect())
}

/// Turns a JSON config object into `--key=value` tokens.
fn config_tokens(path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse(format!("{}: config must be a JSON object", path.display())))?;
    let scalar = |v: &serde_json::Value| match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    };
    let mut out = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            continue;
        }
        let text = match v {
            serde_json::Value::Bool(true) => {
                out.push(flag.into());
                continue;
            }
            serde_json::Value::Bool(false) | serde_json::Value::Null => continue,
            serde_json::Value::Array(items) => items
                .iter()
                .map(|i| scalar(i).ok_or_else(|| Error::Parse(format!("config key '{key}': nested value"))))
                .collect::<Result<Vec<_>>>()?
                .join(","),
            other => scalar(other).ok_or_else(|| Error::Parse(format!("config key '{key}': unsupported value")))?,
        };
        out.push(format!("{flag}={text}").into());
    }
    Ok(out)
}

/// Parses the command line, splicing in `--config` values before the
/// explicit flags so that the latter take precedence.
fn parse_cli() -> Result<Cli> {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| e.exit());
    let Some(path) = cli.command.common().config.clone() else {
        return Ok(cli);
    };
    let mut merged = argv[..2].to_vec();
    merged.extend(config_tokens(&path)?);
    merged.extend_from_slice(&argv[2..]);
    Ok(Cli::try_parse_from(merged).unwrap_or_else(|e| e.exit()))
}

fn channel_taps(common: &Common) -> Result<Vec<turbo_dfe::Complex64>> {
    match &common.taps {
        Some(t) => parse_taps(t),
        None => match common.channel {
            ChannelName::ProakisC => Ok(ChannelModel::proakis_c(1.0).taps().to_vec()),
        },
    }
}

struct Output<'a> {
    dir: &'a Path,
    manifest: RunManifest,
}

impl<'a> Output<'a> {
    fn new(command: &str, dir: &'a Path, args: &impl Serialize, seed: u64) -> Result<Self> {
        let mut manifest = RunManifest::new(command, args)?;
        manifest.seeds.insert("master".into(), seed);
        Ok(Output { dir, manifest })
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.dir.join(name);
        write_csv(&path, rows)?;
        println!("wrote {}", path.display());
        self.manifest.outputs.push(path);
        Ok(())
    }

    fn finish(self, command: &str) -> Result<()> {
        let path = self.dir.join(format!("{command}.manifest.json"));
        self.manifest.write(&path)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn sim_config(common: &Common, lut: &LutArgs, receiver: Receiver, prediction: PredictionConfig) -> Result<SimConfig> {
    Ok(SimConfig {
        taps: channel_taps(common)?,
        modulation: common.modulation,
        receiver,
        scheme: lut.scheme,
        prediction,
        block_len: common.block_len,
        seed: common.seed,
        lut: lut.settings(),
        ..Default::default()
    })
}

fn ber(a: &BerArgs) -> Result<()> {
    let mut cfg = sim_config(&a.common, &a.lut, a.receiver, a.prediction.config())?;
    cfg.snr_db = a.snr_db.clone();
    cfg.turbo_iters = a.turbo_iters;
    cfg.stop = StopRule {
        min_errors: a.min_errors,
        max_blocks: a.max_blocks,
    };
    cfg.code = a
        .rate
        .map(|r| CodeConfig::new(&a.code, r, a.interleaver_seed))
        .transpose()?;
    let mut out = Output::new(
        "ber",
        &a.common.out,
        &serde_json::json!({ "args": a, "resolved": &cfg }),
        a.common.seed,
    )?;
    if cfg.code.is_some() {
        out.manifest.seeds.insert("interleaver".into(), a.interleaver_seed);
    }
    let predictor = cfg.load_predictor(&LutCache::from_env())?;
    if let Some(p) = &predictor {
        out.manifest.add_lut(&p.lut);
    }
    let records = match cfg.code {
        Some(_) => run_coded_ber(&cfg, predictor.as_ref())?,
        None => run_uncoded_ber(&cfg, predictor.as_ref())?,
    };
    for r in &records {
        println!(
            "{} {:6.2} dB it{} BER {:.3e} ({} blocks)",
            r.receiver, r.snr_db, r.turbo_iter, r.ber, r.blocks
        );
    }
    out.csv("ber.csv", &records)?;
    out.finish("ber")
}

fn lut_gen(a: &LutGenArgs) -> Result<()> {
    let settings = a.lut.settings();
    let cache = LutCache::from_env();
    let c = Constellation::new(a.common.modulation);
    let lut = cache.get_or_generate(a.lut.scheme, a.feedback, &c, &settings.grid, settings.sampling)?;
    let key = LutCache::key(
        c.modulation(),
        a.lut.scheme,
        a.feedback,
        &settings.grid,
        &settings.sampling,
    );
    let mut out = Output::new("lut-gen", &a.common.out, a, a.common.seed)?;
    out.manifest.seeds.insert("lut".into(), a.lut.lut_seed);
    out.manifest.add_lut(&lut);
    let path = cache.path_for(&key);
    println!(
        "LUT {} ({} x {}), sha256 {}",
        path.display(),
        lut.axis_prior.len(),
        lut.axis_ve_db.len(),
        lut.digest()
    );
    out.manifest.outputs.push(path);
    out.finish("lut-gen")
}

#[derive(Serialize)]
struct TrajectoryRow {
    snr_db: f64,
    i_a: f64,
    v_p: f64,
    prior_param: f64,
    step: usize,
    /// Iterate in the units of the LUT (APP or EP variance).
    v_c: f64,
    v_e: f64,
    gamma_d_bar: f64,
    v_d: f64,
}

fn predict(a: &PredictArgs) -> Result<()> {
    let settings = a.lut.settings();
    let c = Constellation::new(a.common.modulation);
    let lut = LutCache::from_env().get_or_generate(a.lut.scheme, a.feedback, &c, &settings.grid, settings.sampling)?;
    let cfg = a.prediction.config();
    cfg.validate()?;
    let base = ChannelModel::new(channel_taps(&a.common)?, 1.0)?;
    let t = ToeplitzChannel::for_channel(&base);
    let mut rows = Vec::new();
    for (ii, &ia) in a.ia.iter().enumerate() {
        // Emulated decoder feedback of the requested quality.
        let quality = PriorQuality::from_mutual_information(ia, a.lut.eta_p);
        let mut rng = stream_rng(a.common.seed, 0, ii as u32);
        let bits = random_bits(&mut rng, a.prior_len * c.bits_per_symbol());
        let llrs: Vec<f64> = bits.iter().map(|&b| quality.sample_llr(&mut rng, b)).collect();
        let (_, priors) = soft_map(&llrs, &c)?;
        let v_p = priors.mean_variance();
        let prior_param = match a.lut.scheme {
            Scheme::BinaryMi => estimate_mu_p(&llrs, cfg.mu_p_formula),
            Scheme::SymbolWise => v_p,
        };
        for &snr in &a.snr {
            let ch = base.at_snr_db(snr);
            let fp = fixed_point_solve(&ch, &t, v_p, prior_param, &lut, &cfg)?;
            println!(
                "SNR {snr:6.2} dB  I_A {ia:.3}  v_p {v_p:.4}: v_c = {:.6} after {} steps{}",
                fp.v_c,
                fp.iterations,
                if fp.converged { "" } else { " (not converged)" }
            );
            for (step, &v) in fp.trajectory.iter().enumerate() {
                let v_e = phi_rec(&ch, &t, v_p, v)?;
                let (gamma_d_bar, v_d) = match a.feedback {
                    Feedback::App => (v, ep_variance_from_app(v, v_e)),
                    Feedback::Ep => (app_variance_from_ep(v, v_e), v),
                };
                println!("  n={step:2}  v_c {v:.6}  v_e {v_e:.6}  γ̄_d {gamma_d_bar:.6}  v_d {v_d:.6}");
                rows.push(TrajectoryRow {
                    snr_db: snr,
                    i_a: ia,
                    v_p,
                    prior_param,
                    step,
                    v_c: v,
                    v_e,
                    gamma_d_bar,
                    v_d,
                });
            }
        }
    }
    let mut out = Output::new("predict", &a.common.out, a, a.common.seed)?;
    out.manifest.add_lut(&lut);
    out.csv("predict.csv", &rows)?;
    out.finish("predict")
}

#[derive(Serialize)]
struct ExitRow {
    receiver: Receiver,
    snr_db: f64,
    i_a: f64,
    i_e: f64,
}

#[derive(Serialize)]
struct RateRow {
    receiver: Receiver,
    snr_db: f64,
    rate: f64,
}

fn exit(a: &ExitArgs) -> Result<()> {
    let cfg = sim_config(&a.common, &a.lut, a.receiver, a.prediction.config())?;
    cfg.validate()?;
    let mut out = Output::new(
        "exit",
        &a.common.out,
        &serde_json::json!({ "args": a, "resolved": &cfg }),
        a.common.seed,
    )?;
    let predictor = cfg.load_predictor(&LutCache::from_env())?;
    if let Some(p) = &predictor {
        out.manifest.add_lut(&p.lut);
    }
    let q = a.common.modulation.bits_per_symbol();
    let (mut curves, mut rates) = (Vec::new(), Vec::new());
    for &snr in &a.snr_db {
        let curve = measure_exit(&cfg, predictor.as_ref(), snr, &a.ia, a.blocks)?;
        let rate = achievable_rate(&curve, q);
        match &rate {
            Ok(r) => println!("{} {snr:6.2} dB  rate {r:.3} bits/symbol", a.receiver),
            Err(e) => println!("{} {snr:6.2} dB  no rate: {e}", a.receiver),
        }
        for (&i_a, &i_e) in curve.i_a.iter().zip(&curve.i_e) {
            curves.push(ExitRow {
                receiver: a.receiver,
                snr_db: snr,
                i_a,
                i_e,
            });
        }
        if let Ok(rate) = rate {
            rates.push(RateRow {
                receiver: a.receiver,
                snr_db: snr,
                rate,
            });
        }
    }
    out.csv("exit.csv", &curves)?;
    out.csv("rates.csv", &rates)?;
    out.finish("exit")
}

fn study(a: &StudyArgs) -> Result<()> {
    let settings = a.lut.settings();
    let c = Constellation::new(a.common.modulation);
    let survey = survey_demapper(&c, &settings.grid, settings.sampling)?;
    let luts = StudyLuts::from_survey(&survey);
    let cfg = StudyConfig {
        modulation: a.common.modulation,
        block_len: a.common.block_len,
        grid: settings.grid.clone(),
        eta_test: a.eta_test.clone(),
        trials: a.trials,
        mu_p_formula: a.mu_p_formula,
        seed: a.common.seed,
    };
    let mut out = Output::new(
        "study",
        &a.common.out,
        &serde_json::json!({ "args": a, "resolved": &cfg }),
        a.common.seed,
    )?;
    out.manifest.seeds.insert("lut".into(), a.lut.lut_seed);
    for lut in [&luts.binary_app, &luts.binary_ep, &luts.symbol_app, &luts.symbol_ep] {
        out.manifest.add_lut(lut);
    }
    let rows = run_prediction_study(&cfg, &luts)?;
    for r in &rows {
        println!(
            "η_p {:.1} {:>6} {:>3}: MSE {:.3e} (floor {:.3e}, I_A=0 {:.3e})",
            r.eta_p, r.scheme, r.feedback, r.mse, r.noise_floor, r.mse_no_prior
        );
    }
    out.csv("study.csv", &rows)?;
    out.finish("study")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let run = || -> Result<()> {
        let cli = parse_cli()?;
        log::debug!("{} {:?}", cli.command.name(), cli.command);
        match &cli.command {
            Command::Ber(a) => ber(a),
            Command::LutGen(a) => lut_gen(a),
            Command::Predict(a) => predict(a),
            Command::Exit(a) => exit(a),
            Command::Study(a) => study(a),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
