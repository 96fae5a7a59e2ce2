//! Builds a symbol-wise EP demapper LUT for 8PSK and follows the
//! fixed-point prediction of the causal feedback variance across SNR and
//! prior quality.

use turbo_dfe::channel::{ChannelModel, ToeplitzChannel};
use turbo_dfe::equalizer::Feedback;
use turbo_dfe::mapping::{Constellation, Modulation};
use turbo_dfe::prediction::{fixed_point_solve, InitRule, LutCache, LutGrid, LutSampling, PredictionConfig, Scheme};

fn main() -> turbo_dfe::Result<()> {
    let c = Constellation::new(Modulation::Psk8);
    let sampling = LutSampling {
        blocks: 10,
        ..Default::default()
    };
    let lut =
        LutCache::from_env().get_or_generate(Scheme::SymbolWise, Feedback::Ep, &c, &LutGrid::standard(), sampling)?;
    println!(
        "LUT {}x{}, digest {}",
        lut.axis_prior.len(),
        lut.axis_ve_db.len(),
        lut.digest()
    );

    let cfg = PredictionConfig {
        n_pred: 50,
        init: InitRule::Heuristic,
        ..Default::default()
    };
    let base = ChannelModel::proakis_c(1.0);
    let t = ToeplitzChannel::for_channel(&base);
    println!("{:>6} {:>6} {:>9} {:>5}", "SNR", "v_p", "v_c", "steps");
    for snr in [6.0, 12.0, 18.0, 24.0] {
        let ch = base.at_snr_db(snr);
        for v_p in [1.0, 0.5, 0.1] {
            let fp = fixed_point_solve(&ch, &t, v_p, v_p, &lut, &cfg)?;
            println!("{snr:6.1} {v_p:6.2} {:9.5} {:5}", fp.v_c, fp.iterations);
        }
    }
    Ok(())
}
