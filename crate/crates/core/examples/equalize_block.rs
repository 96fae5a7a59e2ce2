//! Runs one QPSK block over Proakis-C through every equalizer and reports
//! symbol errors and the mean output reliability.
//!
//! The IV DFEs need a demapper LUT; a small one is generated into
//! `$TURBO_DFE_LUT_DIR` (or `./lut-cache`) on first use.

use turbo_dfe::channel::{transmit, ChannelModel};
use turbo_dfe::harness::{Detector, Receiver};
use turbo_dfe::mapping::{Constellation, Modulation};
use turbo_dfe::prediction::{LutCache, LutGrid, LutSampling, PredictionConfig, Predictor, Scheme};
use turbo_dfe::rng::{random_bits, seeded};

fn main() -> turbo_dfe::Result<()> {
    let c = Constellation::new(Modulation::Qpsk);
    let ch = ChannelModel::proakis_c(1.0).at_snr_db(14.0);
    let mut rng = seeded(11);
    let bits = random_bits(&mut rng, 2 * 2000);
    let x = c.modulate(&bits)?;
    let y = transmit(&x, &ch, &mut rng);
    let no_priors = vec![0.0; bits.len()];

    let cache = LutCache::from_env();
    let sampling = LutSampling {
        blocks: 10,
        ..Default::default()
    };
    for receiver in Receiver::ALL {
        let predictor = match receiver.feedback().filter(|_| receiver.needs_prediction()) {
            Some(fb) => {
                let lut = cache.get_or_generate(Scheme::SymbolWise, fb, &c, &LutGrid::standard(), sampling)?;
                Some(Predictor::new(lut, PredictionConfig::default())?)
            }
            None => None,
        };
        let det = Detector::new(receiver, ch.clone(), c.clone(), predictor)?;
        let out = det.detect(&y, &no_priors)?;
        let errors = out
            .extrinsic
            .iter()
            .zip(&bits)
            .filter(|(&l, &b)| (l < 0.0) != (b == 1))
            .count();
        let pred = out
            .prediction
            .map(|p| format!("  predicted v_c {:.4}", p.profile.v_c))
            .unwrap_or_default();
        println!("{:>15}: {errors:4} bit errors / {}{pred}", receiver, bits.len());
    }
    Ok(())
}
