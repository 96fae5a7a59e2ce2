//! EXIT curves and area-theorem rates of the IV LE and the TV/IV DFEs with
//! EP feedback, 8PSK over Proakis-C.

use turbo_dfe::harness::{achievable_rate, measure_exit, LutSettings, Receiver, SimConfig};
use turbo_dfe::mapping::Modulation;
use turbo_dfe::prediction::{LutCache, LutSampling};

fn main() -> turbo_dfe::Result<()> {
    let i_a: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let cache = LutCache::from_env();
    for receiver in [Receiver::IvLe, Receiver::TvDfeEp, Receiver::IvDfeEp] {
        let cfg = SimConfig {
            modulation: Modulation::Psk8,
            receiver,
            lut: LutSettings {
                sampling: LutSampling {
                    blocks: 10,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        };
        let predictor = cfg.load_predictor(&cache)?;
        for snr in [6.0, 14.0] {
            let curve = measure_exit(&cfg, predictor.as_ref(), snr, &i_a, 8)?;
            let rate = achievable_rate(&curve, 3)?;
            let ie: Vec<String> = curve.i_e.iter().map(|v| format!("{v:.2}")).collect();
            println!("{:>10} {snr:4.1} dB  rate {rate:.3}  I_E [{}]", receiver, ie.join(" "));
        }
    }
    Ok(())
}
