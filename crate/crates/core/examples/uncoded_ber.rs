//! Uncoded BER sweep of the TV and predictive IV DFEs with EP feedback.

use turbo_dfe::harness::{run_uncoded_ber, LutSettings, Receiver, SimConfig, StopRule};
use turbo_dfe::mapping::Modulation;
use turbo_dfe::prediction::{LutCache, LutSampling};

fn main() -> turbo_dfe::Result<()> {
    let mut cfg = SimConfig {
        modulation: Modulation::Qpsk,
        snr_db: vec![8.0, 12.0, 16.0],
        stop: StopRule {
            min_errors: 2000,
            max_blocks: 400,
        },
        lut: LutSettings {
            sampling: LutSampling {
                blocks: 10,
                ..Default::default()
            },
            ..Default::default()
        },
        ..Default::default()
    };
    let cache = LutCache::from_env();
    for receiver in [Receiver::TvDfeEp, Receiver::IvDfeEp, Receiver::IvLe] {
        cfg.receiver = receiver;
        let predictor = cfg.load_predictor(&cache)?;
        for r in run_uncoded_ber(&cfg, predictor.as_ref())? {
            println!(
                "{:>10} {:5.1} dB  BER {:.3e}  ({} blocks)",
                r.receiver, r.snr_db, r.ber, r.blocks
            );
        }
    }
    Ok(())
}
