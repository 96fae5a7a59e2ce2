//! Turbo equalization of a rate-1/2 [7,5] coded 8PSK link, BER per iteration.

use turbo_dfe::coding::CodeRate;
use turbo_dfe::harness::{run_coded_ber, CodeConfig, LutSettings, Receiver, SimConfig, StopRule};
use turbo_dfe::mapping::Modulation;
use turbo_dfe::prediction::{LutCache, LutSampling};

fn main() -> turbo_dfe::Result<()> {
    let cfg = SimConfig {
        modulation: Modulation::Psk8,
        receiver: Receiver::IvDfeEp,
        code: Some(CodeConfig::new("7,5", CodeRate::Half, 1)?),
        snr_db: vec![13.0, 15.0],
        turbo_iters: 4,
        stop: StopRule {
            min_errors: 500,
            max_blocks: 60,
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
    let predictor = cfg.load_predictor(&LutCache::from_env())?;
    for r in run_coded_ber(&cfg, predictor.as_ref())? {
        println!(
            "{:4.1} dB  iteration {}  BER {:.3e}  predicted v_c {:.4}",
            r.snr_db,
            r.turbo_iter,
            r.ber,
            r.predicted_vc.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
