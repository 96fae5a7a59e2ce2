//! Encodes with the [7,5] code at rates 1/2, 2/3 and 5/6, sends BPSK over
//! AWGN and decodes with log-MAP BCJR.

use turbo_dfe::coding::{bcjr_decode, conv_encode, depuncture, puncture, CodeRate, CodeSpec};
use turbo_dfe::rng::{gaussian, random_bits, seeded};

fn main() -> turbo_dfe::Result<()> {
    let mut rng = seeded(3);
    let ebn0_db = 4.0;
    for rate in [CodeRate::Half, CodeRate::TwoThirds, CodeRate::FiveSixths] {
        let spec = CodeSpec::nrnsc_75(rate);
        let sigma2 = 1.0 / (2.0 * rate.value() * 10f64.powf(ebn0_db / 10.0));
        let (mut errors, mut total) = (0, 0);
        for _ in 0..200 {
            let info = random_bits(&mut rng, 598);
            let coded = conv_encode(&info, &spec);
            let steps = coded.len() / 2;
            let sent = match &spec.puncture {
                Some(p) => puncture(&coded, p)?,
                None => coded,
            };
            let llrs: Vec<f64> = sent
                .iter()
                .map(|&b| {
                    let s = 1.0 - 2.0 * b as f64;
                    2.0 * (s + gaussian(&mut rng, 0.0, sigma2)) / sigma2
                })
                .collect();
            let llrs = match &spec.puncture {
                Some(p) => depuncture(&llrs, p, steps)?,
                None => llrs,
            };
            let out = bcjr_decode(&llrs, &spec)?;
            errors += out.hard_bits.iter().zip(&info).filter(|(a, b)| a != b).count();
            total += info.len();
        }
        println!(
            "rate {rate}: BER {:.2e} at Eb/N0 {ebn0_db} dB",
            errors as f64 / total as f64
        );
    }
    Ok(())
}
