//! Soft mapping, MAP demapping and EP feedback for one 16QAM symbol.

use turbo_dfe::mapping::{
    demap_extrinsic, demap_posterior, ep_feedback, posterior_moments, soft_map, Constellation, Modulation, SymbolPmf,
};
use turbo_dfe::Complex64;

fn main() -> turbo_dfe::Result<()> {
    let c = Constellation::new(Modulation::Qam16);
    let bits = [0u8, 1, 1, 0];
    let x = c.modulate(&bits)?[0];
    println!("label {:04b} -> {x:.4}", c.label_of(&bits));

    // Mildly informative priors pointing at the transmitted bits.
    let priors: Vec<f64> = bits.iter().map(|&b| if b == 0 { 1.5 } else { -1.5 }).collect();
    let (pmfs, soft) = soft_map(&priors, &c)?;
    println!("soft symbol {:.4}, variance {:.4}", soft.means[0], soft.variances[0]);

    // An equalizer output: the symbol plus some residual error.
    let x_e = x + Complex64::new(0.12, -0.08);
    let v_e = 0.05;
    let mut ext = vec![0.0; 4];
    demap_extrinsic(x_e, v_e, &priors, &c, &mut ext);
    println!("extrinsic LLRs {ext:.3?}");

    let post = demap_posterior(x_e, v_e, &pmfs[0], &c)?;
    let (mu_d, gamma_d) = posterior_moments(&post, &c);
    println!("APP feedback {mu_d:.4}, variance {gamma_d:.5}");

    let ep = ep_feedback(mu_d, gamma_d, x_e, v_e);
    println!(
        "EP feedback {:.4}, variance {:.5}, clamped {}",
        ep.mean, ep.variance, ep.clamped
    );

    let flat = demap_posterior(x_e, v_e, &SymbolPmf::uniform(c.order()), &c)?;
    println!("hard decision without priors: label {:04b}", flat.argmax());
    Ok(())
}
