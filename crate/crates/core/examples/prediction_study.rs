//! Compares binary-MI and symbol-wise LUTs at predicting the demapper's
//! feedback variance when the priors do not match the LUT's design.

use turbo_dfe::harness::{run_prediction_study, StudyConfig, StudyLuts};
use turbo_dfe::mapping::{Constellation, Modulation};
use turbo_dfe::prediction::{survey_demapper, LutGrid, LutSampling};

fn main() -> turbo_dfe::Result<()> {
    let grid = LutGrid {
        ve_db: (-12..=12).step_by(3).map(f64::from).collect(),
        i_a: (0..=10).map(|i| i as f64 / 10.0).collect(),
    };
    let c = Constellation::new(Modulation::Qam16);
    let survey = survey_demapper(
        &c,
        &grid,
        LutSampling {
            blocks: 10,
            ..Default::default()
        },
    )?;
    let luts = StudyLuts::from_survey(&survey);
    let cfg = StudyConfig {
        grid,
        trials: 4,
        ..Default::default()
    };
    for row in run_prediction_study(&cfg, &luts)? {
        println!(
            "eta_p {:.0}  {:>11} {:>3}  MSE {:.3e}  (noise floor {:.3e})",
            row.eta_p, row.scheme, row.feedback, row.mse, row.noise_floor
        );
    }
    Ok(())
}
