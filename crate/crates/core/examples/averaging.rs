//! Averaged slow drift with the fast ring integrated at frozen slow state.

use slowfast::calibrate::{CalibrationSettings, Calibrator};
use slowfast::presets::Regime;
use slowfast::response::{averaged_slow_rhs, FastBudget};

fn main() -> slowfast::Result<()> {
    let calib = Calibrator::new(
        CalibrationSettings {
            t_total: 500.0,
            ..CalibrationSettings::default()
        },
        None,
    );
    let p = Regime::table1(24.0).params(&calib)?;
    let budget = FastBudget {
        t_spinup: 10.0,
        t_run: 200.0,
        dt: 1e-3,
        seed: 0,
        batches: 10,
    };
    let x: Vec<f64> = (0..p.n_x).map(|i| (i as f64).sin()).collect();
    let d = averaged_slow_rhs(&x, &p, &budget)?;
    for i in 0..p.n_x {
        println!("x{i}: {:+.4} +- {:.4}", d.value[i], d.std_error[i]);
    }
    Ok(())
}
