//! Mean and standard deviation of the uncoupled L96 ring, used to rescale it.

use slowfast::calibrate::{calibrate_with, CalibrationSettings};

fn main() -> slowfast::Result<()> {
    let settings = CalibrationSettings {
        t_total: 500.0,
        t_spinup: 20.0,
        ..CalibrationSettings::default()
    };
    for f in [6.0, 12.0, 24.0] {
        let r = calibrate_with(f, 40, &settings)?;
        println!("F = {f:>4}: mean {:.4}  beta {:.4}", r.mean, r.beta);
    }
    Ok(())
}
