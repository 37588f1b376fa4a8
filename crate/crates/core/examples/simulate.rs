//! Integrates the coupled model and pools slow and fast moments.

use slowfast::calibrate::{CalibrationSettings, Calibrator};
use slowfast::presets::Regime;
use slowfast::stats::two_scale_moments;

fn main() -> slowfast::Result<()> {
    let calib = Calibrator::new(
        CalibrationSettings {
            t_total: 500.0,
            ..CalibrationSettings::default()
        },
        None,
    );
    let p = Regime::table1(12.0).params(&calib)?;
    let m = two_scale_moments(&p, 1e-4, 5.0, 20.0, 0)?;
    println!("x: mean {:+.4} var {:.4}", m.x.mean, m.x.variance);
    println!("y: mean {:+.4} var {:.4}", m.y.mean, m.y.variance);
    Ok(())
}
