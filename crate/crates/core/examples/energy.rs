//! Energy drift of the conservative two-scale model under step halving.

use slowfast::calibrate::{CalibrationSettings, Calibrator};
use slowfast::presets::{energy_check, Regime};

fn main() -> slowfast::Result<()> {
    let calib = Calibrator::new(
        CalibrationSettings {
            t_total: 200.0,
            ..CalibrationSettings::default()
        },
        None,
    );
    let p = Regime::table1(6.0).params(&calib)?;
    for dt in [1e-4, 2e-5] {
        let e = energy_check(&p, dt, 1.0, 0)?;
        println!(
            "dt {dt:.0e}: drift {:.3e}, at dt/2 {:.3e}, ratio {:.2}",
            e.drift,
            e.drift_half,
            e.ratio()
        );
    }
    Ok(())
}
