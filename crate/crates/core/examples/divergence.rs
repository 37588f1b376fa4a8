//! Ensemble divergence of running-averaged slow variables after a small kick.

use slowfast::calibrate::{CalibrationSettings, Calibrator};
use slowfast::presets::Regime;
use slowfast::stats::{divergence_two_scale, divergence_uncoupled, DivergenceProtocol};

fn main() -> slowfast::Result<()> {
    let calib = Calibrator::new(
        CalibrationSettings {
            t_total: 500.0,
            ..CalibrationSettings::default()
        },
        None,
    );
    let protocol = DivergenceProtocol {
        t_spinup: 10.0,
        n_members: 8,
        t_spacing: 2.0,
        t_horizon: 10.0,
        ..DivergenceProtocol::desk(0.01, 0)
    };
    let p = Regime::table1(12.0).params(&calib)?;
    let coupled = divergence_two_scale(&p, 1e-4, &protocol)?;
    let free = divergence_uncoupled(p.n_x, &p.calib_x, 1e-4, &protocol)?;
    println!("   t  uncoupled  F_y=12");
    for t in [1.0, 2.5, 5.0, 7.5, 10.0] {
        println!("{t:>4}  {:>9.4}  {:>6.4}", free.at(t), coupled.at(t));
    }
    let s = coupled.slope(5.0, 10.0);
    println!("slope over [5, 10]: {:.4} +- {:.4}", s.mean, s.std_error);
    Ok(())
}
