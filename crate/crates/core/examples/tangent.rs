//! Exact discrete tangent map of the fast limiting system against a finite difference.

use slowfast::calibrate::{CalibrationSettings, Calibrator};
use slowfast::dynamics::FastLimitingModel;
use slowfast::integrate::{
    integrate, member_rng, normal_vec, propagate_tangent, IntegratorConfig,
};
use slowfast::presets::Regime;

fn main() -> slowfast::Result<()> {
    let calib = Calibrator::new(
        CalibrationSettings {
            t_total: 200.0,
            ..CalibrationSettings::default()
        },
        None,
    );
    let p = Regime::table1(8.0).params(&calib)?;
    let field = FastLimitingModel::new(&p, &vec![0.3; p.n_x])?;
    let cfg = IntegratorConfig::new(1e-3, 1000, 0)?;
    let z = normal_vec(&mut member_rng(0, 0), p.n_y());
    let t = propagate_tangent(&field, &z, 1.0, &cfg)?;

    let dz: Vec<f64> = normal_vec(&mut member_rng(0, 1), p.n_y()).iter().map(|v| v * 1e-7).collect();
    let pz: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + b).collect();
    let a = integrate(&field, &z, 1.0, &cfg, &mut [])?;
    let b = integrate(&field, &pz, 1.0, &cfg, &mut [])?;
    let lin = &t.m * nalgebra::DVector::from_column_slice(&dz);
    let err: f64 = (0..p.n_y())
        .map(|k| (lin[k] - (b.last()[k] - a.last()[k])).powi(2))
        .sum::<f64>()
        .sqrt();
    println!("relative linearization error at t = 1: {:.2e}", err / lin.norm());
    Ok(())
}
