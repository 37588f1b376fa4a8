//! Quasi-Gaussian response of the fast ring at a frozen slow state, and the
//! congruence test on the slow block.

use slowfast::calibrate::{CalibrationSettings, Calibrator};
use slowfast::dynamics::FastLimitingModel;
use slowfast::integrate::{advance, integrate, member_rng, normal_vec, IntegratorConfig};
use slowfast::presets::Regime;
use slowfast::response::{
    h_matrix, infinite_time_operator, quasi_gaussian_curve, shift_average, TruncationRule,
};

fn main() -> slowfast::Result<()> {
    let calib = Calibrator::new(
        CalibrationSettings {
            t_total: 500.0,
            ..CalibrationSettings::default()
        },
        None,
    );
    let p = Regime::table1(16.0).params(&calib)?;
    let x = vec![0.0; p.n_x];
    let field = FastLimitingModel::new(&p, &x)?;
    let mut z = normal_vec(&mut member_rng(0, 0), p.n_y());
    advance(&field, &mut z, 20.0, 1e-3, &mut [])?;
    let traj = integrate(&field, &z, 200.0, &IntegratorConfig::new(1e-3, 10, 0)?, &mut [])?;

    let curve = shift_average(&quasi_gaussian_curve(&traj, 8.0, &x)?, 1);
    let norms = curve.norms();
    println!("|C(s)|_F at s = 0, 1, 2, 4: {:.3} {:.3} {:.3} {:.3}",
        norms[0], norms[100], norms[200], norms[400]);

    let op = infinite_time_operator(&curve, &TruncationRule { cap: 8.0, ..Default::default() })?;
    let d = h_matrix(&op, &p)?;
    println!("truncated at t = {:.2} ({})", op.t_max, op.provenance);
    println!("min sym eig of C = {:+.4}, max sym eig of H = {:+.3e}", d.min_sym_eig_c, d.max_sym_eig_h);
    Ok(())
}
