//! Pooled PDF and autocorrelation of the uncoupled rescaled ring.

use slowfast::calibrate::{calibrate_with, CalibrationSettings};
use slowfast::dynamics::RingModel;
use slowfast::integrate::{advance, integrate, member_rng, normal_vec, IntegratorConfig};
use slowfast::stats::{acf_pooled, moments_pooled, pdf};

fn main() -> slowfast::Result<()> {
    let settings = CalibrationSettings {
        t_total: 500.0,
        ..CalibrationSettings::default()
    };
    let r = calibrate_with(6.0, 10, &settings)?;
    let model = RingModel::rescaled(10, &r)?;
    let mut s = normal_vec(&mut member_rng(1, 0), 10);
    advance(&model, &mut s, 20.0, 1e-3, &mut [])?;
    let traj = integrate(&model, &s, 500.0, &IntegratorConfig::new(1e-3, 10, 1)?, &mut [])?;
    let ch: Vec<Vec<f64>> = (0..10).map(|c| traj.channel(c)).collect();
    let refs: Vec<&[f64]> = ch.iter().map(Vec::as_slice).collect();

    let m = moments_pooled(&refs)?;
    println!("pooled mean {:+.3}, variance {:.3}", m.mean, m.variance);
    let h = pdf(ch.iter().flatten(), 12, (-3.0, 3.0))?;
    for (c, d) in h.centers().iter().zip(&h.density) {
        println!("{c:+.2} {}", "#".repeat((d * 100.0) as usize));
    }
    let a = acf_pooled(&refs, 5.0, traj.dt_sample)?;
    println!("integrated correlation time {:.3}", a.integrated());
    Ok(())
}
