//! Linear response of an Ornstein-Uhlenbeck process: sampled against Γ⁻¹.

use nalgebra::{DMatrix, DVector};
use slowfast::dynamics::OUParams;
use slowfast::integrate::{simulate_ou, IntegratorConfig};
use slowfast::response::{integrate_curve, ou_response_analytic, quasi_gaussian_curve};

fn main() -> slowfast::Result<()> {
    let gamma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 2.0]);
    let q = OUParams::new(DVector::zeros(2), gamma, DMatrix::identity(2, 2))?;
    let exact = ou_response_analytic(&q)?;

    let cfg = IntegratorConfig::new(1e-2, 5, 7)?;
    let traj = simulate_ou(&q, &[0.0, 0.0], &[0.0, 0.0], 20_000.0, &cfg, 0)?;
    let curve = quasi_gaussian_curve(&traj, 10.0, &[0.0, 0.0])?;
    let sampled = integrate_curve(&curve, 10.0)?;

    println!("analytic {:.4?}", exact.matrix.as_slice());
    println!("sampled  {:.4?}", sampled.matrix.as_slice());
    let rel = (&sampled.matrix - &exact.matrix).norm() / exact.matrix.norm();
    println!("relative Frobenius error {rel:.3}");
    Ok(())
}
