//! Checks shared by the pipeline tests and the acceptance report.
#![allow(dead_code)]

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use slowfast::calibrate::{CalibrationCache, CalibrationSettings, Calibrator};
use slowfast::dynamics::{CouplingSpec, FastLimitingModel, ModelParams, OUParams};
use slowfast::integrate::{
    advance, integrate, member_rng, normal_vec, propagate_tangent, simulate_ou, IntegratorConfig,
};
use slowfast::presets::Regime;
use slowfast::response::{
    average_tangent_curve, integrate_curve, ou_response_analytic, quasi_gaussian_curve,
};
use slowfast::stats::{divergence_two_scale, DivergenceProtocol};

/// Calibrations at the default settings, cached across test binaries.
pub fn calibrator() -> &'static Calibrator {
    static CALIB: OnceLock<Calibrator> = OnceLock::new();
    CALIB.get_or_init(|| {
        let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("calibrations.txt");
        Calibrator::new(CalibrationSettings::default(), Some(CalibrationCache::new(path)))
    })
}

pub fn table1(f_y: f64) -> ModelParams {
    Regime::table1(f_y).params(calibrator()).unwrap()
}

pub fn diagonal_gamma() -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 4.0]))
}

/// Non-normal drift whose symmetric part is diag(1, 2, 4).
pub fn non_normal_gamma() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, 0.8, 0.0, -0.8, 2.0, 0.6, 0.0, -0.6, 4.0])
}

pub struct OuCheck {
    /// Sampled pipeline against `Γ⁻¹`, relative Frobenius.
    pub sampled: f64,
    /// Closed form against `Γ⁻¹`, relative Frobenius.
    pub analytic: f64,
}

/// Euler-Maruyama samples, quasi-Gaussian curve, trapezoid integral.
pub fn ou_pipeline(gamma: &DMatrix<f64>, t_len: f64, seed: u64) -> OuCheck {
    let n = gamma.nrows();
    let q = OUParams::new(DVector::zeros(n), gamma.clone(), DMatrix::identity(n, n)).unwrap();
    let inv = gamma.clone().try_inverse().unwrap();
    let rel = |m: &DMatrix<f64>| (m - &inv).norm() / inv.norm();

    let cfg = IntegratorConfig::new(2e-3, 5, seed).unwrap();
    let zero = vec![0.0; n];
    let traj = simulate_ou(&q, &zero, &zero, t_len, &cfg, 0).unwrap();
    let curve = quasi_gaussian_curve(&traj, 10.0, &zero).unwrap();
    let op = integrate_curve(&curve, 10.0).unwrap();
    OuCheck {
        sampled: rel(&op.matrix),
        analytic: rel(&ou_response_analytic(&q).unwrap().matrix),
    }
}

pub struct TangentCheck {
    pub linearization: f64,
    pub chain_rule: f64,
}

/// Exact tangent against a finite difference at `t = 1`, and `T(2) = T(1→2) T(0→1)`.
pub fn tangent_check(p: &ModelParams, x_fixed: &[f64]) -> TangentCheck {
    let field = FastLimitingModel::new(p, x_fixed).unwrap();
    let cfg = IntegratorConfig::new(1e-3, 1000, 0).unwrap();
    let mut z = normal_vec(&mut member_rng(0, 0), p.n_y());
    advance(&field, &mut z, 10.0, 1e-3, &mut []).unwrap();

    let dir = DVector::from_vec(normal_vec(&mut member_rng(0, 1), p.n_y()));
    let dz = dir.normalize() * 1e-6;
    let zp: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, b)| a + b).collect();
    let a = integrate(&field, &z, 1.0, &cfg, &mut []).unwrap();
    let b = integrate(&field, &zp, 1.0, &cfg, &mut []).unwrap();
    let t1 = propagate_tangent(&field, &z, 1.0, &cfg).unwrap();
    let lin = &t1.m * &dz;
    let diff = DVector::from_iterator(p.n_y(), b.last().iter().zip(a.last()).map(|(u, v)| u - v));

    let t12 = propagate_tangent(&field, a.last(), 1.0, &cfg).unwrap();
    let t2 = propagate_tangent(&field, &z, 2.0, &cfg).unwrap();
    TangentCheck {
        linearization: (&lin - diff).norm() / lin.norm(),
        chain_rule: (&t2.m - &t12.m * &t1.m).norm() / t2.m.norm(),
    }
}

/// Largest deviation of `C(0)` from the identity for the quasi-Gaussian and
/// tangent estimators at a frozen slow state.
pub fn lag_zero_identity(p: &ModelParams, x_fixed: &[f64]) -> (f64, f64) {
    let field = FastLimitingModel::new(p, x_fixed).unwrap();
    let mut z = normal_vec(&mut member_rng(2, 0), p.n_y());
    advance(&field, &mut z, 20.0, 1e-3, &mut []).unwrap();
    let cfg = IntegratorConfig::new(1e-3, 10, 2).unwrap();
    let traj = integrate(&field, &z, 100.0, &cfg, &mut []).unwrap();
    let eye = DMatrix::<f64>::identity(p.n_y(), p.n_y());
    let qg = quasi_gaussian_curve(&traj, 1.0, x_fixed).unwrap();
    let bases: Vec<Vec<f64>> = (0..4).map(|k| traj.state(100 * k).to_vec()).collect();
    let tg = average_tangent_curve(&field, &bases, 0.1, &cfg).unwrap();
    (
        (&qg.matrices[0] - &eye).amax(),
        (&tg.matrices[0] - &eye).amax(),
    )
}

/// Worst relative violation of `xᵀS_x f′ + yᵀS_y g′ = 0` over random couplings.
pub fn energy_identity_worst(trials: usize) -> f64 {
    let mut rng = member_rng(11, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (nx, ny) = (rng.random_range(1..6), rng.random_range(1..9));
        let mut m = |r: usize, c: usize| {
            DMatrix::from_iterator(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)))
        };
        let l = m(nx, ny);
        let (ax, ay) = (m(nx, nx), m(ny, ny));
        let sx = &ax * ax.transpose() + DMatrix::identity(nx, nx) * 0.05;
        let sy = &ay * ay.transpose() + DMatrix::identity(ny, ny) * 0.05;
        let x = DVector::from_vec(normal_vec(&mut rng, nx));
        let y = DVector::from_vec(normal_vec(&mut rng, ny));
        let c = CouplingSpec::new(l, sx.clone(), sy.clone()).unwrap();
        let (f, g) = c.coupling_terms(x.as_slice(), y.as_slice()).unwrap();
        let (f, g) = (DVector::from_vec(f), DVector::from_vec(g));
        let e = x.dot(&(&sx * &f)) + y.dot(&(&sy * &g));
        let scale = x.norm() * f.norm() + y.norm() * g.norm();
        worst = worst.max(e.abs() / scale);
    }
    worst
}

/// Profile at `t` with `2δ` over the one with `δ`, same members.
pub fn divergence_linearity(p: &ModelParams, delta: f64, t: f64) -> f64 {
    let protocol = DivergenceProtocol {
        t_spinup: 10.0,
        n_members: 16,
        t_spacing: 2.0,
        t_horizon: t,
        ..DivergenceProtocol::desk(delta, 5)
    };
    let small = divergence_two_scale(p, 1e-4, &protocol).unwrap();
    let large = divergence_two_scale(
        p,
        1e-4,
        &DivergenceProtocol {
            delta: 2.0 * delta,
            ..protocol
        },
    )
    .unwrap();
    large.at(t) / small.at(t)
}
