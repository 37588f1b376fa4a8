use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use slowfast::calibrate::CalibrationRecord;
use slowfast::cli::config::{ExperimentConfig, ExperimentKind};
use slowfast::dynamics::{
    l96_rhs, rescaled_l96_rhs, CouplingSpec, ModelParams, RingModel, TwoScaleModel,
};
use slowfast::integrate::{integrate, IntegratorConfig, VectorField};
use slowfast::response::{h_from_coupling, max_sym_eig, min_sym_eig};
use slowfast::stats::running_average;

fn params(n_x: usize, j: usize, eps: f64) -> ModelParams {
    ModelParams {
        n_x,
        j,
        f_x: 6.0,
        f_y: 12.0,
        lambda_x: 0.25,
        lambda_y: 0.4,
        epsilon: eps,
        calib_x: CalibrationRecord::from_moments(6.0, n_x, 2.0, 2.8),
        calib_y: CalibrationRecord::from_moments(12.0, n_x * j, 2.8, 5.1),
    }
}

fn rotate(v: &[f64], k: usize) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| v[(i + n - k % n) % n]).collect()
}

fn eval<F: VectorField>(f: &F, s: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    f.eval(s, &mut out);
    out
}

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n)
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
        let a = DMatrix::from_vec(n, n, v);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    })
}

/// Independent oracle: roots of the characteristic polynomial of a symmetric 3x3.
fn min_eig_3x3(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    let q = s.trace() / 3.0;
    let p1 = s[(0, 1)].powi(2) + s[(0, 2)].powi(2) + s[(1, 2)].powi(2);
    let p2 = (0..3).map(|i| (s[(i, i)] - q).powi(2)).sum::<f64>() + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return q;
    }
    let b = (&s - DMatrix::identity(3, 3) * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l96_commutes_with_rotation(x in vec_of(12), k in 0usize..12, f in 0.0..20.0f64) {
        let a = rotate(&l96_rhs(&x, f).unwrap(), k);
        let b = l96_rhs(&rotate(&x, k), f).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rescaled_l96_commutes_with_rotation(x in vec_of(10), k in 0usize..10) {
        let c = CalibrationRecord::from_moments(8.0, 10, 2.3, 3.6);
        let a = rotate(&rescaled_l96_rhs(&x, &c).unwrap(), k);
        let b = rescaled_l96_rhs(&rotate(&x, k), &c).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn two_scale_commutes_with_block_rotation(s in vec_of(5 * 4 + 5), k in 0usize..5) {
        let p = params(5, 4, 0.05);
        let m = TwoScaleModel::new(&p).unwrap();
        let shift = |v: &[f64]| {
            let (x, y) = v.split_at(5);
            let mut out = rotate(x, k);
            out.extend(rotate(y, 4 * k));
            out
        };
        let a = shift(&eval(&m, &s));
        let b = eval(&m, &shift(&s));
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn coupling_preserves_energy(
        l in prop::collection::vec(-2.0..2.0f64, 3 * 5),
        sx in spd(3),
        sy in spd(5),
        x in vec_of(3),
        y in vec_of(5),
    ) {
        let c = CouplingSpec::new(DMatrix::from_vec(3, 5, l), sx.clone(), sy.clone()).unwrap();
        let (f, g) = c.coupling_terms(&x, &y).unwrap();
        let (xv, yv) = (DVector::from_vec(x), DVector::from_vec(y));
        let (fv, gv) = (DVector::from_vec(f), DVector::from_vec(g));
        let e = xv.dot(&(&sx * &fv)) + yv.dot(&(&sy * &gv));
        let scale = xv.norm() * fv.norm() + yv.norm() * gv.norm();
        prop_assert!(e.abs() <= 1e-12 * scale.max(1e-300), "{e} vs {scale}");
    }

    #[test]
    fn conservative_field_is_tangent_to_energy_levels(s in vec_of(4 * 3 + 4), eps in 0.01..1.0f64) {
        let p = params(4, 3, eps);
        let m = TwoScaleModel::conservative(&p).unwrap();
        let d = eval(&m, &s);
        let (x, y) = s.split_at(4);
        let (dx, dy) = d.split_at(4);
        let ex: f64 = p.lambda_x * x.iter().zip(dx).map(|(a, b)| a * b).sum::<f64>();
        let ey: f64 = p.lambda_y / 3.0 * y.iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
        let mag: f64 = s.iter().zip(&d).map(|(a, b)| (a * b).abs()).sum::<f64>().max(1.0);
        prop_assert!((ex + eps * ey).abs() <= 1e-12 * mag / eps);
    }

    #[test]
    fn running_average_is_affine(
        v in prop::collection::vec(-5.0..5.0f64, 10..80),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        w in 0.05..2.0f64,
    ) {
        let dt = 0.05;
        let base = running_average(&v, w, dt);
        let mapped: Vec<f64> = v.iter().map(|s| a * s + b).collect();
        let out = running_average(&mapped, w, dt);
        for (o, r) in out.iter().zip(&base) {
            prop_assert!((o - (a * r + b)).abs() <= 1e-10 * (1.0 + o.abs()));
        }
    }

    #[test]
    fn min_sym_eig_matches_characteristic_polynomial(v in prop::collection::vec(-4.0..4.0f64, 9)) {
        let m = DMatrix::from_vec(3, 3, v);
        let oracle = min_eig_3x3(&m);
        prop_assert!((min_sym_eig(&m) - oracle).abs() <= 1e-10 * (1.0 + oracle.abs()));
        prop_assert!(max_sym_eig(&m) >= oracle - 1e-10);
    }

    #[test]
    fn positive_response_gives_negative_h(c in spd(6), l in prop::collection::vec(-1.0..1.0f64, 2 * 6)) {
        let l = DMatrix::from_vec(2, 6, l);
        prop_assume!((&l * l.transpose()).determinant() > 1e-3);
        prop_assume!(min_sym_eig(&c) > 0.0);
        let d = h_from_coupling(&c, &l, 0.3);
        prop_assert!(d.max_sym_eig_h < 0.0);
    }

    #[test]
    fn config_round_trips(
        kind in prop::sample::select(ExperimentKind::ALL.to_vec()),
        f_y in 1.0..30.0f64,
        lambda in 0.01..1.0f64,
        dt in 1e-6..1e-2f64,
        seed in any::<u64>(),
    ) {
        let mut cfg = ExperimentConfig::default_for(kind).with_seed(seed);
        cfg.model.f_y = f_y;
        cfg.model.lambda_x = lambda;
        cfg.integrator.dt = dt;
        let text = cfg.to_text();
        let back = ExperimentConfig::parse(&text, None).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}

#[test]
fn rotated_trajectories_stay_rotated() {
    let c = CalibrationRecord::from_moments(6.0, 8, 2.0, 2.8);
    let m = RingModel::rescaled(8, &c).unwrap();
    let s0: Vec<f64> = (0..8).map(|i| (1.3 * i as f64).sin()).collect();
    let cfg = IntegratorConfig::new(1e-3, 100, 0).unwrap();
    let a = integrate(&m, &s0, 5.0, &cfg, &mut []).unwrap();
    let b = integrate(&m, &rotate(&s0, 3), 5.0, &cfg, &mut []).unwrap();
    for k in 0..a.len() {
        assert_eq!(rotate(a.state(k), 3), b.state(k));
    }
}
