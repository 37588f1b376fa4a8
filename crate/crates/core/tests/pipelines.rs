mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use slowfast::response::{h_from_coupling, min_sym_eig};

#[test]
fn ou_response_is_recovered_from_samples() {
    for gamma in [common::diagonal_gamma(), common::non_normal_gamma()] {
        let c = common::ou_pipeline(&gamma, 1e5, 0);
        assert!(c.analytic < 1e-12, "analytic {}", c.analytic);
        assert!(c.sampled < 0.05, "sampled {}", c.sampled);
    }
}

#[test]
fn tangent_matches_finite_differences_and_composes() {
    let p = common::table1(12.0);
    let c = common::tangent_check(&p, &vec![0.2; p.n_x]);
    assert!(c.linearization < 1e-4, "{}", c.linearization);
    assert!(c.chain_rule < 1e-10, "{}", c.chain_rule);
}

#[test]
fn both_estimators_start_at_identity() {
    let p = common::table1(8.0);
    let (qg, tg) = common::lag_zero_identity(&p, &vec![0.0; p.n_x]);
    assert!(qg < 1e-10, "{qg}");
    assert_eq!(tg, 0.0);
}

#[test]
fn coupling_energy_identity_on_random_metrics() {
    assert!(common::energy_identity_worst(500) < 1e-12);
}

#[test]
fn divergence_doubles_with_the_kick() {
    let p = common::table1(12.0);
    // fast errors saturate after about 0.2 slow time units at this size
    let r = common::divergence_linearity(&p, 1e-6, 0.1);
    assert!((1.8..=2.2).contains(&r), "{r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn congruence_keeps_negativity(
        a in prop::collection::vec(-1.0..1.0f64, 8 * 8),
        skew in prop::collection::vec(-2.0..2.0f64, 8 * 8),
    ) {
        // positive symmetric part plus an arbitrary antisymmetric part
        let a = DMatrix::from_vec(8, 8, a);
        let k = DMatrix::from_vec(8, 8, skew);
        let c = &a * a.transpose() + DMatrix::identity(8, 8) * 1e-3 + (&k - k.transpose());
        prop_assume!(min_sym_eig(&c) > 0.0);
        let l = slowfast::dynamics::lorenz_coupling_matrix(2, 4);
        prop_assert!(h_from_coupling(&c, &l, 0.25 * 0.25 / 4.0).max_sym_eig_h < 0.0);
    }
}
