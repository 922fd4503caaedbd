mod common;

use bgnn::beamcore::{gain_matrix, rates, recover_beams, total_power, BeamFeature, Utility};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recovered_beams_spend_exactly_the_downlink_power(n in 1usize..7, k in 1usize..7, seed in any::<u64>()) {
        let inst = common::instance(n, k, seed);
        let mut r = common::rng(seed ^ 0x5a5a);
        let p = common::simplex_point(k, inst.power(), &mut r);
        let q = common::simplex_point(k, inst.power(), &mut r);
        let v = recover_beams(&inst, &BeamFeature { p, q }).unwrap();
        prop_assert!((total_power(&v) - inst.power()).abs() <= 1e-9 * inst.power());
    }

    #[test]
    fn rates_agree_with_definition(n in 1usize..7, k in 1usize..7, seed in any::<u64>()) {
        let inst = common::instance(n, k, seed);
        let mut r = common::rng(seed);
        let v = bgnn::linalg::CMatrix::from_fn(n, k, |_, _| num_complex::Complex64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5));
        let ours = rates(inst.h(), &v, inst.noise());
        let oracle = common::oracle_rates(&common::rows(inst.h()), &common::columns(&v), inst.noise());
        for (a, b) in ours.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        prop_assert_eq!(gain_matrix(inst.h(), &v).len(), k * k);
    }

    #[test]
    fn permuting_users_permutes_rates(n in 1usize..6, k in 1usize..6, seed in any::<u64>()) {
        let inst = common::instance(n, k, seed);
        let mut r = common::rng(seed);
        let p = common::simplex_point(k, inst.power(), &mut r);
        let q = common::simplex_point(k, inst.power(), &mut r);
        let users = common::random_permutation(k, &mut r);
        let antennas = common::random_permutation(n, &mut r);
        let base = rates(inst.h(), &recover_beams(&inst, &BeamFeature { p: p.clone(), q: q.clone() }).unwrap(), inst.noise());
        let pp: Vec<f64> = users.iter().map(|&u| p[u]).collect();
        let pq: Vec<f64> = users.iter().map(|&u| q[u]).collect();
        let permuted = inst.permuted(&users, &antennas);
        let moved = rates(permuted.h(), &recover_beams(&permuted, &BeamFeature { p: pp, q: pq }).unwrap(), permuted.noise());
        for (j, &u) in users.iter().enumerate() {
            prop_assert!((base[u] - moved[j]).abs() <= 1e-10);
        }
    }

    #[test]
    fn eigen_recovery_preserves_the_dual_min_rate(seed in any::<u64>()) {
        prop_assert!(common::duality_gap(seed) <= 1e-6);
    }

    #[test]
    fn min_rate_utility_is_bounded_by_sum_over_users(n in 1usize..6, k in 1usize..6, seed in any::<u64>()) {
        let inst = common::instance(n, k, seed);
        let v = recover_beams(&inst, &BeamFeature::uniform(k, inst.power())).unwrap();
        let r = rates(inst.h(), &v, inst.noise());
        prop_assert!(Utility::MinRate.apply(&r) * k as f64 <= Utility::SumRate.apply(&r) + 1e-12);
    }
}
