mod common;

use common::*;
use na1lab::arbitrage::{
    check_na1, construct_esmm, find_classical_arbitrage, relative_arbitrage, ArbitrageVerdict, POSITIVITY_THRESHOLD,
};
use na1lab::market::{preset_constraints, recession_cone, ConstraintSet, DiscreteMarket, Preset};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn arbitrage_certificates_are_sound(seed in any::<u64>()) {
        let m = random_market(seed);
        let cert = find_classical_arbitrage(&m).unwrap();
        match cert.verdict {
            ArbitrageVerdict::ArbitrageFound => {
                let pi = cert.strategy.clone().unwrap();
                prop_assert!(m.allowed_set().contains(&pi, 1e-9));
                let g: Vec<f64> = m.returns().iter().map(|r| dot(&pi, r)).collect();
                prop_assert!(g.iter().all(|x| *x >= -1e-9));
                prop_assert!(g.iter().any(|x| *x > POSITIVITY_THRESHOLD));
            }
            ArbitrageVerdict::NoArbitrage => {
                // Dual certificate: a measure equivalent to P under which no allowed
                // strategy has positive expected gain.
                let q = construct_esmm(&m).unwrap();
                prop_assert!(q.measure.iter().all(|x| *x > 0.0));
                prop_assert!((q.measure.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
                prop_assert!(q.supermartingale_value <= 1e-8);
                let mut r = rng(seed);
                for _ in 0..50 {
                    let pi: Vec<f64> = (0..m.dim()).map(|_| r.gen_range(-2.0..2.0)).collect();
                    if !m.allowed_set().contains(&pi, 0.0) {
                        continue;
                    }
                    let eq: f64 = q.measure.iter().zip(m.returns()).map(|(w, r)| w * dot(&pi, r)).sum();
                    prop_assert!(eq <= 1e-8 * (1.0 + norm_inf(&pi)));
                }
            }
        }
    }

    #[test]
    fn na1_agrees_with_boundedness(seed in any::<u64>()) {
        let m = random_market(seed);
        let cert = check_na1(&m).unwrap();
        prop_assert_eq!(cert.holds(), allowed_set_is_bounded(&m));
        if let Some(y) = &cert.witness_ray {
            prop_assert!(!cert.holds());
            prop_assert!(norm_inf(y) > 1e-9 && norm_inf(y) <= 1.0 + 1e-12);
            prop_assert!(norm_inf(&m.subspace().project_perp(y)) <= 1e-9);
            let cone = recession_cone(&m.allowed_set()).unwrap();
            prop_assert!(cone.contains(y, 1e-9));
            let far: Vec<f64> = y.iter().map(|v| 1e4 * v).collect();
            prop_assert!(m.allowed_set().contains(&far, 1e-5));
        }
        if let Some(r) = cert.bound_radius {
            prop_assert!(cert.holds());
            let mut rg = rng(seed);
            for pi in na1lab::market::sample_allowed(&m, 30, &mut rg).unwrap() {
                prop_assert!(norm_inf(&pi) <= r + 1e-7);
            }
        }
    }

    #[test]
    fn conic_constraints_collapse_the_two_notions(seed in any::<u64>(), no_short in any::<bool>()) {
        let m = random_market(seed);
        let set = if no_short { preset_constraints(&Preset::NoShort, m.dim()).unwrap() } else { ConstraintSet::unconstrained(m.dim()) };
        let Ok(m) = DiscreteMarket::new(m.probs().to_vec(), m.returns().to_vec(), set) else { return Ok(()) };
        let arb = find_classical_arbitrage(&m).unwrap().verdict == ArbitrageVerdict::ArbitrageFound;
        prop_assert_eq!(arb, !check_na1(&m).unwrap().holds());
    }

    #[test]
    fn relative_to_cash_is_classical(seed in any::<u64>()) {
        let m = random_market(seed);
        let a = find_classical_arbitrage(&m).unwrap().verdict;
        let b = relative_arbitrage(&m, &vec![0.0; m.dim()]).unwrap().verdict;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn na1_survives_bounded_arbitrage(seed in any::<u64>()) {
        // Bounded allowed sets never admit arbitrage of the first kind.
        let m = random_market(seed);
        let set = preset_constraints(&Preset::NoShortNoBorrow, m.dim()).unwrap();
        let Ok(m) = DiscreteMarket::new(m.probs().to_vec(), m.returns().to_vec(), set) else { return Ok(()) };
        prop_assert!(check_na1(&m).unwrap().holds());
    }
}

#[test]
fn na1_cross_check_on_200_markets() {
    let mut fails = 0;
    for seed in 0..200u64 {
        let m = random_market(seed);
        let holds = check_na1(&m).unwrap().holds();
        assert_eq!(holds, allowed_set_is_bounded(&m), "seed {seed}");
        fails += usize::from(!holds);
    }
    // Both verdicts must actually occur in the sample.
    assert!(fails > 10 && fails < 190, "{fails}");
}

#[test]
fn esmm_lp_value_on_no_arbitrage_markets() {
    let mut n = 0;
    for seed in 0..300u64 {
        let m = random_market(seed);
        if find_classical_arbitrage(&m).unwrap().verdict == ArbitrageVerdict::NoArbitrage {
            let q = construct_esmm(&m).unwrap();
            assert!(q.supermartingale_value <= 1e-8, "seed {seed}: {}", q.supermartingale_value);
            n += 1;
        }
    }
    assert!(n > 30);
}
