mod common;

use common::*;
use na1lab::market::{admissible_polyhedron, recession_cone, span_and_projection, wealth, DiscreteMarket};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn zero_strategy_is_allowed(seed in any::<u64>()) {
        let m = random_market(seed);
        let zero = vec![0.0; m.dim()];
        prop_assert!(admissible_polyhedron(&m).contains(&zero, 0.0));
        prop_assert!(m.allowed_set().contains(&zero, 0.0));
    }

    #[test]
    fn recession_directions_scale_inside_the_set(seed in any::<u64>(), lam in 0.0f64..1e4) {
        let m = random_market(seed);
        let theta = m.allowed_set();
        let cone = recession_cone(&theta).unwrap();
        let mut r = rng(seed ^ 0x5eed);
        for _ in 0..100 {
            let y: Vec<f64> = (0..m.dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
            if !cone.contains(&y, 0.0) {
                continue;
            }
            let ly: Vec<f64> = y.iter().map(|v| lam * v).collect();
            prop_assert!(cone.contains(&ly, 1e-9 * (1.0 + lam)));
            // 0 is allowed, so the whole ray from it stays allowed.
            prop_assert!(theta.contains(&ly, 1e-9 * (1.0 + lam)));
        }
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal(seed in any::<u64>()) {
        let m = random_market(seed);
        let basis = span_and_projection(m.support());
        prop_assert_eq!(basis.rank(), gram_schmidt(m.returns(), 1e-9).len());
        let mut r = rng(seed);
        let x: Vec<f64> = (0..m.dim()).map(|_| r.gen_range(-5.0..5.0)).collect();
        let p = basis.project(&x);
        let q = basis.project_perp(&x);
        let pp = basis.project(&p);
        for i in 0..m.dim() {
            prop_assert!((pp[i] - p[i]).abs() <= 1e-12 * 10.0);
            prop_assert!((p[i] + q[i] - x[i]).abs() <= 1e-12 * 10.0);
        }
        prop_assert!(dot(&p, &q).abs() <= 1e-10);
        for s in m.support() {
            prop_assert!(norm_inf(&basis.project_perp(s)) <= 1e-10);
        }
    }

    #[test]
    fn wealth_ignores_directions_outside_the_support(seed in any::<u64>()) {
        let m = random_market(seed);
        let mut r = rng(seed.rotate_left(7));
        let pi: Vec<f64> = (0..m.dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let noise: Vec<f64> = (0..m.dim()).map(|_| r.gen_range(-10.0..10.0)).collect();
        let w = m.subspace().project_perp(&noise);
        let shifted: Vec<f64> = pi.iter().zip(&w).map(|(a, b)| a + b).collect();
        let a = wealth(&pi, 1.0, &m);
        let b = wealth(&shifted, 1.0, &m);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn wealth_is_linear_in_capital(seed in any::<u64>(), v in 0.01f64..100.0, k in 0.0f64..50.0) {
        let m = random_market(seed);
        let mut r = rng(seed);
        let pi: Vec<f64> = (0..m.dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let a = wealth(&pi, v, &m);
        let b = wealth(&pi, k * v, &m);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((k * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        // Independent evaluation of v (1 + <pi, R>).
        for (x, row) in a.iter().zip(m.returns()) {
            prop_assert!((x - v * (1.0 + dot(&pi, row))).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn admissible_means_nonnegative_wealth(seed in any::<u64>()) {
        let m = random_market(seed);
        let adm = admissible_polyhedron(&m);
        let mut r = rng(seed);
        for _ in 0..50 {
            let pi: Vec<f64> = (0..m.dim()).map(|_| r.gen_range(-3.0..3.0)).collect();
            let ok = wealth(&pi, 1.0, &m).iter().all(|w| *w >= -1e-12);
            prop_assert_eq!(adm.contains(&pi, 1e-12), ok);
        }
    }

    #[test]
    fn json_round_trip(seed in any::<u64>()) {
        let m = random_market(seed);
        let text = serde_json::to_string(&m).unwrap();
        let back: DiscreteMarket = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}

#[test]
fn bad_markets_are_rejected() {
    use na1lab::market::ConstraintSet;
    assert!(DiscreteMarket::new(vec![0.5, 0.4], vec![vec![0.1], vec![-0.1]], ConstraintSet::unconstrained(1)).is_err());
    assert!(DiscreteMarket::new(vec![1.0], vec![vec![-1.5]], ConstraintSet::unconstrained(1)).is_err());
    assert!(DiscreteMarket::new(vec![0.5, 0.5], vec![vec![0.1], vec![f64::NAN]], ConstraintSet::unconstrained(1)).is_err());
    let neg = ConstraintSet::from_rows(1, vec![(vec![1.0], -1.0)]).unwrap();
    assert!(DiscreteMarket::new(vec![1.0], vec![vec![0.2]], neg).is_err());
}
