mod common;

use common::*;
use proptest::prelude::*;
use thermo_core::map::julia_sample;
use thermo_core::potentials::birkhoff_sum;
use thermo_core::{Observable, SpherePoint};

fn observables() -> Vec<Observable> {
    vec![
        Observable::re_z(),
        Observable::im_z(),
        re_z2().shifted(0.3),
        Observable::neg_t_log_deriv(1.0),
        Observable::combine(0.5, &Observable::re_z(), -2.0, &Observable::neg_t_log_deriv(0.5)),
    ]
}

fn julia_points() -> Vec<(usize, SpherePoint)> {
    let mut out = Vec::new();
    for (k, (_, map)) in test_maps().into_iter().enumerate() {
        for p in julia_sample(&map, 64, 3).unwrap() {
            out.push((k, p));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cocycle(idx in 0usize..320, obs in 0usize..5, m in 1usize..=15, n in 1usize..=15) {
        let (k, x) = julia_points()[idx];
        let map = &test_maps()[k].1;
        let psi = &observables()[obs];
        let whole = birkhoff_sum(map, psi, x, m + n).unwrap();
        let split = birkhoff_sum(map, psi, x, m).unwrap() + birkhoff_sum(map, psi, map.iterate(x, m), n).unwrap();
        prop_assert!((whole - split).abs() <= 1e-9 * (1.0 + whole.abs()), "{} vs {}", whole, split);
    }

    #[test]
    fn linearity(idx in 0usize..320, i in 0usize..5, j in 0usize..5, a in -3.0f64..3.0, b in -3.0f64..3.0, n in 1usize..=20) {
        let (k, x) = julia_points()[idx];
        let map = &test_maps()[k].1;
        let obs = observables();
        let combo = Observable::combine(a, &obs[i], b, &obs[j]);
        let (s1, s2) = (birkhoff_sum(map, &obs[i], x, n).unwrap(), birkhoff_sum(map, &obs[j], x, n).unwrap());
        let lhs = birkhoff_sum(map, &combo, x, n).unwrap();
        let rhs = a * s1 + b * s2;
        let scale = 1.0 + (a * s1).abs() + (b * s2).abs();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale, "{} vs {}", lhs, rhs);
    }
}
