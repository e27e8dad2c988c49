mod common;

use common::*;
use proptest::prelude::*;
use thermo_core::map::julia_sample;
use thermo_core::orbits::{periodic_points, preimage_tree, separated_indices};
use thermo_core::{Observable, SpherePoint};

#[test]
fn z2_periodic_counts() {
    let map = z2();
    for n in 1..=14 {
        assert_eq!(periodic_points(&map, n).unwrap().len(), (1usize << n) - 1, "period {n}");
    }
}

#[test]
fn every_tree_returns_to_its_root() {
    for (name, map) in test_maps() {
        let depth_cap = if map.degree() == 3 { 8 } else { 12 };
        for x0 in julia_sample(&map, 3, 21).unwrap().into_iter().chain([SpherePoint::new(0.3, -2.0)]) {
            for n in [1, 4, depth_cap] {
                let tree = preimage_tree(&map, &Observable::zero(), &[], x0, n).unwrap();
                assert_eq!(tree.total_multiplicity(), (map.degree() as u64).pow(n as u32));
                let r = tree.fiber_residual(&map);
                assert!(r <= n as f64 * 1e-10, "{name} n={n} from {x0}: {r:e}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn separated_counts_are_monotone(seed in 0u64..1000, e1 in 0.05f64..1.5, e2 in 0.05f64..1.5, n in 1usize..8) {
        let map = basilica();
        let cloud = julia_sample(&map, 1500, seed).unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let at = |eps: f64, k: usize| separated_indices(&cloud, &map, k, eps).len();
        prop_assert!(at(hi, n) <= at(lo, n), "eps {} vs {}", lo, hi);
        prop_assert!(at(lo, n) <= at(lo, n + 1), "n {} vs {}", n, n + 1);
    }
}
