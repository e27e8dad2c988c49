mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermo_core::{Complex64, RationalMap, SpherePoint};

fn poly_mul(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![c(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &mut Vec<Complex64>, b: &[Complex64]) {
    if a.len() < b.len() {
        a.resize(b.len(), c(0.0, 0.0));
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn poly_pow(a: &[Complex64], k: usize) -> Vec<Complex64> {
    (0..k).fold(vec![c(1.0, 0.0)], |acc, _| poly_mul(&acc, a))
}

/// `F(N, D) = Σ f_k N^k D^{d-k}` in homogeneous form.
fn homogeneous(f: &[Complex64], n: &[Complex64], d: &[Complex64], deg: usize) -> Vec<Complex64> {
    let mut out = vec![c(0.0, 0.0)];
    for (k, fk) in f.iter().enumerate() {
        let term = poly_mul(&poly_pow(n, k), &poly_pow(d, deg - k));
        poly_add(&mut out, &term.iter().map(|t| t * fk).collect::<Vec<_>>());
    }
    out
}

/// `T∘T` written out as a single rational map, independently of the library.
fn second_iterate(map: &RationalMap) -> RationalMap {
    let deg = map.degree();
    let pad = |v: &[Complex64]| {
        let mut v = v.to_vec();
        v.resize(deg + 1, c(0.0, 0.0));
        v
    };
    let (n, d) = (pad(map.numerator()), pad(map.denominator()));
    RationalMap::rational(&homogeneous(&n, &n, &d, deg), &homogeneous(&d, &n, &d, deg)).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng) -> SpherePoint {
    SpherePoint::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))
}

#[test]
fn multiplicity_is_conserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, map) in test_maps() {
        for _ in 0..10_000 {
            let x = random_point(&mut rng);
            let fiber = map.preimages(x).unwrap();
            assert_eq!(fiber.total_multiplicity() as usize, map.degree(), "{name} at {x}");
        }
    }
}

#[test]
fn chain_rule_for_the_spherical_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (name, map) in test_maps() {
        let t2 = second_iterate(&map);
        let mut checked = 0;
        while checked < 1000 {
            let z = random_point(&mut rng);
            let direct = t2.sph_deriv_abs(z);
            let chained = map.sph_deriv_abs(map.eval(z)) * map.sph_deriv_abs(z);
            if chained < 1e-6 {
                continue;
            }
            assert!((direct - chained).abs() <= 1e-10 * chained, "{name} at {z}: {direct} vs {chained}");
            checked += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn preimages_solve_the_equation(re in -3.0f64..3.0, im in -3.0f64..3.0, which in 0usize..5) {
        let (name, map) = test_maps().swap_remove(which);
        let x = SpherePoint::new(re, im);
        let fiber = map.preimages(x).unwrap();
        for (y, _) in &fiber.points {
            prop_assert!(map.eval(*y).chordal(x) < 1e-12, "{} {}", name, y);
        }
        if fiber.points.iter().all(|(_, m)| *m == 1) {
            prop_assert_eq!(fiber.len(), map.degree());
            for i in 0..fiber.len() {
                for j in 0..i {
                    prop_assert!(fiber.points[i].0.chordal(fiber.points[j].0) > 0.0);
                }
            }
        }
    }

    #[test]
    fn chordal_metric_is_symmetric_and_bounded(a in -50.0f64..50.0, b in -50.0f64..50.0, u in -50.0f64..50.0, v in -50.0f64..50.0) {
        let (p, q) = (SpherePoint::new(a, b), SpherePoint::new(u, v));
        let d = p.chordal(q);
        prop_assert!((d - q.chordal(p)).abs() < 1e-15);
        prop_assert!((0.0..=2.0 + 1e-15).contains(&d));
        prop_assert!(p.chordal(SpherePoint::Infinity) <= 2.0);
    }
}
