mod common;

use common::*;
use thermo_core::map::julia_sample;
use thermo_core::pressure::pressure_increment;
use thermo_core::transfer::{c0_bound, conformal_atoms, density_profile, dual_identity, equilibrium_atoms};
use thermo_core::Observable;

fn potentials() -> Vec<Observable> {
    vec![Observable::zero(), Observable::re_z().scaled(0.3)]
}

#[test]
fn atomic_measures_are_normalized() {
    for (name, map) in test_maps() {
        let x0 = julia_sample(&map, 1, 7).unwrap()[0];
        for phi in potentials() {
            for n in [1, 5, 9] {
                let eta = conformal_atoms(&map, &phi, x0, n).unwrap();
                assert!((eta.total() - 1.0).abs() < 1e-12, "{name} n={n}");
                let lp = pressure_increment(&map, &phi, x0, 12).unwrap();
                let mu = equilibrium_atoms(&map, &phi, x0, n, lp).unwrap();
                assert!((mu.total() - 1.0).abs() < 1e-12, "{name} n={n}");
            }
        }
    }
}

#[test]
fn dual_identity_on_atoms() {
    let tests = [Observable::constant(1.0), Observable::re_z(), Observable::im_z()];
    for (name, map) in [("z2", z2()), ("basilica", basilica())] {
        let x0 = julia_sample(&map, 1, 7).unwrap()[0];
        for phi in potentials() {
            let log_p = pressure_increment(&map, &phi, x0, 16).unwrap();
            let eta = conformal_atoms(&map, &phi, x0, 10).unwrap();
            let tol = 2.0 / (eta.len() as f64).sqrt() * log_p.exp();
            for g in &tests {
                let (left, right) = dual_identity(&map, &phi, &eta, g, log_p).unwrap();
                assert!((left - right).abs() <= tol, "{name} {g:?}: {left} vs {right} (tol {tol:e})");
            }
        }
    }
}

#[test]
fn density_is_positive_and_bounded() {
    for (name, map) in [("z2", z2()), ("basilica", basilica()), ("rabbit", rabbit())] {
        let sample = julia_sample(&map, 32, 9).unwrap();
        for phi in potentials() {
            let log_p = pressure_increment(&map, &phi, sample[0], 16).unwrap();
            let h = density_profile(&map, &phi, &sample, 10, log_p).unwrap();
            let lo = h.values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = h.values.iter().copied().fold(0.0, f64::max);
            assert!(lo > 0.0, "{name}");
            let c0 = c0_bound(&map, &phi, &sample, 10, log_p).unwrap();
            assert!(hi / lo <= c0 * c0, "{name}: ratio {} vs C0² {}", hi / lo, c0 * c0);
        }
    }
}
