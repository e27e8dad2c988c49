mod common;

use std::sync::OnceLock;

use common::*;
use proptest::prelude::*;
use thermo_core::ldp::{level1_tail, log_tail_mass, preimage_ensemble, periodic_ensemble, rate_from_curve, EmpiricalEnsemble, Tail};
use thermo_core::numeric::log_sum_exp;
use thermo_core::pressure::{pressure_curve, Method};
use thermo_core::sft::{bernoulli_rate, BRIDGE_WIDTH};
use thermo_core::Observable;

fn ensembles() -> &'static [EmpiricalEnsemble; 2] {
    static E: OnceLock<[EmpiricalEnsemble; 2]> = OnceLock::new();
    E.get_or_init(|| {
        let obs = [Observable::re_z(), Observable::im_z()];
        [
            preimage_ensemble(&z2(), &Observable::zero(), &obs, 14, circle_point()).unwrap(),
            periodic_ensemble(&basilica(), &Observable::re_z().scaled(0.3), &obs, 12).unwrap(),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tails_and_band_carry_all_mass(which in 0usize..2, obs in 0usize..2, a in -1.5f64..1.5, b in -1.5f64..1.5) {
        let ens = &ensembles()[which];
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let psi = &ens.observables[obs];
        let col = ens.column(psi).unwrap();
        let upper = log_tail_mass(ens, psi, Tail::AtLeast(hi)).unwrap().to_f64();
        let lower = log_tail_mass(ens, psi, Tail::Below(lo)).unwrap().to_f64();
        let band: Vec<f64> = ens.members.iter().filter(|m| { let v = m.average(col); v >= lo && v < hi }).map(|m| m.weight_log).collect();
        let total = log_sum_exp(&[upper, lower, log_sum_exp(&band)]);
        prop_assert!(total.abs() < 1e-9);
    }
}

#[test]
fn rates_are_nonnegative_and_convex() {
    let grid: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.1).collect();
    let s: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.05).collect();
    let cases = [
        (z2(), Observable::zero(), Observable::re_z()),
        (z2(), Observable::re_z().scaled(0.3), Observable::im_z()),
        (basilica(), Observable::zero(), Observable::re_z()),
        (basilica(), Observable::zero(), re_z2()),
    ];
    for (map, phi, psi) in cases {
        for method in [Method::Tree, Method::Periodic] {
            let curve = pressure_curve(&map, &phi, &psi, &grid, method, 10, circle_point()).unwrap();
            let rate = rate_from_curve(&curve, &s).unwrap();
            for v in &rate.values {
                assert!(v.to_f64() >= 0.0);
            }
            assert!(rate.convexity_defect() >= -1e-3, "{psi:?} {method}");
        }
    }
}

/// Conjugation `z ↦ z̄` commutes with `z²` and flips the sign of `Im z`, so
/// the `Im z` tails at `±s` match. (`Re z` is fixed by conjugation and its
/// averages are skewed, so no such symmetry holds for it.)
#[test]
fn im_z_tails_are_symmetric_on_the_circle() {
    let im = Observable::im_z();
    let pre = preimage_ensemble(&z2(), &Observable::zero(), std::slice::from_ref(&im), 16, circle_point()).unwrap();
    let per = periodic_ensemble(&z2(), &Observable::zero(), std::slice::from_ref(&im), 16).unwrap();
    for s in [0.1, 0.2, 0.3, 0.4] {
        let up = level1_tail(&pre, &im, Tail::AtLeast(s)).unwrap().to_f64();
        let down = level1_tail(&pre, &im, Tail::Below(-s)).unwrap().to_f64();
        assert!((up - down).abs() < 2e-2, "preimage s={s}: {up} vs {down}");
        // the periodic set is conjugation invariant, so only ≥ versus < can differ
        let up = level1_tail(&per, &im, Tail::AtLeast(s)).unwrap().to_f64();
        let down = level1_tail(&per, &im, Tail::Below(-s + 1e-12)).unwrap().to_f64();
        assert!((up - down).abs() < 1e-9, "periodic s={s}: {up} vs {down}");
    }
}

#[test]
fn frequency_slopes_follow_the_closed_form_rate() {
    let n = 16;
    let ind = Observable::symbol_indicator(BRIDGE_WIDTH);
    let ens = preimage_ensemble(&z2(), &Observable::zero(), std::slice::from_ref(&ind), n, circle_point()).unwrap();
    let tol = (3.0 / n as f64).max(0.02);
    for s in [0.55, 0.6, 0.7, 0.8, 0.9] {
        let slope = level1_tail(&ens, &ind, Tail::AtLeast(s)).unwrap().to_f64();
        let rate = bernoulli_rate(0.5, s).to_f64();
        assert!((slope + rate).abs() <= tol, "s={s}: slope {slope} vs -I {}", -rate);
    }
}
