//! Browser bindings for quadratic maps `z² + c`. Every function returns a
//! flat `Float64Array` so the page can plot without further decoding.

use num_complex::Complex64;
use thermo_core::ldp::rate_from_curve;
use thermo_core::map::julia_sample;
use thermo_core::pressure::{pressure_curve, pressure_increment, Method};
use thermo_core::transfer::equilibrium_atoms;
use thermo_core::{Observable, RationalMap, SpherePoint};
use wasm_bindgen::prelude::*;

/// Deeper trees freeze the page.
pub const MAX_DEPTH: usize = 16;

fn setup(c_re: f64, c_im: f64, depth: usize) -> Result<(RationalMap, SpherePoint, usize), JsError> {
    let map = RationalMap::quadratic(Complex64::new(c_re, c_im));
    let x0 = julia_sample(&map, 1, 7).map_err(|e| JsError::new(&e.to_string()))?[0];
    Ok((map, x0, depth.clamp(1, MAX_DEPTH)))
}

fn js<T>(r: thermo_core::Result<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

fn observable(name: &str) -> Result<Observable, JsError> {
    match name {
        "re" => Ok(Observable::re_z()),
        "im" => Ok(Observable::im_z()),
        other => Err(JsError::new(&format!("unknown observable {other:?}, expected \"re\" or \"im\""))),
    }
}

/// `t ↦ P(−t log|T'|)` on `steps + 1` points of `[t_min, t_max]`, as `[t0, P0, t1, P1, ...]`.
#[wasm_bindgen]
pub fn pressure_curve_geometric(c_re: f64, c_im: f64, t_min: f64, t_max: f64, steps: usize, depth: usize) -> Result<Vec<f64>, JsError> {
    let (map, x0, n) = setup(c_re, c_im, depth)?;
    let steps = steps.max(1);
    let t: Vec<f64> = (0..=steps).map(|k| t_min + (t_max - t_min) * k as f64 / steps as f64).collect();
    let curve = js(pressure_curve(&map, &Observable::zero(), &Observable::neg_t_log_deriv(1.0), &t, Method::Tree, n, x0))?;
    Ok(curve.samples.iter().flat_map(|&(q, p)| [q, p]).collect())
}

/// Rate function of `Re z` or `Im z` under the measure of maximal entropy,
/// as `[s0, I0, s1, I1, ...]`; `Infinity` outside the attainable range.
#[wasm_bindgen]
pub fn rate_function(c_re: f64, c_im: f64, which: &str, depth: usize) -> Result<Vec<f64>, JsError> {
    let (map, x0, n) = setup(c_re, c_im, depth)?;
    let psi = observable(which)?;
    let q: Vec<f64> = (0..=160).map(|k| -8.0 + 0.1 * k as f64).collect();
    let curve = js(pressure_curve(&map, &Observable::zero(), &psi, &q, Method::Tree, n, x0))?;
    let s: Vec<f64> = (0..=200).map(|k| -2.0 + 0.02 * k as f64).collect();
    let rate = js(rate_from_curve(&curve, &s))?;
    Ok(rate.s.iter().zip(&rate.values).flat_map(|(&s, v)| [s, v.to_f64()]).collect())
}

/// Equilibrium atoms for `φ = a·Re z` as `[x0, y0, w0, x1, ...]`; the point at
/// infinity is skipped.
#[wasm_bindgen]
pub fn equilibrium_atoms_re(c_re: f64, c_im: f64, a: f64, depth: usize) -> Result<Vec<f64>, JsError> {
    let (map, x0, n) = setup(c_re, c_im, depth.min(12))?;
    let phi = Observable::re_z().scaled(a);
    let log_p = js(pressure_increment(&map, &phi, x0, n))?;
    let mu = js(equilibrium_atoms(&map, &phi, x0, n, log_p))?;
    Ok(mu
        .atoms
        .iter()
        .filter_map(|(p, w)| match p {
            SpherePoint::Finite(z) => Some([z.re, z.im, *w]),
            SpherePoint::Infinity => None,
        })
        .flatten()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_curve_vanishes_at_one_for_z2() {
        let v = pressure_curve_geometric(0.0, 0.0, 0.0, 2.0, 2, 10).unwrap();
        assert_eq!(v.len(), 6);
        assert!((v[1] - std::f64::consts::LN_2).abs() < 1e-9);
        assert!(v[3].abs() < 1e-9);
    }

    #[test]
    fn rate_is_zero_at_the_mean() {
        let v = rate_function(0.0, 0.0, "re", 10).unwrap();
        let min = v.chunks(2).map(|c| c[1]).fold(f64::INFINITY, f64::min);
        assert!(min.abs() < 1e-9);
        assert!(v.chunks(2).any(|c| c[1].is_infinite()));
    }

    #[test]
    fn atoms_are_a_probability_vector() {
        let v = equilibrium_atoms_re(-1.0, 0.0, 0.3, 8).unwrap();
        let total: f64 = v.chunks(3).map(|c| c[2]).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
