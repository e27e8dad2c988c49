#![allow(dead_code)]

use thermo_core::{Complex64, Observable, RationalMap, SpherePoint};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn z2() -> RationalMap {
    RationalMap::power(2).unwrap()
}

pub fn basilica() -> RationalMap {
    RationalMap::quadratic(c(-1.0, 0.0))
}

pub fn rabbit() -> RationalMap {
    RationalMap::quadratic(c(-0.122561166876654, 0.744861766619744))
}

/// `(z² + 0.5) / (z² - 0.25)`: a genuinely rational degree-2 map.
pub fn rational2() -> RationalMap {
    RationalMap::rational(&[c(0.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)], &[c(-0.25, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap()
}

/// `z³ + 0.4 z`.
pub fn cubic() -> RationalMap {
    RationalMap::polynomial(&[c(0.0, 0.0), c(0.4, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap()
}

pub fn test_maps() -> Vec<(&'static str, RationalMap)> {
    vec![("z2", z2()), ("basilica", basilica()), ("rabbit", rabbit()), ("rational", rational2()), ("cubic", cubic())]
}

/// `e^{i}` on the unit circle.
pub fn circle_point() -> SpherePoint {
    SpherePoint::Finite(Complex64::from_polar(1.0, 1.0))
}

pub fn re_z2() -> Observable {
    Observable::re_poly(vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)])
}
