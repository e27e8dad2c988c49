//! Potentials and test observables on the Julia set, and Birkhoff sums.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{RationalMap, SpherePoint};
use crate::numeric::KahanSum;

/// Below this spherical derivative the logarithmic potential is rejected.
pub const CRITICAL_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum ObservableKind {
    Constant(f64),
    /// `Re p(z)` for a polynomial `p` with ascending coefficients.
    RePoly(Vec<Complex64>),
    /// `Im p(z)`.
    ImPoly(Vec<Complex64>),
    /// `-t log |T'(z)|` in the spherical metric.
    NegTLogDeriv(f64),
    LinearCombination(Vec<(f64, Observable)>),
    /// `(1 - tanh(Im z / width)) / 2`: a smoothed indicator of the lower half
    /// plane. On the unit circle this is the binary digit of the angle.
    SymbolIndicator(f64),
}

/// A Hölder potential or test function. The exponent is declared, not checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObservableSpec", into = "ObservableSpec")]
pub struct Observable {
    pub kind: ObservableKind,
    pub holder_exponent: f64,
}

impl Observable {
    pub fn new(kind: ObservableKind) -> Self {
        Observable { kind, holder_exponent: 1.0 }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(ObservableKind::Constant(c))
    }

    /// `Re z`.
    pub fn re_z() -> Self {
        Self::re_poly(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)])
    }

    /// `Im z`.
    pub fn im_z() -> Self {
        Self::im_poly(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)])
    }

    pub fn re_poly(coeffs: Vec<Complex64>) -> Self {
        Self::new(ObservableKind::RePoly(coeffs))
    }

    pub fn im_poly(coeffs: Vec<Complex64>) -> Self {
        Self::new(ObservableKind::ImPoly(coeffs))
    }

    pub fn neg_t_log_deriv(t: f64) -> Self {
        Self::new(ObservableKind::NegTLogDeriv(t))
    }

    pub fn symbol_indicator(width: f64) -> Self {
        Self::new(ObservableKind::SymbolIndicator(width))
    }

    pub fn linear_combination(terms: Vec<(f64, Observable)>) -> Self {
        let holder = terms.iter().map(|(_, o)| o.holder_exponent).fold(1.0, f64::min);
        Observable { kind: ObservableKind::LinearCombination(terms), holder_exponent: holder }
    }

    /// `a·self + b·other`.
    pub fn combine(a: f64, first: &Observable, b: f64, second: &Observable) -> Self {
        Self::linear_combination(vec![(a, first.clone()), (b, second.clone())])
    }

    /// `self + c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self::combine(1.0, self, 1.0, &Observable::constant(c))
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::linear_combination(vec![(a, self.clone())])
    }

    /// True when the observable involves `log |T'|`.
    pub fn uses_log_derivative(&self) -> bool {
        match &self.kind {
            ObservableKind::NegTLogDeriv(t) => *t != 0.0,
            ObservableKind::LinearCombination(terms) => {
                terms.iter().any(|(a, o)| *a != 0.0 && o.uses_log_derivative())
            }
            _ => false,
        }
    }

    /// Value at `z`.
    pub fn evaluate(&self, map: &RationalMap, z: SpherePoint) -> Result<f64> {
        match &self.kind {
            ObservableKind::Constant(c) => Ok(*c),
            ObservableKind::RePoly(p) => Ok(poly_at(p, z)?.re),
            ObservableKind::ImPoly(p) => Ok(poly_at(p, z)?.im),
            ObservableKind::NegTLogDeriv(t) => {
                if *t == 0.0 {
                    return Ok(0.0);
                }
                let d = map.sph_deriv_abs(z);
                if !(d >= CRITICAL_GUARD) {
                    return Err(Error::CriticalOnJulia { point: z.to_string(), value: d });
                }
                Ok(-t * d.ln())
            }
            ObservableKind::LinearCombination(terms) => {
                let mut s = KahanSum::new();
                for (a, o) in terms {
                    s.add(a * o.evaluate(map, z)?);
                }
                Ok(s.value())
            }
            ObservableKind::SymbolIndicator(width) => match z {
                SpherePoint::Finite(z) => Ok(0.5 * (1.0 - (z.im / width).tanh())),
                SpherePoint::Infinity => Ok(0.5),
            },
        }
    }

    /// `CriticalOnJulia` if a log-derivative term meets a point of the cloud
    /// where `|T'|` is below [`CRITICAL_GUARD`].
    pub fn check_on_cloud(&self, map: &RationalMap, cloud: &[SpherePoint]) -> Result<()> {
        if !self.uses_log_derivative() {
            return Ok(());
        }
        for &p in cloud {
            let d = map.sph_deriv_abs(p);
            if !(d >= CRITICAL_GUARD) {
                return Err(Error::CriticalOnJulia { point: p.to_string(), value: d });
            }
        }
        Ok(())
    }
}

fn poly_at(coeffs: &[Complex64], z: SpherePoint) -> Result<Complex64> {
    match z {
        SpherePoint::Finite(z) => Ok(coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)),
        SpherePoint::Infinity => {
            if coeffs.iter().skip(1).all(|c| c.norm() == 0.0) {
                Ok(coeffs.first().copied().unwrap_or_default())
            } else {
                Err(Error::InvalidArgument("polynomial observable evaluated at infinity".into()))
            }
        }
    }
}

/// Serialized observable: `{"kind": ..., <kind fields>, "holder_exponent": κ}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<TermSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder_exponent: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub weight: f64,
    pub observable: Observable,
}

impl TryFrom<ObservableSpec> for Observable {
    type Error = Error;

    fn try_from(s: ObservableSpec) -> Result<Self> {
        let bad = |msg: &str| Error::ConfigInvalid(format!("observable `{}`: {msg}", s.kind));
        let present = [
            ("value", s.value.is_some()),
            ("coeffs", s.coeffs.is_some()),
            ("t", s.t.is_some()),
            ("width", s.width.is_some()),
            ("terms", s.terms.is_some()),
        ];
        let allowed: &[&str] = match s.kind.as_str() {
            "constant" => &["value"],
            "re_poly" | "im_poly" => &["coeffs"],
            "neg_t_log_deriv" => &["t"],
            "symbol_indicator" => &["width"],
            "linear_combination" => &["terms"],
            other => return Err(Error::ConfigInvalid(format!("unknown observable kind `{other}`"))),
        };
        for (field, is_set) in present {
            if is_set && !allowed.contains(&field) {
                return Err(bad(&format!("unexpected field `{field}`")));
            }
        }
        let kind = match s.kind.as_str() {
            "constant" => ObservableKind::Constant(s.value.ok_or_else(|| bad("missing `value`"))?),
            "re_poly" | "im_poly" => {
                let c: Vec<Complex64> = s
                    .coeffs
                    .clone()
                    .ok_or_else(|| bad("missing `coeffs`"))?
                    .iter()
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect();
                if c.is_empty() {
                    return Err(bad("empty `coeffs`"));
                }
                if s.kind == "re_poly" {
                    ObservableKind::RePoly(c)
                } else {
                    ObservableKind::ImPoly(c)
                }
            }
            "neg_t_log_deriv" => ObservableKind::NegTLogDeriv(s.t.ok_or_else(|| bad("missing `t`"))?),
            "symbol_indicator" => {
                let w = s.width.ok_or_else(|| bad("missing `width`"))?;
                if !(w > 0.0) {
                    return Err(bad("`width` must be positive"));
                }
                ObservableKind::SymbolIndicator(w)
            }
            _ => ObservableKind::LinearCombination(
                s.terms
                    .clone()
                    .ok_or_else(|| bad("missing `terms`"))?
                    .into_iter()
                    .map(|t| (t.weight, t.observable))
                    .collect(),
            ),
        };
        let holder_exponent = s.holder_exponent.unwrap_or(1.0);
        if !(holder_exponent > 0.0 && holder_exponent <= 1.0) {
            return Err(bad("holder_exponent must lie in (0, 1]"));
        }
        Ok(Observable { kind, holder_exponent })
    }
}

impl From<Observable> for ObservableSpec {
    fn from(o: Observable) -> Self {
        let conv = |v: &[Complex64]| v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>();
        let mut s = ObservableSpec { holder_exponent: Some(o.holder_exponent), ..Default::default() };
        match o.kind {
            ObservableKind::Constant(c) => {
                s.kind = "constant".into();
                s.value = Some(c);
            }
            ObservableKind::RePoly(p) => {
                s.kind = "re_poly".into();
                s.coeffs = Some(conv(&p));
            }
            ObservableKind::ImPoly(p) => {
                s.kind = "im_poly".into();
                s.coeffs = Some(conv(&p));
            }
            ObservableKind::NegTLogDeriv(t) => {
                s.kind = "neg_t_log_deriv".into();
                s.t = Some(t);
            }
            ObservableKind::SymbolIndicator(w) => {
                s.kind = "symbol_indicator".into();
                s.width = Some(w);
            }
            ObservableKind::LinearCombination(terms) => {
                s.kind = "linear_combination".into();
                s.terms = Some(terms.into_iter().map(|(weight, observable)| TermSpec { weight, observable }).collect());
            }
        }
        s
    }
}

/// A start point with its Birkhoff sums over a fixed orbit length.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitRecord {
    pub start: SpherePoint,
    pub n: usize,
    /// `S_n` of each observable, in the order the observables were given.
    pub birkhoff_sums: Vec<f64>,
    /// Log of the point's weight in its ensemble.
    pub weight_log: f64,
    pub multiplicity: u32,
}

impl OrbitRecord {
    /// The Birkhoff average `S_n(ψ)/n`, i.e. `∫ψ dW_n(start)`.
    pub fn average(&self, index: usize) -> f64 {
        self.birkhoff_sums[index] / self.n as f64
    }
}

/// `S_n(obs)(x) = Σ_{k<n} obs(Tᵏ x)`, compensated.
pub fn birkhoff_sum(map: &RationalMap, obs: &Observable, x: SpherePoint, n: usize) -> Result<f64> {
    Ok(birkhoff_sums(map, std::slice::from_ref(obs), x, n)?[0])
}

/// Birkhoff sums of several observables along one forward orbit.
pub fn birkhoff_sums(map: &RationalMap, obs: &[Observable], x: SpherePoint, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("Birkhoff sums need n ≥ 1".into()));
    }
    let mut acc = vec![KahanSum::new(); obs.len()];
    let mut z = x;
    for k in 0..n {
        for (a, o) in acc.iter_mut().zip(obs) {
            a.add(o.evaluate(map, z)?);
        }
        if k + 1 < n {
            z = map.eval(z);
        }
    }
    Ok(acc.iter().map(|a| a.value()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn z2() -> RationalMap {
        RationalMap::power(2).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let m = z2();
        assert_eq!(Observable::constant(0.3).evaluate(&m, SpherePoint::new(5.0, 1.0)).unwrap(), 0.3);
        assert_eq!(Observable::re_z().evaluate(&m, SpherePoint::new(0.0, 1.0)).unwrap(), 0.0);
        let v = Observable::neg_t_log_deriv(1.0).evaluate(&m, SpherePoint::new(1.0, 0.0)).unwrap();
        assert!((v + LN_2).abs() < 1e-15);
    }

    #[test]
    fn log_derivative_at_critical_point_fails() {
        let r = Observable::neg_t_log_deriv(1.0).evaluate(&z2(), SpherePoint::new(0.0, 0.0));
        assert!(matches!(r, Err(Error::CriticalOnJulia { .. })));
        // t = 0 is the zero potential
        assert_eq!(Observable::neg_t_log_deriv(0.0).evaluate(&z2(), SpherePoint::new(0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn cloud_guard() {
        let o = Observable::neg_t_log_deriv(0.5);
        let circle: Vec<SpherePoint> =
            (0..50).map(|k| SpherePoint::Finite(Complex64::from_polar(1.0, k as f64 * 0.1))).collect();
        assert!(o.check_on_cloud(&z2(), &circle).is_ok());
        let mut bad = circle.clone();
        bad.push(SpherePoint::new(0.0, 0.0));
        assert!(o.check_on_cloud(&z2(), &bad).is_err());
        assert!(Observable::re_z().check_on_cloud(&z2(), &bad).is_ok());
    }

    #[test]
    fn birkhoff_examples() {
        let m = z2();
        let x = SpherePoint::Finite(Complex64::from_polar(1.0, 0.7));
        assert_eq!(birkhoff_sum(&m, &Observable::constant(0.25), x, 8).unwrap(), 2.0);
        let s = birkhoff_sum(&m, &Observable::neg_t_log_deriv(1.0), x, 6).unwrap();
        assert!((s + 6.0 * LN_2).abs() < 1e-9);
        let o = Observable::re_z();
        assert_eq!(birkhoff_sum(&m, &o, x, 1).unwrap(), o.evaluate(&m, x).unwrap());
    }

    #[test]
    fn symbol_indicator_digits() {
        let m = z2();
        let o = Observable::symbol_indicator(1e-4);
        assert_eq!(o.evaluate(&m, SpherePoint::new(0.0, 1.0)).unwrap(), 0.0);
        assert_eq!(o.evaluate(&m, SpherePoint::new(0.0, -1.0)).unwrap(), 1.0);
    }

    #[test]
    fn config_round_trip_and_rejection() {
        let o = Observable::combine(0.5, &Observable::re_z(), -1.0, &Observable::neg_t_log_deriv(0.7));
        let json = serde_json::to_string(&o).unwrap();
        let back: Observable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, o);
        assert!(serde_json::from_str::<Observable>(r#"{"kind":"constant","value":1,"t":2}"#).is_err());
        assert!(serde_json::from_str::<Observable>(r#"{"kind":"constant","value":1,"colour":2}"#).is_err());
        assert!(serde_json::from_str::<Observable>(r#"{"kind":"spline"}"#).is_err());
    }
}
