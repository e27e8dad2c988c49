//! Rational maps of the Riemann sphere.
//!
//! A map is stored as a homogeneous pair of coefficient vectors of common
//! length `d + 1`, so evaluation, spherical derivatives and fibers are total on
//! the sphere. Polynomials are the special case of a constant denominator.

use std::collections::HashMap;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots;

/// Roots closer than this (chordal) are merged into one preimage.
pub const ROOT_MERGE_RADIUS: f64 = 1e-8;
/// Chordal residual every preimage must satisfy.
pub const PREIMAGE_RESIDUAL: f64 = 1e-12;
/// Burn-in length of the backward random walk in [`julia_sample`].
pub const JULIA_BURN_IN: usize = 200;

/// A point of the Riemann sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpherePoint {
    Finite(Complex64),
    Infinity,
}

impl SpherePoint {
    pub fn new(re: f64, im: f64) -> Self {
        SpherePoint::Finite(Complex64::new(re, im))
    }

    pub fn from_complex(z: Complex64) -> Self {
        if z.re.is_finite() && z.im.is_finite() {
            SpherePoint::Finite(z)
        } else {
            SpherePoint::Infinity
        }
    }

    pub fn finite(self) -> Option<Complex64> {
        match self {
            SpherePoint::Finite(z) => Some(z),
            SpherePoint::Infinity => None,
        }
    }

    /// Panics at infinity; for code paths that only ever see bounded Julia sets.
    pub fn z(self) -> Complex64 {
        self.finite().expect("point at infinity where a finite point was required")
    }

    pub fn is_infinity(self) -> bool {
        matches!(self, SpherePoint::Infinity)
    }

    /// Image on the unit sphere of ℝ³ under inverse stereographic projection.
    /// Euclidean distances between images are chordal distances.
    pub fn to_unit_vector(self) -> [f64; 3] {
        match self {
            SpherePoint::Infinity => [0.0, 0.0, 1.0],
            SpherePoint::Finite(z) => {
                let r2 = z.norm_sqr();
                if !r2.is_finite() {
                    return [0.0, 0.0, 1.0];
                }
                let s = 1.0 + r2;
                [2.0 * z.re / s, 2.0 * z.im / s, (r2 - 1.0) / s]
            }
        }
    }

    /// Chordal distance, at most 2.
    pub fn chordal(self, other: SpherePoint) -> f64 {
        match (self, other) {
            (SpherePoint::Infinity, SpherePoint::Infinity) => 0.0,
            (SpherePoint::Finite(z), SpherePoint::Infinity)
            | (SpherePoint::Infinity, SpherePoint::Finite(z)) => 2.0 / (1.0 + z.norm_sqr()).sqrt(),
            (SpherePoint::Finite(a), SpherePoint::Finite(b)) => {
                let d = 2.0 * (a - b).norm() / ((1.0 + a.norm_sqr()) * (1.0 + b.norm_sqr())).sqrt();
                d.min(2.0)
            }
        }
    }

    /// Lexicographic order on (re, im) with infinity last; used to fix child
    /// order in every tree expansion.
    pub fn lex_cmp(&self, other: &SpherePoint) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self, other) {
            (SpherePoint::Infinity, SpherePoint::Infinity) => Ordering::Equal,
            (SpherePoint::Infinity, _) => Ordering::Greater,
            (_, SpherePoint::Infinity) => Ordering::Less,
            (SpherePoint::Finite(a), SpherePoint::Finite(b)) => {
                a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
            }
        }
    }
}

impl fmt::Display for SpherePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpherePoint::Infinity => f.write_str("∞"),
            SpherePoint::Finite(z) => write!(f, "{}{:+}i", z.re, z.im),
        }
    }
}

impl From<Complex64> for SpherePoint {
    fn from(z: Complex64) -> Self {
        SpherePoint::from_complex(z)
    }
}

/// Which metric `|T'|` is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativeMetric {
    #[default]
    Spherical,
    Euclidean,
}

/// The fiber `T⁻¹(x)` with local degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct PreimageSet {
    pub points: Vec<(SpherePoint, u32)>,
}

impl PreimageSet {
    pub fn total_multiplicity(&self) -> u32 {
        self.points.iter().map(|(_, m)| m).sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A rational map `T = P / Q` of degree at least two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapCoefficients", into = "MapCoefficients")]
pub struct RationalMap {
    // ascending coefficients, both padded to length degree + 1
    num: Vec<Complex64>,
    den: Vec<Complex64>,
    degree: usize,
    polynomial: bool,
    // num / den[0] for polynomial maps, empty otherwise
    affine: Vec<Complex64>,
}

/// Serialized form: coefficient arrays of `[re, im]` pairs in ascending order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapCoefficients {
    pub numerator: Vec<[f64; 2]>,
    #[serde(default = "one_coeff")]
    pub denominator: Vec<[f64; 2]>,
}

fn one_coeff() -> Vec<[f64; 2]> {
    vec![[1.0, 0.0]]
}

impl TryFrom<MapCoefficients> for RationalMap {
    type Error = Error;
    fn try_from(c: MapCoefficients) -> Result<Self> {
        let conv = |v: &[[f64; 2]]| v.iter().map(|p| Complex64::new(p[0], p[1])).collect::<Vec<_>>();
        RationalMap::rational(&conv(&c.numerator), &conv(&c.denominator))
    }
}

impl From<RationalMap> for MapCoefficients {
    fn from(m: RationalMap) -> Self {
        let conv = |v: &[Complex64]| v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>();
        let trim = |v: &[Complex64]| {
            let mut k = v.len();
            while k > 1 && v[k - 1] == Complex64::new(0.0, 0.0) {
                k -= 1;
            }
            conv(&v[..k])
        };
        MapCoefficients { numerator: trim(&m.num), denominator: trim(&m.den) }
    }
}

fn actual_degree(v: &[Complex64]) -> Option<usize> {
    v.iter().rposition(|c| c.norm() > 0.0)
}

impl RationalMap {
    /// `T(z) = z² + c`.
    pub fn quadratic(c: Complex64) -> Self {
        Self::polynomial(&[c, Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)])
            .expect("z² + c is a valid polynomial map")
    }

    /// `T(z) = zᵈ`.
    pub fn power(d: usize) -> Result<Self> {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); d + 1];
        coeffs[d] = Complex64::new(1.0, 0.0);
        Self::polynomial(&coeffs)
    }

    pub fn polynomial(coeffs: &[Complex64]) -> Result<Self> {
        Self::rational(coeffs, &[Complex64::new(1.0, 0.0)])
    }

    pub fn rational(numerator: &[Complex64], denominator: &[Complex64]) -> Result<Self> {
        if numerator.iter().chain(denominator).any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidMap("non-finite coefficient".into()));
        }
        let dp = actual_degree(numerator).ok_or_else(|| Error::InvalidMap("zero numerator".into()))?;
        let dq = actual_degree(denominator).ok_or_else(|| Error::InvalidMap("zero denominator".into()))?;
        let degree = dp.max(dq);
        if degree < 2 {
            return Err(Error::InvalidMap(format!("degree {degree} < 2")));
        }
        let mut num = numerator[..=dp].to_vec();
        let mut den = denominator[..=dq].to_vec();
        num.resize(degree + 1, Complex64::new(0.0, 0.0));
        den.resize(degree + 1, Complex64::new(0.0, 0.0));
        // max-norm normalization of the homogeneous pair
        let scale = num.iter().chain(&den).map(|c| c.norm()).fold(0.0, f64::max);
        for c in num.iter_mut().chain(den.iter_mut()) {
            *c /= scale;
        }
        let polynomial = dq == 0;
        if !polynomial {
            let res = resultant(&num[..=dp], &den[..=dq]);
            if res.norm() < 1e-10 {
                return Err(Error::InvalidMap(format!(
                    "numerator and denominator share a root (|resultant| = {:e})",
                    res.norm()
                )));
            }
        }
        let affine = if polynomial { num.iter().map(|c| c / den[0]).collect() } else { Vec::new() };
        Ok(RationalMap { num, den, degree, polynomial, affine })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_polynomial(&self) -> bool {
        self.polynomial
    }

    pub fn numerator(&self) -> &[Complex64] {
        &self.num
    }

    pub fn denominator(&self) -> &[Complex64] {
        &self.den
    }

    /// Numerator/denominator pair in the chart adapted to `|z|`: affine for
    /// `|z| ≤ 1`, the reversed (homogeneous) polynomials in `w = 1/z` outside.
    /// Returns the chart variable, `P`, `P'`, `Q`, `Q'` in that chart.
    #[inline]
    fn chart_eval(&self, z: SpherePoint) -> (Complex64, [Complex64; 4]) {
        let eval_rev = |coeffs: &[Complex64], w: Complex64| {
            // Σ c_k w^(d-k)
            let mut p = Complex64::new(0.0, 0.0);
            let mut dp = Complex64::new(0.0, 0.0);
            for &c in coeffs {
                dp = dp * w + p;
                p = p * w + c;
            }
            (p, dp)
        };
        match z {
            SpherePoint::Finite(z) if z.norm_sqr() <= 1.0 => {
                let (p, dp) = roots::eval_with_derivative(&self.num, z);
                let (q, dq) = if self.polynomial {
                    (self.den[0], Complex64::new(0.0, 0.0))
                } else {
                    roots::eval_with_derivative(&self.den, z)
                };
                (z, [p, dp, q, dq])
            }
            SpherePoint::Finite(z) => {
                let w = z.inv();
                let (p, dp) = eval_rev(&self.num, w);
                let (q, dq) = eval_rev(&self.den, w);
                (w, [p, dp, q, dq])
            }
            SpherePoint::Infinity => {
                let w = Complex64::new(0.0, 0.0);
                let (p, dp) = eval_rev(&self.num, w);
                let (q, dq) = eval_rev(&self.den, w);
                (w, [p, dp, q, dq])
            }
        }
    }

    /// `T(z)`.
    pub fn eval(&self, z: SpherePoint) -> SpherePoint {
        if self.polynomial {
            match z {
                SpherePoint::Infinity => return SpherePoint::Infinity,
                SpherePoint::Finite(z) if z.norm_sqr() <= 1e200 => {
                    return SpherePoint::from_complex(roots::eval_with_derivative(&self.affine, z).0);
                }
                _ => {}
            }
        }
        let (_, [p, _, q, _]) = self.chart_eval(z);
        if q.norm() == 0.0 {
            SpherePoint::Infinity
        } else {
            SpherePoint::from_complex(p / q)
        }
    }

    /// Fast path for bounded orbits of polynomial maps.
    #[inline]
    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        if self.polynomial {
            roots::eval_with_derivative(&self.affine, z).0
        } else {
            match self.eval(SpherePoint::Finite(z)) {
                SpherePoint::Finite(w) => w,
                SpherePoint::Infinity => Complex64::new(f64::INFINITY, f64::INFINITY),
            }
        }
    }

    /// `|T'(z)|` in the spherical metric: `|T'(z)|·(1+|z|²)/(1+|T(z)|²)`,
    /// evaluated homogeneously so that poles and infinity are covered.
    pub fn sph_deriv_abs(&self, z: SpherePoint) -> f64 {
        let (w, [p, dp, q, dq]) = self.chart_eval(z);
        let jac = (dp * q - p * dq).norm();
        let denom = p.norm_sqr() + q.norm_sqr();
        jac * (1.0 + w.norm_sqr()) / denom
    }

    /// `|T'(z)|` in the chosen metric. The Euclidean value is `+inf` at poles
    /// and at infinity unless it is a finite fixed value.
    pub fn deriv_abs(&self, z: SpherePoint, metric: DerivativeMetric) -> f64 {
        match metric {
            DerivativeMetric::Spherical => self.sph_deriv_abs(z),
            DerivativeMetric::Euclidean => match z {
                SpherePoint::Infinity => f64::INFINITY,
                SpherePoint::Finite(z) => {
                    let (p, dp) = roots::eval_with_derivative(&self.num, z);
                    let (q, dq) = roots::eval_with_derivative(&self.den, z);
                    if q.norm() == 0.0 {
                        f64::INFINITY
                    } else {
                        ((dp * q - p * dq) / (q * q)).norm()
                    }
                }
            },
        }
    }

    /// `T⁻¹(x)` with local degrees, sorted lexicographically.
    pub fn preimages(&self, x: SpherePoint) -> Result<PreimageSet> {
        let d = self.degree;
        let mut coeffs: Vec<Complex64> = match x {
            SpherePoint::Infinity => self.den.clone(),
            SpherePoint::Finite(x) if x.norm() <= 1.0 => {
                self.num.iter().zip(&self.den).map(|(p, q)| p - x * q).collect()
            }
            SpherePoint::Finite(x) => {
                let xi = x.inv();
                self.num.iter().zip(&self.den).map(|(p, q)| p * xi - q).collect()
            }
        };
        let k = roots::effective_degree(&coeffs);
        coeffs.truncate(k + 1);
        let (roots, _converged) = roots::aberth(&coeffs);

        let mut points: Vec<(SpherePoint, u32)> = Vec::with_capacity(d);
        let mut raw: Vec<SpherePoint> = roots.into_iter().map(SpherePoint::from_complex).collect();
        raw.sort_by(|a, b| a.lex_cmp(b));
        let mut used = vec![false; raw.len()];
        for i in 0..raw.len() {
            if used[i] {
                continue;
            }
            used[i] = true;
            let mut members = vec![raw[i]];
            for j in (i + 1)..raw.len() {
                if !used[j] && raw[i].chordal(raw[j]) < ROOT_MERGE_RADIUS {
                    used[j] = true;
                    members.push(raw[j]);
                }
            }
            let rep = if members.len() == 1 {
                members[0]
            } else {
                let sum: Complex64 = members.iter().filter_map(|p| p.finite()).sum();
                SpherePoint::from_complex(sum / members.len() as f64)
            };
            points.push((rep, members.len() as u32));
        }
        if k < d {
            points.push((SpherePoint::Infinity, (d - k) as u32));
        }

        let mut worst: f64 = 0.0;
        for (y, _) in &points {
            worst = worst.max(self.eval(*y).chordal(x));
        }
        if !(worst < PREIMAGE_RESIDUAL) {
            return Err(Error::SolverDiverged { residual: worst, tolerance: PREIMAGE_RESIDUAL });
        }
        points.sort_by(|a, b| a.0.lex_cmp(&b.0));
        Ok(PreimageSet { points })
    }

    /// Finite fixed points (roots of `P(z) - z Q(z)`), plus infinity for
    /// polynomials.
    pub fn fixed_points(&self) -> Vec<SpherePoint> {
        let d = self.degree;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); d + 2];
        for k in 0..=d {
            coeffs[k] += self.num[k];
            coeffs[k + 1] -= self.den[k];
        }
        let (r, _) = roots::aberth(&coeffs);
        let mut pts: Vec<SpherePoint> = r
            .into_iter()
            .map(|z| SpherePoint::Finite(roots::newton_polish(&coeffs, z)))
            .collect();
        if roots::effective_degree(&coeffs) < d + 1 {
            pts.push(SpherePoint::Infinity);
        }
        pts.sort_by(|a, b| a.lex_cmp(b));
        pts
    }

    /// The fixed point with the largest multiplier; it is repelling (hence in
    /// the Julia set) for every map in scope.
    pub fn repelling_fixed_point(&self) -> Result<SpherePoint> {
        let mut best: Option<(SpherePoint, f64)> = None;
        for p in self.fixed_points() {
            let m = self.sph_deriv_abs(p);
            if best.is_none_or(|(_, bm)| m > bm) {
                best = Some((p, m));
            }
        }
        match best {
            Some((p, m)) if m > 1.0 => Ok(p),
            _ => Err(Error::InvalidMap("no repelling fixed point".into())),
        }
    }

    /// Euclidean-chart value and derivative of `Tⁿ` at a bounded point, for
    /// Newton iterations on periodic points.
    pub fn iterate_with_derivative(&self, z: Complex64, n: usize) -> (Complex64, Complex64) {
        let mut w = z;
        let mut der = Complex64::new(1.0, 0.0);
        for _ in 0..n {
            let (t, a) = self.step_with_derivative(w);
            der *= a;
            w = t;
        }
        (w, der)
    }

    /// `T(z)` and `T'(z)` in the Euclidean chart.
    #[inline]
    pub fn step_with_derivative(&self, z: Complex64) -> (Complex64, Complex64) {
        if self.polynomial {
            roots::eval_with_derivative(&self.affine, z)
        } else {
            let (p, dp) = roots::eval_with_derivative(&self.num, z);
            let (q, dq) = roots::eval_with_derivative(&self.den, z);
            ((p / q), (dp * q - p * dq) / (q * q))
        }
    }

    pub fn iterate(&self, z: SpherePoint, n: usize) -> SpherePoint {
        (0..n).fold(z, |acc, _| self.eval(acc))
    }
}

/// Resultant of two polynomials (ascending coefficients) via the Sylvester
/// determinant, with partial pivoting.
pub fn resultant(p: &[Complex64], q: &[Complex64]) -> Complex64 {
    let m = p.len() - 1;
    let n = q.len() - 1;
    let size = m + n;
    if size == 0 {
        return Complex64::new(1.0, 0.0);
    }
    let mut a = vec![vec![Complex64::new(0.0, 0.0); size]; size];
    // descending coefficient rows
    for i in 0..n {
        for (k, c) in p.iter().rev().enumerate() {
            a[i][i + k] = *c;
        }
    }
    for i in 0..m {
        for (k, c) in q.iter().rev().enumerate() {
            a[n + i][i + k] = *c;
        }
    }
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..size {
        let piv = (col..size)
            .max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))
            .unwrap();
        if a[piv][col].norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det *= a[col][col];
        for r in (col + 1)..size {
            let f = a[r][col] / a[col][col];
            for c in col..size {
                let v = a[col][c];
                a[r][c] -= f * v;
            }
        }
    }
    det
}

/// Points of `J(T)` from a seeded random backward orbit.
///
/// The walk starts at the repelling fixed point, discards
/// [`JULIA_BURN_IN`] steps and then returns `count` consecutive points, so
/// `T(sample[k]) = sample[k-1]` up to rounding.
pub fn julia_sample(map: &RationalMap, count: usize, seed: u64) -> Result<Vec<SpherePoint>> {
    if count == 0 {
        return Err(Error::InvalidArgument("julia_sample needs count ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = map.repelling_fixed_point()?;
    let mut out = Vec::with_capacity(count);
    for step in 0..(JULIA_BURN_IN + count) {
        let fiber = map.preimages(z)?;
        let total = fiber.total_multiplicity();
        let mut pick = rng.gen_range(0..total);
        for (p, m) in &fiber.points {
            if pick < *m {
                z = *p;
                break;
            }
            pick -= m;
        }
        if step >= JULIA_BURN_IN {
            out.push(z);
        }
    }
    Ok(out)
}

/// Spatial index over a sampled Julia set, answering "is `z` within `r` of
/// the cloud" in chordal distance.
#[derive(Debug, Clone)]
pub struct JuliaCloud {
    points: Vec<[f64; 3]>,
    cell: f64,
    grid: HashMap<[i64; 3], Vec<u32>>,
}

impl JuliaCloud {
    pub fn new(points: &[SpherePoint], cell: f64) -> Self {
        let vecs: Vec<[f64; 3]> = points.iter().map(|p| p.to_unit_vector()).collect();
        let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, v) in vecs.iter().enumerate() {
            grid.entry(cell_key(v, cell)).or_default().push(i as u32);
        }
        JuliaCloud { points: vecs, cell, grid }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Chordal distance to the nearest cloud point if it is at most `radius`.
    pub fn distance_within(&self, z: SpherePoint, radius: f64) -> Option<f64> {
        let v = z.to_unit_vector();
        let reach = (radius / self.cell).ceil() as i64;
        let key = cell_key(&v, self.cell);
        let mut best: Option<f64> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let k = [key[0] + dx, key[1] + dy, key[2] + dz];
                    if let Some(ids) = self.grid.get(&k) {
                        for &i in ids {
                            let d = dist3(&v, &self.points[i as usize]);
                            if d <= radius && best.is_none_or(|b| d < b) {
                                best = Some(d);
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

fn cell_key(v: &[f64; 3], cell: f64) -> [i64; 3] {
    [(v[0] / cell).floor() as i64, (v[1] / cell).floor() as i64, (v[2] / cell).floor() as i64]
}

#[inline]
pub(crate) fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}
