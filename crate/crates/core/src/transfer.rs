//! The transfer operator `ℒ_φ ψ(x) = Σ_{T(y)=x} deg_T(y) e^{φ(y)} ψ(y)`,
//! its Cesàro eigenfunction, fiber-atom approximations of the conformal
//! measure and of the equilibrium state, and residual checks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::map::{RationalMap, SpherePoint};
use crate::numeric::{fmt_f64, log_sum_exp, Extended, KahanSum};
use crate::orbits::{self, check_budget, level_log_sums, preimage_tree_with_budget, DEFAULT_ATOM_BUDGET};
use crate::potentials::Observable;

/// Normalized measures must sum to one within this.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// A finitely supported measure on the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    pub atoms: Vec<(SpherePoint, f64)>,
    pub normalized: bool,
}

impl AtomicMeasure {
    /// Probability measure with weights `∝ exp(log_weights)`.
    pub fn from_log_weights(points: Vec<SpherePoint>, log_weights: &[f64]) -> Result<Self> {
        if points.len() != log_weights.len() {
            return Err(Error::InvalidArgument("one log-weight per atom".into()));
        }
        let lz = log_sum_exp(log_weights);
        if !lz.is_finite() {
            return Err(Error::InvalidArgument(format!("total log-weight is {lz}")));
        }
        let atoms = points.into_iter().zip(log_weights).map(|(p, w)| (p, (w - lz).exp())).collect();
        Ok(AtomicMeasure { atoms, normalized: true })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| *w).collect::<KahanSum>().value()
    }

    pub fn points(&self) -> Vec<SpherePoint> {
        self.atoms.iter().map(|(p, _)| *p).collect()
    }

    /// `∫ f dμ`, summed in atom order.
    pub fn integrate<F: Fn(SpherePoint) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|(p, w)| w * f(*p)).collect::<KahanSum>().value()
    }

    pub fn integrate_observable(&self, map: &RationalMap, obs: &Observable) -> Result<f64> {
        let vals: Vec<f64> = self.atoms.par_iter().map(|(p, _)| obs.evaluate(map, *p)).collect::<Result<_>>()?;
        Ok(self.atoms.iter().zip(&vals).map(|((_, w), v)| w * v).collect::<KahanSum>().value())
    }

    /// `∫ g∘T dμ`.
    pub fn integrate_pushforward(&self, map: &RationalMap, obs: &Observable) -> Result<f64> {
        let vals: Vec<f64> =
            self.atoms.par_iter().map(|(p, _)| obs.evaluate(map, map.eval(*p))).collect::<Result<_>>()?;
        Ok(self.atoms.iter().zip(&vals).map(|((_, w), v)| w * v).collect::<KahanSum>().value())
    }

    /// `re,im,weight` rows with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "re,im,weight")?;
        for (p, wt) in &self.atoms {
            let (re, im) = match p {
                SpherePoint::Finite(z) => (z.re, z.im),
                SpherePoint::Infinity => (f64::INFINITY, f64::INFINITY),
            };
            writeln!(w, "{},{},{}", fmt_f64(re), fmt_f64(im), fmt_f64(*wt))?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let mut atoms = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::InvalidArgument(format!("{}:{}: expected 3 columns", path.display(), i + 1)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", path.display(), i + 1)))
            };
            let z = Complex64::new(parse(cols[0])?, parse(cols[1])?);
            atoms.push((SpherePoint::from_complex(z), parse(cols[2])?));
        }
        let total: f64 = atoms.iter().map(|(_, w)| *w).sum();
        let normalized = (total - 1.0).abs() <= NORMALIZATION_TOLERANCE;
        Ok(AtomicMeasure { atoms, normalized })
    }

    /// Binary cache in the tree-cache conventions: magic, count, then
    /// `re, im, weight` as little-endian f64 per atom.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(ATOM_MAGIC)?;
        w.write_all(&(self.atoms.len() as u64).to_le_bytes())?;
        for (p, wt) in &self.atoms {
            orbits::write_point(&mut w, *p)?;
            w.write_all(&wt.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != ATOM_MAGIC {
            return Err(Error::InvalidArgument(format!("{} is not an atom cache", path.display())));
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let count = u64::from_le_bytes(b) as usize;
        let mut atoms = Vec::with_capacity(count);
        for _ in 0..count {
            let p = orbits::read_point(&mut r)?;
            atoms.push((p, orbits::read_f64(&mut r)?));
        }
        let total: f64 = atoms.iter().map(|(_, w)| *w).sum();
        Ok(AtomicMeasure { atoms, normalized: (total - 1.0).abs() <= NORMALIZATION_TOLERANCE })
    }
}

const ATOM_MAGIC: &[u8; 8] = b"THRMATOM";

/// Sampled eigenfunction `h₀` with the eigenvalue it was normalized against.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub points: Vec<SpherePoint>,
    pub values: Vec<f64>,
    pub log_lambda: f64,
    /// `C` with every value in `[1/C, C]`.
    pub bound: f64,
}

/// A real number stored as sign and log-magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLog {
    pub sign: i8,
    pub log_abs: Extended,
}

impl SignedLog {
    pub fn value(&self) -> f64 {
        self.sign as f64 * self.log_abs.to_f64().exp()
    }
}

/// `log ℒⁿ_φ ψ (x)` as a signed log: the sum over `T⁻ⁿ(x)` is split into the
/// positive and negative parts of `ψ`, each reduced by log-sum-exp.
pub fn apply_ln_at(map: &RationalMap, phi: &Observable, psi: &Observable, x: SpherePoint, n: usize) -> Result<SignedLog> {
    let tree = preimage_tree_with_budget(map, phi, &[], x, n, DEFAULT_ATOM_BUDGET)?;
    let vals: Vec<f64> = tree.points.par_iter().map(|p| psi.evaluate(map, *p)).collect::<Result<_>>()?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, v) in vals.iter().enumerate() {
        let base = tree.weight_log(i) + (tree.multiplicities[i] as f64).ln();
        if *v > 0.0 {
            pos.push(base + v.ln());
        } else if *v < 0.0 {
            neg.push(base + (-v).ln());
        }
    }
    let (p, q) = (log_sum_exp(&pos), log_sum_exp(&neg));
    Ok(signed_difference(p, q))
}

/// `e^p - e^q` as a signed log.
fn signed_difference(p: f64, q: f64) -> SignedLog {
    if p == q {
        return SignedLog { sign: 0, log_abs: Extended::MinusInfinity };
    }
    let (sign, hi, lo) = if p > q { (1, p, q) } else { (-1, q, p) };
    let log_abs = hi + (-(lo - hi).exp()).ln_1p();
    SignedLog { sign, log_abs: Extended::from_f64(log_abs) }
}

/// Cesàro average `(1/n) Σ_{k<n} e^{-k logP} ℒᵏ_φ 1 (x)`.
pub fn cesaro_h(map: &RationalMap, phi: &Observable, x: SpherePoint, n: usize, log_p: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("Cesàro depth must be at least 1".into()));
    }
    check_budget(map.degree(), n - 1, DEFAULT_ATOM_BUDGET)?;
    let levels = level_log_sums(map, phi, x, n - 1)?;
    Ok(cesaro_from_levels(&levels, n, log_p))
}

fn cesaro_from_levels(levels: &[f64], n: usize, log_p: f64) -> f64 {
    let terms: Vec<f64> = (0..n).map(|k| levels[k] - k as f64 * log_p).collect();
    (log_sum_exp(&terms) - (n as f64).ln()).exp()
}

/// `h₀` on a sample, from Cesàro averages of depth `m`.
pub fn density_profile(
    map: &RationalMap,
    phi: &Observable,
    sample: &[SpherePoint],
    m: usize,
    log_p: f64,
) -> Result<DensityProfile> {
    let values: Vec<f64> = sample.par_iter().map(|x| cesaro_h(map, phi, *x, m, log_p)).collect::<Result<_>>()?;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DensityProfile { points: sample.to_vec(), values, log_lambda: log_p, bound: hi.max(1.0 / lo) })
}

/// Fiber atoms `T⁻ⁿ(x₀)` weighted by `deg · exp(S_n φ)`, normalized.
pub fn conformal_atoms(map: &RationalMap, phi: &Observable, x0: SpherePoint, n: usize) -> Result<AtomicMeasure> {
    let tree = preimage_tree_with_budget(map, phi, &[], x0, n, DEFAULT_ATOM_BUDGET)?;
    let logw: Vec<f64> =
        (0..tree.len()).map(|i| tree.weight_log(i) + (tree.multiplicities[i] as f64).ln()).collect();
    AtomicMeasure::from_log_weights(tree.points, &logw)
}

/// Cap on the total number of subtree leaves walked when reweighting atoms.
pub const CESARO_NODE_BUDGET: u64 = 1 << 28;

/// Cesàro depth used for the equilibrium reweighting of a depth-`n` atom
/// set: `floor(n/2)`, lowered until the subtrees fit `budget` leaves.
pub fn default_cesaro_depth(degree: usize, n: usize, budget: u64) -> usize {
    let mut m = (n / 2).max(1);
    while m > 1 && (degree as f64).powi((n + m - 1) as i32) > budget as f64 {
        m -= 1;
    }
    m
}

/// Conformal atoms reweighted by the Cesàro density at each atom.
pub fn equilibrium_atoms(
    map: &RationalMap,
    phi: &Observable,
    x0: SpherePoint,
    n: usize,
    log_p: f64,
) -> Result<AtomicMeasure> {
    let m = default_cesaro_depth(map.degree(), n, CESARO_NODE_BUDGET);
    equilibrium_atoms_with(map, phi, x0, n, log_p, m)
}

pub fn equilibrium_atoms_with(
    map: &RationalMap,
    phi: &Observable,
    x0: SpherePoint,
    n: usize,
    log_p: f64,
    cesaro_depth: usize,
) -> Result<AtomicMeasure> {
    let eta = conformal_atoms(map, phi, x0, n)?;
    reweight_by_density(map, phi, &eta, cesaro_depth, log_p)
}

/// `h·η / ∫h dη` for an atomic `η`.
pub fn reweight_by_density(
    map: &RationalMap,
    phi: &Observable,
    eta: &AtomicMeasure,
    cesaro_depth: usize,
    log_p: f64,
) -> Result<AtomicMeasure> {
    let h: Vec<f64> =
        eta.atoms.par_iter().map(|(p, _)| cesaro_h(map, phi, *p, cesaro_depth, log_p)).collect::<Result<_>>()?;
    let logw: Vec<f64> = eta.atoms.iter().zip(&h).map(|((_, w), h)| w.ln() + h.ln()).collect();
    AtomicMeasure::from_log_weights(eta.points(), &logw)
}

/// `max_x |e^{-logP} ℒ_φ h(x) - h(x)| / h(x)` for the depth-`m` Cesàro `h`.
///
/// `ℒ_φ h(x)` is evaluated from the same level sums, shifted by one level:
/// `ℒ_φ h = (1/m) Σ_{k<m} e^{-k logP} ℒ^{k+1}_φ 1`.
pub fn eigen_residual(map: &RationalMap, phi: &Observable, sample: &[SpherePoint], m: usize, log_p: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("Cesàro depth must be at least 1".into()));
    }
    check_budget(map.degree(), m, DEFAULT_ATOM_BUDGET)?;
    let res: Vec<f64> = sample
        .par_iter()
        .map(|x| {
            let levels = level_log_sums(map, phi, *x, m)?;
            let h = cesaro_from_levels(&levels, m, log_p);
            let shifted: Vec<f64> = (0..m).map(|k| levels[k + 1] - (k + 1) as f64 * log_p).collect();
            let lh = (log_sum_exp(&shifted) - (m as f64).ln()).exp();
            Ok((lh - h).abs() / h)
        })
        .collect::<Result<_>>()?;
    Ok(res.into_iter().fold(0.0, f64::max))
}

/// `max/min` over the sample of `e^{-n logP} ℒⁿ_φ 1`.
pub fn c0_bound(map: &RationalMap, phi: &Observable, sample: &[SpherePoint], n: usize, log_p: f64) -> Result<f64> {
    check_budget(map.degree(), n, DEFAULT_ATOM_BUDGET)?;
    let vals: Vec<f64> = sample
        .par_iter()
        .map(|x| Ok(level_log_sums(map, phi, *x, n)?[n] - n as f64 * log_p))
        .collect::<Result<_>>()?;
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((hi - lo).exp())
}

/// The three test functions of the invariance check: `Re z`, `Im z`, `Re z²`.
pub fn invariance_tests() -> Vec<Observable> {
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    vec![Observable::re_z(), Observable::im_z(), Observable::re_poly(vec![zero, zero, one])]
}

/// `max_g |∫ g∘T dμ - ∫ g dμ|`.
pub fn invariance_residual(map: &RationalMap, mu: &AtomicMeasure, tests: &[Observable]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for g in tests {
        let a = mu.integrate_pushforward(map, g)?;
        let b = mu.integrate_observable(map, g)?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpfResiduals {
    pub eigen_residual: f64,
    pub c0_bound: f64,
    pub invariance_residual: f64,
}

/// All three residuals at one depth: Cesàro depth `n` for the eigen-equation,
/// `ℒⁿ` for the bound, depth-`n` equilibrium atoms rooted at `sample[0]`.
pub fn rpf_residuals(
    map: &RationalMap,
    phi: &Observable,
    sample: &[SpherePoint],
    n: usize,
    log_p: f64,
) -> Result<RpfResiduals> {
    let Some(&root) = sample.first() else {
        return Err(Error::InvalidArgument("empty sample".into()));
    };
    let eigen = eigen_residual(map, phi, sample, n, log_p)?;
    let c0 = c0_bound(map, phi, sample, n, log_p)?;
    let mu = equilibrium_atoms(map, phi, root, n, log_p)?;
    let inv = invariance_residual(map, &mu, &invariance_tests())?;
    Ok(RpfResiduals { eigen_residual: eigen, c0_bound: c0, invariance_residual: inv })
}

/// Both sides of `∫ ℒ_φ g dη = e^{logP} ∫ g dη` for an atomic `η`.
pub fn dual_identity(
    map: &RationalMap,
    phi: &Observable,
    eta: &AtomicMeasure,
    g: &Observable,
    log_p: f64,
) -> Result<(f64, f64)> {
    let lg: Vec<f64> = eta
        .atoms
        .par_iter()
        .map(|(x, _)| {
            let fiber = map.preimages(*x)?;
            let mut s = KahanSum::new();
            for (y, m) in &fiber.points {
                s.add(*m as f64 * phi.evaluate(map, *y)?.exp() * g.evaluate(map, *y)?);
            }
            Ok(s.value())
        })
        .collect::<Result<_>>()?;
    let left = eta.atoms.iter().zip(&lg).map(|((_, w), v)| w * v).collect::<KahanSum>().value();
    let right = log_p.exp() * eta.integrate_observable(map, g)?;
    Ok((left, right))
}

/// Angle of `z` in `[0, 2π)`.
pub fn angle(z: Complex64) -> f64 {
    let a = z.im.atan2(z.re);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// Conformality on a circle arc for `T(z) = zᵈ`: the ratio
/// `η(T(E)) / ∫_E e^{logP - φ} dη` for `E = {e^{iθ} : a < θ < b}` with
/// `d(b - a) ≤ 2π`, where `T` is injective. Atoms off the unit circle are
/// ignored.
pub fn circle_arc_conformality(
    map: &RationalMap,
    phi: &Observable,
    eta: &AtomicMeasure,
    arc: (f64, f64),
    log_p: f64,
) -> Result<f64> {
    let d = map.degree() as f64;
    let (a, b) = arc;
    if !(a < b) || d * (b - a) > std::f64::consts::TAU + 1e-12 {
        return Err(Error::InvalidArgument("arc must be nonempty with T injective on it".into()));
    }
    let tau = std::f64::consts::TAU;
    let inside = |t: f64, lo: f64, hi: f64| {
        let t = (t - lo).rem_euclid(tau);
        t > 0.0 && t < hi - lo
    };
    let mut image = KahanSum::new();
    let mut weighted = KahanSum::new();
    for (p, w) in &eta.atoms {
        let Some(z) = p.finite() else { continue };
        let t = angle(z);
        if inside(t, d * a, d * b) {
            image.add(*w);
        }
        if inside(t, a, b) {
            weighted.add(w * (log_p - phi.evaluate(map, *p)?).exp());
        }
    }
    Ok(image.value() / weighted.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    fn z2() -> RationalMap {
        RationalMap::power(2).unwrap()
    }

    fn one() -> SpherePoint {
        SpherePoint::new(1.0, 0.0)
    }

    #[test]
    fn ln_of_one() {
        let v = apply_ln_at(&z2(), &Observable::zero(), &Observable::constant(1.0), one(), 5).unwrap();
        assert_eq!(v.sign, 1);
        assert!((v.log_abs.to_f64() - 32f64.ln()).abs() < 1e-13);
        let c = 0.4;
        let v = apply_ln_at(&z2(), &Observable::constant(c), &Observable::constant(1.0), one(), 6).unwrap();
        assert!((v.log_abs.to_f64() - 6.0 * (LN_2 + c)).abs() < 1e-12);
        let v = apply_ln_at(&z2(), &Observable::neg_t_log_deriv(1.0), &Observable::constant(1.0), one(), 7).unwrap();
        assert!(v.log_abs.to_f64().abs() < 1e-8);
    }

    #[test]
    fn signed_parts() {
        // Σ Re y over the 16th roots of unity vanishes, Σ (Re y + 2) = 32
        let m = z2();
        let v = apply_ln_at(&m, &Observable::zero(), &Observable::re_z().shifted(2.0), one(), 4).unwrap();
        assert!((v.value() - 32.0).abs() < 1e-10);
        let v = apply_ln_at(&m, &Observable::zero(), &Observable::re_z().shifted(-2.0), one(), 4).unwrap();
        assert_eq!(v.sign, -1);
        assert!((v.value() + 32.0).abs() < 1e-10);
    }

    #[test]
    fn cesaro_on_the_circle() {
        let m = z2();
        let x = SpherePoint::Finite(Complex64::from_polar(1.0, 0.3));
        assert!((cesaro_h(&m, &Observable::zero(), x, 8, LN_2).unwrap() - 1.0).abs() < 1e-13);
        let c = -0.2;
        assert!((cesaro_h(&m, &Observable::constant(c), x, 6, LN_2 + c).unwrap() - 1.0).abs() < 1e-13);
        assert_eq!(cesaro_h(&m, &Observable::re_z(), x, 1, 0.7).unwrap(), 1.0);
    }

    #[test]
    fn conformal_atoms_on_roots_of_unity() {
        let eta = conformal_atoms(&z2(), &Observable::zero(), one(), 12).unwrap();
        assert_eq!(eta.len(), 4096);
        assert!((eta.total() - 1.0).abs() < NORMALIZATION_TOLERANCE);
        let moment: Complex64 = eta.atoms.iter().map(|(p, w)| p.z() * w).sum();
        assert!(moment.norm() < 1e-10);
        let shifted = conformal_atoms(&z2(), &Observable::constant(0.9), one(), 12).unwrap();
        for (a, b) in eta.atoms.iter().zip(&shifted.atoms) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-16);
        }
    }

    #[test]
    fn upper_half_circle_conformality() {
        let m = z2();
        let eta = conformal_atoms(&m, &Observable::zero(), one(), 12).unwrap();
        let r = circle_arc_conformality(&m, &Observable::zero(), &eta, (0.0, PI), LN_2).unwrap();
        // oracle: 4095 atoms in T(E), 2047 atoms in E each weighing 2
        assert!((r - 4095.0 / 4094.0).abs() < 1e-9);
    }

    #[test]
    fn equilibrium_of_zero_is_uniform() {
        let m = z2();
        let mu = equilibrium_atoms(&m, &Observable::zero(), one(), 10, LN_2).unwrap();
        for (_, w) in &mu.atoms {
            assert!((w * 1024.0 - 1.0).abs() < 1e-12);
        }
        assert!(invariance_residual(&m, &mu, &invariance_tests()).unwrap() < 1e-12);
    }

    #[test]
    fn circle_residuals_vanish() {
        let m = z2();
        let sample: Vec<SpherePoint> = (0..5).map(|k| SpherePoint::Finite(Complex64::from_polar(1.0, 0.7 * k as f64 + 0.1))).collect();
        let r = rpf_residuals(&m, &Observable::zero(), &sample, 10, LN_2).unwrap();
        assert!(r.eigen_residual < 1e-12);
        assert!((r.c0_bound - 1.0).abs() < 1e-12);
        assert!(r.invariance_residual < 1e-12);
    }

    #[test]
    fn dual_identity_on_circle() {
        let m = z2();
        let eta = conformal_atoms(&m, &Observable::zero(), one(), 8).unwrap();
        for g in [Observable::constant(1.0), Observable::re_z(), Observable::im_z()] {
            let (l, r) = dual_identity(&m, &Observable::zero(), &eta, &g, LN_2).unwrap();
            assert!((l - r).abs() < 1e-12, "{l} vs {r}");
        }
    }

    #[test]
    fn csv_and_cache_round_trip() {
        let eta = conformal_atoms(&RationalMap::quadratic(Complex64::new(-1.0, 0.0)), &Observable::zero(), SpherePoint::new(0.3, 0.0), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("atoms.csv");
        eta.write_csv(&csv).unwrap();
        assert_eq!(AtomicMeasure::read_csv(&csv).unwrap(), eta);
        let bin = dir.path().join("atoms.bin");
        eta.write_cache(&bin).unwrap();
        assert_eq!(AtomicMeasure::read_cache(&bin).unwrap(), eta);
    }
}
