//! Empirical ensembles of orbit averages, their exact tail masses, rate
//! functions by convex conjugation of pressure curves, entropy through
//! restricted (local) pressure, and weak* concentration tables.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{RationalMap, SpherePoint};
use crate::numeric::{fmt_f64, log_sum_exp, Extended, KahanSum};
use crate::orbits::{periodic_points, preimage_tree, PeriodicSet};
use crate::potentials::{birkhoff_sums, Observable, OrbitRecord};
use crate::pressure::{periodic_sums, PressureCurve};
use crate::transfer::AtomicMeasure;

/// Normalized ensemble weights must sum to one within this.
pub const ENSEMBLE_MASS_TOLERANCE: f64 = 1e-10;
/// Extreme secant slopes of a curve are widened by this before a point is
/// declared outside the resolved domain of the rate.
pub const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleSource {
    /// Periodic points weighted by `exp(S_n φ)`.
    Periodic,
    /// The fiber `T⁻ⁿ(x₀)` weighted by `deg · exp(S_n φ)`.
    Preimage,
    /// Atoms of an equilibrium approximation with their own weights.
    Birkhoff,
}

impl fmt::Display for EnsembleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnsembleSource::Periodic => "periodic",
            EnsembleSource::Preimage => "preimage",
            EnsembleSource::Birkhoff => "birkhoff",
        })
    }
}

/// What an ensemble is built over.
#[derive(Debug, Clone, Copy)]
pub enum EnsembleBase<'a> {
    Periodic,
    Preimage(SpherePoint),
    Birkhoff(&'a AtomicMeasure),
}

/// A weighted family of orbit records. Column 0 of every record's sums is
/// the potential, columns `1..` the observables in order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalEnsemble {
    pub source: EnsembleSource,
    pub n: usize,
    pub potential: Observable,
    pub observables: Vec<Observable>,
    /// `weight_log` is normalized: the weights sum to one.
    pub members: Vec<OrbitRecord>,
    /// Log of the total unnormalized weight.
    pub log_partition: f64,
}

impl EmpiricalEnsemble {
    fn from_unnormalized(
        source: EnsembleSource,
        n: usize,
        potential: &Observable,
        observables: &[Observable],
        mut members: Vec<OrbitRecord>,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(match source {
                EnsembleSource::Periodic => Error::EmptyPeriodicSet(n),
                _ => Error::InvalidArgument("empty ensemble".into()),
            });
        }
        let logs: Vec<f64> = members.iter().map(|m| m.weight_log).collect();
        let lz = log_sum_exp(&logs);
        for m in &mut members {
            m.weight_log -= lz;
        }
        Ok(EmpiricalEnsemble {
            source,
            n,
            potential: potential.clone(),
            observables: observables.to_vec(),
            members,
            log_partition: lz,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.members.iter().map(|m| m.weight_log.exp()).collect::<KahanSum>().value()
    }

    /// Column of `psi` in the records: 0 for the potential itself.
    pub fn column(&self, psi: &Observable) -> Result<usize> {
        if let Some(i) = self.observables.iter().position(|o| o == psi) {
            return Ok(i + 1);
        }
        if *psi == self.potential {
            return Ok(0);
        }
        Err(Error::UnknownObservable(format!("{psi:?}")))
    }

    /// `re,im,log_weight,S_n(φ),S_n(ψ₁),…`
    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "re,im,log_weight,potential")?;
        for i in 0..self.observables.len() {
            write!(w, ",obs{}", i + 1)?;
        }
        writeln!(w)?;
        for m in &self.members {
            let z = m.start.finite().unwrap_or(crate::Complex64::new(f64::INFINITY, f64::INFINITY));
            write!(w, "{},{},{}", fmt_f64(z.re), fmt_f64(z.im), fmt_f64(m.weight_log))?;
            for s in &m.birkhoff_sums {
                write!(w, ",{}", fmt_f64(*s))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn with_potential(phi: &Observable, psis: &[Observable]) -> Vec<Observable> {
    let mut v = Vec::with_capacity(psis.len() + 1);
    v.push(phi.clone());
    v.extend_from_slice(psis);
    v
}

/// `Ω_n`: periodic points of period `n` weighted by `exp(S_n φ)`.
pub fn periodic_ensemble(map: &RationalMap, phi: &Observable, psis: &[Observable], n: usize) -> Result<EmpiricalEnsemble> {
    let set = periodic_points(map, n)?;
    periodic_ensemble_from(map, phi, psis, &set)
}

pub fn periodic_ensemble_from(
    map: &RationalMap,
    phi: &Observable,
    psis: &[Observable],
    set: &PeriodicSet,
) -> Result<EmpiricalEnsemble> {
    let n = set.period;
    let sums = periodic_sums(map, set, &with_potential(phi, psis))?;
    let members = set
        .points
        .iter()
        .zip(sums)
        .map(|((p, _), s)| OrbitRecord { start: *p, n, weight_log: s[0], birkhoff_sums: s, multiplicity: 1 })
        .collect();
    EmpiricalEnsemble::from_unnormalized(EnsembleSource::Periodic, n, phi, psis, members)
}

/// `Ω_n(x₀)`: the fiber `T⁻ⁿ(x₀)` weighted by `deg · exp(S_n φ)`.
pub fn preimage_ensemble(
    map: &RationalMap,
    phi: &Observable,
    psis: &[Observable],
    n: usize,
    x0: SpherePoint,
) -> Result<EmpiricalEnsemble> {
    let tree = preimage_tree(map, phi, psis, x0, n)?;
    let members = tree
        .records()
        .into_iter()
        .map(|mut r| {
            r.weight_log += (r.multiplicity as f64).ln();
            r
        })
        .collect();
    EmpiricalEnsemble::from_unnormalized(EnsembleSource::Preimage, n, phi, psis, members)
}

/// `Ω̄_n = W_n[μ]`: each atom of `μ` with its weight and forward sums.
pub fn birkhoff_ensemble(
    map: &RationalMap,
    phi: &Observable,
    psis: &[Observable],
    n: usize,
    mu: &AtomicMeasure,
) -> Result<EmpiricalEnsemble> {
    let obs = with_potential(phi, psis);
    let sums: Vec<Vec<f64>> = mu.atoms.par_iter().map(|(p, _)| birkhoff_sums(map, &obs, *p, n)).collect::<Result<_>>()?;
    let members = mu
        .atoms
        .iter()
        .zip(sums)
        .filter(|((_, w), _)| *w > 0.0)
        .map(|((p, w), s)| OrbitRecord { start: *p, n, birkhoff_sums: s, weight_log: w.ln(), multiplicity: 1 })
        .collect();
    EmpiricalEnsemble::from_unnormalized(EnsembleSource::Birkhoff, n, phi, psis, members)
}

pub fn build_ensemble(
    base: EnsembleBase<'_>,
    map: &RationalMap,
    phi: &Observable,
    psis: &[Observable],
    n: usize,
) -> Result<EmpiricalEnsemble> {
    match base {
        EnsembleBase::Periodic => periodic_ensemble(map, phi, psis, n),
        EnsembleBase::Preimage(x0) => preimage_ensemble(map, phi, psis, n, x0),
        EnsembleBase::Birkhoff(mu) => birkhoff_ensemble(map, phi, psis, n, mu),
    }
}

/// Tail events for the Birkhoff average `S_n(ψ)/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum Tail {
    /// `S_n(ψ)/n ≥ s`.
    AtLeast(f64),
    /// `S_n(ψ)/n < s`.
    Below(f64),
    /// `|S_n(ψ)/n| > ε`.
    AbsExceeds(f64),
}

impl Tail {
    pub fn contains(&self, avg: f64) -> bool {
        match *self {
            Tail::AtLeast(s) => avg >= s,
            Tail::Below(s) => avg < s,
            Tail::AbsExceeds(e) => avg.abs() > e,
        }
    }
}

impl fmt::Display for Tail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tail::AtLeast(s) => write!(f, ">={s}"),
            Tail::Below(s) => write!(f, "<{s}"),
            Tail::AbsExceeds(e) => write!(f, "|.|>{e}"),
        }
    }
}

/// Log of the ensemble mass of the members whose average lies in `tail`.
pub fn log_tail_mass(ens: &EmpiricalEnsemble, psi: &Observable, tail: Tail) -> Result<Extended> {
    let col = ens.column(psi)?;
    let logs: Vec<f64> =
        ens.members.iter().filter(|m| tail.contains(m.average(col))).map(|m| m.weight_log).collect();
    Ok(Extended::from_f64(log_sum_exp(&logs)))
}

/// `(1/n) log Ω{S_n(ψ)/n ∈ tail}`; `-inf` when no member qualifies.
pub fn level1_tail(ens: &EmpiricalEnsemble, psi: &Observable, tail: Tail) -> Result<Extended> {
    Ok(match log_tail_mass(ens, psi, tail)? {
        Extended::Finite(v) => Extended::Finite(v / ens.n as f64),
        other => other,
    })
}

/// Legendre–Fenchel conjugate of a sampled pressure ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    pub observable: Observable,
    pub s: Vec<f64>,
    /// `I(s)`; `+inf` outside the range of slopes the curve resolves.
    pub values: Vec<Extended>,
    pub curve: PressureCurve,
}

impl RateFunction {
    /// `inf_{s' ≥ s} I(s')` over the grid.
    pub fn inf_at_least(&self, s: f64) -> Extended {
        self.inf_where(|t| t >= s)
    }

    /// `inf_{s' ≤ s} I(s')` over the grid.
    pub fn inf_at_most(&self, s: f64) -> Extended {
        self.inf_where(|t| t <= s)
    }

    fn inf_where<F: Fn(f64) -> bool>(&self, keep: F) -> Extended {
        let mut best = f64::INFINITY;
        for (s, v) in self.s.iter().zip(&self.values) {
            if keep(*s) {
                best = best.min(v.to_f64());
            }
        }
        Extended::from_f64(best)
    }

    /// Grid point where `I` is smallest.
    pub fn argmin(&self) -> (f64, f64) {
        let mut best = (f64::NAN, f64::INFINITY);
        for (s, v) in self.s.iter().zip(&self.values) {
            if v.to_f64() < best.1 {
                best = (*s, v.to_f64());
            }
        }
        best
    }

    /// Worst negative second difference among consecutive finite values.
    pub fn convexity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 1..self.s.len().saturating_sub(1) {
            let (Some(a), Some(b), Some(c)) =
                (self.values[i - 1].finite(), self.values[i].finite(), self.values[i + 1].finite())
            else {
                continue;
            };
            let (s0, s1, s2) = (self.s[i - 1], self.s[i], self.s[i + 1]);
            let d = (c - b) - (s2 - s1) / (s1 - s0) * (b - a);
            worst = worst.min(d);
        }
        worst
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "s,rate")?;
        for (s, v) in self.s.iter().zip(&self.values) {
            writeln!(w, "{},{}", fmt_f64(*s), v)?;
        }
        Ok(())
    }
}

/// `I(s) = max_q (q s - [P(q) - P(0)])` over the curve's samples. This is a
/// lower envelope of the true conjugate. Where `s` lies outside the range
/// of the curve's extreme secant slopes the supremum is not resolved by the
/// samples and the value is reported as `+inf`.
pub fn rate_from_curve(curve: &PressureCurve, s_grid: &[f64]) -> Result<RateFunction> {
    if let Some((q, value)) = curve.convexity_violation() {
        return Err(Error::NonConvexCurve { q, value });
    }
    let p0 = curve
        .at_zero()
        .ok_or_else(|| Error::InvalidArgument("the pressure curve must contain q = 0".into()))?;
    let smp = &curve.samples;
    if smp.len() < 2 {
        return Err(Error::InvalidArgument("a rate needs at least two curve samples".into()));
    }
    let k = smp.len();
    let lo_slope = (smp[1].1 - smp[0].1) / (smp[1].0 - smp[0].0);
    let hi_slope = (smp[k - 1].1 - smp[k - 2].1) / (smp[k - 1].0 - smp[k - 2].0);
    let values = s_grid
        .iter()
        .map(|&s| {
            if s < lo_slope - DOMAIN_SLACK || s > hi_slope + DOMAIN_SLACK {
                return Extended::PlusInfinity;
            }
            let best = smp.iter().map(|(q, p)| q * s - (p - p0)).fold(f64::NEG_INFINITY, f64::max);
            Extended::Finite(best)
        })
        .collect();
    Ok(RateFunction { observable: curve.direction.clone(), s: s_grid.to_vec(), values, curve: curve.clone() })
}

/// `|∫ψ dμ' - center| < radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraint {
    pub observable: Observable,
    pub center: f64,
    pub radius: f64,
}

impl Constraint {
    pub fn new(observable: Observable, center: f64, radius: f64) -> Self {
        Constraint { observable, center, radius }
    }
}

/// `(1/n) log Σ_{W_n(x) ∈ 𝒢} weight(x)` with unnormalized ensemble weights,
/// where `𝒢` is cut out by the constraints. With no constraints this is the
/// ensemble's own pressure estimate `(1/n) log Z`.
pub fn entropy_local_pressure(ens: &EmpiricalEnsemble, constraints: &[Constraint]) -> Result<f64> {
    if constraints.is_empty() {
        return Ok(ens.log_partition / ens.n as f64);
    }
    let cols: Vec<usize> = constraints.iter().map(|c| ens.column(&c.observable)).collect::<Result<_>>()?;
    let logs: Vec<f64> = ens
        .members
        .iter()
        .filter(|m| cols.iter().zip(constraints).all(|(&j, c)| (m.average(j) - c.center).abs() < c.radius))
        .map(|m| m.weight_log)
        .collect();
    if logs.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok((log_sum_exp(&logs) + ens.log_partition) / ens.n as f64)
}

/// One row of a weak* concentration table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakStarRow {
    pub n: usize,
    /// Mass of `{μ' : |∫ψ_j dμ' - ∫ψ_j dμ_φ| < δ for all j}`.
    pub mass: f64,
    /// `(1/n) log` of the complement mass.
    pub complement_slope: Extended,
}

/// Neighborhood masses of each ensemble around the targets `∫ψ_j dμ_φ`.
pub fn weak_star_check(ensembles: &[EmpiricalEnsemble], targets: &[(Observable, f64)], delta: f64) -> Result<Vec<WeakStarRow>> {
    let mut rows = Vec::with_capacity(ensembles.len());
    for ens in ensembles {
        let cols: Vec<usize> = targets.iter().map(|(o, _)| ens.column(o)).collect::<Result<_>>()?;
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for m in &ens.members {
            let near = cols.iter().zip(targets).all(|(&j, (_, t))| (m.average(j) - t).abs() < delta);
            if near {
                inside.push(m.weight_log);
            } else {
                outside.push(m.weight_log);
            }
        }
        let out = log_sum_exp(&outside);
        rows.push(WeakStarRow {
            n: ens.n,
            mass: log_sum_exp(&inside).exp(),
            complement_slope: Extended::from_f64(out / ens.n as f64),
        });
    }
    Ok(rows)
}

/// True if the masses never drop by more than `noise` from one row to the next.
pub fn nondecreasing_within(rows: &[WeakStarRow], noise: f64) -> bool {
    rows.windows(2).all(|w| w[1].mass >= w[0].mass - noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pressure::{pressure_curve, Method};
    use std::f64::consts::LN_2;

    fn z2() -> RationalMap {
        RationalMap::power(2).unwrap()
    }

    fn one() -> SpherePoint {
        SpherePoint::new(1.0, 0.0)
    }

    #[test]
    fn ensemble_examples() {
        let m = z2();
        let per = periodic_ensemble(&m, &Observable::zero(), &[Observable::re_z()], 10).unwrap();
        assert_eq!(per.len(), 1023);
        for r in &per.members {
            assert!((r.weight_log + 1023f64.ln()).abs() < 1e-12);
        }
        let pre = preimage_ensemble(&m, &Observable::zero(), &[Observable::re_z()], 10, one()).unwrap();
        assert_eq!(pre.len(), 1024);
        assert!((pre.total_mass() - 1.0).abs() < ENSEMBLE_MASS_TOLERANCE);
        let mu = crate::transfer::conformal_atoms(&m, &Observable::zero(), one(), 8).unwrap();
        let bir = birkhoff_ensemble(&m, &Observable::zero(), &[], 5, &mu).unwrap();
        for (r, (p, w)) in bir.members.iter().zip(&mu.atoms) {
            assert_eq!(r.start, *p);
            assert!((r.weight_log.exp() - w).abs() < 1e-15);
        }
    }

    #[test]
    fn trivial_tails() {
        let m = z2();
        let pre = preimage_ensemble(&m, &Observable::zero(), &[Observable::re_z()], 8, one()).unwrap();
        let re = Observable::re_z();
        assert_eq!(level1_tail(&pre, &re, Tail::AtLeast(1.5)).unwrap(), Extended::MinusInfinity);
        assert!(level1_tail(&pre, &re, Tail::AtLeast(-1.5)).unwrap().to_f64().abs() < 1e-12);
        assert!(matches!(level1_tail(&pre, &Observable::im_z(), Tail::Below(0.0)), Err(Error::UnknownObservable(_))));
    }

    #[test]
    fn tails_partition_the_mass() {
        let m = z2();
        let x = SpherePoint::Finite(crate::Complex64::from_polar(1.0, 1.0));
        let re = Observable::re_z();
        let pre = preimage_ensemble(&m, &Observable::zero(), std::slice::from_ref(&re), 12, x).unwrap();
        let (s_lo, s_hi) = (-0.1, 0.2);
        let upper = log_tail_mass(&pre, &re, Tail::AtLeast(s_hi)).unwrap().to_f64();
        let lower = log_tail_mass(&pre, &re, Tail::Below(s_lo)).unwrap().to_f64();
        let middle: Vec<f64> = pre
            .members
            .iter()
            .filter(|r| r.average(1) >= s_lo && r.average(1) < s_hi)
            .map(|r| r.weight_log)
            .collect();
        let total = log_sum_exp(&[upper, lower, log_sum_exp(&middle)]);
        assert!(total.abs() < 1e-9);
    }

    #[test]
    fn affine_curve_has_point_domain() {
        let curve = pressure_curve(&z2(), &Observable::zero(), &Observable::constant(1.0), &[-2.0, -1.0, 0.0, 1.0, 2.0], Method::Tree, 6, one())
            .unwrap();
        let rate = rate_from_curve(&curve, &[0.5, 1.0, 1.5]).unwrap();
        assert_eq!(rate.values[0], Extended::PlusInfinity);
        assert!(rate.values[1].to_f64().abs() < 1e-12);
        assert_eq!(rate.values[2], Extended::PlusInfinity);
    }

    #[test]
    fn unconstrained_local_pressure_is_the_pressure() {
        let m = z2();
        let per = periodic_ensemble(&m, &Observable::zero(), &[Observable::re_z()], 10).unwrap();
        let p = crate::pressure::pressure_periodic(&m, &Observable::zero(), 10).unwrap().value;
        assert_eq!(entropy_local_pressure(&per, &[]).unwrap(), p);
        let wide = entropy_local_pressure(&per, &[Constraint::new(Observable::re_z(), 0.0, 5.0)]).unwrap();
        assert!((wide - LN_2).abs() < 1e-3);
        assert!(matches!(
            entropy_local_pressure(&per, &[Constraint::new(Observable::re_z(), 3.0, 0.1)]),
            Err(Error::EmptySelection)
        ));
    }

    #[test]
    fn weak_star_with_huge_delta() {
        let m = z2();
        let re = Observable::re_z();
        let ens: Vec<EmpiricalEnsemble> =
            [4, 6, 8].iter().map(|&n| preimage_ensemble(&m, &Observable::zero(), std::slice::from_ref(&re), n, one()).unwrap()).collect();
        let rows = weak_star_check(&ens, &[(re, 0.0)], 10.0).unwrap();
        for r in &rows {
            assert!((r.mass - 1.0).abs() < 1e-12);
            assert_eq!(r.complement_slope, Extended::MinusInfinity);
        }
        assert!(nondecreasing_within(&rows, 0.0));
    }
}
