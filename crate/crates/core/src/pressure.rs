//! Topological pressure `P(T, φ)` by four routes, and pressure curves
//! `q ↦ P(T, φ + qψ)`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{RationalMap, SpherePoint};
use crate::numeric::{fmt_f64, log_sum_exp, KahanSum};
use crate::orbits::{
    level_log_sums, periodic_points, preimage_tree, separated_indices, PeriodicSet, PreimageTree,
};
use crate::potentials::{birkhoff_sums, Observable};
use crate::transfer::AtomicMeasure;

/// Second differences of a pressure curve may dip this far below zero.
pub const CONVEXITY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tree,
    Periodic,
    Birkhoff,
    Separated,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Tree => "tree",
            Method::Periodic => "periodic",
            Method::Birkhoff => "birkhoff",
            Method::Separated => "separated",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureEstimate {
    pub value: f64,
    pub method: Method,
    pub depth: usize,
    pub base_point: Option<SpherePoint>,
    pub epsilon: Option<f64>,
}

impl PressureEstimate {
    fn new(value: f64, method: Method, depth: usize) -> Self {
        PressureEstimate { value, method, depth, base_point: None, epsilon: None }
    }
}

/// `(1/n) log ℒⁿ_φ 1 (x₀)`.
pub fn pressure_tree(map: &RationalMap, phi: &Observable, x0: SpherePoint, n: usize) -> Result<PressureEstimate> {
    let tree = preimage_tree(map, phi, &[], x0, n)?;
    Ok(pressure_from_tree(&tree))
}

pub fn pressure_from_tree(tree: &PreimageTree) -> PressureEstimate {
    let mut coeffs = vec![0.0; tree.width];
    coeffs[0] = 1.0;
    let mut e = PressureEstimate::new(tree.log_sum(&coeffs) / tree.depth as f64, Method::Tree, tree.depth);
    e.base_point = Some(tree.root);
    e
}

/// `log ℒⁿ_φ 1 (x) - log ℒⁿ⁻¹_φ 1 (x)`. The ratio of consecutive levels
/// converges geometrically where the `1/n` average converges like `1/n`.
pub fn pressure_increment(map: &RationalMap, phi: &Observable, x: SpherePoint, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("increment needs n ≥ 1".into()));
    }
    crate::orbits::check_budget(map.degree(), n, crate::orbits::DEFAULT_ATOM_BUDGET)?;
    let levels = level_log_sums(map, phi, x, n)?;
    Ok(levels[n] - levels[n - 1])
}

/// `S_n` of every observable at every periodic point, one row per point.
pub fn periodic_sums(map: &RationalMap, set: &PeriodicSet, obs: &[Observable]) -> Result<Vec<Vec<f64>>> {
    set.points.par_iter().map(|(p, _)| birkhoff_sums(map, obs, *p, set.period)).collect()
}

/// `(1/n) log Σ_{p ∈ Per_n} exp(S_n φ(p))`.
pub fn pressure_periodic(map: &RationalMap, phi: &Observable, n: usize) -> Result<PressureEstimate> {
    let set = periodic_points(map, n)?;
    pressure_from_periodic(map, phi, &set)
}

pub fn pressure_from_periodic(map: &RationalMap, phi: &Observable, set: &PeriodicSet) -> Result<PressureEstimate> {
    if set.is_empty() {
        return Err(Error::EmptyPeriodicSet(set.period));
    }
    let sums = periodic_sums(map, set, std::slice::from_ref(phi))?;
    let terms: Vec<f64> = sums.iter().map(|s| s[0]).collect();
    Ok(PressureEstimate::new(log_sum_exp(&terms) / set.period as f64, Method::Periodic, set.period))
}

/// `(1/n) log ∫ exp(S_n ψ) dμ`, which estimates `P(T, φ+ψ) - P(T, φ)` when
/// `μ` approximates the equilibrium state of `φ`.
pub fn pressure_birkhoff(map: &RationalMap, psi: &Observable, mu: &AtomicMeasure, n: usize) -> Result<PressureEstimate> {
    let sums: Vec<f64> =
        mu.atoms.par_iter().map(|(p, _)| Ok(birkhoff_sums(map, std::slice::from_ref(psi), *p, n)?[0])).collect::<Result<_>>()?;
    let terms: Vec<f64> = mu.atoms.iter().zip(&sums).map(|((_, w), s)| w.ln() + s).collect();
    Ok(PressureEstimate::new(log_sum_exp(&terms) / n as f64, Method::Birkhoff, n))
}

/// `(1/n) log Σ_{y ∈ 𝒩} exp(S_n φ(y))` over the greedy maximal
/// `(n, ε)`-separated subset `𝒩` of `cloud`.
pub fn pressure_separated(
    map: &RationalMap,
    phi: &Observable,
    cloud: &[SpherePoint],
    eps: f64,
    n: usize,
) -> Result<PressureEstimate> {
    let kept = separated_indices(cloud, map, n, eps);
    let points: Vec<SpherePoint> = kept.iter().map(|&i| cloud[i]).collect();
    pressure_from_separated(map, phi, &points, eps, n)
}

/// Separated-set estimate over an already selected set.
pub fn pressure_from_separated(
    map: &RationalMap,
    phi: &Observable,
    separated: &[SpherePoint],
    eps: f64,
    n: usize,
) -> Result<PressureEstimate> {
    if separated.is_empty() {
        return Err(Error::InvalidArgument("empty separated set".into()));
    }
    let terms: Vec<f64> = separated
        .par_iter()
        .map(|p| Ok(birkhoff_sums(map, std::slice::from_ref(phi), *p, n)?[0]))
        .collect::<Result<_>>()?;
    let mut e = PressureEstimate::new(log_sum_exp(&terms) / n as f64, Method::Separated, n);
    e.epsilon = Some(eps);
    Ok(e)
}

/// Samples of `q ↦ P(T, φ + qψ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureCurve {
    pub base: Observable,
    pub direction: Observable,
    pub method: Method,
    pub depth: usize,
    /// `(q, P)` sorted by `q`.
    pub samples: Vec<(f64, f64)>,
}

impl PressureCurve {
    /// Largest violation of convexity, as the most negative (spacing-aware)
    /// second difference; `None` if the curve is convex within tolerance.
    pub fn convexity_violation(&self) -> Option<(f64, f64)> {
        let mut worst: Option<(f64, f64)> = None;
        for w in self.samples.windows(3) {
            let [(q0, p0), (q1, p1), (q2, p2)] = [w[0], w[1], w[2]];
            // reduces to p2 - 2 p1 + p0 on a uniform grid
            let d = (p2 - p1) - (q2 - q1) / (q1 - q0) * (p1 - p0);
            if d < -CONVEXITY_TOLERANCE && worst.is_none_or(|(_, v)| d < v) {
                worst = Some((q1, d));
            }
        }
        worst
    }

    /// `P` at `q = 0`, if sampled.
    pub fn at_zero(&self) -> Option<f64> {
        self.samples.iter().find(|(q, _)| *q == 0.0).map(|(_, p)| *p)
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "q,pressure")?;
        for (q, p) in &self.samples {
            writeln!(w, "{},{}", fmt_f64(*q), fmt_f64(*p))?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv_to(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Pressure curve from one enumeration: the tree (rooted at `x0`) or the
/// periodic set is built once with both `φ` and `ψ` recorded, and each `q`
/// only reweights the cached sums.
pub fn pressure_curve(
    map: &RationalMap,
    phi: &Observable,
    psi: &Observable,
    q_grid: &[f64],
    method: Method,
    n: usize,
    x0: SpherePoint,
) -> Result<PressureCurve> {
    let mut grid = q_grid.to_vec();
    if grid.iter().any(|q| !q.is_finite()) {
        return Err(Error::InvalidArgument("q grid must be finite".into()));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let samples = match method {
        Method::Tree => {
            let tree = preimage_tree(map, phi, std::slice::from_ref(psi), x0, n)?;
            curve_from_tree(&tree, &grid)
        }
        Method::Periodic => {
            let set = periodic_points(map, n)?;
            if set.is_empty() {
                return Err(Error::EmptyPeriodicSet(n));
            }
            let sums = periodic_sums(map, &set, &[phi.clone(), psi.clone()])?;
            curve_from_rows(&sums, &vec![0.0; sums.len()], &grid, n)
        }
        other => {
            return Err(Error::InvalidArgument(format!("pressure curves use tree or periodic, not {other}")));
        }
    };
    Ok(PressureCurve { base: phi.clone(), direction: psi.clone(), method, depth: n, samples })
}

/// Curve samples from a tree whose columns 0 and 1 are `φ` and `ψ`.
pub fn curve_from_tree(tree: &PreimageTree, grid: &[f64]) -> Vec<(f64, f64)> {
    let rows: Vec<Vec<f64>> = (0..tree.len()).map(|i| vec![tree.sum(i, 0), tree.sum(i, 1)]).collect();
    let logm: Vec<f64> = tree.multiplicities.iter().map(|m| (*m as f64).ln()).collect();
    curve_from_rows(&rows, &logm, grid, tree.depth)
}

/// `(1/n) log Σ_i exp(log_mult_i + row_i[0] + q row_i[1])` for each `q`,
/// reduced in row order.
pub fn curve_from_rows(rows: &[Vec<f64>], log_mult: &[f64], grid: &[f64], n: usize) -> Vec<(f64, f64)> {
    grid.par_iter()
        .map(|&q| {
            let mut max = f64::NEG_INFINITY;
            for (r, m) in rows.iter().zip(log_mult) {
                max = max.max(m + r[0] + q * r[1]);
            }
            let mut s = KahanSum::new();
            for (r, m) in rows.iter().zip(log_mult) {
                s.add((m + r[0] + q * r[1] - max).exp());
            }
            (q, (max + s.value().ln()) / n as f64)
        })
        .collect()
}
