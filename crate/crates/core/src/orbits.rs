//! Preimage trees, periodic points, separated sets and the shrinking
//! diagnostic for backward components.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::map::{dist3, julia_sample, JuliaCloud, RationalMap, SpherePoint};
use crate::numeric::{linear_fit, KahanSum};
use crate::potentials::{Observable, OrbitRecord};

/// Default cap on the number of leaves of any enumerated tree.
pub const DEFAULT_ATOM_BUDGET: u64 = 1 << 24;
/// Allowed chordal drift per forward step when pushing a leaf back to its root.
pub const FIBER_TOLERANCE_PER_STEP: f64 = 1e-10;
/// Target residual `|Tⁿ(p) - p|` for periodic points.
pub const PERIODIC_RESIDUAL: f64 = 1e-10;
/// Periodic candidates closer than this are the same point.
pub const PERIODIC_DEDUP: f64 = 1e-8;
/// A periodic point must lie this close to the Julia set.
pub const JULIA_PROXIMITY: f64 = 1e-4;
/// Periodic points with multiplier below this are attracting or indifferent.
pub const MULTIPLIER_FLOOR: f64 = 1.0 - 1e-6;
/// Size of the Julia sample used for the proximity filter.
pub const DEFAULT_CLOUD_SIZE: usize = 20_000;
/// Beyond this many pullbacks component diameters are below double precision.
pub const MAX_ESC_DEPTH: usize = 40;

// below this |(Tⁿ)'| a leaf is first contracted along its own branch; above
// it the leaf is already within ~4/|(Tⁿ)'| of its periodic point
const CONTRACTION_THRESHOLD: f64 = 4e5;
const CONTRACTION_STOP: f64 = 1e-7;
const CONTRACTION_ROUNDS: usize = 12;
const NEWTON_ITER: usize = 40;
// the sequential prefix of a parallel expansion stops at this many nodes
const PARALLEL_FRONTIER: u64 = 256;

/// `DepthTooLarge` unless `degreeⁿ ≤ budget`.
pub fn check_budget(degree: usize, depth: usize, budget: u64) -> Result<()> {
    let atoms = (degree as f64).powi(depth as i32);
    if atoms > budget as f64 {
        return Err(Error::DepthTooLarge { depth, atoms, budget });
    }
    Ok(())
}

/// A node of a partially expanded tree.
#[derive(Debug, Clone)]
struct Node {
    point: SpherePoint,
    multiplicity: u64,
    sums: Vec<KahanSum>,
}

/// Depth-first walk of the preimage tree below `start`.
///
/// `visit(level, point, multiplicity, sums)` is called for every node in
/// lexicographic child order, with `sums[j]` the running Birkhoff sum of
/// `obs[j]` from the node up to (not including) the walk's root, offset by
/// the starting sums.
struct Walker<'a> {
    map: &'a RationalMap,
    obs: &'a [Observable],
    depth: usize,
    stack: Vec<KahanSum>,
}

impl<'a> Walker<'a> {
    fn new(map: &'a RationalMap, obs: &'a [Observable], depth: usize) -> Self {
        Walker { map, obs, depth, stack: vec![KahanSum::new(); (depth + 1) * obs.len()] }
    }

    fn run<F>(&mut self, start: &Node, visit: &mut F) -> Result<()>
    where
        F: FnMut(usize, SpherePoint, u64, &[KahanSum]) -> Result<()>,
    {
        let k = self.obs.len();
        self.stack[..k].copy_from_slice(&start.sums);
        self.descend(start.point, 0, start.multiplicity, visit)
    }

    fn descend<F>(&mut self, z: SpherePoint, level: usize, mult: u64, visit: &mut F) -> Result<()>
    where
        F: FnMut(usize, SpherePoint, u64, &[KahanSum]) -> Result<()>,
    {
        let k = self.obs.len();
        visit(level, z, mult, &self.stack[level * k..(level + 1) * k])?;
        if level == self.depth {
            return Ok(());
        }
        let fiber = self.map.preimages(z)?;
        for (y, m) in fiber.points {
            for j in 0..k {
                let mut s = self.stack[level * k + j];
                s.add(self.obs[j].evaluate(self.map, y)?);
                self.stack[(level + 1) * k + j] = s;
            }
            self.descend(y, level + 1, mult * m as u64, visit)?;
        }
        Ok(())
    }
}

/// Every node at exactly `depth` below `root`, in deterministic order. The
/// top levels are expanded sequentially, the subtrees in parallel.
fn expand_leaves<T, F>(map: &RationalMap, obs: &[Observable], root: SpherePoint, depth: usize, leaf: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(SpherePoint, u64, &[KahanSum]) -> T + Sync,
{
    let d = map.degree() as u64;
    let mut split = 0;
    let mut width = 1u64;
    while split < depth && width < PARALLEL_FRONTIER {
        split += 1;
        width = width.saturating_mul(d);
    }
    let root_node = Node { point: root, multiplicity: 1, sums: vec![KahanSum::new(); obs.len()] };
    if split == depth {
        let mut out = Vec::new();
        Walker::new(map, obs, depth).run(&root_node, &mut |level, z, m, s| {
            if level == depth {
                out.push(leaf(z, m, s));
            }
            Ok(())
        })?;
        return Ok(out);
    }

    let mut frontier = Vec::new();
    Walker::new(map, obs, split).run(&root_node, &mut |level, z, m, s| {
        if level == split {
            frontier.push(Node { point: z, multiplicity: m, sums: s.to_vec() });
        }
        Ok(())
    })?;

    let rest = depth - split;
    let parts: Vec<Result<Vec<T>>> = frontier
        .par_iter()
        .map(|node| {
            let mut out = Vec::new();
            Walker::new(map, obs, rest).run(node, &mut |level, z, m, s| {
                if level == rest {
                    out.push(leaf(z, m, s));
                }
                Ok(())
            })?;
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(d.pow(depth as u32) as usize);
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

/// `log ℒᵏ_φ 1 (x)` for `k = 0..=m`, by a sequential walk of the tree below `x`.
pub fn level_log_sums(map: &RationalMap, phi: &Observable, x: SpherePoint, m: usize) -> Result<Vec<f64>> {
    let mut levels = vec![crate::numeric::LogSumExp::new(); m + 1];
    let obs = std::slice::from_ref(phi);
    let start = Node { point: x, multiplicity: 1, sums: vec![KahanSum::new()] };
    Walker::new(map, obs, m).run(&start, &mut |level, _, mult, s| {
        levels[level].add(s[0].value() + (mult as f64).ln());
        Ok(())
    })?;
    Ok(levels.iter().map(|l| l.value()).collect())
}

/// The depth-`n` fiber `T⁻ⁿ(x₀)` with exact Birkhoff sums along each branch.
#[derive(Debug, Clone, PartialEq)]
pub struct PreimageTree {
    pub root: SpherePoint,
    pub depth: usize,
    pub points: Vec<SpherePoint>,
    /// Product of local degrees along the branch.
    pub multiplicities: Vec<u64>,
    /// `S_n` values, row-major with `width` columns; column 0 is the potential.
    pub sums: Vec<f64>,
    pub width: usize,
}

impl PreimageTree {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sum(&self, leaf: usize, column: usize) -> f64 {
        self.sums[leaf * self.width + column]
    }

    /// `S_n(φ)` at the leaf.
    pub fn weight_log(&self, leaf: usize) -> f64 {
        self.sums[leaf * self.width]
    }

    pub fn total_multiplicity(&self) -> u64 {
        self.multiplicities.iter().sum()
    }

    /// `log Σ_leaves deg · exp(Σ_j c_j S_n(obs_j))`, reduced in leaf order.
    pub fn log_sum(&self, coeffs: &[f64]) -> f64 {
        assert_eq!(coeffs.len(), self.width, "one coefficient per recorded column");
        let exps: Vec<f64> = (0..self.len())
            .map(|i| {
                let row = &self.sums[i * self.width..(i + 1) * self.width];
                let mut s = KahanSum::new();
                for (c, v) in coeffs.iter().zip(row) {
                    if *c != 0.0 {
                        s.add(c * v);
                    }
                }
                s.value() + (self.multiplicities[i] as f64).ln()
            })
            .collect();
        crate::numeric::log_sum_exp(&exps)
    }

    /// Leaves as orbit records of length `depth`.
    pub fn records(&self) -> Vec<OrbitRecord> {
        (0..self.len())
            .map(|i| OrbitRecord {
                start: self.points[i],
                n: self.depth,
                birkhoff_sums: self.sums[i * self.width..(i + 1) * self.width].to_vec(),
                weight_log: self.weight_log(i),
                multiplicity: self.multiplicities[i] as u32,
            })
            .collect()
    }

    /// Largest chordal distance between `Tⁿ(leaf)` and the root.
    pub fn fiber_residual(&self, map: &RationalMap) -> f64 {
        self.points
            .par_iter()
            .map(|&y| map.iterate(y, self.depth).chordal(self.root))
            .reduce(|| 0.0, f64::max)
    }

    /// Little-endian binary cache: header, then per leaf `re, im, multiplicity,
    /// sums…` as f64. Infinity is stored as `(inf, inf)`.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.depth as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        write_point(&mut w, self.root)?;
        for i in 0..self.len() {
            write_point(&mut w, self.points[i])?;
            w.write_all(&(self.multiplicities[i] as f64).to_le_bytes())?;
            for v in &self.sums[i * self.width..(i + 1) * self.width] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::InvalidArgument(format!("{} is not a tree cache", path.display())));
        }
        let width = read_u32(&mut r)? as usize;
        let depth = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let root = read_point(&mut r)?;
        let mut points = Vec::with_capacity(count);
        let mut multiplicities = Vec::with_capacity(count);
        let mut sums = Vec::with_capacity(count * width);
        for _ in 0..count {
            points.push(read_point(&mut r)?);
            multiplicities.push(read_f64(&mut r)? as u64);
            for _ in 0..width {
                sums.push(read_f64(&mut r)?);
            }
        }
        Ok(PreimageTree { root, depth, points, multiplicities, sums, width })
    }
}

const CACHE_MAGIC: &[u8; 8] = b"THRMTREE";

pub(crate) fn write_point<W: Write>(w: &mut W, p: SpherePoint) -> std::io::Result<()> {
    let (re, im) = match p {
        SpherePoint::Finite(z) => (z.re, z.im),
        SpherePoint::Infinity => (f64::INFINITY, f64::INFINITY),
    };
    w.write_all(&re.to_le_bytes())?;
    w.write_all(&im.to_le_bytes())
}

pub(crate) fn read_point<R: Read>(r: &mut R) -> std::io::Result<SpherePoint> {
    let re = read_f64(r)?;
    let im = read_f64(r)?;
    Ok(SpherePoint::from_complex(Complex64::new(re, im)))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Preimage tree with the default atom budget.
pub fn preimage_tree(
    map: &RationalMap,
    phi: &Observable,
    extra: &[Observable],
    x0: SpherePoint,
    n: usize,
) -> Result<PreimageTree> {
    preimage_tree_with_budget(map, phi, extra, x0, n, DEFAULT_ATOM_BUDGET)
}

pub fn preimage_tree_with_budget(
    map: &RationalMap,
    phi: &Observable,
    extra: &[Observable],
    x0: SpherePoint,
    n: usize,
    budget: u64,
) -> Result<PreimageTree> {
    if n == 0 {
        return Err(Error::InvalidArgument("tree depth must be at least 1".into()));
    }
    check_budget(map.degree(), n, budget)?;
    let mut obs = Vec::with_capacity(extra.len() + 1);
    obs.push(phi.clone());
    obs.extend_from_slice(extra);
    let leaves = expand_leaves(map, &obs, x0, n, |z, m, s| (z, m, s.iter().map(|a| a.value()).collect::<Vec<_>>()))?;
    let width = obs.len();
    let mut points = Vec::with_capacity(leaves.len());
    let mut multiplicities = Vec::with_capacity(leaves.len());
    let mut sums = Vec::with_capacity(leaves.len() * width);
    for (z, m, s) in leaves {
        points.push(z);
        multiplicities.push(m);
        sums.extend(s);
    }
    Ok(PreimageTree { root: x0, depth: n, points, multiplicities, sums, width })
}

/// `Per_n ∩ J`, each point with its spherical multiplier `|(Tⁿ)'|`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSet {
    pub period: usize,
    pub points: Vec<(SpherePoint, f64)>,
}

impl PeriodicSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PeriodicOptions<'a> {
    pub budget: u64,
    /// Julia sample for the proximity filter; a default sample is drawn if absent.
    pub cloud: Option<&'a JuliaCloud>,
}

impl Default for PeriodicOptions<'_> {
    fn default() -> Self {
        PeriodicOptions { budget: DEFAULT_ATOM_BUDGET, cloud: None }
    }
}

/// Residual tolerance for a period-`n` point. Evaluating `Tⁿ` loses about
/// `log₂|(Tⁿ)'|` bits, so the fixed target is relaxed once that loss
/// exceeds it.
pub fn periodic_tolerance(multiplier: f64) -> f64 {
    PERIODIC_RESIDUAL.max(64.0 * f64::EPSILON * multiplier)
}

pub fn periodic_points(map: &RationalMap, n: usize) -> Result<PeriodicSet> {
    periodic_points_with(map, n, &PeriodicOptions::default())
}

pub fn periodic_points_with(map: &RationalMap, n: usize, opts: &PeriodicOptions) -> Result<PeriodicSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("period must be at least 1".into()));
    }
    check_budget(map.degree(), n, opts.budget)?;
    let owned;
    let cloud = match opts.cloud {
        Some(c) => c,
        None => {
            owned = JuliaCloud::new(&julia_sample(map, DEFAULT_CLOUD_SIZE, 0)?, JULIA_PROXIMITY * 10.0);
            &owned
        }
    };
    // Pull back every repelling fixed point: for short periods the branch
    // continuation from a single root can miss cycles.
    let roots: Vec<SpherePoint> =
        map.fixed_points().into_iter().filter(|p| map.sph_deriv_abs(*p) > 1.0).collect();
    if roots.is_empty() {
        return Err(Error::InvalidMap("no repelling fixed point".into()));
    }
    let mut leaves = Vec::new();
    for root in roots {
        leaves.extend(expand_leaves(map, &[], root, n, |z, _, _| z)?);
    }

    let refined: Vec<Result<Option<Candidate>>> =
        leaves.par_iter().map(|&leaf| refine_periodic(map, leaf, n)).collect();
    let mut cands = Vec::with_capacity(refined.len());
    for r in refined {
        if let Some(c) = r? {
            cands.push(c);
        }
    }

    let mut kept: Vec<Candidate> = Vec::new();
    for c in cands {
        if c.multiplier < MULTIPLIER_FLOOR {
            continue;
        }
        let near = c.point.chordal(c.seed) < JULIA_PROXIMITY || cloud.distance_within(c.point, JULIA_PROXIMITY).is_some();
        if !near {
            continue;
        }
        if !(c.residual < periodic_tolerance(c.multiplier)) {
            return Err(Error::SolverDiverged { residual: c.residual, tolerance: periodic_tolerance(c.multiplier) });
        }
        kept.push(c);
    }
    kept.sort_by(|a, b| a.point.lex_cmp(&b.point));

    let mut points: Vec<(SpherePoint, f64)> = Vec::with_capacity(kept.len());
    for c in kept {
        let window = match c.point {
            SpherePoint::Finite(z) => PERIODIC_DEDUP * (1.0 + z.norm_sqr()),
            SpherePoint::Infinity => f64::INFINITY,
        };
        let mut dup = false;
        for (q, _) in points.iter().rev() {
            let gap = match (c.point, *q) {
                (SpherePoint::Finite(a), SpherePoint::Finite(b)) => a.re - b.re,
                _ => 0.0,
            };
            if gap > window {
                break;
            }
            if c.point.chordal(*q) < PERIODIC_DEDUP {
                dup = true;
                break;
            }
        }
        if !dup {
            points.push((c.point, c.multiplier));
        }
    }
    Ok(PeriodicSet { period: n, points })
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    point: SpherePoint,
    seed: SpherePoint,
    multiplier: f64,
    residual: f64,
}

/// Preimage of `w` closest to `target`.
fn closest_preimage(map: &RationalMap, w: SpherePoint, target: SpherePoint) -> Result<SpherePoint> {
    let fiber = map.preimages(w)?;
    let mut best = fiber.points[0].0;
    let mut bd = best.chordal(target);
    for (p, _) in &fiber.points[1..] {
        let d = p.chordal(target);
        if d < bd {
            best = *p;
            bd = d;
        }
    }
    Ok(best)
}

/// Move a leaf of `T⁻ⁿ(p)` onto the fixed point of its inverse branch of `Tⁿ`:
/// contraction when the branch is mild, then multiple-shooting Newton.
fn refine_periodic(map: &RationalMap, leaf: SpherePoint, n: usize) -> Result<Option<Candidate>> {
    let z = match leaf {
        SpherePoint::Finite(z) => z,
        SpherePoint::Infinity => {
            let res = map.iterate(leaf, n).chordal(leaf);
            let mult = orbit_multiplier(map, leaf, n);
            return Ok(Some(Candidate { point: leaf, seed: leaf, multiplier: mult, residual: res }));
        }
    };

    let (_, der) = map.iterate_with_derivative(z, n);
    let contracted = der.norm() < CONTRACTION_THRESHOLD;
    let (mut z, mut on_julia) = if contracted { contract(map, z, n)? } else { (z, leaf) };
    let mut shot = shoot_cycle(map, z, n);
    if shot.is_none() && !contracted {
        // shooting from a degenerate forward orbit (say one sitting on a
        // fixed point) can wander; contraction never does
        (z, on_julia) = contract(map, z, n)?;
        shot = shoot_cycle(map, z, n);
    }
    let multiplier = match shot {
        Some((polished, m)) => {
            z = polished;
            Some(m)
        }
        None => None,
    };
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Ok(None);
    }
    let p = SpherePoint::Finite(z);
    let residual = map.iterate(p, n).chordal(p);
    let multiplier = multiplier.unwrap_or_else(|| orbit_multiplier(map, p, n));
    Ok(Some(Candidate { point: p, seed: on_julia, multiplier, residual }))
}

/// Iterate the inverse branch of `Tⁿ` that follows the forward orbit of `z`.
/// Each round stays in the backward orbit of the seed and hence on J; the
/// last iterate is returned as the Julia certificate.
fn contract(map: &RationalMap, mut z: Complex64, n: usize) -> Result<(Complex64, SpherePoint)> {
    let mut on_julia = SpherePoint::Finite(z);
    for _ in 0..CONTRACTION_ROUNDS {
        let mut orbit = Vec::with_capacity(n + 1);
        let mut w = SpherePoint::Finite(z);
        for _ in 0..=n {
            orbit.push(w);
            w = map.eval(w);
        }
        // orbit[n - k] is the k-th point of the current branch path
        let mut w = SpherePoint::Finite(z);
        for k in 1..=n {
            w = closest_preimage(map, w, orbit[n - k])?;
        }
        let next = match w {
            SpherePoint::Finite(v) => v,
            SpherePoint::Infinity => break,
        };
        let moved = SpherePoint::Finite(next).chordal(SpherePoint::Finite(z));
        z = next;
        on_julia = w;
        if moved < CONTRACTION_STOP {
            break;
        }
    }
    Ok((z, on_julia))
}

/// Newton's method on the cyclic system `T(z_k) = z_{k+1}`, `T(z_{n-1}) = z_0`
/// (multiple shooting), started from the forward orbit of `z`. Unlike Newton
/// on `Tⁿ(z) - z` this never evaluates a long composition, so its basin does
/// not shrink like `|(Tⁿ)'|⁻¹`. Returns the corrected `z_0` and the cycle
/// multiplier, which is the same in every conformal chart, or `None` if it
/// did not converge.
fn shoot_cycle(map: &RationalMap, z: Complex64, n: usize) -> Option<(Complex64, f64)> {
    let mut orbit = Vec::with_capacity(n);
    let mut w = z;
    for _ in 0..n {
        orbit.push(w);
        w = map.eval_complex(w);
    }
    let mut image = vec![Complex64::new(0.0, 0.0); n];
    let mut slope = vec![Complex64::new(0.0, 0.0); n];
    let mut delta = vec![Complex64::new(0.0, 0.0); n + 1];
    for _ in 0..NEWTON_ITER {
        for k in 0..n {
            let (t, a) = map.step_with_derivative(orbit[k]);
            if !(t.re.is_finite() && t.im.is_finite()) || a.norm_sqr() == 0.0 {
                return None;
            }
            image[k] = t;
            slope[k] = a;
        }
        // δ_{k+1} = a_k δ_k + r_k around the cycle gives δ_0 = c / (1 - Π a)
        let mut prod = Complex64::new(1.0, 0.0);
        let mut c = Complex64::new(0.0, 0.0);
        let mut defect: f64 = 0.0;
        for k in 0..n {
            let r = image[k] - orbit[(k + 1) % n];
            c = slope[k] * c + r;
            prod *= slope[k];
            defect = defect.max(r.norm_sqr() / image[k].norm_sqr().max(1.0));
        }
        let denom = Complex64::new(1.0, 0.0) - prod;
        if denom.norm_sqr() == 0.0 {
            return None;
        }
        delta[0] = c / denom;
        delta[n] = delta[0];
        // backward recursion runs along the contracting direction
        for k in (1..n).rev() {
            let r = image[k] - orbit[(k + 1) % n];
            delta[k] = (delta[k + 1] - r) / slope[k];
        }
        let mut worst: f64 = 0.0;
        for k in 0..n {
            orbit[k] += delta[k];
            worst = worst.max(delta[k].norm_sqr() / orbit[k].norm_sqr().max(1.0));
        }
        if !worst.is_finite() {
            return None;
        }
        // squared relative sizes; once both the defect and the step are
        // below 1e-9 the quadratic error left behind is at rounding level
        if worst < 1e-18 && defect < 1e-18 {
            return Some((orbit[0], prod.norm()));
        }
    }
    None
}

/// `|(Tⁿ)'(z)|` in the spherical metric, as a product along the orbit.
pub fn orbit_multiplier(map: &RationalMap, z: SpherePoint, n: usize) -> f64 {
    let mut w = z;
    let mut m = 1.0;
    for _ in 0..n {
        m *= map.sph_deriv_abs(w);
        w = map.eval(w);
    }
    m
}

/// Greedy maximal `(n, ε)`-separated subset of `points` in the Bowen metric
/// `d_n(x, y) = max_{j<n} dist(Tʲx, Tʲy)`, scanned in input order. Returns
/// indices into `points`.
pub fn separated_indices(points: &[SpherePoint], map: &RationalMap, n: usize, eps: f64) -> Vec<usize> {
    let n = n.max(1);
    let orbits: Vec<[f64; 3]> = points
        .par_iter()
        .flat_map_iter(|&p| {
            let mut w = p;
            (0..n).map(move |_| {
                let v = w.to_unit_vector();
                w = map.eval(w);
                v
            })
        })
        .collect();
    let eps2 = eps * eps;
    let close = |a: usize, b: usize| -> bool {
        let (oa, ob) = (&orbits[a * n..(a + 1) * n], &orbits[b * n..(b + 1) * n]);
        oa.iter().zip(ob).all(|(u, v)| {
            let d = [u[0] - v[0], u[1] - v[1], u[2] - v[2]];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= eps2
        })
    };

    let mut kept: Vec<usize> = Vec::new();
    if eps < 0.5 {
        // a conflict needs time-0 closeness, so bucket the retained points
        let mut grid: std::collections::HashMap<[i64; 3], Vec<usize>> = std::collections::HashMap::new();
        let key = |v: &[f64; 3]| [(v[0] / eps).floor() as i64, (v[1] / eps).floor() as i64, (v[2] / eps).floor() as i64];
        for i in 0..points.len() {
            let k = key(&orbits[i * n]);
            let mut conflict = false;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(ids) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            if ids.iter().any(|&j| close(i, j)) {
                                conflict = true;
                                break 'search;
                            }
                        }
                    }
                }
            }
            if !conflict {
                grid.entry(k).or_default().push(i);
                kept.push(i);
            }
        }
    } else {
        for i in 0..points.len() {
            if !kept.iter().rev().any(|&j| close(i, j)) {
                kept.push(i);
            }
        }
    }
    kept
}

pub fn separated_set(points: &[SpherePoint], map: &RationalMap, n: usize, eps: f64) -> Vec<SpherePoint> {
    separated_indices(points, map, n, eps).into_iter().map(|i| points[i]).collect()
}

/// Bowen distance `d_n`, for checks.
pub fn bowen_distance(map: &RationalMap, a: SpherePoint, b: SpherePoint, n: usize) -> f64 {
    let (mut x, mut y) = (a, b);
    let mut d: f64 = 0.0;
    for _ in 0..n.max(1) {
        d = d.max(dist3(&x.to_unit_vector(), &y.to_unit_vector()));
        x = map.eval(x);
        y = map.eval(y);
    }
    d
}

/// Component diameters of pulled-back balls and the fitted shrink rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EscReport {
    pub radius: f64,
    /// Entry `k` is the diameter proxy after `k` pullbacks.
    pub diameters: Vec<f64>,
    /// `λ̂` with `diam ≈ C λ̂⁻ᵏ`.
    pub shrink_rate: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EscOptions {
    /// Number of random inverse-branch itineraries.
    pub itineraries: usize,
    pub seed: u64,
    /// Julia sample size from which probes are drawn.
    pub cloud_size: usize,
}

impl Default for EscOptions {
    fn default() -> Self {
        EscOptions { itineraries: 16, seed: 0, cloud_size: 20_000 }
    }
}

pub fn esc_diagnostic(map: &RationalMap, x: SpherePoint, r0: f64, n_max: usize, probes: usize) -> Result<EscReport> {
    esc_diagnostic_with(map, x, r0, n_max, probes, &EscOptions::default())
}

pub fn esc_diagnostic_with(
    map: &RationalMap,
    x: SpherePoint,
    r0: f64,
    n_max: usize,
    probes: usize,
    opts: &EscOptions,
) -> Result<EscReport> {
    if !(r0 > 0.0 && r0 < 1.0) {
        return Err(Error::InvalidArgument(format!("radius {r0} outside (0, 1)")));
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    if n_max > MAX_ESC_DEPTH {
        return Err(Error::DepthTooLarge { depth: n_max, atoms: (map.degree() as f64).powi(n_max as i32), budget: 0 });
    }
    let cloud = julia_sample(map, opts.cloud_size, opts.seed)?;
    let mut inside: Vec<(f64, SpherePoint)> =
        cloud.iter().map(|p| (p.chordal(x), *p)).filter(|(d, _)| *d < r0 && *d > 0.0).collect();
    inside.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.lex_cmp(&b.1)));
    let mut seeds = vec![x];
    if !inside.is_empty() && probes > 0 {
        let take = probes.min(inside.len());
        for i in 0..take {
            let idx = if take == 1 { inside.len() - 1 } else { i * (inside.len() - 1) / (take - 1) };
            seeds.push(inside[idx].1);
        }
    }
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument("no Julia sample points inside the ball".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let itins: Vec<Vec<u32>> =
        (0..opts.itineraries.max(1)).map(|_| (0..n_max).map(|_| rng.gen::<u32>()).collect()).collect();

    let per_itin: Vec<Result<Vec<f64>>> = itins
        .par_iter()
        .map(|digits| {
            let mut pts = seeds.clone();
            let mut diams = vec![diameter(&pts)];
            for &digit in digits {
                let fiber = map.preimages(pts[0])?;
                let centre = fiber.points[digit as usize % fiber.len()].0;
                let mut next = Vec::with_capacity(pts.len());
                next.push(centre);
                for &p in &pts[1..] {
                    next.push(closest_preimage(map, p, centre)?);
                }
                pts = next;
                diams.push(diameter(&pts));
            }
            Ok(diams)
        })
        .collect();
    let mut diameters = vec![0.0f64; n_max + 1];
    for r in per_itin {
        for (acc, d) in diameters.iter_mut().zip(r?) {
            *acc = acc.max(d);
        }
    }
    let (ks, logs): (Vec<f64>, Vec<f64>) =
        diameters.iter().enumerate().filter(|(_, d)| **d > 0.0).map(|(k, d)| (k as f64, d.ln())).unzip();
    let shrink_rate = if ks.len() >= 2 { (-linear_fit(&ks, &logs).0).exp() } else { f64::NAN };
    Ok(EscReport { radius: r0, diameters, shrink_rate })
}

fn diameter(pts: &[SpherePoint]) -> f64 {
    let vs: Vec<[f64; 3]> = pts.iter().map(|p| p.to_unit_vector()).collect();
    let mut d: f64 = 0.0;
    for i in 0..vs.len() {
        for j in 0..i {
            d = d.max(dist3(&vs[i], &vs[j]));
        }
    }
    d
}
