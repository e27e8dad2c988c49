//! Config-driven experiment runner behind the `thermo` binary.
//!
//! A run reads one JSON config, executes its stages into a staging
//! directory next to the output directory, and moves the staging directory
//! into place at the end. Exit status: 0 if every stage succeeded, 1 if a
//! stage failed (its error is recorded in the manifest and the other stages'
//! artifacts are kept), 2 if the config is invalid (nothing is written).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ldp::{
    self, build_ensemble, Constraint, EmpiricalEnsemble, EnsembleBase, EnsembleSource, Tail, ENSEMBLE_MASS_TOLERANCE,
};
use crate::map::{julia_sample, JuliaCloud, RationalMap, SpherePoint};
use crate::numeric::fmt_f64;
use crate::orbits::{self, check_budget, esc_diagnostic_with, EscOptions, DEFAULT_ATOM_BUDGET};
use crate::potentials::Observable;
use crate::pressure::{self, Method};
use crate::sft::{self, WeightedSft};
use crate::transfer::{self, conformal_atoms, equilibrium_atoms, AtomicMeasure};
use crate::Complex64;

pub const EXIT_OK: i32 = 0;
pub const EXIT_STAGE_ERROR: i32 = 1;
pub const EXIT_CONFIG_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "thermo", version, about = "Pressure, equilibrium states and large deviations for rational maps")]
pub struct Cli {
    /// Size of the worker pool; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory, overriding the config's `output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed overriding the config's `seed`.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write its artifacts.
    Run { config: PathBuf },
    /// Check a config and its depth budget without computing anything.
    Validate { config: PathBuf },
    /// Run an `sft-oracle` config; no map is needed.
    Oracle { config: PathBuf },
}

/// Inclusive arithmetic grid `min, min + step, …, max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.max >= self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::ConfigInvalid(format!("bad grid {self:?}")));
        }
        let k = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        if k > 1_000_000 {
            return Err(Error::ConfigInvalid("grid has more than a million points".into()));
        }
        Ok((0..=k).map(|i| self.min + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolTails {
    /// Potential on symbol 0 and symbol 1.
    pub phi: [f64; 2],
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Pressure by each method at each depth.
    Pressure {
        #[serde(default = "all_methods")]
        methods: Vec<Method>,
        /// Separation scale of the separated-set estimate.
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_cloud")]
        cloud_size: usize,
    },
    /// Conformal and equilibrium atoms with observable integrals.
    Equilibrium {},
    /// Eigen-equation residual, uniform bound and invariance residual.
    Rpf {
        #[serde(default = "default_sample")]
        sample_size: usize,
    },
    LdpLevel1 {
        source: EnsembleSource,
        tails: Vec<Tail>,
    },
    LdpLevel2 {
        source: EnsembleSource,
        delta: f64,
        /// `∫ψ_j dμ_φ`; taken from the deepest equilibrium atoms if absent.
        #[serde(default)]
        targets: Option<Vec<f64>>,
    },
    Rate {
        q: Grid,
        s: Grid,
        #[serde(default = "default_curve_method")]
        method: Method,
        /// Index into `observables`.
        #[serde(default)]
        observable: usize,
    },
    EntropyLocal {
        source: EnsembleSource,
        constraints: Vec<Constraint>,
    },
    Esc {
        radius: f64,
        #[serde(default = "default_probes")]
        probes: usize,
        #[serde(default = "default_itineraries")]
        itineraries: usize,
    },
    SftOracle {
        sft: WeightedSft,
        /// Locally constant direction for the Gateaux check.
        #[serde(default)]
        psi: Option<Vec<Vec<f64>>>,
        /// Exact tails on the full 2-shift, one row per depth and level.
        #[serde(default)]
        tails: Option<SymbolTails>,
    },
    /// Circle bridge for `z²`, `φ = 0`.
    BridgeValidate {
        #[serde(default = "bridge_sources")]
        sources: Vec<EnsembleSource>,
    },
}

fn all_methods() -> Vec<Method> {
    vec![Method::Tree, Method::Periodic, Method::Birkhoff, Method::Separated]
}
fn default_epsilon() -> f64 {
    std::f64::consts::SQRT_2
}
fn default_cloud() -> usize {
    orbits::DEFAULT_CLOUD_SIZE
}
fn default_sample() -> usize {
    64
}
fn default_curve_method() -> Method {
    Method::Tree
}
fn default_probes() -> usize {
    32
}
fn default_itineraries() -> usize {
    16
}
fn bridge_sources() -> Vec<EnsembleSource> {
    vec![EnsembleSource::Preimage, EnsembleSource::Periodic]
}
fn default_budget() -> u64 {
    DEFAULT_ATOM_BUDGET
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Pressure { .. } => "pressure",
            Experiment::Equilibrium {} => "equilibrium",
            Experiment::Rpf { .. } => "rpf",
            Experiment::LdpLevel1 { .. } => "ldp-level1",
            Experiment::LdpLevel2 { .. } => "ldp-level2",
            Experiment::Rate { .. } => "rate",
            Experiment::EntropyLocal { .. } => "entropy-local",
            Experiment::Esc { .. } => "esc",
            Experiment::SftOracle { .. } => "sft-oracle",
            Experiment::BridgeValidate { .. } => "bridge-validate",
        }
    }
}

/// Checks the CLI applies to module output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Per-step allowance for `|Tⁿ(y) - x₀|` over a preimage tree.
    pub fiber_per_step: f64,
    /// `|Σ weights - 1|` of every ensemble.
    pub ensemble_mass: f64,
    /// Slack on `frequency bias ≤ smoothing bound` in the bridge.
    pub bridge_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            fiber_per_step: orbits::FIBER_TOLERANCE_PER_STEP,
            ensemble_mass: ENSEMBLE_MASS_TOLERANCE,
            bridge_slack: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub map: Option<RationalMap>,
    #[serde(default = "Observable::zero")]
    pub potential: Observable,
    #[serde(default)]
    pub observables: Vec<Observable>,
    pub experiment: Experiment,
    pub depths: Vec<usize>,
    /// Root of trees and atoms; a Julia sample point if absent.
    #[serde(default)]
    pub base_point: Option<[f64; 2]>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_budget")]
    pub budget: u64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            // observable errors surface through serde already labelled
            .map_err(|e| Error::ConfigInvalid(e.to_string().replacen("invalid config: ", "", 1)))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Structural checks that need no computation.
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.depths.is_empty() || self.depths.contains(&0) {
            return bad("`depths` must be a nonempty list of positive integers".into());
        }
        let needs_map = !matches!(self.experiment, Experiment::SftOracle { .. });
        if needs_map && self.map.is_none() {
            return bad(format!("experiment `{}` needs a map", self.experiment.name()));
        }
        match &self.experiment {
            Experiment::Pressure { methods, epsilon, cloud_size } => {
                if methods.is_empty() || !(*epsilon > 0.0) || *cloud_size == 0 {
                    return bad("pressure needs methods, epsilon > 0 and a nonempty cloud".into());
                }
            }
            Experiment::Rpf { sample_size } if *sample_size == 0 => return bad("rpf sample_size must be positive".into()),
            Experiment::LdpLevel1 { tails, .. } => {
                if self.observables.is_empty() || tails.is_empty() {
                    return bad("ldp-level1 needs observables and tails".into());
                }
            }
            Experiment::LdpLevel2 { delta, targets, .. } => {
                if self.observables.is_empty() || !(*delta > 0.0) {
                    return bad("ldp-level2 needs observables and delta > 0".into());
                }
                if let Some(t) = targets {
                    if t.len() != self.observables.len() {
                        return bad("one target per observable".into());
                    }
                }
            }
            Experiment::Rate { q, s, method, observable } => {
                q.points()?;
                s.points()?;
                if !matches!(method, Method::Tree | Method::Periodic) {
                    return bad("rate curves use the tree or periodic method".into());
                }
                if *observable >= self.observables.len() {
                    return bad("rate observable index out of range".into());
                }
                if !(q.min <= 0.0 && q.max >= 0.0) {
                    return bad("the q grid must contain 0".into());
                }
            }
            Experiment::EntropyLocal { constraints, .. } => {
                for c in constraints {
                    if !(c.radius > 0.0) {
                        return bad("constraint radius must be positive".into());
                    }
                    if !self.observables.contains(&c.observable) && c.observable != self.potential {
                        return bad("constraint observables must be listed in `observables`".into());
                    }
                }
            }
            Experiment::Esc { radius, probes, itineraries } => {
                if !(*radius > 0.0) || *probes < 2 || *itineraries == 0 {
                    return bad("esc needs radius > 0, at least two probes and one itinerary".into());
                }
            }
            Experiment::SftOracle { sft, psi, tails } => {
                WeightedSft::new(sft.transitions.clone(), sft.potential.clone())
                    .map_err(|e| Error::ConfigInvalid(format!("sft: {e}")))?;
                if let Some(p) = psi {
                    if p.len() != sft.alphabet() || p.iter().any(|r| r.len() != sft.alphabet()) {
                        return bad("psi must match the alphabet".into());
                    }
                }
                if let Some(t) = tails {
                    if t.s.is_empty() {
                        return bad("tails need at least one level".into());
                    }
                }
            }
            Experiment::BridgeValidate { sources } => {
                let z2 = RationalMap::power(2)?;
                if self.map.as_ref() != Some(&z2) {
                    return bad("bridge-validate is defined for z² only".into());
                }
                if self.potential != Observable::zero() {
                    return bad("bridge-validate uses the zero potential".into());
                }
                if sources.is_empty() || sources.contains(&EnsembleSource::Birkhoff) {
                    return bad("bridge sources are preimage and/or periodic".into());
                }
            }
            _ => {}
        }
        if let Some(map) = &self.map {
            if self.uses_trees() {
                for &n in &self.depths {
                    check_budget(map.degree(), n, self.budget).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    fn uses_trees(&self) -> bool {
        !matches!(self.experiment, Experiment::SftOracle { .. } | Experiment::Esc { .. })
    }

    /// Leaves enumerated by the tree and periodic stages, summed over depths.
    pub fn estimated_atoms(&self) -> f64 {
        match (&self.map, self.uses_trees()) {
            (Some(m), true) => self.depths.iter().map(|&n| (m.degree() as f64).powi(n as i32)).sum(),
            _ => 0.0,
        }
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Non-fatal findings of `validate`.
pub fn config_warnings(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let Some(map) = &cfg.map else { return Ok(out) };
    let mut candidates = vec![("potential".to_string(), &cfg.potential)];
    for (i, o) in cfg.observables.iter().enumerate() {
        candidates.push((format!("observable {}", i + 1), o));
    }
    if candidates.iter().any(|(_, o)| o.uses_log_derivative()) {
        let sample = julia_sample(map, 2000, cfg.seed)?;
        // a finite sample almost never lands inside the guard itself, so
        // critical points close to the sample are flagged as well
        let cloud = JuliaCloud::new(&sample, CRITICAL_PROXIMITY);
        let near: Vec<Complex64> = critical_points(map)
            .into_iter()
            .filter(|c| cloud.distance_within(SpherePoint::Finite(*c), CRITICAL_PROXIMITY).is_some())
            .collect();
        for (name, o) in candidates {
            if !o.uses_log_derivative() {
                continue;
            }
            if let Err(e) = o.check_on_cloud(map, &sample) {
                out.push(format!("{name}: {e}"));
            } else if let Some(c) = near.first() {
                out.push(format!(
                    "{name}: critical point {c} lies within {CRITICAL_PROXIMITY} of the Julia sample; the log-derivative potential may not be Hölder"
                ));
            }
        }
    }
    Ok(out)
}

/// Chordal radius within which a critical point counts as near the Julia set.
pub const CRITICAL_PROXIMITY: f64 = 1e-2;

/// Finite critical points: roots of `N'D - ND'`.
pub fn critical_points(map: &RationalMap) -> Vec<Complex64> {
    let deriv = |p: &[Complex64]| -> Vec<Complex64> { p.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect() };
    let mul = |a: &[Complex64], b: &[Complex64]| -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); (a.len() + b.len()).saturating_sub(1)];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    };
    let (n, d) = (map.numerator(), map.denominator());
    let (left, right) = (mul(&deriv(n), d), mul(n, &deriv(d)));
    let len = left.len().max(right.len());
    let w: Vec<Complex64> = (0..len)
        .map(|k| left.get(k).copied().unwrap_or_default() - right.get(k).copied().unwrap_or_default())
        .collect();
    crate::roots::aberth(&w).0
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub threads: usize,
    pub stages: Vec<StageRecord>,
    pub tolerances: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

fn tolerance_table(t: &Tolerances) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("fiber_per_step".into(), t.fiber_per_step);
    m.insert("ensemble_mass".into(), t.ensemble_mass);
    m.insert("bridge_slack".into(), t.bridge_slack);
    m.insert("preimage_residual".into(), crate::map::PREIMAGE_RESIDUAL);
    m.insert("root_merge_radius".into(), crate::map::ROOT_MERGE_RADIUS);
    m.insert("periodic_residual_floor".into(), orbits::PERIODIC_RESIDUAL);
    m.insert("periodic_dedup".into(), orbits::PERIODIC_DEDUP);
    m.insert("julia_proximity".into(), orbits::JULIA_PROXIMITY);
    m.insert("multiplier_floor".into(), orbits::MULTIPLIER_FLOOR);
    m.insert("normalization".into(), transfer::NORMALIZATION_TOLERANCE);
    m.insert("convexity".into(), pressure::CONVEXITY_TOLERANCE);
    m.insert("rate_domain_slack".into(), ldp::DOMAIN_SLACK);
    m.insert("power_iteration".into(), sft::POWER_TOLERANCE);
    m.insert("markov".into(), sft::MARKOV_TOLERANCE);
    m.insert("itinerary_cut".into(), sft::ITINERARY_TOLERANCE);
    m.insert("dyadic_snap".into(), sft::DYADIC_SNAP);
    m.insert("bridge_width".into(), sft::BRIDGE_WIDTH);
    m.insert("gateaux_step".into(), sft::GATEAUX_STEP);
    m
}

/// Files and summary lines produced by one stage.
#[derive(Default)]
struct StageOutput {
    files: Vec<(String, String)>,
    summary: Vec<String>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    map: Option<&'a RationalMap>,
    x0: SpherePoint,
}

impl Context<'_> {
    fn map(&self) -> &RationalMap {
        self.map.expect("checked in ExperimentConfig::check")
    }

    fn log_p(&self, n: usize) -> Result<f64> {
        pressure::pressure_increment(self.map(), &self.cfg.potential, self.x0, n)
    }

    fn equilibrium(&self, n: usize) -> Result<AtomicMeasure> {
        equilibrium_atoms(self.map(), &self.cfg.potential, self.x0, n, self.log_p(n)?)
    }

    fn ensemble(&self, source: EnsembleSource, n: usize) -> Result<EmpiricalEnsemble> {
        let mu;
        let base = match source {
            EnsembleSource::Periodic => EnsembleBase::Periodic,
            EnsembleSource::Preimage => EnsembleBase::Preimage(self.x0),
            EnsembleSource::Birkhoff => {
                mu = self.equilibrium(n)?;
                EnsembleBase::Birkhoff(&mu)
            }
        };
        let ens = build_ensemble(base, self.map(), &self.cfg.potential, &self.cfg.observables, n)?;
        let defect = (ens.total_mass() - 1.0).abs();
        if defect > self.cfg.tolerances.ensemble_mass {
            return Err(Error::InvalidArgument(format!("ensemble mass is off by {defect:e}")));
        }
        Ok(ens)
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

type Stage<'a> = (String, Box<dyn Fn(&Context) -> Result<StageOutput> + 'a>);

fn stages(cfg: &ExperimentConfig) -> Vec<Stage<'_>> {
    let mut out: Vec<Stage> = Vec::new();
    match &cfg.experiment {
        Experiment::Pressure { methods, epsilon, cloud_size } => {
            for m in methods {
                let (m, eps, cloud) = (*m, *epsilon, *cloud_size);
                out.push((format!("pressure-{m}"), Box::new(move |ctx| stage_pressure(ctx, m, eps, cloud))));
            }
        }
        Experiment::Equilibrium {} => out.push(("equilibrium".into(), Box::new(stage_equilibrium))),
        Experiment::Rpf { sample_size } => {
            let k = *sample_size;
            out.push(("rpf".into(), Box::new(move |ctx| stage_rpf(ctx, k))));
        }
        Experiment::LdpLevel1 { source, tails } => {
            out.push(("ldp-level1".into(), Box::new(move |ctx| stage_level1(ctx, *source, tails))));
        }
        Experiment::LdpLevel2 { source, delta, targets } => {
            out.push(("ldp-level2".into(), Box::new(move |ctx| stage_level2(ctx, *source, *delta, targets.as_deref()))));
        }
        Experiment::Rate { q, s, method, observable } => {
            out.push(("rate".into(), Box::new(move |ctx| stage_rate(ctx, q, s, *method, *observable))));
        }
        Experiment::EntropyLocal { source, constraints } => {
            out.push(("entropy-local".into(), Box::new(move |ctx| stage_entropy(ctx, *source, constraints))));
        }
        Experiment::Esc { radius, probes, itineraries } => {
            let (r, p, k) = (*radius, *probes, *itineraries);
            out.push(("esc".into(), Box::new(move |ctx| stage_esc(ctx, r, p, k))));
        }
        Experiment::SftOracle { sft, psi, tails } => {
            out.push(("sft-oracle".into(), Box::new(move |ctx| stage_sft(ctx, sft, psi.as_deref(), tails.as_ref()))));
        }
        Experiment::BridgeValidate { sources } => {
            out.push(("bridge-validate".into(), Box::new(move |ctx| stage_bridge(ctx, sources))));
        }
    }
    out
}

fn stage_pressure(ctx: &Context, method: Method, eps: f64, cloud_size: usize) -> Result<StageOutput> {
    let map = ctx.map();
    let phi = &ctx.cfg.potential;
    let cloud = match method {
        Method::Separated => julia_sample(map, cloud_size, ctx.cfg.seed)?,
        _ => Vec::new(),
    };
    let mut rows = Vec::new();
    let mut out = StageOutput::default();
    for &n in &ctx.cfg.depths {
        let est = match method {
            Method::Tree => {
                let tree = orbits::preimage_tree_with_budget(map, phi, &[], ctx.x0, n, ctx.cfg.budget)?;
                let res = tree.fiber_residual(map);
                if res > ctx.cfg.tolerances.fiber_per_step * n as f64 {
                    return Err(Error::InvalidArgument(format!("fiber residual {res:e} at depth {n}")));
                }
                pressure::pressure_from_tree(&tree)
            }
            Method::Periodic => pressure::pressure_periodic(map, phi, n)?,
            Method::Birkhoff => {
                // P(φ) = P(0) + (1/n) log ∫ e^{S_n φ} dμ₀ with μ₀ the measure of maximal entropy
                let zero = Observable::zero();
                let p0 = pressure::pressure_tree(map, &zero, ctx.x0, n)?.value;
                let mu0 = conformal_atoms(map, &zero, ctx.x0, n)?;
                let mut e = pressure::pressure_birkhoff(map, phi, &mu0, n)?;
                e.value += p0;
                e
            }
            Method::Separated => pressure::pressure_separated(map, phi, &cloud, eps, n)?,
        };
        out.summary.push(format!("{method:<10} n={n:<3} P = {:.10}", est.value));
        rows.push(vec![
            method.to_string(),
            n.to_string(),
            fmt_f64(est.value),
            est.epsilon.map(fmt_f64).unwrap_or_default(),
        ]);
    }
    out.files.push((format!("pressure_{method}.csv"), csv("method,depth,value,epsilon", rows)));
    Ok(out)
}

fn stage_equilibrium(ctx: &Context) -> Result<StageOutput> {
    let map = ctx.map();
    let mut out = StageOutput::default();
    let mut header = String::from("depth,log_pressure,invariance_residual");
    for i in 0..ctx.cfg.observables.len() {
        let _ = write!(header, ",obs{}", i + 1);
    }
    let mut rows = Vec::new();
    for &n in &ctx.cfg.depths {
        let log_p = ctx.log_p(n)?;
        let mu = equilibrium_atoms(map, &ctx.cfg.potential, ctx.x0, n, log_p)?;
        let eta = conformal_atoms(map, &ctx.cfg.potential, ctx.x0, n)?;
        let inv = transfer::invariance_residual(map, &mu, &transfer::invariance_tests())?;
        let mut row = vec![n.to_string(), fmt_f64(log_p), fmt_f64(inv)];
        for o in &ctx.cfg.observables {
            row.push(fmt_f64(mu.integrate_observable(map, o)?));
        }
        rows.push(row);
        let mut buf = Vec::new();
        mu.write_csv_to(&mut buf)?;
        out.files.push((format!("equilibrium_atoms_n{n}.csv"), String::from_utf8(buf).expect("ascii")));
        let mut buf = Vec::new();
        eta.write_csv_to(&mut buf)?;
        out.files.push((format!("conformal_atoms_n{n}.csv"), String::from_utf8(buf).expect("ascii")));
        out.summary.push(format!("n={n:<3} logP = {log_p:.10}  invariance residual = {inv:.3e}"));
    }
    out.files.push(("equilibrium.csv".into(), csv(&header, rows)));
    Ok(out)
}

fn stage_rpf(ctx: &Context, sample_size: usize) -> Result<StageOutput> {
    let map = ctx.map();
    let mut sample = vec![ctx.x0];
    sample.extend(julia_sample(map, sample_size.saturating_sub(1), ctx.cfg.seed)?);
    let deepest = *ctx.cfg.depths.iter().max().expect("nonempty");
    let log_p = ctx.log_p(deepest)?;
    let mut out = StageOutput::default();
    let mut rows = Vec::new();
    for &n in &ctx.cfg.depths {
        let r = transfer::rpf_residuals(map, &ctx.cfg.potential, &sample, n, log_p)?;
        out.summary.push(format!(
            "n={n:<3} eigen {:.3e}  C0 {:.4}  invariance {:.3e}",
            r.eigen_residual, r.c0_bound, r.invariance_residual
        ));
        rows.push(vec![n.to_string(), fmt_f64(r.eigen_residual), fmt_f64(r.c0_bound), fmt_f64(r.invariance_residual)]);
    }
    out.files.push(("rpf.csv".into(), csv("depth,eigen_residual,c0_bound,invariance_residual", rows)));
    out.summary.push(format!("logP = {log_p:.12} (increment at depth {deepest})"));
    Ok(out)
}

fn stage_level1(ctx: &Context, source: EnsembleSource, tails: &[Tail]) -> Result<StageOutput> {
    let mut out = StageOutput::default();
    let mut rows = Vec::new();
    for &n in &ctx.cfg.depths {
        let ens = ctx.ensemble(source, n)?;
        for (j, o) in ctx.cfg.observables.iter().enumerate() {
            for t in tails {
                let v = ldp::level1_tail(&ens, o, *t)?;
                out.summary.push(format!("{source} n={n:<3} obs{} {t:<10} {v}", j + 1));
                rows.push(vec![n.to_string(), (j + 1).to_string(), t.to_string(), v.to_string()]);
            }
        }
        let mut buf = Vec::new();
        ens.write_csv_to(&mut buf)?;
        out.files.push((format!("ensemble_{source}_n{n}.csv"), String::from_utf8(buf).expect("ascii")));
    }
    out.files.push(("tails.csv".into(), csv("depth,observable,tail,value", rows)));
    Ok(out)
}

fn stage_level2(ctx: &Context, source: EnsembleSource, delta: f64, targets: Option<&[f64]>) -> Result<StageOutput> {
    let map = ctx.map();
    let targets: Vec<f64> = match targets {
        Some(t) => t.to_vec(),
        None => {
            let deepest = *ctx.cfg.depths.iter().max().expect("nonempty");
            let mu = ctx.equilibrium(deepest)?;
            ctx.cfg.observables.iter().map(|o| mu.integrate_observable(map, o)).collect::<Result<_>>()?
        }
    };
    let pairs: Vec<(Observable, f64)> = ctx.cfg.observables.iter().cloned().zip(targets.iter().copied()).collect();
    let ens: Vec<EmpiricalEnsemble> = ctx.cfg.depths.iter().map(|&n| ctx.ensemble(source, n)).collect::<Result<_>>()?;
    let rows = ldp::weak_star_check(&ens, &pairs, delta)?;
    let mut out = StageOutput::default();
    for r in &rows {
        out.summary.push(format!("{source} n={:<3} mass {:.6}  complement slope {}", r.n, r.mass, r.complement_slope));
    }
    out.summary.push(format!("targets {}", targets.iter().map(|t| format!("{t:.8}")).collect::<Vec<_>>().join(" ")));
    out.files.push((
        "weak_star.csv".into(),
        csv(
            "depth,delta,mass,complement_slope",
            rows.iter().map(|r| vec![r.n.to_string(), fmt_f64(delta), fmt_f64(r.mass), r.complement_slope.to_string()]),
        ),
    ));
    Ok(out)
}

fn stage_rate(ctx: &Context, q: &Grid, s: &Grid, method: Method, observable: usize) -> Result<StageOutput> {
    let map = ctx.map();
    let psi = &ctx.cfg.observables[observable];
    let (qs, ss) = (q.points()?, s.points()?);
    let mut out = StageOutput::default();
    for &n in &ctx.cfg.depths {
        let curve = pressure::pressure_curve(map, &ctx.cfg.potential, psi, &qs, method, n, ctx.x0)?;
        let rate = ldp::rate_from_curve(&curve, &ss)?;
        let mut buf = Vec::new();
        curve.write_csv_to(&mut buf)?;
        out.files.push((format!("curve_n{n}.csv"), String::from_utf8(buf).expect("ascii")));
        let mut buf = Vec::new();
        rate.write_csv_to(&mut buf)?;
        out.files.push((format!("rate_n{n}.csv"), String::from_utf8(buf).expect("ascii")));
        let (s_min, i_min) = rate.argmin();
        out.summary.push(format!("n={n:<3} P(0) = {:.10}  argmin I = {s_min:.4} (I = {:.3e})", curve.at_zero().unwrap_or(f64::NAN), i_min + 0.0));
    }
    Ok(out)
}

fn stage_entropy(ctx: &Context, source: EnsembleSource, constraints: &[Constraint]) -> Result<StageOutput> {
    let mut out = StageOutput::default();
    let mut rows = Vec::new();
    for &n in &ctx.cfg.depths {
        let ens = ctx.ensemble(source, n)?;
        let v = ldp::entropy_local_pressure(&ens, constraints)?;
        let full = ldp::entropy_local_pressure(&ens, &[])?;
        out.summary.push(format!("{source} n={n:<3} local {v:.10}  unconstrained {full:.10}"));
        rows.push(vec![n.to_string(), fmt_f64(v), fmt_f64(full)]);
    }
    out.files.push(("entropy_local.csv".into(), csv("depth,local_pressure,pressure", rows)));
    Ok(out)
}

fn stage_esc(ctx: &Context, radius: f64, probes: usize, itineraries: usize) -> Result<StageOutput> {
    let n_max = *ctx.cfg.depths.iter().max().expect("nonempty");
    let opts = EscOptions { itineraries, seed: ctx.cfg.seed, cloud_size: orbits::DEFAULT_CLOUD_SIZE };
    let r = esc_diagnostic_with(ctx.map(), ctx.x0, radius, n_max, probes, &opts)?;
    let mut out = StageOutput::default();
    out.summary.push(format!("shrink rate {:.6} over {} steps", r.shrink_rate, n_max));
    out.files.push((
        "esc.csv".into(),
        csv("step,diameter", r.diameters.iter().enumerate().map(|(k, d)| vec![k.to_string(), fmt_f64(*d)])),
    ));
    Ok(out)
}

fn stage_sft(ctx: &Context, sft: &WeightedSft, psi: Option<&[Vec<f64>]>, tails: Option<&SymbolTails>) -> Result<StageOutput> {
    let p = sft::sft_pressure(sft)?;
    let mu = sft::sft_equilibrium(sft)?;
    let h = sft::sft_entropy(&mu);
    let integral = mu.integrate(&sft.potential);
    let q = sft::sft_qstar(sft, &mu)?;
    let mut rows = vec![
        ("pressure", p),
        ("entropy", h),
        ("potential_integral", integral),
        ("variational_gap", p - h - integral),
        ("qstar_at_equilibrium", q),
        ("invariance_residual", mu.invariance_residual()),
    ];
    if let Some(psi) = psi {
        let g = sft::sft_gateaux_check(sft, psi)?;
        rows.push(("conjugate_residual", g.conjugate_residual));
        rows.push(("derivative_residual", g.derivative_residual));
    }
    let mut out = StageOutput::default();
    for (k, v) in &rows {
        out.summary.push(format!("{k:<22} {v:.15e}"));
    }
    out.files.push(("sft.csv".into(), csv("quantity,value", rows.iter().map(|(k, v)| vec![k.to_string(), fmt_f64(*v)]))));
    let mut buf = Vec::new();
    serde_json::to_writer_pretty(&mut buf, &mu).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    buf.push(b'\n');
    out.files.push(("sft_equilibrium.json".into(), String::from_utf8(buf).expect("utf8")));
    if let Some(t) = tails {
        let mut trows = Vec::new();
        for &n in &ctx.cfg.depths {
            for &s in &t.s {
                let v = sft::sft_exact_tail(t.phi[0], t.phi[1], n, s);
                out.summary.push(format!("tail n={n:<3} s={s:<6} {v}"));
                trows.push(vec![n.to_string(), fmt_f64(s), v.to_string()]);
            }
        }
        out.files.push(("sft_tails.csv".into(), csv("depth,s,value", trows)));
    }
    Ok(out)
}

fn stage_bridge(ctx: &Context, sources: &[EnsembleSource]) -> Result<StageOutput> {
    let map = ctx.map();
    let ind = Observable::symbol_indicator(sft::BRIDGE_WIDTH);
    let mut out = StageOutput::default();
    let mut rows = Vec::new();
    for &source in sources {
        for &n in &ctx.cfg.depths {
            let base = match source {
                EnsembleSource::Periodic => EnsembleBase::Periodic,
                _ => EnsembleBase::Preimage(ctx.x0),
            };
            let ens = build_ensemble(base, map, &ctx.cfg.potential, std::slice::from_ref(&ind), n)?;
            let r = sft::circle_bridge(&ens, &ind, [0.0, 0.0])?;
            if r.frequency_bias > r.smoothing_bound + ctx.cfg.tolerances.bridge_slack || !r.injective {
                return Err(Error::InvalidArgument(format!("{source} n={n}: bridge check failed: {r:?}")));
            }
            out.summary.push(format!(
                "{source} n={n:<3} members {} excluded {} bias {:.3e} bound {:.3e} cylinder error {:.3e}",
                r.members, r.excluded, r.frequency_bias, r.smoothing_bound, r.cylinder_error
            ));
            rows.push(vec![
                source.to_string(),
                n.to_string(),
                r.members.to_string(),
                r.excluded.to_string(),
                r.injective.to_string(),
                fmt_f64(r.frequency_bias),
                fmt_f64(r.smoothing_bound),
                fmt_f64(r.cylinder_error),
            ]);
        }
    }
    out.files.push((
        "bridge.csv".into(),
        csv("source,depth,members,excluded,injective,frequency_bias,smoothing_bound,cylinder_error", rows),
    ));
    Ok(out)
}

/// Outcome of [`run_experiment`].
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub summary: String,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.manifest.stages.iter().all(|s| s.error.is_none()) {
            EXIT_OK
        } else {
            EXIT_STAGE_ERROR
        }
    }
}

fn base_point(cfg: &ExperimentConfig) -> Result<SpherePoint> {
    if let Some([re, im]) = cfg.base_point {
        return Ok(SpherePoint::Finite(Complex64::new(re, im)));
    }
    match &cfg.map {
        Some(map) => Ok(julia_sample(map, 1, cfg.seed)?[0]),
        None => Ok(SpherePoint::new(0.0, 0.0)),
    }
}

fn prepare_output(out: &Path) -> Result<PathBuf> {
    if out.exists() {
        let ours = out.join("manifest.json").exists();
        let empty = out.read_dir().map(|mut d| d.next().is_none()).unwrap_or(false);
        if !ours && !empty {
            return Err(Error::ConfigInvalid(format!("{} exists and holds no previous run", out.display())));
        }
    }
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_else(|| "out".into());
    name.push(".staging");
    let staging = out.with_file_name(name);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    Ok(staging)
}

/// Run every stage of a validated config into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<RunOutcome> {
    cfg.check()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let x0 = base_point(cfg)?;
    let staging = prepare_output(out)?;
    let ctx = Context { cfg, map: cfg.map.as_ref(), x0 };
    let mut records = Vec::new();
    let mut files = Vec::new();
    let mut summary = format!("thermo {} | {} | seed {}\n", env!("CARGO_PKG_VERSION"), cfg.experiment.name(), cfg.seed);
    pool.install(|| -> Result<()> {
        for (name, stage) in stages(cfg) {
            let t = Instant::now();
            let result = stage(&ctx);
            let seconds = t.elapsed().as_secs_f64();
            let mut rec = StageRecord { name: name.clone(), seconds, files: Vec::new(), error: None };
            match result {
                Ok(o) => {
                    for (f, body) in o.files {
                        fs::write(staging.join(&f), body)?;
                        rec.files.push(f.clone());
                        files.push(f);
                    }
                    for line in o.summary {
                        let _ = writeln!(summary, "[{name}] {line}");
                    }
                }
                Err(e) => {
                    let e = e.in_stage(&name);
                    let _ = writeln!(summary, "[{name}] ERROR {e}");
                    rec.error = Some(e.to_string());
                }
            }
            records.push(rec);
        }
        Ok(())
    })?;
    let _ = writeln!(summary, "status: {}", if records.iter().all(|r| r.error.is_none()) { "ok" } else { "failed" });
    fs::write(staging.join("summary.txt"), &summary)?;
    files.push("summary.txt".into());
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: cfg.experiment.name().to_string(),
        seed: cfg.seed,
        threads: pool.current_num_threads(),
        stages: records,
        tolerances: tolerance_table(&cfg.tolerances),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let tmp = staging.join("manifest.json.tmp");
    fs::write(&tmp, json + "\n")?;
    fs::rename(&tmp, staging.join("manifest.json"))?;
    if out.exists() {
        fs::remove_dir_all(out)?;
    }
    fs::rename(&staging, out)?;
    Ok(RunOutcome { manifest, summary, out_dir: out.to_path_buf() })
}

fn load_with_overrides(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed_override {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn exit_for(e: &Error) -> i32 {
    match e {
        Error::ConfigInvalid(_) => EXIT_CONFIG_INVALID,
        _ => EXIT_STAGE_ERROR,
    }
}

/// Execute parsed arguments; returns the process exit status.
pub fn execute(cli: &Cli) -> i32 {
    let (path, oracle_only) = match &cli.command {
        Command::Validate { config } => return validate(cli, config),
        Command::Run { config } => (config, false),
        Command::Oracle { config } => (config, true),
    };
    let cfg = match load_with_overrides(cli, path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    if oracle_only && !matches!(cfg.experiment, Experiment::SftOracle { .. }) {
        eprintln!("error: `oracle` runs sft-oracle configs only");
        return EXIT_CONFIG_INVALID;
    }
    let Some(out) = cfg.output.clone() else {
        eprintln!("error: no output directory (set `output` or pass --out)");
        return EXIT_CONFIG_INVALID;
    };
    match run_experiment(&cfg, &out, cli.threads) {
        Ok(o) => {
            print!("{}", o.summary);
            o.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn validate(cli: &Cli, path: &Path) -> i32 {
    let cfg = match load_with_overrides(cli, path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    match config_warnings(&cfg) {
        Ok(ws) => {
            for w in ws {
                println!("warning: {w}");
            }
        }
        Err(e) => println!("warning: guard check failed: {e}"),
    }
    println!("ok: {} with {} depth(s), estimated atoms {:.0}", cfg.experiment.name(), cfg.depths.len(), cfg.estimated_atoms());
    EXIT_OK
}

pub fn main_from_env() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG_INVALID
            } else {
                EXIT_OK
            }
        }
    }
}
