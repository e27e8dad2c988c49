//! Weighted subshifts of finite type with matrix potentials, where pressure,
//! equilibrium states, entropy and `Q*` are exact linear algebra, plus the
//! binary-itinerary bridge between `z ↦ z²` on the circle and the full
//! 2-shift.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldp::EmpiricalEnsemble;
use crate::map::SpherePoint;
use crate::numeric::{log_sum_exp, Extended, KahanSum};
use crate::potentials::Observable;
use crate::transfer::angle;
use crate::Complex64;

const POWER_MAX_ITER: usize = 1_000_000;
/// Relative Collatz–Wielandt gap at which power iteration stops.
pub const POWER_TOLERANCE: f64 = 1e-15;
/// Tolerance for stochasticity and invariance of a Markov measure.
pub const MARKOV_TOLERANCE: f64 = 1e-13;
/// Orbit angles this close to the cut have no reliable itinerary.
pub const ITINERARY_TOLERANCE: f64 = 1e-9;
/// Angles this close to `2πj/2ⁿ` are taken to be exactly dyadic.
pub const DYADIC_SNAP: f64 = 1e-12;
/// Smoothing width of the symbol indicator used on the circle.
pub const BRIDGE_WIDTH: f64 = 1e-8;
/// Central-difference step of the derivative check.
pub const GATEAUX_STEP: f64 = 1e-5;

/// `A` (0/1 transitions) with a potential `φ(a, b)` on allowed transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedSft {
    pub transitions: Vec<Vec<u8>>,
    pub potential: Vec<Vec<f64>>,
}

impl WeightedSft {
    pub fn new(transitions: Vec<Vec<u8>>, potential: Vec<Vec<f64>>) -> Result<Self> {
        let m = transitions.len();
        if m == 0 {
            return Err(Error::InvalidArgument("empty alphabet".into()));
        }
        if transitions.iter().any(|r| r.len() != m) || potential.len() != m || potential.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("transition and potential matrices must be square and of equal size".into()));
        }
        for (ra, rp) in transitions.iter().zip(&potential) {
            for (&a, &p) in ra.iter().zip(rp) {
                if a > 1 {
                    return Err(Error::InvalidArgument("transition entries must be 0 or 1".into()));
                }
                if a == 1 && !p.is_finite() {
                    return Err(Error::InvalidArgument("potential must be finite on allowed transitions".into()));
                }
            }
        }
        let s = WeightedSft { transitions, potential };
        if !s.is_irreducible() {
            return Err(Error::Reducible);
        }
        Ok(s)
    }

    pub fn full_shift(m: usize) -> Result<Self> {
        Self::new(vec![vec![1; m]; m], vec![vec![0.0; m]; m])
    }

    /// `A = [[1,1],[1,0]]`, `φ = 0`.
    pub fn golden_mean() -> Self {
        Self::new(vec![vec![1, 1], vec![1, 0]], vec![vec![0.0; 2]; 2]).expect("golden mean shift is irreducible")
    }

    /// Full shift whose potential depends on the first symbol only.
    pub fn full_shift_symbol_potential(phi: &[f64]) -> Result<Self> {
        let m = phi.len();
        Self::new(vec![vec![1; m]; m], phi.iter().map(|&p| vec![p; m]).collect())
    }

    /// Random irreducible shift on `m` letters with potential uniform in
    /// `[-1, 1]`; transition matrices are redrawn until irreducible.
    pub fn random<R: Rng>(rng: &mut R, m: usize) -> Self {
        loop {
            let a: Vec<Vec<u8>> = (0..m).map(|_| (0..m).map(|_| rng.gen_bool(0.6) as u8).collect()).collect();
            let phi: Vec<Vec<f64>> = (0..m).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            if let Ok(s) = Self::new(a, phi) {
                return s;
            }
        }
    }

    pub fn alphabet(&self) -> usize {
        self.transitions.len()
    }

    pub fn allowed(&self, a: usize, b: usize) -> bool {
        self.transitions[a][b] == 1
    }

    /// Every letter reaches every other letter.
    pub fn is_irreducible(&self) -> bool {
        let m = self.alphabet();
        (0..m).all(|start| {
            let mut seen = vec![false; m];
            let mut stack = vec![start];
            while let Some(a) = stack.pop() {
                for b in 0..m {
                    if self.allowed(a, b) && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
            seen.iter().all(|&s| s)
        })
    }

    /// Same shift with potential `φ + t ψ`.
    pub fn perturbed(&self, t: f64, psi: &[Vec<f64>]) -> Result<Self> {
        let m = self.alphabet();
        if psi.len() != m || psi.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("perturbation has the wrong shape".into()));
        }
        let potential = self
            .potential
            .iter()
            .zip(psi)
            .map(|(rp, rq)| rp.iter().zip(rq).map(|(p, q)| p + t * q).collect())
            .collect();
        Ok(WeightedSft { transitions: self.transitions.clone(), potential })
    }

    fn weighted(&self) -> Vec<Vec<f64>> {
        self.transitions
            .iter()
            .zip(&self.potential)
            .map(|(ra, rp)| ra.iter().zip(rp).map(|(&a, &p)| if a == 1 { p.exp() } else { 0.0 }).collect())
            .collect()
    }
}

/// Perron vector of a nonnegative irreducible matrix by power iteration on
/// `I + M`, which is primitive. Returns `(λ, v)` with `v` summing to one.
fn perron(mat: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let m = mat.len();
    let mut v = vec![1.0 / m as f64; m];
    let mut best_gap = f64::INFINITY;
    let mut stalled = 0;
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w: Vec<f64> = (0..m).map(|i| v[i] + (0..m).map(|j| mat[i][j] * v[j]).sum::<f64>()).collect();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..m {
            let r = w[i] / v[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let total: f64 = w.iter().sum();
        v = w.iter().map(|x| x / total).collect();
        lambda = 0.5 * (lo + hi) - 1.0;
        let gap = (hi - lo) / hi;
        if gap <= POWER_TOLERANCE {
            break;
        }
        // rounding floor: stop once the bracket has not shrunk for a while
        if gap < best_gap {
            best_gap = gap;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > 50 {
                break;
            }
        }
    }
    (lambda, v)
}

fn transpose(mat: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = mat.len();
    (0..m).map(|i| (0..m).map(|j| mat[j][i]).collect()).collect()
}

/// `log λ_max(A ∘ e^φ)`.
pub fn sft_pressure(sft: &WeightedSft) -> Result<f64> {
    if !sft.is_irreducible() {
        return Err(Error::Reducible);
    }
    Ok(perron(&sft.weighted()).0.ln())
}

/// Stationary vector and stochastic matrix of a Markov measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovMeasure {
    pub stationary: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

impl MarkovMeasure {
    pub fn new(stationary: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let m = stationary.len();
        if transition.len() != m || transition.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("Markov measure has the wrong shape".into()));
        }
        if stationary.iter().chain(transition.iter().flatten()).any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidArgument("Markov measure has negative entries".into()));
        }
        for row in &transition {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > MARKOV_TOLERANCE {
                return Err(Error::InvalidArgument(format!("row sum {s} is not one")));
            }
        }
        Ok(MarkovMeasure { stationary, transition })
    }

    /// I.i.d. letters with the given probabilities.
    pub fn bernoulli(probs: &[f64]) -> Result<Self> {
        Self::new(probs.to_vec(), vec![probs.to_vec(); probs.len()])
    }

    /// Point mass on the fixed point `aaa…`; other rows are uniform over
    /// allowed successors so that the matrix stays stochastic.
    pub fn dirac(sft: &WeightedSft, letter: usize) -> Result<Self> {
        let m = sft.alphabet();
        if letter >= m || !sft.allowed(letter, letter) {
            return Err(Error::InvalidArgument(format!("{letter} is not a fixed letter")));
        }
        let mut p = vec![0.0; m];
        p[letter] = 1.0;
        let rows = (0..m)
            .map(|a| {
                if a == letter {
                    (0..m).map(|b| if b == a { 1.0 } else { 0.0 }).collect()
                } else {
                    let k = (0..m).filter(|&b| sft.allowed(a, b)).count() as f64;
                    (0..m).map(|b| if sft.allowed(a, b) { 1.0 / k } else { 0.0 }).collect()
                }
            })
            .collect();
        Self::new(p, rows)
    }

    pub fn alphabet(&self) -> usize {
        self.stationary.len()
    }

    /// `max_b |(pΠ)_b - p_b|` together with `|Σp - 1|`.
    pub fn invariance_residual(&self) -> f64 {
        let m = self.alphabet();
        let mut worst = (self.stationary.iter().sum::<f64>() - 1.0).abs();
        for b in 0..m {
            let s: f64 = (0..m).map(|a| self.stationary[a] * self.transition[a][b]).sum();
            worst = worst.max((s - self.stationary[b]).abs());
        }
        worst
    }

    /// `∫ψ dμ = Σ p(a) Π(a,b) ψ(a,b)`.
    pub fn integrate(&self, psi: &[Vec<f64>]) -> f64 {
        let mut s = KahanSum::new();
        for (a, row) in self.transition.iter().enumerate() {
            for (b, &t) in row.iter().enumerate() {
                if t > 0.0 {
                    s.add(self.stationary[a] * t * psi[a][b]);
                }
            }
        }
        s.value()
    }

    /// Probability of the cylinder `[w₀ w₁ … w_{k-1}]`.
    pub fn cylinder(&self, word: &[usize]) -> f64 {
        match word.first() {
            None => 1.0,
            Some(&a) => word.windows(2).fold(self.stationary[a], |acc, w| acc * self.transition[w[0]][w[1]]),
        }
    }
}

/// The equilibrium state: `Π(a,b) = A(a,b) e^{φ(a,b)} r(b) / (λ r(a))`,
/// `p ∝ l ∘ r`.
pub fn sft_equilibrium(sft: &WeightedSft) -> Result<MarkovMeasure> {
    if !sft.is_irreducible() {
        return Err(Error::Reducible);
    }
    let w = sft.weighted();
    let (lambda, r) = perron(&w);
    let (_, l) = perron(&transpose(&w));
    let m = sft.alphabet();
    let mut p: Vec<f64> = (0..m).map(|a| l[a] * r[a]).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    let rows = (0..m)
        .map(|a| {
            let raw: Vec<f64> = (0..m).map(|b| w[a][b] * r[b] / (lambda * r[a])).collect();
            // absorb the last ulps so each row is stochastic
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        })
        .collect();
    MarkovMeasure::new(p, rows)
}

/// `-Σ p(a) Π(a,b) log Π(a,b)`.
pub fn sft_entropy(mu: &MarkovMeasure) -> f64 {
    let mut s = KahanSum::new();
    for (a, row) in mu.transition.iter().enumerate() {
        for &t in row {
            if t > 0.0 {
                s.add(-mu.stationary[a] * t * t.ln());
            }
        }
    }
    s.value()
}

/// `Q*_φ(μ) = P(φ) - ∫φ dμ - h(μ)` for a shift-invariant Markov measure
/// supported on the shift.
pub fn sft_qstar(sft: &WeightedSft, mu: &MarkovMeasure) -> Result<f64> {
    let m = sft.alphabet();
    if mu.alphabet() != m {
        return Err(Error::InvalidArgument("measure and shift have different alphabets".into()));
    }
    for a in 0..m {
        for b in 0..m {
            if !sft.allowed(a, b) && mu.stationary[a] > 0.0 && mu.transition[a][b] > 0.0 {
                return Err(Error::InvalidArgument(format!("measure charges the forbidden transition {a}{b}")));
            }
        }
    }
    let res = mu.invariance_residual();
    if res > MARKOV_TOLERANCE {
        return Err(Error::NotInvariant(res));
    }
    Ok(sft_pressure(sft)? - mu.integrate(&sft.potential) - sft_entropy(mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateauxReport {
    /// `|Q_φ(ψ) - (∫ψ dμ_{φ+ψ} - Q*_φ(μ_{φ+ψ}))|`.
    pub conjugate_residual: f64,
    /// `|dP(φ+tψ)/dt|₀ - ∫ψ dμ_φ|` by central differences.
    pub derivative_residual: f64,
}

pub fn sft_gateaux_check(sft: &WeightedSft, psi: &[Vec<f64>]) -> Result<GateauxReport> {
    let p = sft_pressure(sft)?;
    let shifted = sft.perturbed(1.0, psi)?;
    let q = sft_pressure(&shifted)? - p;
    let mu_psi = sft_equilibrium(&shifted)?;
    let rhs = mu_psi.integrate(psi) - sft_qstar(sft, &mu_psi)?;
    let h = GATEAUX_STEP;
    let dp = (sft_pressure(&sft.perturbed(h, psi)?)? - sft_pressure(&sft.perturbed(-h, psi)?)?) / (2.0 * h);
    let mu = sft_equilibrium(sft)?;
    Ok(GateauxReport { conjugate_residual: (q - rhs).abs(), derivative_residual: (dp - mu.integrate(psi)).abs() })
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut s = KahanSum::new();
    out.push(0.0);
    for i in 1..=n {
        s.add((i as f64).ln());
        out.push(s.value());
    }
    out
}

/// `(1/n) log Σ_{k/n ≥ s} C(n,k) e^{kφ₁+(n-k)φ₀} / (e^{φ₀}+e^{φ₁})ⁿ`: the
/// exact mass of `{#1s / n ≥ s}` under the Bernoulli equilibrium of a
/// symbol potential on the full 2-shift.
pub fn sft_exact_tail(phi0: f64, phi1: f64, n: usize, s: f64) -> Extended {
    if n == 0 {
        return Extended::Finite(0.0);
    }
    let lf = ln_factorials(n);
    let terms: Vec<f64> = (0..=n)
        .filter(|&k| k as f64 / n as f64 >= s)
        .map(|k| lf[n] - lf[k] - lf[n - k] + k as f64 * phi1 + (n - k) as f64 * phi0)
        .collect();
    if terms.is_empty() {
        return Extended::MinusInfinity;
    }
    let norm = n as f64 * log_sum_exp(&[phi0, phi1]);
    Extended::Finite((log_sum_exp(&terms) - norm) / n as f64)
}

/// `s log(s/p) + (1-s) log((1-s)/(1-p))`: the rate of the frequency of 1s
/// under Bernoulli(`p`), `+inf` off `[0, 1]`.
pub fn bernoulli_rate(p: f64, s: f64) -> Extended {
    if !(0.0..=1.0).contains(&s) {
        return Extended::PlusInfinity;
    }
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    Extended::from_f64(term(s, p) + term(1.0 - s, 1.0 - p))
}

/// Binary itinerary of a point of the unit circle under angle doubling:
/// digit `k` is `⌊2ᵏθ / π⌋ mod 2`, so the upper half-circle `[0, π)` reads
/// 0. Angles within [`DYADIC_SNAP`] of `2πj/2ⁿ` are read exactly from `j`;
/// otherwise an orbit angle within [`ITINERARY_TOLERANCE`] of `0` or `π` is
/// rejected.
pub fn itinerary(z: Complex64, n: usize) -> Result<Vec<u8>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > 62 {
        return Err(Error::InvalidArgument("itineraries are limited to 62 digits".into()));
    }
    let theta = angle(z);
    let cells = (1u64 << n) as f64;
    let t = theta / std::f64::consts::TAU * cells;
    let j = t.round();
    if (t - j).abs() * std::f64::consts::TAU / cells < DYADIC_SNAP {
        let j = (j as u64) % (1u64 << n);
        return Ok((0..n).rev().map(|k| ((j >> k) & 1) as u8).collect());
    }
    let mut word = Vec::with_capacity(n);
    let mut th = theta;
    for _ in 0..n {
        let near = th.min((th - std::f64::consts::PI).abs()).min(std::f64::consts::TAU - th);
        if near < ITINERARY_TOLERANCE {
            return Err(Error::BoundaryItinerary(format!("{z}")));
        }
        word.push(if th < std::f64::consts::PI { 0 } else { 1 });
        th = (2.0 * th) % std::f64::consts::TAU;
    }
    Ok(word)
}

/// Outcome of pushing an ensemble of `z²` through the itinerary map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeReport {
    pub n: usize,
    pub members: usize,
    /// Members rejected as boundary points.
    pub excluded: usize,
    /// No two accepted members share a word.
    pub injective: bool,
    /// `max |#1s(word) - S_n(indicator)|` over accepted members.
    pub frequency_bias: f64,
    /// Upper bound on that bias from the indicator's smoothing, the worst
    /// over members of `Σ_k ½(1 - tanh(|Im T^k z| / width))`.
    pub smoothing_bound: f64,
    /// `max |w(x) / [word(x)] - 1|` between the ensemble weight and the
    /// normalized cylinder weight of the symbol potential.
    pub cylinder_error: f64,
}

/// Compare the ensemble with the full 2-shift: itineraries, symbol counts
/// against the recorded sums of `indicator`, and member weights against
/// cylinder weights `e^{kφ₁+(n-k)φ₀}` normalized over the accepted words.
pub fn circle_bridge(ens: &EmpiricalEnsemble, indicator: &Observable, symbol_potential: [f64; 2]) -> Result<BridgeReport> {
    let width = match indicator.kind {
        crate::potentials::ObservableKind::SymbolIndicator(w) => w,
        _ => return Err(Error::InvalidArgument("the bridge needs a symbol indicator".into())),
    };
    let col = ens.column(indicator)?;
    let n = ens.n;
    let mut words = HashSet::new();
    let mut injective = true;
    let mut excluded = 0;
    let mut bias: f64 = 0.0;
    let mut bound: f64 = 0.0;
    let mut accepted = Vec::new();
    for m in &ens.members {
        let z = match m.start {
            SpherePoint::Finite(z) if (z.norm() - 1.0).abs() < 1e-6 => z,
            _ => {
                excluded += 1;
                continue;
            }
        };
        let word = match itinerary(z, n) {
            Ok(w) => w,
            Err(Error::BoundaryItinerary(_)) => {
                excluded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let ones = word.iter().filter(|&&d| d == 1).count();
        bias = bias.max((ones as f64 - m.birkhoff_sums[col]).abs());
        let mut b = KahanSum::new();
        let mut w = z;
        for _ in 0..n {
            b.add(0.5 * (1.0 - (w.im.abs() / width).tanh()));
            w = w * w;
        }
        bound = bound.max(b.value());
        injective &= words.insert(word);
        let [p0, p1] = symbol_potential;
        accepted.push((m.weight_log, ones as f64 * p1 + (n - ones) as f64 * p0));
    }
    let logs: Vec<f64> = accepted.iter().map(|a| a.1).collect();
    let lz = log_sum_exp(&logs);
    let cylinder_error = accepted.iter().map(|(w, c)| ((w - (c - lz)).exp() - 1.0).abs()).fold(0.0, f64::max);
    Ok(BridgeReport {
        n,
        members: ens.members.len(),
        excluded,
        injective,
        frequency_bias: bias,
        smoothing_bound: bound,
        cylinder_error,
    })
}
