use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermo_core::sft::{
    bernoulli_rate, sft_entropy, sft_equilibrium, sft_exact_tail, sft_pressure, sft_qstar, MarkovMeasure, WeightedSft,
};

/// Stationary vector of a stochastic matrix by lazy power iteration.
fn stationary(pi: &[Vec<f64>]) -> Vec<f64> {
    let m = pi.len();
    let mut p = vec![1.0 / m as f64; m];
    for _ in 0..200_000 {
        let next: Vec<f64> = (0..m).map(|b| 0.5 * p[b] + 0.5 * (0..m).map(|a| p[a] * pi[a][b]).sum::<f64>()).collect();
        let s: f64 = next.iter().sum();
        let next: Vec<f64> = next.iter().map(|x| x / s).collect();
        let delta = next.iter().zip(&p).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        p = next;
        if delta < 1e-17 {
            break;
        }
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn variational_identity(seed in any::<u64>(), m in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sft = WeightedSft::random(&mut rng, m);
        let p = sft_pressure(&sft).unwrap();
        let mu = sft_equilibrium(&sft).unwrap();
        let gap = p - sft_entropy(&mu) - mu.integrate(&sft.potential);
        prop_assert!(gap.abs() < 1e-12, "gap {:e}", gap);
        prop_assert!(sft_qstar(&sft, &mu).unwrap().abs() < 1e-12);
    }
}

#[test]
fn equilibrium_is_a_strict_minimum_of_qstar_along_a_star() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for m in 2..=4 {
        let sft = loop {
            let s = WeightedSft::random(&mut rng, m);
            // need rows with at least two successors to perturb
            if s.transitions.iter().any(|r| r.iter().filter(|&&a| a == 1).count() >= 2) {
                break s;
            }
        };
        let eq = sft_equilibrium(&sft).unwrap();
        let mut directions = 0;
        while directions < 10 {
            let e: Vec<Vec<f64>> = (0..m)
                .map(|a| {
                    let allowed: Vec<usize> = (0..m).filter(|&b| sft.allowed(a, b)).collect();
                    let mut row = vec![0.0; m];
                    for &b in &allowed {
                        row[b] = rng.gen_range(-1.0..1.0);
                    }
                    let mean = allowed.iter().map(|&b| row[b]).sum::<f64>() / allowed.len() as f64;
                    for &b in &allowed {
                        row[b] -= mean;
                    }
                    row
                })
                .collect();
            if e.iter().flatten().all(|x| x.abs() < 1e-3) {
                continue;
            }
            directions += 1;
            let mut last = 0.0;
            for t in [0.0, 0.01, 0.03, 0.1] {
                let pi: Vec<Vec<f64>> =
                    eq.transition.iter().zip(&e).map(|(r, d)| r.iter().zip(d).map(|(x, y)| (x + t * y).max(0.0)).collect()).collect();
                let pi: Vec<Vec<f64>> = pi.iter().map(|r| { let s: f64 = r.iter().sum(); r.iter().map(|x| x / s).collect() }).collect();
                let mu = MarkovMeasure::new(stationary(&pi), pi).unwrap();
                let q = sft_qstar(&sft, &mu).unwrap();
                if t == 0.0 {
                    assert!(q.abs() < 1e-12);
                } else {
                    assert!(q > last, "m={m} t={t}: {q} after {last}");
                }
                last = q;
            }
        }
    }
}

#[test]
fn exact_tails_converge_to_the_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (phi0, phi1) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let p1 = f64::exp(phi1) / (f64::exp(phi0) + f64::exp(phi1));
        for n in [16usize, 20, 24] {
            for k in 1..=20 {
                let s = k as f64 / 20.0;
                let target = if s <= p1 { 0.0 } else { bernoulli_rate(p1, s).to_f64() };
                let got = -sft_exact_tail(phi0, phi1, n, s).to_f64();
                let gap = 3.0 / n as f64 * (n as f64).ln();
                assert!((got - target).abs() <= gap, "n={n} s={s} p1={p1}: {got} vs {target}");
            }
        }
    }
}
