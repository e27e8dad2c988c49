//! Simultaneous polynomial root finding (Aberth–Ehrlich) with Newton polish.

use num_complex::Complex64;

/// Iteration cap for the simultaneous phase.
pub const ABERTH_MAX_ITER: usize = 200;

const NEWTON_POLISH_STEPS: usize = 8;

#[inline]
fn horner(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Degree after dropping leading coefficients that are negligible relative to
/// the largest one.
pub fn effective_degree(coeffs: &[Complex64]) -> usize {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0;
    }
    let mut deg = coeffs.len() - 1;
    while deg > 0 && coeffs[deg].norm() <= 1e-14 * scale {
        deg -= 1;
    }
    deg
}

/// All roots of `Σ coeffs[k] zᵏ` (ascending order), counted with multiplicity.
///
/// The returned vector has `effective_degree(coeffs)` entries. `converged`
/// reports whether the simultaneous phase met its tolerance before the cap.
pub fn aberth(coeffs: &[Complex64]) -> (Vec<Complex64>, bool) {
    let deg = effective_degree(coeffs);
    if deg == 0 {
        return (Vec::new(), true);
    }
    let lead = coeffs[deg];
    let monic: Vec<Complex64> = coeffs[..=deg].iter().map(|c| c / lead).collect();

    if deg == 1 {
        return (vec![-monic[0]], true);
    }
    if deg == 2 {
        return (quadratic(monic[1], monic[0]).to_vec(), true);
    }

    // Cauchy-type radius for the initial circle.
    let mut radius: f64 = 0.0;
    for (k, c) in monic[..deg].iter().enumerate() {
        let r = c.norm().powf(1.0 / (deg - k) as f64);
        radius = radius.max(r);
    }
    if radius == 0.0 {
        return (vec![Complex64::new(0.0, 0.0); deg], true);
    }

    let mut z: Vec<Complex64> = (0..deg)
        .map(|j| {
            let angle = std::f64::consts::TAU * j as f64 / deg as f64 + 0.4;
            Complex64::from_polar(radius, angle)
        })
        .collect();

    let mut converged = false;
    for _ in 0..ABERTH_MAX_ITER {
        let mut worst: f64 = 0.0;
        for i in 0..deg {
            let (p, dp) = horner(&monic, z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let mut repulsion = Complex64::new(0.0, 0.0);
            for j in 0..deg {
                if j != i {
                    let diff = z[i] - z[j];
                    if diff.norm() > 0.0 {
                        repulsion += diff.inv();
                    }
                }
            }
            let offset = if dp.norm() == 0.0 {
                // stationary point of p: push off along the repulsion
                Complex64::new(radius * 1e-3, radius * 1e-3)
            } else {
                let ratio = p / dp;
                ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion)
            };
            if !offset.re.is_finite() || !offset.im.is_finite() {
                continue;
            }
            z[i] -= offset;
            worst = worst.max(offset.norm() / z[i].norm().max(1.0));
        }
        if worst <= 4.0 * f64::EPSILON {
            converged = true;
            break;
        }
    }

    for r in z.iter_mut() {
        *r = newton_polish(&monic, *r);
    }
    (z, converged)
}

/// Roots of `w² + b w + c`, avoiding cancellation, then Newton-polished.
fn quadratic(b: Complex64, c: Complex64) -> [Complex64; 2] {
    let disc = (b * b - 4.0 * c).sqrt();
    // pick the sign that makes |q| large
    let q = if (b.conj() * disc).re >= 0.0 { -0.5 * (b + disc) } else { -0.5 * (b - disc) };
    let coeffs = [c, b, Complex64::new(1.0, 0.0)];
    if q.norm() == 0.0 {
        return [Complex64::new(0.0, 0.0); 2];
    }
    let r1 = q;
    let r2 = c / q;
    [newton_polish(&coeffs, r1), newton_polish(&coeffs, r2)]
}

/// A few Newton steps, stopping as soon as the step stops shrinking.
pub fn newton_polish(coeffs: &[Complex64], mut z: Complex64) -> Complex64 {
    let mut last_step = f64::INFINITY;
    for _ in 0..NEWTON_POLISH_STEPS {
        let (p, dp) = horner(coeffs, z);
        if p.norm() == 0.0 || dp.norm() == 0.0 {
            break;
        }
        let step = p / dp;
        let size = step.norm();
        if !(size < last_step) || !size.is_finite() {
            break;
        }
        z -= step;
        last_step = size;
        if size <= f64::EPSILON * z.norm().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    z
}

/// Value and derivative of a polynomial (ascending coefficients).
pub fn eval_with_derivative(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    horner(coeffs, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn quadratic_roots() {
        // w² - 2
        let (r, ok) = aberth(&[c(-2.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(ok);
        let r = sorted(r);
        assert!((r[0] - c(-2f64.sqrt(), 0.0)).norm() < 1e-15);
        assert!((r[1] - c(2f64.sqrt(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn roots_of_unity_degree_seven() {
        let mut coeffs = vec![c(0.0, 0.0); 8];
        coeffs[0] = c(-1.0, 0.0);
        coeffs[7] = c(1.0, 0.0);
        let (r, ok) = aberth(&coeffs);
        assert!(ok);
        assert_eq!(r.len(), 7);
        for z in &r {
            assert!((z.powi(7) - c(1.0, 0.0)).norm() < 1e-13);
        }
        for i in 0..7 {
            for j in 0..i {
                assert!((r[i] - r[j]).norm() > 0.5);
            }
        }
    }

    #[test]
    fn double_root_at_zero() {
        let (r, _) = aberth(&[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(r, vec![c(0.0, 0.0); 2]);
    }

    #[test]
    fn leading_zero_drops_degree() {
        let coeffs = [c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)];
        assert_eq!(effective_degree(&coeffs), 1);
        let (r, _) = aberth(&coeffs);
        assert_eq!(r, vec![c(1.0, 0.0)]);
    }

    #[test]
    fn wilkinson_like_cubic() {
        // (w-1)(w-2)(w-3) = w³ - 6w² + 11w - 6
        let (r, ok) = aberth(&[c(-6.0, 0.0), c(11.0, 0.0), c(-6.0, 0.0), c(1.0, 0.0)]);
        assert!(ok);
        let r = sorted(r);
        for (k, z) in r.iter().enumerate() {
            assert!((z - c(k as f64 + 1.0, 0.0)).norm() < 1e-12);
        }
    }
}
