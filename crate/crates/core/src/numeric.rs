//! Compensated summation, log-domain accumulation and extended reals.

use std::fmt;

use serde::{Serialize, Serializer};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub const fn new() -> Self {
        KahanSum { sum: 0.0, comp: 0.0 }
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Streaming `log Σ exp(xᵢ)`.
///
/// Terms are rescaled against the running maximum, so the result only depends
/// on the order in which terms arrive. Callers that need reproducible output
/// feed terms in a fixed order.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled: KahanSum,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub const fn new() -> Self {
        LogSumExp { max: f64::NEG_INFINITY, scaled: KahanSum::new() }
    }

    pub fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.scaled.add((x - self.max).exp());
        } else {
            let factor = (self.max - x).exp();
            let old = self.scaled.value();
            self.scaled = KahanSum::new();
            self.scaled.add(old * factor);
            self.scaled.add(1.0);
            self.max = x;
        }
    }

    pub fn merge(&mut self, other: &LogSumExp) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        let v = other.value();
        self.add(v);
    }

    /// `log Σ exp(xᵢ)`, or `-inf` when nothing was added.
    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.value().ln()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.max == f64::NEG_INFINITY
    }
}

/// Two-pass `log Σ exp(xᵢ)` over a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() {
        return max;
    }
    let s: KahanSum = xs.iter().map(|&x| (x - max).exp()).collect();
    max + s.value().ln()
}

/// A real number or one of the two infinities, kept as an explicit marker so
/// that empty sums never masquerade as large negative floats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    Finite(f64),
    PlusInfinity,
    MinusInfinity,
}

impl Extended {
    pub fn from_f64(x: f64) -> Self {
        if x == f64::INFINITY {
            Extended::PlusInfinity
        } else if x == f64::NEG_INFINITY {
            Extended::MinusInfinity
        } else {
            Extended::Finite(x)
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(x) => Some(x),
            _ => None,
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Extended::Finite(x) => x,
            Extended::PlusInfinity => f64::INFINITY,
            Extended::MinusInfinity => f64::NEG_INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }
}

impl fmt::Display for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extended::Finite(x) => f.write_str(&fmt_f64(*x)),
            Extended::PlusInfinity => f.write_str("+inf"),
            Extended::MinusInfinity => f.write_str("-inf"),
        }
    }
}

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Extended::Finite(x) => s.serialize_f64(*x),
            Extended::PlusInfinity => s.serialize_str("+inf"),
            Extended::MinusInfinity => s.serialize_str("-inf"),
        }
    }
}

/// Float formatting used for every CSV: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "+inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Ordinary least squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
