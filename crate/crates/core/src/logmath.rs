//! Overflow-safe arithmetic on products of powers and factorials.
//!
//! Binomial weights and coherent-state factors `z^n / sqrt(n!)` overflow
//! double precision long before the physically interesting regimes (N = 200
//! atoms, tens of photons). Everything here keeps a log-magnitude and a phase
//! separately and only exponentiates after a common maximum has been removed.

use num_complex::Complex64;
use statrs::function::factorial::ln_factorial;

/// A complex number stored as `exp(ln_mag) * exp(i * phase)`.
///
/// Zero is represented by `ln_mag = -inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogComplex {
    pub ln_mag: f64,
    pub phase: f64,
}

impl LogComplex {
    pub const ONE: LogComplex = LogComplex {
        ln_mag: 0.0,
        phase: 0.0,
    };

    pub fn from_complex(z: Complex64) -> Self {
        let r = z.norm();
        if r == 0.0 {
            Self {
                ln_mag: f64::NEG_INFINITY,
                phase: 0.0,
            }
        } else {
            Self {
                ln_mag: r.ln(),
                phase: z.arg(),
            }
        }
    }

    pub fn from_real_ln(ln_mag: f64) -> Self {
        Self { ln_mag, phase: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.ln_mag == f64::NEG_INFINITY
    }

    /// `self^n` with the convention `0^0 = 1`.
    pub fn powi(self, n: usize) -> Self {
        if n == 0 {
            return Self::ONE;
        }
        if self.is_zero() {
            return self;
        }
        let nf = n as f64;
        Self {
            ln_mag: nf * self.ln_mag,
            phase: nf * self.phase,
        }
    }

    pub fn mul(self, other: Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self {
                ln_mag: f64::NEG_INFINITY,
                phase: 0.0,
            };
        }
        Self {
            ln_mag: self.ln_mag + other.ln_mag,
            phase: self.phase + other.phase,
        }
    }

    pub fn conj(self) -> Self {
        Self {
            ln_mag: self.ln_mag,
            phase: -self.phase,
        }
    }

    /// `exp(ln_mag - shift) * exp(i phase)`.
    pub fn to_complex_shifted(self, shift: f64) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar((self.ln_mag - shift).exp(), self.phase)
    }

    pub fn to_complex(self) -> Complex64 {
        self.to_complex_shifted(0.0)
    }
}

pub fn ln_fact(n: usize) -> f64 {
    ln_factorial(n as u64)
}

/// `ln C(n, k)`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    ln_fact(n) - ln_fact(k) - ln_fact(n - k)
}

/// `z^n / sqrt(n!)` in log form.
pub fn coherent_factor(z: Complex64, n: usize) -> LogComplex {
    let p = LogComplex::from_complex(z).powi(n);
    LogComplex {
        ln_mag: p.ln_mag - 0.5 * ln_fact(n),
        phase: p.phase,
    }
}

/// Largest finite log-magnitude, or `None` if every entry is zero.
pub fn max_ln_mag(values: &[LogComplex]) -> Option<f64> {
    values
        .iter()
        .filter(|v| !v.is_zero())
        .map(|v| v.ln_mag)
        .fold(None, |acc, x| Some(acc.map_or(x, |a: f64| a.max(x))))
}

/// Exponentiates a log-form vector and scales it to unit Euclidean norm.
/// Returns `None` when every entry is zero.
pub fn normalize_log_vector(values: &[LogComplex]) -> Option<Vec<Complex64>> {
    let shift = max_ln_mag(values)?;
    let mut out: Vec<Complex64> = values.iter().map(|v| v.to_complex_shifted(shift)).collect();
    let norm = out.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in &mut out {
        *z /= norm;
    }
    Some(out)
}

/// `ln(sum_i exp(x_i))`, ignoring `-inf` entries.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().filter(|x| *x > f64::NEG_INFINITY).collect();
    let Some(m) = xs.iter().copied().reduce(f64::max) else {
        return f64::NEG_INFINITY;
    };
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
