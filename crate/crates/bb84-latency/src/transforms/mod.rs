//! Complex-argument numeric kernel: shifted-exponential and Erlang MGFs, the
//! half-plane expectations feeding I(t, s), and numerical inverse Laplace
//! transforms for CDFs.

pub mod halfplane;
pub mod ilt;

pub use halfplane::{HalfPlaneEngine, HalfPlaneSum, LinkKernel};
pub use ilt::{invert_laplace_cdf, invert_laplace_cdf_gated, IltMethod};

use crate::numeric::{ln_gamma, ScaledComplex};
use crate::rus::MgfEvaluator;
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Shifted exponential SE(λ, a): a deterministic delay `a` plus an
/// exponential with rate `λ`. Every atomic protocol phase is modelled this
/// way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedExp {
    pub rate: f64,
    pub shift: f64,
}

impl ShiftedExp {
    pub fn new(rate: f64, shift: f64) -> Result<Self> {
        if !(rate > 0.0) || !(shift >= 0.0) {
            return Err(Error::Parameter(format!(
                "shifted exponential needs rate > 0 and shift ≥ 0, got SE({rate}, {shift})"
            )));
        }
        Ok(ShiftedExp { rate, shift })
    }

    pub fn mean(&self) -> f64 {
        self.shift + 1.0 / self.rate
    }

    /// MGF formula e^{ta}·λ/(λ−t). As an expectation it is finite only for
    /// Re(t) < λ (the evaluator's abscissa), but the formula itself is the
    /// meromorphic continuation, which Talbot contours rely on; only the
    /// pole is rejected.
    pub fn mgf(&self, t: Complex64) -> Result<Complex64> {
        let lam = Complex64::new(self.rate, 0.0);
        if (lam - t).norm() < 1e-300 {
            return Err(Error::Divergent { at: t.re });
        }
        Ok((t * self.shift).exp() * lam / (lam - t))
    }

    pub fn mgf_evaluator(&self) -> MgfEvaluator {
        let se = *self;
        MgfEvaluator::new(se.rate, move |t| se.mgf(t))
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        self.shift - u.ln() / self.rate
    }

    /// CDF, zero below the shift.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.shift {
            0.0
        } else {
            1.0 - (-(x - self.shift) * self.rate).exp()
        }
    }
}

/// One side of a heralded-link comparison after conditioning on the number of
/// failed generation rounds: `trials + 1` generation phases plus `trials`
/// communication phases, i.e. a deterministic shift plus independent
/// integer-shape Gamma (Erlang) variables. Integer shapes keep the tail
/// integrals in closed form.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedErlangPair {
    pub gen: ShiftedExp,
    pub com: ShiftedExp,
    /// failed rounds preceding the heralded success
    pub trials: u32,
}

impl ShiftedErlangPair {
    pub fn new(gen: ShiftedExp, com: ShiftedExp, trials: u32) -> Self {
        ShiftedErlangPair { gen, com, trials }
    }

    /// Total deterministic shift (l+1)·a_gen + l·a_com.
    pub fn shift(&self) -> f64 {
        (self.trials + 1) as f64 * self.gen.shift + self.trials as f64 * self.com.shift
    }

    pub fn gen_shape(&self) -> u32 {
        self.trials + 1
    }

    pub fn com_shape(&self) -> u32 {
        self.trials
    }

    /// Whether the gamma part collapses to a single Erlang (equal rates).
    pub fn single_erlang(&self) -> bool {
        self.com_shape() == 0
            || (self.gen.rate - self.com.rate).abs()
                <= 1e-12 * self.gen.rate.max(self.com.rate)
    }
}

/// ∫_x^∞ e^{−c·y} · rate^m y^{m−1} e^{−rate·y} / Γ(m) dy for integer shape m,
/// evaluated by the finite Erlang tail sum
/// e^{−(c+rate)x} Σ_{j<m} rate^m/(c+rate)^{m−j} · x^j/j!  (exact).
///
/// Returned in scaled form; the magnitude spans hundreds of orders for the
/// large shapes reached by the half-plane sums.
pub fn erlang_tail_sum_scaled(
    shape: u32,
    rate: f64,
    c: Complex64,
    x: f64,
) -> Result<ScaledComplex> {
    if shape == 0 {
        // empty component: point mass at zero
        return Ok(if x <= 0.0 {
            ScaledComplex::from_complex(Complex64::new(1.0, 0.0))
        } else {
            ScaledComplex::from_complex(Complex64::default())
        });
    }
    let cr = Complex64::new(rate, 0.0) + c;
    if cr.re <= 0.0 {
        return Err(Error::Domain(format!(
            "erlang tail needs Re(c) + rate > 0, got {}",
            cr.re
        )));
    }
    let x = x.max(0.0);
    let m = shape as usize;
    // log of the leading ratio (rate/(rate+c))^m
    let log_ratio = m as f64 * (rate.ln() - cr.norm().ln());
    let phase0 = Complex64::new(0.0, -(m as f64) * cr.arg()).exp();
    // forward recurrence over the truncated exponential series
    let mut term = phase0;
    let mut sum = term;
    let mut scale = log_ratio;
    let zr = cr * x;
    for j in 1..m {
        term = term * zr / j as f64;
        sum += term;
        let mag = sum.norm().max(term.norm());
        if mag > 1e250 {
            sum /= mag;
            term /= mag;
            scale += mag.ln();
        }
    }
    // e^{−(rate+c)x} prefix: real part into the scale, imaginary into phase
    let prefix_phase = Complex64::new(0.0, -cr.im * x).exp();
    Ok(ScaledComplex::new(sum * prefix_phase, scale - cr.re * x).normalized())
}

/// Convenience wrapper returning a plain complex value.
pub fn erlang_tail_sum(shape: u32, rate: f64, c: Complex64, x: f64) -> Result<Complex64> {
    Ok(erlang_tail_sum_scaled(shape, rate, c, x)?.to_complex())
}

/// ln of the Erlang density value rate^m x^{m−1} e^{−rate x}/Γ(m), for x > 0.
pub(crate) fn erlang_log_density(shape: u32, rate: f64, x: f64) -> f64 {
    let m = shape as f64;
    m * rate.ln() + (m - 1.0) * x.ln() - rate * x - ln_gamma(m)
}
