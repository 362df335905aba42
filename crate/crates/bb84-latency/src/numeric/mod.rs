//! Shared numeric machinery: quadrature, truncated Taylor jets, and a
//! scaled-complex representation for overflow-safe intermediate products.

pub mod jet;
pub mod quad;

use num_complex::Complex64;

/// A complex number stored as `mantissa · exp(log_scale)`.
///
/// Intermediate factors in the half-plane sums span hundreds of orders of
/// magnitude individually while their products stay moderate; carrying the
/// exponent separately keeps every step inside f64 range.
#[derive(Debug, Clone, Copy)]
pub struct ScaledComplex {
    pub mantissa: Complex64,
    pub log_scale: f64,
}

impl ScaledComplex {
    pub fn new(mantissa: Complex64, log_scale: f64) -> Self {
        ScaledComplex {
            mantissa,
            log_scale,
        }
    }

    pub fn from_complex(v: Complex64) -> Self {
        ScaledComplex {
            mantissa: v,
            log_scale: 0.0,
        }
    }

    /// Renormalise so the mantissa has magnitude near 1.
    pub fn normalized(self) -> Self {
        let m = self.mantissa.norm();
        if m == 0.0 || !m.is_finite() {
            return self;
        }
        let shift = m.ln();
        ScaledComplex {
            mantissa: self.mantissa / m,
            log_scale: self.log_scale + shift,
        }
    }

    pub fn mul(self, rhs: ScaledComplex) -> Self {
        ScaledComplex {
            mantissa: self.mantissa * rhs.mantissa,
            log_scale: self.log_scale + rhs.log_scale,
        }
        .normalized()
    }

    pub fn to_complex(self) -> Complex64 {
        if self.mantissa == Complex64::default() {
            return Complex64::default();
        }
        self.mantissa * self.log_scale.exp()
    }
}

/// Natural log of the gamma function (real argument), via `statrs`.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Compensated (Kahan) summation helper for long real accumulations.
#[derive(Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}
