//! Truncated Taylor expansions ("jets") with complex coefficients.
//!
//! A `Jet` holds the coefficients of a function expanded at a base point,
//! `f(t0 + ε) = Σ_k c[k] ε^k`, truncated at a fixed order. Products, quotients
//! and integer powers propagate derivatives exactly, which is how raw moments
//! of teleportation times are extracted from MGF factors without finite
//! differencing.

use num_complex::Complex64;

pub const MAX_ORDER: usize = 15;
const LEN: usize = MAX_ORDER + 1;

#[derive(Clone, Copy, Debug)]
pub struct Jet {
    c: [Complex64; LEN],
    /// number of active coefficients (order + 1)
    n: usize,
}

impl Jet {
    pub fn zero(order: usize) -> Self {
        assert!(order <= MAX_ORDER);
        Jet {
            c: [Complex64::default(); LEN],
            n: order + 1,
        }
    }

    pub fn constant(value: Complex64, order: usize) -> Self {
        let mut j = Jet::zero(order);
        j.c[0] = value;
        j
    }

    /// The identity ε ↦ t0 + ε as a jet at t0.
    pub fn variable(t0: Complex64, order: usize) -> Self {
        let mut j = Jet::constant(t0, order);
        if order >= 1 {
            j.c[1] = Complex64::new(1.0, 0.0);
        }
        j
    }

    pub fn order(&self) -> usize {
        self.n - 1
    }

    pub fn coeff(&self, k: usize) -> Complex64 {
        self.c[k]
    }

    pub fn set_coeff(&mut self, k: usize, v: Complex64) {
        self.c[k] = v;
    }

    /// k-th derivative at the base point, i.e. k! · c[k].
    pub fn derivative(&self, k: usize) -> Complex64 {
        let mut fact = 1.0;
        for i in 2..=k {
            fact *= i as f64;
        }
        self.c[k] * fact
    }

    pub fn add(&self, rhs: &Jet) -> Jet {
        let mut out = *self;
        for k in 0..self.n {
            out.c[k] += rhs.c[k];
        }
        out
    }

    pub fn sub(&self, rhs: &Jet) -> Jet {
        let mut out = *self;
        for k in 0..self.n {
            out.c[k] -= rhs.c[k];
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> Jet {
        let mut out = *self;
        for k in 0..self.n {
            out.c[k] *= s;
        }
        out
    }

    pub fn mul(&self, rhs: &Jet) -> Jet {
        let mut out = Jet::zero(self.order());
        for i in 0..self.n {
            if self.c[i] == Complex64::default() {
                continue;
            }
            for j in 0..self.n - i {
                out.c[i + j] += self.c[i] * rhs.c[j];
            }
        }
        out
    }

    /// Series reciprocal; requires a nonzero constant term.
    pub fn recip(&self) -> Jet {
        let a0 = self.c[0];
        assert!(a0.norm() > 0.0, "jet reciprocal with zero constant term");
        let mut out = Jet::zero(self.order());
        out.c[0] = 1.0 / a0;
        for k in 1..self.n {
            let mut acc = Complex64::default();
            for i in 1..=k {
                acc += self.c[i] * out.c[k - i];
            }
            out.c[k] = -acc / a0;
        }
        out
    }

    pub fn div(&self, rhs: &Jet) -> Jet {
        self.mul(&rhs.recip())
    }

    pub fn powi(&self, mut e: u32) -> Jet {
        let mut base = *self;
        let mut acc = Jet::constant(Complex64::new(1.0, 0.0), self.order());
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    /// Jet of exp(a·(u0 + ε)) in ε.
    pub fn exp_affine(a: f64, u0: Complex64, order: usize) -> Jet {
        let mut out = Jet::zero(order);
        let head = (a * u0).exp();
        let mut term = head;
        out.c[0] = term;
        for k in 1..=order {
            term *= Complex64::new(a, 0.0) / k as f64;
            out.c[k] = term;
        }
        out
    }

    /// Jet of rate/(rate − (u0 + ε)) in ε, the exponential-MGF kernel.
    pub fn exp_rate_kernel(rate: f64, u0: Complex64, order: usize) -> Jet {
        let d = Complex64::new(rate, 0.0) - u0;
        let mut out = Jet::zero(order);
        let mut term = Complex64::new(rate, 0.0) / d;
        out.c[0] = term;
        for k in 1..=order {
            term /= d;
            out.c[k] = term;
        }
        out
    }
}
