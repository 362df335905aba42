//! Elementary communication modules.
//!
//! Two standalone applications of the repeat-until-success algebra: a
//! closed-form tail bound for a geometric compound whose trial duration is
//! the maximum of two IID exponentials (with the explicit optimiser t*(s)
//! and its eventually-sharper-rate comparison), and the diff-time cut-off
//! swap policy where the two link completion times are gamma-approximated
//! by moment matching and the swap only fires when they differ by at most a
//! threshold.

use crate::numeric::quad;
use crate::rus::{self, MgfEvaluator};
use crate::{Error, Result};
use num_complex::Complex64;
use statrs::function::gamma::{gamma_lr, ln_gamma};

/// Parameters of the max-of-two-exponentials geometric compound: trial
/// duration X = max{T₁, T₂} with T_i IID Exp(λ), success probability `p`
/// independent of the trial.
#[derive(Debug, Clone, Copy)]
pub struct Example1Params {
    pub lambda: f64,
    pub p: f64,
}

impl Example1Params {
    pub fn new(lambda: f64, p: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(p > 0.0 && p < 1.0) {
            return Err(Error::Parameter(format!(
                "Example-1 needs λ > 0 and p in (0,1), got λ={lambda}, p={p}"
            )));
        }
        Ok(Example1Params { lambda, p })
    }

    /// M_X(t) = 2λ² / ((λ−t)(2λ−t)).
    pub fn mgf_x(&self, t: Complex64) -> Complex64 {
        let l = Complex64::new(self.lambda, 0.0);
        2.0 * l * l / ((l - t) * (2.0 * l - t))
    }

    /// Convergence abscissa of the compound: b' = λ(3 − √(9−8p))/2.
    pub fn abscissa(&self) -> f64 {
        self.lambda * (3.0 - (9.0 - 8.0 * self.p).sqrt()) / 2.0
    }

    /// E[X] = 3/(2λ).
    pub fn mean_x(&self) -> f64 {
        1.5 / self.lambda
    }

    /// MGF of the completion time W = Σ₁^N X_k, N ~ Geo(p).
    pub fn mgf_w(&self, t: Complex64) -> Result<Complex64> {
        let m = self.mgf_x(t);
        if t.im == 0.0 {
            let cond = (1.0 - self.p) * self.mgf_x(Complex64::new(t.re, 0.0)).re;
            if t.re >= self.lambda || cond >= 1.0 {
                return Err(Error::Divergent { at: t.re });
            }
        }
        Ok(self.p * m / (Complex64::new(1.0, 0.0) - (1.0 - self.p) * m))
    }

    /// The optimiser of the closed-form Chernoff bound:
    /// t*(s) = max{0, (3λs − 2 − √(4 + λ²s²(9−8p)))/(2s)}.
    pub fn t_star(&self, s: f64) -> f64 {
        let l = self.lambda;
        let disc = (4.0 + l * l * s * s * (9.0 - 8.0 * self.p)).sqrt();
        ((3.0 * l * s - 2.0 - disc) / (2.0 * s)).max(0.0)
    }
}

/// Closed-form tail bound on P(W > s):
/// e^{−t*(s)·s} · 2λ²p / (t*² − 3λt* + 2λ²p).
pub fn ex1_bound(params: &Example1Params, s: f64) -> f64 {
    let t = params.t_star(s);
    let l = params.lambda;
    let denom = t * t - 3.0 * l * t + 2.0 * l * l * params.p;
    ((-t * s).exp() * 2.0 * l * l * params.p / denom).min(1.0)
}

/// Whether the bound is eventually sharper than the reference decay rate
/// 2pλ/3, and the explicit crossover point when it is.
///
/// The sharper condition is M_X(p/E(X)) < 1/(1−p); the crossover is
/// s* = (ln E[e^{(b'−ε)W}] − p)/(b'−ε − 2pλ/3) at ε = (b' − 2pλ/3)/2.
pub fn ex1_sharper_condition(params: &Example1Params) -> (bool, f64) {
    let rate_ref = 2.0 * params.p * params.lambda / 3.0;
    let cond = params.mgf_x(Complex64::new(rate_ref, 0.0)).re < 1.0 / (1.0 - params.p);
    if !cond {
        return (false, f64::INFINITY);
    }
    let b = params.abscissa();
    let eps = (b - rate_ref) / 2.0;
    let t = b - eps;
    let mw = params
        .mgf_w(Complex64::new(t, 0.0))
        .expect("t below abscissa")
        .re;
    let crossover = (mw.ln() - params.p) / (t - rate_ref);
    (true, crossover.max(0.0))
}

/// Parameters of the diff-time cut-off policy: link generation attempts and
/// their heralding are both SE(λ, a), each link succeeds per attempt with
/// probability p, and the swap fires only when the two link completion
/// times differ by at most τ.
#[derive(Debug, Clone, Copy)]
pub struct DiffCutoffParams {
    pub lambda: f64,
    pub a: f64,
    pub p: f64,
    pub tau: f64,
}

impl DiffCutoffParams {
    pub fn new(lambda: f64, a: f64, p: f64, tau: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(a >= 0.0) || !(p > 0.0 && p < 1.0) || !(tau > 0.0) {
            return Err(Error::Parameter(
                "diff-cutoff needs λ > 0, a ≥ 0, p in (0,1), τ > 0".into(),
            ));
        }
        Ok(DiffCutoffParams { lambda, a, p, tau })
    }

    /// MGF of one link completion time T:
    /// p·e^{2ta}·λ² / ((λ−t)² − e^{2ta}(1−p)λ²).
    pub fn mgf_t(&self, t: Complex64) -> Result<Complex64> {
        let l = Complex64::new(self.lambda, 0.0);
        let e2 = (2.0 * t * self.a).exp();
        if t.im == 0.0 {
            let cond = (1.0 - self.p)
                * (2.0 * t.re * self.a).exp()
                * (self.lambda / (self.lambda - t.re)).powi(2);
            if t.re >= self.lambda || cond >= 1.0 {
                return Err(Error::Divergent { at: t.re });
            }
        }
        let denom = (l - t) * (l - t) - e2 * (1.0 - self.p) * l * l;
        Ok(self.p * e2 * l * l / denom)
    }

    /// First and second raw moments of T − 2a, from the log-MGF of the
    /// geometric compound.
    pub fn centered_moments(&self) -> (f64, f64) {
        let q = self.a * self.lambda * (1.0 - self.p);
        let mean = 2.0 * (q + 1.0) / (self.lambda * self.p);
        let var = 2.0
            * (2.0 * (q + 1.0) * (q + 1.0)
                - self.p
                    * (1.0
                        - 2.0 * self.a * self.a * self.lambda * self.lambda * (1.0 - self.p)))
            / (self.lambda * self.lambda * self.p * self.p);
        (mean, var + mean * mean)
    }
}

/// Closed-form gamma fit (shape k', scale θ') of T − 2a by moment matching.
///
/// The stated positivity condition a·λ·(1−p) < 1 is kept as part of the
/// contract even though the mean-consistent scale denominator 1 + aλ(1−p)
/// keeps the formulas positive on the whole parameter box.
pub fn diffco_fit(params: &DiffCutoffParams) -> Result<(f64, f64)> {
    let q = params.a * params.lambda * (1.0 - params.p);
    if q >= 1.0 {
        return Err(Error::Parameter(format!(
            "gamma fit needs a·λ·(1−p) < 1, got {q}"
        )));
    }
    let core = 2.0 * (q + 1.0) * (q + 1.0)
        - params.p
            * (1.0 - 2.0 * params.a * params.a * params.lambda * params.lambda * (1.0 - params.p));
    let k = 2.0 * (q + 1.0) * (q + 1.0) / core;
    let theta = core / (params.lambda * params.p * (1.0 + q));
    Ok((k, theta))
}

/// Gamma(k, scale θ) density.
fn gamma_density(k: f64, theta: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ((k - 1.0) * x.ln() - x / theta - ln_gamma(k) - k * theta.ln()).exp()
}

fn reg_lower(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(k, x)
    }
}

/// The split MGF terms of the cut-off policy under the gamma approximation:
/// m_in = 2∫∫_{x<y≤x+τ} e^{t(y+2a)} g(y) g(x) dy dx and m_out over
/// y > x + τ. Real t reduces the inner integral to incomplete-gamma
/// differences by exponential tilting; complex t uses nested adaptive
/// quadrature.
pub fn diffco_mgf_terms(
    params: &DiffCutoffParams,
    fit: (f64, f64),
    t: Complex64,
) -> Result<(Complex64, Complex64)> {
    let (k, theta) = fit;
    // past ~0.995/θ the exponential tilt is numerically meaningless (and
    // the true expectation diverges at 1/θ anyway)
    if t.re >= 0.995 / theta {
        return Err(Error::Divergent { at: t.re });
    }
    let shift = (2.0 * t * params.a).exp();
    let tau = params.tau;
    let hi = integration_limit(k, theta, t.re);
    if t.im == 0.0 {
        // e^{ty}·g_{k,θ}(y) = (1−tθ)^{−k}·g_{k,θ_t}(y) with θ_t = θ/(1−tθ)
        let tr = t.re;
        let tilt = (1.0 - tr * theta).powf(-k);
        let theta_t = theta / (1.0 - tr * theta);
        let f_in = |x: f64| {
            let inner = tilt * (reg_lower(k, (x + tau) / theta_t) - reg_lower(k, x / theta_t));
            Complex64::new(gamma_density(k, theta, x) * inner, 0.0)
        };
        let f_out = |x: f64| {
            let inner = tilt * (1.0 - reg_lower(k, (x + tau) / theta_t));
            Complex64::new(gamma_density(k, theta, x) * inner, 0.0)
        };
        let m_in = 2.0 * quad::integrate(&f_in, 0.0, hi, 1e-12, 2048).value.re;
        let m_out = 2.0 * quad::integrate(&f_out, 0.0, hi, 1e-12, 2048).value.re;
        Ok((shift * m_in, shift * m_out))
    } else {
        let f_in = |x: f64| {
            let inner = |y: f64| (t * y).exp() * gamma_density(k, theta, y);
            let r = quad::integrate(&inner, x, x + tau, 1e-12, 256);
            r.value * gamma_density(k, theta, x)
        };
        let f_out = |x: f64| {
            let inner = |y: f64| (t * y).exp() * gamma_density(k, theta, y);
            let r = quad::integrate(&inner, x + tau, hi.max(x + tau + 1.0), 1e-12, 256);
            r.value * gamma_density(k, theta, x)
        };
        let m_in = quad::integrate(&f_in, 0.0, hi, 1e-10, 1024).value * 2.0;
        let m_out = quad::integrate(&f_out, 0.0, hi, 1e-10, 1024).value * 2.0;
        Ok((shift * m_in, shift * m_out))
    }
}

fn integration_limit(k: f64, theta: f64, t_re: f64) -> f64 {
    let eff_rate = (1.0 / theta - t_re.max(0.0)).max(1e-12);
    k * theta + 60.0 * (1.0 / eff_rate).max(theta) * (1.0 + k.sqrt())
}

/// MGF of the time until the swap fires: m_in/(1 − m_out).
pub fn diffco_mgf_w(params: &DiffCutoffParams, t: Complex64) -> Result<Complex64> {
    let fit = diffco_fit(params)?;
    let (m_in, m_out) = diffco_mgf_terms(params, fit, t)?;
    if m_out.norm() >= 1.0 {
        return Err(Error::Divergent { at: t.re });
    }
    Ok(m_in / (Complex64::new(1.0, 0.0) - m_out))
}

/// Chernoff bound for the cut-off completion time, with the abscissa
/// located on the gamma-approximated MGF.
pub fn diffco_chernoff(params: &DiffCutoffParams, s: f64, grid_size: usize) -> Result<f64> {
    let b = diffco_abscissa(params)?;
    let p = *params;
    let mgf = MgfEvaluator::new(b, move |t| diffco_mgf_w(&p, t));
    rus::chernoff_bound(&mgf, s, grid_size)
}

/// sup{t ≥ 0 : m_out(t) < 1 and the gamma-pair integrals converge}.
pub fn diffco_abscissa(params: &DiffCutoffParams) -> Result<f64> {
    let fit = diffco_fit(params)?;
    let cap = (1.0 / fit.1) * (1.0 - 1e-9);
    let ok = |t: f64| match diffco_mgf_terms(params, fit, Complex64::new(t, 0.0)) {
        Ok((_, m_out)) => m_out.re < 1.0,
        Err(_) => false,
    };
    let mut probe = cap;
    let mut iter = 0;
    while !ok(probe) {
        probe *= 0.5;
        iter += 1;
        if iter > 200 {
            return Err(Error::Domain("no convergent cut-off abscissa found".into()));
        }
    }
    if probe == cap {
        return Ok(cap);
    }
    let (mut lo, mut hi) = (probe, probe * 2.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
