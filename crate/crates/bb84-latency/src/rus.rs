//! Algebra of repeat-until-success protocols.
//!
//! A failure-prone protocol runs independent trials until a success. Each
//! trial contributes a random duration whether it succeeds or fails, plus a
//! communication phase. Summing the geometric series of failed trials turns
//! the per-trial MGF terms into the completion-time MGF; this module houses
//! that composition, the search for its convergence abscissa, grid-minimised
//! Chernoff bounds, and the generic backwards sampler.

use crate::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use std::sync::Arc;

type MgfFn = dyn Fn(Complex64) -> Result<Complex64> + Send + Sync;

/// A numeric moment generating function: a partial map from complex transform
/// argument to value, plus the supremum of real arguments where it is finite.
#[derive(Clone)]
pub struct MgfEvaluator {
    f: Arc<MgfFn>,
    abscissa: f64,
}

impl MgfEvaluator {
    pub fn new<F>(abscissa: f64, f: F) -> Self
    where
        F: Fn(Complex64) -> Result<Complex64> + Send + Sync + 'static,
    {
        MgfEvaluator {
            f: Arc::new(f),
            abscissa,
        }
    }

    /// The identity-one evaluator (MGF of a point mass at zero).
    pub fn one() -> Self {
        MgfEvaluator::new(f64::INFINITY, |_| Ok(Complex64::new(1.0, 0.0)))
    }

    /// MGF of a deterministic delay `a`: t ↦ e^{ta}.
    pub fn point_mass(a: f64) -> Self {
        MgfEvaluator::new(f64::INFINITY, move |t| Ok((t * a).exp()))
    }

    pub fn eval(&self, t: Complex64) -> Result<Complex64> {
        (self.f)(t)
    }

    pub fn eval_real(&self, t: f64) -> Result<f64> {
        Ok(self.eval(Complex64::new(t, 0.0))?.re)
    }

    pub fn abscissa(&self) -> f64 {
        self.abscissa
    }

    /// Pointwise product (MGF of an independent sum).
    pub fn product(&self, rhs: &MgfEvaluator) -> MgfEvaluator {
        let (a, b) = (self.clone(), rhs.clone());
        MgfEvaluator::new(self.abscissa.min(rhs.abscissa), move |t| {
            Ok(a.eval(t)? * b.eval(t)?)
        })
    }

    /// Scale the underlying random variable by `c ≥ 0`: t ↦ M(ct).
    pub fn scaled(&self, c: f64) -> MgfEvaluator {
        let inner = self.clone();
        let b = if c > 0.0 {
            self.abscissa / c
        } else {
            f64::INFINITY
        };
        MgfEvaluator::new(b, move |t| inner.eval(t * c))
    }
}

/// The two expectation terms of a single trial plus the communication MGF.
///
/// `success_term` is t ↦ E[e^{t·U₁} p(L)], `failure_term` is
/// t ↦ E[e^{t·U₁} (1 − p(L))], where U₁ is the trial duration and the latent
/// variables enter only through these expectations. `comm` is the MGF of the
/// COMMUNICATE/LOCC phase (use [`MgfEvaluator::one`] when it is folded into
/// the trial duration).
#[derive(Clone)]
pub struct TrialSpec {
    pub success_term: MgfEvaluator,
    pub failure_term: MgfEvaluator,
    pub comm_mgf: MgfEvaluator,
}

impl TrialSpec {
    /// Trial with duration MGF `m` and duration-independent success
    /// probability `p`; communication folded into the duration.
    pub fn bernoulli(m: MgfEvaluator, p: f64) -> Self {
        TrialSpec {
            success_term: {
                let m = m.clone();
                MgfEvaluator::new(m.abscissa(), move |t| Ok(m.eval(t)? * p))
            },
            failure_term: {
                let m = m.clone();
                MgfEvaluator::new(m.abscissa(), move |t| Ok(m.eval(t)? * (1.0 - p)))
            },
            comm_mgf: MgfEvaluator::one(),
        }
    }
}

/// MGF of the completion time of a repeat-until-success protocol:
/// `comm·success / (1 − comm·failure)`.
///
/// The same composition covers trials whose tasks run in sequence; the caller
/// supplies sum-based rather than max-based phase terms.
pub fn compose_rus_mgf(spec: &TrialSpec, t: Complex64) -> Result<Complex64> {
    let re = Complex64::new(t.re, 0.0);
    let denom_real = (spec.comm_mgf.eval(re)? * spec.failure_term.eval(re)?).re;
    if denom_real >= 1.0 {
        return Err(Error::Divergent { at: t.re });
    }
    let comm = spec.comm_mgf.eval(t)?;
    let succ = spec.success_term.eval(t)?;
    let fail = spec.failure_term.eval(t)?;
    Ok(comm * succ / (Complex64::new(1.0, 0.0) - comm * fail))
}

const ABSCISSA_REL_TOL: f64 = 1e-10;
const ABSCISSA_MAX_ITER: usize = 200;

/// Supremum of real t ≥ 0 where the geometric composition converges.
///
/// Brackets from the minimum component abscissa, shrinking by halves until the
/// product condition holds, then bisects to relative tolerance 1e-10. Returns
/// the component minimum when the product never reaches one.
pub fn convergence_abscissa(spec: &TrialSpec) -> Result<f64> {
    let fail0 = spec.failure_term.eval_real(0.0)?;
    if fail0 >= 1.0 {
        return Err(Error::DegenerateSuccess);
    }
    let b_min = spec
        .comm_mgf
        .abscissa()
        .min(spec.failure_term.abscissa())
        .min(spec.success_term.abscissa());
    let product_below_one = |t: f64| -> bool {
        match (spec.comm_mgf.eval_real(t), spec.failure_term.eval_real(t)) {
            (Ok(c), Ok(f)) => {
                let v = c * f;
                v.is_finite() && v < 1.0
            }
            _ => false,
        }
    };
    if !b_min.is_finite() {
        // all components entire: scan upward for a failure of the condition
        let mut hi = 1.0;
        for _ in 0..ABSCISSA_MAX_ITER {
            if !product_below_one(hi) {
                break;
            }
            hi *= 2.0;
        }
        if product_below_one(hi) {
            return Ok(f64::INFINITY);
        }
        let mut lo = 0.0;
        for _ in 0..ABSCISSA_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if product_below_one(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= ABSCISSA_REL_TOL * hi.max(1.0) {
                break;
            }
        }
        return Ok(0.5 * (lo + hi));
    }

    let mut probe = b_min * (1.0 - 1e-9);
    let mut iter = 0;
    while !product_below_one(probe) {
        probe *= 0.5;
        iter += 1;
        if iter >= ABSCISSA_MAX_ITER {
            return Err(Error::Domain(
                "abscissa bracketing found no point where the trial product is below one".into(),
            ));
        }
    }
    if (probe - b_min * (1.0 - 1e-9)).abs() < f64::EPSILON * b_min {
        // condition holds right up to the component limit
        return Ok(b_min);
    }
    let (mut lo, mut hi) = (probe, probe * 2.0);
    for _ in 0..ABSCISSA_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if product_below_one(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= ABSCISSA_REL_TOL * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Build the Chernoff evaluation grid on (0, b): `n` points, geometric
/// spacing, with 80% of the points in the upper half since the optimiser
/// t*(s) approaches the abscissa as s grows.
pub fn chernoff_grid(b: f64, n: usize) -> Vec<f64> {
    assert!(b > 0.0 && b.is_finite() && n >= 2);
    let n_hi = ((n as f64) * 0.8).ceil() as usize;
    let n_lo = n - n_hi;
    let mut grid = Vec::with_capacity(n);
    // lower half: geometric from b·1e-4 up to b/2
    if n_lo > 0 {
        let lo_start: f64 = 1e-4;
        let ratio = (0.5 / lo_start).powf(1.0 / n_lo as f64);
        let mut x = lo_start;
        for _ in 0..n_lo {
            grid.push(b * x);
            x *= ratio;
        }
    }
    // upper half: offsets from b shrinking geometrically from b/2 to b·1e-7
    let d_start: f64 = 0.5;
    let d_end: f64 = 1e-7;
    let ratio = (d_end / d_start).powf(1.0 / (n_hi.max(2) - 1) as f64);
    let mut d = d_start;
    for _ in 0..n_hi {
        grid.push(b * (1.0 - d));
        d *= ratio;
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

/// Grid-minimised Chernoff bound on P(W > s): min over the grid of
/// e^{−t·s}·M(t). Every grid point individually yields a valid bound, so the
/// minimum is one as well.
pub fn chernoff_bound(mgf: &MgfEvaluator, s: f64, grid_size: usize) -> Result<f64> {
    let b = mgf.abscissa();
    if !(b > 0.0) {
        return Err(Error::Domain(format!(
            "Chernoff bound needs a positive abscissa, got {b}"
        )));
    }
    if s <= 0.0 {
        return Err(Error::Parameter(format!("Chernoff bound needs s > 0, got {s}")));
    }
    let mut best = f64::INFINITY;
    for t in chernoff_grid(b, grid_size) {
        if let Ok(m) = mgf.eval_real(t) {
            if m.is_finite() && m > 0.0 {
                let log_bound = m.ln() - t * s;
                best = best.min(log_bound);
            }
        }
    }
    if best.is_infinite() {
        return Err(Error::Domain(
            "no Chernoff grid point was evaluable".into(),
        ));
    }
    Ok(best.exp().min(1.0))
}

/// Geometric draw on support {1, 2, ...} via inverse transform,
/// ⌈ln U / ln(1−p)⌉, exact even for very small p.
pub fn sample_geometric<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u64 {
    assert!(p > 0.0 && p <= 1.0);
    if p == 1.0 {
        return 1;
    }
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let n = (u.ln() / (1.0 - p).ln()).ceil();
    (n as u64).max(1)
}

/// Simulate one completion time backwards: draw N ~ Geo(p), then
/// Σ_{j≤N} T_j + Σ_{j≤N−1} X_j⁽⁰⁾ + X₁⁽¹⁾ with all draws independent.
pub fn sample_rus_backward<R, FC, FF, FS>(
    p_success: f64,
    mut comm_sampler: FC,
    mut fail_sampler: FF,
    mut success_sampler: FS,
    rng: &mut R,
) -> Result<f64>
where
    R: Rng + ?Sized,
    FC: FnMut(&mut R) -> f64,
    FF: FnMut(&mut R) -> f64,
    FS: FnMut(&mut R) -> f64,
{
    if !(p_success > 0.0 && p_success <= 1.0) {
        return Err(Error::Parameter(format!(
            "success probability must lie in (0, 1], got {p_success}"
        )));
    }
    let n = sample_geometric(p_success, rng);
    let mut total = 0.0;
    for _ in 0..n {
        total += comm_sampler(rng);
    }
    for _ in 0..n - 1 {
        total += fail_sampler(rng);
    }
    total += success_sampler(rng);
    Ok(total)
}
