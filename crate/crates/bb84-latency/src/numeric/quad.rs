//! Adaptive Gauss–Kronrod quadrature for real and complex-valued integrands.
//!
//! The 7/15-point rule pair is the QUADPACK `qk15` node set. Subdivision is
//! bisection on the interval with the largest error estimate until the global
//! estimate drops below the requested absolute tolerance.

use num_complex::Complex64;

/// Kronrod-15 abscissae on [0, 1] side of the symmetric rule.
pub(crate) const XGK: [f64; 8] = [
    0.991_455_371_120_813,
    0.949_107_912_342_759,
    0.864_864_423_359_769,
    0.741_531_185_599_394,
    0.586_087_235_467_691,
    0.405_845_151_377_397,
    0.207_784_955_007_898,
    0.0,
];

/// Kronrod-15 weights matching `XGK`.
pub(crate) const WGK: [f64; 8] = [
    0.022_935_322_010_529,
    0.063_092_092_629_979,
    0.104_790_010_322_250,
    0.140_653_259_715_525,
    0.169_004_726_639_267,
    0.190_350_578_064_785,
    0.204_432_940_075_298,
    0.209_482_141_084_728,
];

/// Gauss-7 weights for the odd-indexed Kronrod nodes plus the midpoint.
pub(crate) const WG: [f64; 4] = [
    0.129_484_966_168_870,
    0.279_705_391_489_277,
    0.381_830_050_505_119,
    0.417_959_183_673_469,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: Complex64,
    pub abs_error: f64,
    pub evaluations: usize,
}

fn gk15<F>(f: &F, a: f64, b: f64) -> (Complex64, f64)
where
    F: Fn(f64) -> Complex64 + ?Sized,
{
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kron = Complex64::new(0.0, 0.0);
    let mut gauss = Complex64::new(0.0, 0.0);
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let (lo, hi) = (f(mid - half * x), f(mid + half * x));
        let pair = if x == 0.0 { lo } else { lo + hi };
        kron += wk * pair;
        // indices 1,3,5,7 are the embedded Gauss-7 nodes (7 is the midpoint)
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    let kron = kron * half;
    let gauss = gauss * half;
    ((kron), (kron - gauss).norm())
}

/// Integrate `f` over the finite interval `[a, b]` to absolute tolerance.
///
/// Returns the best estimate even when the tolerance was not reached; callers
/// can inspect `abs_error`.
pub fn integrate<F>(f: &F, a: f64, b: f64, abs_tol: f64, max_intervals: usize) -> QuadResult
where
    F: Fn(f64) -> Complex64 + ?Sized,
{
    if a == b {
        return QuadResult {
            value: Complex64::new(0.0, 0.0),
            abs_error: 0.0,
            evaluations: 0,
        };
    }
    let (v, e) = gk15(f, a, b);
    let mut segs = vec![(a, b, v, e)];
    let mut evals = 15usize;
    loop {
        let err_total: f64 = segs.iter().map(|s| s.3).sum();
        if err_total <= abs_tol || segs.len() >= max_intervals {
            let value = segs.iter().map(|s| s.2).fold(Complex64::default(), |x, y| x + y);
            return QuadResult {
                value,
                abs_error: err_total,
                evaluations: evals,
            };
        }
        // split the worst segment
        let (idx, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (sa, sb, _, _) = segs.swap_remove(idx);
        let m = 0.5 * (sa + sb);
        let (v1, e1) = gk15(f, sa, m);
        let (v2, e2) = gk15(f, m, sb);
        evals += 30;
        segs.push((sa, m, v1, e1));
        segs.push((m, sb, v2, e2));
    }
}

/// Integrate a real-valued function over `[a, b]`.
pub fn integrate_real<F>(f: &F, a: f64, b: f64, abs_tol: f64, max_intervals: usize) -> (f64, f64)
where
    F: Fn(f64) -> f64 + ?Sized,
{
    let g = |x: f64| Complex64::new(f(x), 0.0);
    let r = integrate(&g, a, b, abs_tol, max_intervals);
    (r.value.re, r.abs_error)
}

/// Integrate `f` over `[a, ∞)` by marching geometrically widening panels.
///
/// `scale` sets the first panel width; panels stop once two consecutive panel
/// contributions fall below `abs_tol / 10` or the hard panel cap is reached.
pub fn integrate_to_inf<F>(f: &F, a: f64, scale: f64, abs_tol: f64) -> QuadResult
where
    F: Fn(f64) -> Complex64 + ?Sized,
{
    let mut total = Complex64::default();
    let mut err = 0.0;
    let mut evals = 0usize;
    let mut lo = a;
    let mut width = scale.max(1e-300);
    let mut quiet = 0;
    for _ in 0..64 {
        let hi = lo + width;
        let r = integrate(f, lo, hi, abs_tol / 8.0, 64);
        total += r.value;
        err += r.abs_error;
        evals += r.evaluations;
        if r.value.norm() < abs_tol / 10.0 {
            quiet += 1;
            if quiet >= 2 {
                break;
            }
        } else {
            quiet = 0;
        }
        lo = hi;
        width *= 2.0;
    }
    QuadResult {
        value: total,
        abs_error: err,
        evaluations: evals,
    }
}
