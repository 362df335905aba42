//! Oracles for the repeat-until-success algebra: partial geometric sums,
//! bisection roots, one-dimensional Chernoff minimisation, Wald means, and
//! bound validity against simulation.

use bb84_latency::rus::{
    chernoff_bound, compose_rus_mgf, convergence_abscissa, sample_rus_backward, MgfEvaluator,
    TrialSpec,
};
use bb84_latency::stats::Ecdf;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};

fn exp_mgf(rate: f64) -> MgfEvaluator {
    MgfEvaluator::new(rate, move |t| {
        Ok(Complex64::new(rate, 0.0) / (Complex64::new(rate, 0.0) - t))
    })
}

/// M_X of the max of two IID Exp(λ).
fn max2_mgf(rate: f64) -> MgfEvaluator {
    MgfEvaluator::new(rate, move |t| {
        let l = Complex64::new(rate, 0.0);
        Ok(2.0 * l * l / ((l - t) * (2.0 * l - t)))
    })
}

#[test]
fn compose_matches_partial_geometric_sum() {
    // Σ_{k=1}^{K} success·failure^{k−1}·comm^k converges to the closed form
    let specs = [
        TrialSpec::bernoulli(exp_mgf(1.0), 0.4),
        TrialSpec::bernoulli(max2_mgf(2.0), 0.6),
    ];
    for spec in &specs {
        for t in [0.0, 0.05, 0.11] {
            let t = Complex64::new(t, 0.0);
            let comm = spec.comm_mgf.eval(t).unwrap();
            let succ = spec.success_term.eval(t).unwrap();
            let fail = spec.failure_term.eval(t).unwrap();
            let ratio = comm * fail;
            assert!(ratio.norm() <= 0.9, "test spec chosen inside the region");
            let mut partial = Complex64::default();
            let mut pow = Complex64::new(1.0, 0.0);
            for _ in 1..=10_000 {
                pow *= comm;
                partial += succ * pow;
                pow *= fail;
            }
            let closed = compose_rus_mgf(spec, t).unwrap();
            assert!(
                (partial - closed).norm() < 1e-8,
                "partial {partial} vs closed {closed}"
            );
        }
    }
}

#[test]
fn abscissa_matches_example_closed_form() {
    // X = max of two IID Exp(λ), constant p: b' = λ(3 − √(9−8p))/2
    for (lambda, p) in [(1.0, 0.5), (2.0, 0.3), (0.7, 0.9)] {
        let spec = TrialSpec::bernoulli(max2_mgf(lambda), p);
        let b = convergence_abscissa(&spec).unwrap();
        let expect = lambda * (3.0 - (9.0 - 8.0 * p).sqrt()) / 2.0;
        assert!(
            (b - expect).abs() < 1e-8 * expect,
            "λ={lambda} p={p}: {b} vs {expect}"
        );
    }
    // the hand value (3−√5)/2 at λ = 1, p = 0.5
    let spec = TrialSpec::bernoulli(max2_mgf(1.0), 0.5);
    let b = convergence_abscissa(&spec).unwrap();
    assert!((b - 0.381_966_011_250_105).abs() < 1e-9);
}

#[test]
fn chernoff_matches_golden_section_oracle() {
    // Exp(1) tail at s = 5: continuum optimum of e^{−ts}/(1−t)
    let golden = {
        let f = |t: f64| (-5.0 * t).exp() / (1.0 - t);
        let (mut a, mut b) = (0.0, 0.999_999);
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        f(0.5 * (a + b))
    };
    assert!((golden - 5.0 * (-4.0f64).exp()).abs() < 1e-9, "oracle {golden}");
    let bound = chernoff_bound(&exp_mgf(1.0), 5.0, 64).unwrap();
    assert!(bound >= golden - 1e-12, "grid bound below continuum optimum");
    assert!(
        bound < golden * 1.02,
        "grid bound {bound} too loose vs {golden}"
    );
}

#[test]
fn backward_sampler_wald_mean() {
    // p = 0.25, all phases Exp(1): E[W] = E[N](E[T]+E[X⁰]) + E[X¹] − E[X⁰] = 8
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let exp = Exp::new(1.0).unwrap();
    let n = 1_000_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let v = sample_rus_backward(
            0.25,
            |r: &mut ChaCha12Rng| exp.sample(r),
            |r| exp.sample(r),
            |r| exp.sample(r),
            &mut rng,
        )
        .unwrap();
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - 8.0).abs() < 3.0 * se, "mean {mean} ± {se}");
}

#[test]
fn backward_sampler_mgf_matches_composition() {
    // distributional identity tested at the MGF level: empirical MGF of the
    // backwards samples matches the composed closed form
    let p = 0.5;
    let spec = TrialSpec::bernoulli(exp_mgf(1.0), p);
    let b = convergence_abscissa(&spec).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let exp = Exp::new(1.0).unwrap();
    let n = 1_000_000;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        // communication folded into the trial: T_C ≡ 0, X|Y ~ Exp(1)
        let v = sample_rus_backward(
            p,
            |_r: &mut ChaCha12Rng| 0.0,
            |r| exp.sample(r),
            |r| exp.sample(r),
            &mut rng,
        )
        .unwrap();
        samples.push(v);
    }
    for frac in [0.3, 0.55, 0.8] {
        let t = b * frac;
        let vals: Vec<f64> = samples.iter().map(|&x| (t * x).exp()).collect();
        let m = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let se = sd / (n as f64).sqrt();
        let closed = compose_rus_mgf(&spec, Complex64::new(t, 0.0)).unwrap().re;
        assert!(
            (m - closed).abs() < 4.0 * se,
            "t={t}: empirical {m} ± {se} vs {closed}"
        );
    }
}

#[test]
fn chernoff_dominates_empirical_ccdf() {
    let p = 0.5;
    let spec = TrialSpec::bernoulli(max2_mgf(1.0), p);
    let b = convergence_abscissa(&spec).unwrap();
    let w_mgf = {
        let spec = spec.clone();
        MgfEvaluator::new(b, move |t| compose_rus_mgf(&spec, t))
    };
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let exp = Exp::new(1.0).unwrap();
    let n = 1_000_000;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let v = sample_rus_backward(
            p,
            |_r: &mut ChaCha12Rng| 0.0,
            |r| {
                let a: f64 = exp.sample(r);
                let b: f64 = exp.sample(r);
                a.max(b)
            },
            |r| {
                let a: f64 = exp.sample(r);
                let b: f64 = exp.sample(r);
                a.max(b)
            },
            &mut rng,
        )
        .unwrap();
        samples.push(v);
    }
    let ecdf = Ecdf::new(samples).unwrap();
    for s in [2.0, 5.0, 10.0, 20.0, 30.0] {
        let bound = chernoff_bound(&w_mgf, s, 64).unwrap();
        let emp_ccdf = 1.0 - ecdf.eval(s);
        assert!(
            bound >= emp_ccdf - 3.0 * (emp_ccdf / n as f64).sqrt() - 1e-9,
            "s={s}: bound {bound} vs empirical {emp_ccdf}"
        );
    }
}
