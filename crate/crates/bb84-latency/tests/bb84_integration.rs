//! Enumeration oracles and simulator cross-checks for the analytic stack.

use bb84_latency::bb84::{
    d_n_values, m1_recursive_values, Analyzer, HardwareConfig, MomentKind, Ratio,
};
use bb84_latency::rus;
use bb84_latency::sim_full::{self, stream_rng, DrawCounter};
use num_complex::Complex64;
use rand::Rng;

/// Discrete toy qubit model: X ∈ {1, 2}, Y Bernoulli coupled to X through a
/// fixed joint law. Small enough to enumerate exhaustively.
#[derive(Clone, Copy)]
struct ToyQubit {
    // P(X = x, Y = y) in the order (1,1), (1,0), (2,1), (2,0)
    p11: f64,
    p10: f64,
    p21: f64,
    p20: f64,
}

impl ToyQubit {
    fn m1(&self, t: Complex64) -> Complex64 {
        self.p11 * t.exp() + self.p21 * (2.0 * t).exp()
    }

    fn m0(&self, t: Complex64) -> Complex64 {
        self.p10 * t.exp() + self.p20 * (2.0 * t).exp()
    }

    fn outcomes(&self) -> [(f64, bool, f64); 4] {
        [
            (1.0, true, self.p11),
            (1.0, false, self.p10),
            (2.0, true, self.p21),
            (2.0, false, self.p20),
        ]
    }
}

const TOY: ToyQubit = ToyQubit {
    p11: 0.35,
    p10: 0.15,
    p21: 0.30,
    p20: 0.20,
};

/// Exhaustive E[e^{tΣX} 1{ΣY ≥ j}] over l IID toy qubits.
fn enumerate_threshold_mgf(toy: &ToyQubit, t: Complex64, l: u32, j: u32) -> Complex64 {
    let states = toy.outcomes();
    let mut acc = Complex64::default();
    let mut idx = vec![0usize; l as usize];
    loop {
        let mut prob = 1.0;
        let mut x_sum = 0.0;
        let mut y_sum = 0u32;
        for &i in &idx {
            let (x, y, p) = states[i];
            prob *= p;
            x_sum += x;
            y_sum += y as u32;
        }
        if y_sum >= j {
            acc += prob * (t * x_sum).exp();
        }
        // odometer over the 4^l outcomes
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return acc;
            }
            idx[pos] += 1;
            if idx[pos] < 4 {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

#[test]
fn recursive_solution_matches_enumeration() {
    // all (l ≤ 6, 0 ≤ j ≤ l) at a complex argument
    let t = Complex64::new(0.11, 0.23);
    for l in 1..=6u32 {
        for j in 0..=l {
            let direct = enumerate_threshold_mgf(&TOY, t, l, j);
            let closed = m1_recursive_values(TOY.m0(t), TOY.m1(t), l, j).unwrap();
            let rel = (direct - closed).norm() / direct.norm().max(1e-300);
            assert!(rel < 1e-10, "l={l} j={j}: {closed} vs {direct} (rel {rel})");
        }
    }
}

/// Exhaustive D_n over basis coins, uniform sampling without replacement,
/// and toy qubit outcomes.
fn enumerate_d_n(toy: &ToyQubit, t: Complex64, n: u32, alpha: &Ratio, beta: &Ratio) -> Complex64 {
    let states = toy.outcomes();
    let n = n as usize;
    let mut acc = Complex64::default();
    // enumerate qubit outcomes
    let mut idx = vec![0usize; n];
    loop {
        let mut prob = 1.0;
        let mut x_sum = 0.0;
        let mut y: Vec<bool> = Vec::with_capacity(n);
        for &i in &idx {
            let (x, yy, p) = states[i];
            prob *= p;
            x_sum += x;
            y.push(yy);
        }
        // enumerate basis agreement patterns
        for mask in 0..(1u32 << n) {
            let agree: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let b = agree.len() as u64;
            let b1 = alpha.ceil_mul(b) as usize;
            let p_mask = 0.5f64.powi(n as i32);
            if b1 == 0 {
                continue; // failure, contributes nothing to D_n
            }
            // average the success indicator over all size-b1 subsets
            let subsets = combinations(&agree, b1);
            let mut pass = 0usize;
            for sub in &subsets {
                let matched = sub.iter().filter(|&&i| y[i]).count() as u64;
                if beta.ratio_at_least(matched, b1 as u64) {
                    pass += 1;
                }
            }
            let p_success = pass as f64 / subsets.len() as f64;
            acc += prob * p_mask * p_success * (t * x_sum).exp();
        }
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return acc;
            }
            idx[pos] += 1;
            if idx[pos] < 4 {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            let mut v = vec![first];
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

#[test]
fn d_n_matches_enumeration_small() {
    let alpha = Ratio::from_f64(0.5).unwrap();
    let beta = Ratio::from_f64(0.6).unwrap();
    for t in [
        Complex64::default(),
        Complex64::new(0.07, 0.0),
        Complex64::new(0.03, 0.09),
    ] {
        let direct = enumerate_d_n(&TOY, t, 4, &alpha, &beta);
        let closed = d_n_values(TOY.m0(t), TOY.m1(t), 4, &alpha, &beta).unwrap();
        let rel = (direct - closed).norm() / direct.norm();
        assert!(rel < 1e-12, "t={t}: {closed} vs {direct}");
    }
}

#[test]
fn d1_at_zero_is_half_m1() {
    // n = 1, α = 1: D₁(0) = m1(0)/2
    let alpha = Ratio::from_f64(1.0).unwrap();
    let beta = Ratio::from_f64(0.75).unwrap();
    let m0 = TOY.m0(Complex64::default());
    let m1 = TOY.m1(Complex64::default());
    let d = d_n_values(m0, m1, 1, &alpha, &beta).unwrap();
    assert!((d - 0.5 * m1).norm() < 1e-14);
    // and it agrees with enumeration
    let direct = enumerate_d_n(&TOY, Complex64::default(), 1, &alpha, &beta);
    assert!((d - direct).norm() < 1e-14);
}

#[test]
fn tiny_beta_reduces_to_at_least_one_match() {
    // β → 0⁺ keeps ⌈βk⌉ = 1, so success means at least one sampled match;
    // enumeration at n = 3 confirms the reduction implemented by the
    // threshold machinery
    let alpha = Ratio::from_f64(1.0).unwrap();
    let beta = Ratio { num: 1, den: 1_000_000 };
    let t = Complex64::new(0.05, 0.0);
    let direct = enumerate_d_n(&TOY, t, 3, &alpha, &beta);
    let closed = d_n_values(TOY.m0(t), TOY.m1(t), 3, &alpha, &beta).unwrap();
    assert!((direct - closed).norm() < 1e-12 * direct.norm());
    // when every qubit matches almost surely the formula collapses to
    // M_Xⁿ·P(B₁ ≥ 1)
    let sure = ToyQubit {
        p11: 0.5,
        p10: 0.0,
        p21: 0.5,
        p20: 0.0,
    };
    let closed = d_n_values(sure.m0(t), sure.m1(t), 3, &alpha, &beta).unwrap();
    let expect = (sure.m1(t)).powu(3) * (1.0 - 0.125);
    assert!((closed - expect).norm() < 1e-12);
}

#[test]
fn count_tables_match_enumeration() {
    // n = 4, α = 0.5, β = 0.6, per-qubit match probability from the toy law
    let cfg = {
        let mut c = HardwareConfig::baseline(0.5);
        c.n = 4;
        c.alpha = 0.5;
        c.beta = 0.6;
        c
    };
    let analyzer = Analyzer::new(cfg).unwrap();
    let py = 0.9;
    let alpha = Ratio::from_f64(0.5).unwrap();
    let beta = Ratio::from_f64(0.6).unwrap();

    // exhaustive joint law of (N_S, N_F, U)
    let n = 4usize;
    let mut joint: std::collections::HashMap<(u32, u32, u8), f64> = Default::default();
    for mask in 0..(1u32 << n) {
        let agree: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let b1 = alpha.ceil_mul(agree.len() as u64) as usize;
        let p_mask = 0.5f64.powi(n as i32);
        for ymask in 0..(1u32 << n) {
            let y: Vec<bool> = (0..n).map(|i| ymask >> i & 1 == 1).collect();
            let p_y: f64 = (0..n)
                .map(|i| if y[i] { py } else { 1.0 - py })
                .product();
            if b1 == 0 {
                *joint.entry((0, 0, 0)).or_default() += p_mask * p_y;
                continue;
            }
            let subsets = combinations(&agree, b1);
            let w = 1.0 / subsets.len() as f64;
            for sub in &subsets {
                let s = sub.iter().filter(|&&i| y[i]).count() as u32;
                let f = b1 as u32 - s;
                let u = beta.ratio_at_least(s as u64, b1 as u64) as u8;
                *joint.entry((s, f, u)).or_default() += p_mask * p_y * w;
            }
        }
    }
    let p1_enum: f64 = joint
        .iter()
        .filter(|((_, _, u), _)| *u == 1)
        .map(|(_, p)| p)
        .sum();
    let p1_closed = analyzer.p1_given_py(py);
    assert!(
        (p1_enum - p1_closed).abs() < 1e-12,
        "p1 {p1_closed} vs enumeration {p1_enum}"
    );

    // conditional tables
    let tables = analyzer.count_tables_given(py, p1_closed).unwrap();
    let mut total0 = 0.0;
    for &(s, f, p) in &tables.u0 {
        let expect = joint.get(&(s, f, 0)).copied().unwrap_or(0.0) / (1.0 - p1_enum);
        assert!(
            (p - expect).abs() < 1e-12,
            "pmf(s={s}, f={f} | 0): {p} vs {expect}"
        );
        total0 += p;
    }
    let mut total1 = 0.0;
    for &(s, f, p) in &tables.u1 {
        let expect = joint.get(&(s, f, 1)).copied().unwrap_or(0.0) / p1_enum;
        assert!(
            (p - expect).abs() < 1e-12,
            "pmf(s={s}, f={f} | 1): {p} vs {expect}"
        );
        total1 += p;
    }
    assert!((total0 - 1.0).abs() < 1e-12, "U=0 table mass {total0}");
    assert!((total1 - 1.0).abs() < 1e-12, "U=1 table mass {total1}");
    // support structure: the success table never violates the threshold
    for &(s, f, _) in &tables.u1 {
        assert!(beta.ratio_at_least(s as u64, (s + f) as u64));
    }
    for &(s, f, _) in &tables.u0 {
        assert!(!beta.ratio_at_least(s as u64, (s + f) as u64));
    }
}

#[test]
fn qubit_mgf_normalisation_and_moment_identities() {
    let cfg = HardwareConfig::baseline(0.1);
    let an = Analyzer::new(cfg).unwrap();
    let mx0 = an.mx(Complex64::default()).unwrap();
    let m10 = an.m1(Complex64::default()).unwrap();
    let m00 = an.m0(Complex64::default()).unwrap();
    assert!((mx0.re - 1.0).abs() < 1e-9, "mx(0) = {mx0}");
    assert!(((m10 + m00).re - 1.0).abs() < 1e-9);
    assert!(m10.re > 0.5, "m1(0) = {}", m10.re);

    // law of total expectation across conditional moments
    let p = an.p_y().unwrap();
    for order in 1..=4 {
        let ex = an.moments_of_x(MomentKind::Unconditional, order).unwrap();
        let es = an.moments_of_x(MomentKind::Success, order).unwrap();
        let ef = an.moments_of_x(MomentKind::Failure, order).unwrap();
        let mix = p * es + (1.0 - p) * ef;
        assert!(
            (mix - ex).abs() < 1e-8 * ex.abs(),
            "order {order}: {mix} vs {ex}"
        );
    }
}

#[test]
fn d_n_zero_equals_p1() {
    for p_gen in [0.5, 0.1] {
        let an = Analyzer::new(HardwareConfig::baseline(p_gen)).unwrap();
        let d0 = an.d_n(Complex64::default()).unwrap().re;
        let p1 = an.p1().unwrap();
        assert!(
            (d0 - p1).abs() < 1e-10,
            "p_gen={p_gen}: D_n(0) = {d0} vs p1 = {p1}"
        );
    }
}

#[test]
fn w_mgf_is_one_at_zero() {
    let an = Analyzer::new(HardwareConfig::baseline(0.1)).unwrap();
    let w0 = an.mgf_w_v1(Complex64::default()).unwrap();
    assert!((w0.re - 1.0).abs() < 1e-12 && w0.im.abs() < 1e-14, "{w0}");
    let v0 = an.mgf_w_v0(Complex64::default(), None).unwrap();
    assert!((v0.re - 1.0).abs() < 1e-12, "{v0}");
}

#[test]
fn m1_recursive_threshold_monotone_at_positive_t() {
    let an = Analyzer::new(HardwareConfig::baseline(0.1)).unwrap();
    let t = Complex64::new(2e-4, 0.0);
    let m0 = an.m0(t).unwrap();
    let m1 = an.m1(t).unwrap();
    let mut last = f64::INFINITY;
    for j in 0..=10u32 {
        let v = m1_recursive_values(m0, m1, 10, j).unwrap().re;
        assert!(v <= last * (1.0 + 1e-12), "j={j}");
        last = v;
    }
}

#[test]
fn empirical_mgf_agrees_with_composed_mgf() {
    // full-scale samples vs the analytic MGF at small real arguments
    let cfg = HardwareConfig::baseline(0.5);
    let an = Analyzer::new(cfg.clone()).unwrap();
    let batch = sim_full::run_batch(&cfg, 31337, 200_000).unwrap();
    let times = batch.times();
    let b = an.w_abscissa().unwrap();
    for frac in [0.25, 0.5, 0.75] {
        let t = b * frac;
        let analytic = an.mgf_w_v1(Complex64::new(t, 0.0)).unwrap().re;
        let vals: Vec<f64> = times.iter().map(|&x| (t * x).exp()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = sd / n.sqrt();
        assert!(
            (mean - analytic).abs() < 4.0 * se,
            "t={t}: empirical {mean} ± {se} vs analytic {analytic}"
        );
    }
}

#[test]
fn chernoff_dominates_complement_cdf() {
    let cfg = HardwareConfig::baseline(0.1);
    let an = Analyzer::new(cfg.clone()).unwrap();
    let (mean, _) = an.w_v1_mean_var().unwrap();
    for mult in [1.0, 1.3, 1.8, 2.5, 4.0] {
        let s = mean * mult;
        let cdf = an.cdf_w_v1(s).unwrap();
        let bound = an.chernoff_w_v1(s, 64).unwrap();
        assert!(
            bound >= (1.0 - cdf) - 1e-5,
            "s={s}: chernoff {bound} vs ccdf {}",
            1.0 - cdf
        );
    }
}

#[test]
fn cdf_below_floor_is_zero_and_grows_to_one() {
    let cfg = HardwareConfig::baseline(0.5);
    let an = Analyzer::new(cfg.clone()).unwrap();
    assert_eq!(an.cdf_w_v1(cfg.floor_v1() * 0.9).unwrap(), 0.0);
    let (mean, sd2) = an.w_v1_mean_var().unwrap();
    let far = mean + 12.0 * sd2.sqrt();
    let f = an.cdf_w_v1(far).unwrap();
    assert!(f > 0.999, "cdf({far}) = {f}");
    // monotone on a grid
    let mut last = 0.0;
    for i in 0..25 {
        let s = cfg.floor_v1() + (far - cfg.floor_v1()) * i as f64 / 24.0;
        let f = an.cdf_w_v1(s).unwrap();
        assert!(f >= last - 1e-4, "monotonicity at s={s}");
        last = f;
    }
}

#[test]
fn v0_with_explicit_threshold_matches_lemma_shape() {
    // V0 at c = 0 always succeeds on the first attempt: W = ΣX + K_C
    let cfg = HardwareConfig::baseline(0.5);
    let an = Analyzer::new(cfg.clone()).unwrap();
    let t = Complex64::new(1e-4, 0.0);
    let v0 = an.mgf_w_v0(t, Some(0)).unwrap();
    let expect = an.cfg().ab.mgf(t).unwrap() * an.mx(t).unwrap().powu(cfg.n);
    assert!(
        (v0 - expect).norm() < 1e-10 * expect.norm(),
        "{v0} vs {expect}"
    );
}

#[test]
fn teleport_outcome_statistics_match_analytics() {
    let cfg = HardwareConfig::baseline(0.5);
    let an = Analyzer::new(cfg.clone()).unwrap();
    let py = an.p_y().unwrap();
    let ex = an.moments_of_x(MomentKind::Unconditional, 1).unwrap();
    let mut rng = stream_rng(424_242, 0);
    let mut counter = DrawCounter::default();
    let n = 1_000_000u64;
    let mut y_sum = 0u64;
    let mut x_sum = 0.0;
    let mut x_sq = 0.0;
    for _ in 0..n {
        let o = sim_full::simulate_teleport(&cfg, &mut rng, &mut counter);
        y_sum += o.success as u64;
        x_sum += o.duration;
        x_sq += o.duration * o.duration;
        assert!(o.duration >= cfg.a_w());
        assert!(o.werner_at_teleport > 0.0 && o.werner_at_teleport <= cfg.w0 * cfg.w0);
    }
    let py_emp = y_sum as f64 / n as f64;
    let se_py = (py_emp * (1.0 - py_emp) / n as f64).sqrt();
    assert!(
        (py_emp - py).abs() < 4.0 * se_py,
        "P(Y=1): sim {py_emp} vs analytic {py}"
    );
    let mean = x_sum / n as f64;
    let sd = (x_sq / n as f64 - mean * mean).sqrt();
    assert!(
        (mean - ex).abs() < 4.0 * sd / (n as f64).sqrt(),
        "E[X]: sim {mean} vs analytic {ex}"
    );
}

#[test]
fn attempt_success_rate_matches_p1() {
    let cfg = HardwareConfig::baseline(0.1);
    let an = Analyzer::new(cfg.clone()).unwrap();
    let p1 = an.p1().unwrap();
    let batch = sim_full::run_batch(&cfg, 808, 100_000).unwrap();
    let attempts: u64 = batch.records.iter().map(|r| r.n_attempts as u64).sum();
    // attempts per sample is geometric with mean 1/p1
    let mean_attempts = attempts as f64 / batch.records.len() as f64;
    let var = (1.0 - p1) / (p1 * p1);
    let se = (var / batch.records.len() as f64).sqrt();
    assert!(
        (mean_attempts - 1.0 / p1).abs() < 4.0 * se,
        "attempts {mean_attempts} vs 1/p1 {}",
        1.0 / p1
    );
}

#[test]
fn simulated_mean_matches_mgf_mean() {
    let cfg = HardwareConfig::baseline(0.1);
    let an = Analyzer::new(cfg.clone()).unwrap();
    let (mean_w, var_w) = an.w_v1_mean_var().unwrap();
    let batch = sim_full::run_batch(&cfg, 909, 100_000).unwrap();
    let times = batch.times();
    let n = times.len() as f64;
    let emp = times.iter().sum::<f64>() / n;
    let se = (var_w / n).sqrt();
    assert!(
        (emp - mean_w).abs() < 4.0 * se,
        "simulated mean {emp} vs analytic {mean_w} (se {se})"
    );
}

#[test]
fn backward_sampler_reproduces_v1_composition() {
    // the RUS identity at the protocol level: simulate W backwards from the
    // trial-spec terms and compare a few MGF points
    let cfg = HardwareConfig::baseline(0.5);
    let an = Analyzer::new(cfg.clone()).unwrap();
    let p1 = an.p1().unwrap();
    let batch = sim_full::run_batch(&cfg, 515, 120_000).unwrap();

    // attempt durations conditioned on outcome, harvested from the
    // full-scale simulator
    let mut rng = stream_rng(616, 0);
    let mut success_pool = Vec::new();
    let mut failure_pool = Vec::new();
    let mut counter = DrawCounter::default();
    while success_pool.len() < 30_000 || failure_pool.len() < 30_000 {
        let n = cfg.n as usize;
        let mut total = 0.0;
        let mut outcomes = vec![false; n];
        for o in outcomes.iter_mut() {
            let t = sim_full::simulate_teleport(&cfg, &mut rng, &mut counter);
            total += t.duration;
            *o = t.success;
        }
        let mut agree: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        let alpha = Ratio::from_f64(cfg.alpha).unwrap();
        let beta = Ratio::from_f64(cfg.beta).unwrap();
        let b1 = alpha.ceil_mul(agree.len() as u64) as usize;
        let mut matched = 0u64;
        for i in 0..b1 {
            let j = rng.gen_range(i..agree.len());
            agree.swap(i, j);
            if outcomes[agree[i]] {
                matched += 1;
            }
        }
        let success = b1 >= 1 && beta.ratio_at_least(matched, b1 as u64);
        if success {
            success_pool.push(total);
        } else {
            failure_pool.push(total);
        }
    }
    let mut rng2 = stream_rng(717, 1);
    let mut si = 0usize;
    let mut fi = 0usize;
    let mut backwards = Vec::with_capacity(60_000);
    for _ in 0..60_000 {
        let v = rus::sample_rus_backward(
            p1,
            |r: &mut rand_chacha::ChaCha12Rng| cfg.ab.sample(r),
            |_r| {
                fi = (fi + 1) % failure_pool.len();
                failure_pool[fi]
            },
            |_r| {
                si = (si + 1) % success_pool.len();
                success_pool[si]
            },
            &mut rng2,
        )
        .unwrap();
        backwards.push(v);
    }
    // compare means: backwards-composed samples vs direct protocol samples
    let direct = batch.times();
    let m1: f64 = direct.iter().sum::<f64>() / direct.len() as f64;
    let m2: f64 = backwards.iter().sum::<f64>() / backwards.len() as f64;
    let sd1 = {
        let v = direct.iter().map(|x| (x - m1) * (x - m1)).sum::<f64>() / direct.len() as f64;
        v.sqrt()
    };
    let tol = 4.0 * sd1 * (1.0 / (direct.len() as f64).sqrt() + 1.0 / (backwards.len() as f64).sqrt());
    assert!((m1 - m2).abs() < tol, "direct {m1} vs backwards {m2}");
}
