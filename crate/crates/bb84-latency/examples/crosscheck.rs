// Cross-check simulated vs analytic per-qubit and per-attempt quantities.
use bb84_latency::bb84::{Analyzer, HardwareConfig, MomentKind};
use bb84_latency::sim_full::{simulate_teleport, stream_rng, DrawCounter};
use rand::Rng;

fn main() {
    let p_gen = 0.5;
    let cfg = HardwareConfig::baseline(p_gen);
    let an = Analyzer::new(cfg.clone()).unwrap();
    let py = an.p_y().unwrap();
    let ex = an.moments_of_x(MomentKind::Unconditional, 1).unwrap();
    let p1 = an.p1().unwrap();

    let mut rng = stream_rng(777, 0);
    let mut counter = DrawCounter::default();
    let teleports = 2_000_000u64;
    let mut y_sum = 0u64;
    let mut x_sum = 0.0;
    for _ in 0..teleports {
        let o = simulate_teleport(&cfg, &mut rng, &mut counter);
        y_sum += o.success as u64;
        x_sum += o.duration;
    }
    let py_emp = y_sum as f64 / teleports as f64;
    let se_py = (py_emp * (1.0 - py_emp) / teleports as f64).sqrt();
    println!(
        "py: analytic {py:.8} empirical {py_emp:.8} (z = {:.2})",
        (py_emp - py) / se_py
    );
    println!(
        "E[X]: analytic {ex:.6} empirical {:.6}",
        x_sum / teleports as f64
    );

    // attempt-level success frequency
    let attempts = 200_000u64;
    let alpha = bb84_latency::bb84::Ratio::from_f64(cfg.alpha).unwrap();
    let beta = bb84_latency::bb84::Ratio::from_f64(cfg.beta).unwrap();
    let mut wins = 0u64;
    let n = cfg.n as usize;
    for _ in 0..attempts {
        let mut outcomes = vec![false; n];
        for o in outcomes.iter_mut() {
            *o = simulate_teleport(&cfg, &mut rng, &mut counter).success;
        }
        let mut agree: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        let b1 = alpha.ceil_mul(agree.len() as u64) as usize;
        let mut matched = 0u64;
        for i in 0..b1 {
            let j = rng.gen_range(i..agree.len());
            agree.swap(i, j);
            if outcomes[agree[i]] {
                matched += 1;
            }
        }
        if b1 >= 1 && beta.ratio_at_least(matched, b1 as u64) {
            wins += 1;
        }
    }
    let p1_emp = wins as f64 / attempts as f64;
    let se_p1 = (p1_emp * (1.0 - p1_emp) / attempts as f64).sqrt();
    println!(
        "p1: analytic {p1:.6} empirical {p1_emp:.6} (z = {:.2})",
        (p1_emp - p1) / se_p1
    );
}
