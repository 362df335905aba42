// Scratch probe of the analytic pipeline at the baseline configs.
use bb84_latency::bb84::{Analyzer, HardwareConfig, MomentKind};
use bb84_latency::sim_full;
use num_complex::Complex64;
use std::time::Instant;

fn main() {
    for p_gen in [0.5, 0.1, 0.01] {
        let t0 = Instant::now();
        let cfg = HardwareConfig::baseline(p_gen);
        let an = Analyzer::new(cfg.clone()).unwrap();
        let py = an.p_y().unwrap();
        let p1 = an.p1().unwrap();
        let b_h = an.kernel().b_h();
        let m1_0 = an.m1(Complex64::default()).unwrap();
        let mx_0 = an.mx(Complex64::default()).unwrap();
        let ex1 = an.moments_of_x(MomentKind::Unconditional, 1).unwrap();
        let ex2 = an.moments_of_x(MomentKind::Unconditional, 2).unwrap();
        let exs = an.moments_of_x(MomentKind::Success, 1).unwrap();
        let exf = an.moments_of_x(MomentKind::Failure, 1).unwrap();
        let b_w = an.w_abscissa().unwrap();
        let (mean_w, var_w) = an.w_v1_mean_var().unwrap();
        println!(
            "p_gen={p_gen}: py={py:.6} p1={p1:.6} b_h={b_h:.6} m1(0)={:.6} mx(0)={:.8} \
             E[X]={ex1:.4} E[X^2]={ex2:.4} E[X|1]={exs:.4} E[X|0]={exf:.4} b_w={b_w:.6e} \
             E[W]={mean_w:.2} sd={:.2}  ({:?})",
            m1_0.re,
            mx_0.re,
            var_w.sqrt(),
            t0.elapsed()
        );
        let t1 = Instant::now();
        let floor = cfg.floor_v1();
        for s_mul in [1.05, 1.2, 1.5, 2.0, 3.0] {
            let s = mean_w * s_mul / 1.0;
            if s <= floor {
                continue;
            }
            let cdf = an.cdf_w_v1(s).unwrap();
            let cb = an.chernoff_w_v1(s, 64).unwrap();
            println!("  s={s:.1} cdf={cdf:.6} chernoff_ccdf={cb:.6e}");
        }
        println!("  (cdf/chernoff in {:?})", t1.elapsed());
        let t2 = Instant::now();
        let batch = sim_full::run_batch(&cfg, 12345, 2000).unwrap();
        let times = batch.times();
        let mean_emp: f64 = times.iter().sum::<f64>() / times.len() as f64;
        println!(
            "  sim mean={mean_emp:.2} draws/sample={:.1} expect={:.1} ({:?})",
            batch.mean_draws(),
            sim_full::expected_draws_full(&cfg, p1),
            t2.elapsed()
        );
    }
}
