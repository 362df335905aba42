//! Full-scale Monte Carlo simulation of the BB84 pipeline, plus the
//! density-matrix oracle validating the closed-form teleportation success
//! probability.
//!
//! Sampling is reproducible and scheduling-independent: sample index i draws
//! from its own counter-based RNG stream derived from (seed, i), so batches
//! are bit-identical across worker counts.

use crate::bb84::{p_lambda, HardwareConfig};
use crate::rus::sample_geometric;
use crate::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Outcome of one single-qubit teleportation.
#[derive(Debug, Clone, Copy)]
pub struct TeleportOutcome {
    /// total duration X = T_γ + max{V_A, V_B} + T_C' + T_C''
    pub duration: f64,
    /// whether Bob's measurement matched Alice's encoding
    pub success: bool,
    /// Werner parameter of the end-to-end link when teleportation starts
    pub werner_at_teleport: f64,
    /// accumulated duration of failed swap trials
    pub t_gamma: f64,
    pub v_a: f64,
    pub v_b: f64,
}

/// Werner-parameter decay in memory: w(t) = w_start · e^{−elapsed/t_c}.
pub fn werner_after(w_start: f64, elapsed: f64, t_c: f64) -> f64 {
    w_start * (-elapsed / t_c).exp()
}

/// Draw-count bookkeeping in the cost-model units of the efficiency
/// analysis: a heralded-link pair is charged two draws per synchronized
/// round (the longer link sets the round count), each swap trial adds its
/// S-COMM draw, each teleport its T-COMM draw, each attempt its K-COMM
/// draw. Bernoulli outcome draws and basis coins are not charged.
#[derive(Debug, Default, Clone, Copy)]
pub struct DrawCounter {
    pub units: u64,
}

impl DrawCounter {
    pub fn charge(&mut self, n: u64) {
        self.units += n;
    }
}

/// Sample one heralded link: N ~ Geo(p_gen) generation rounds with
/// communication phases between them. Returns the heralding time
/// t_h = Σ gen + Σ com (N−1 terms) together with the final heralding
/// communication draw, so V = t_h + t_c_last, plus the round count.
pub fn simulate_heralded_link<R: Rng + ?Sized>(
    cfg: &HardwareConfig,
    rng: &mut R,
) -> (f64, f64, u64) {
    let n = sample_geometric(cfg.p_gen, rng);
    let mut t_h = 0.0;
    for _ in 0..n {
        t_h += cfg.gen.sample(rng);
    }
    for _ in 0..n - 1 {
        t_h += cfg.com.sample(rng);
    }
    let t_c_last = cfg.com.sample(rng);
    (t_h, t_c_last, n)
}

/// Simulate one qubit teleportation: repeated swap attempts, Werner decay
/// through the waiting and communication spans, and the Bernoulli
/// measurement outcome from the closed-form success probability.
pub fn simulate_teleport<R: Rng + ?Sized>(
    cfg: &HardwareConfig,
    rng: &mut R,
    counter: &mut DrawCounter,
) -> TeleportOutcome {
    let mut t_gamma = 0.0;
    loop {
        let (ha, ca, na) = simulate_heralded_link(cfg, rng);
        let (hb, cb, nb) = simulate_heralded_link(cfg, rng);
        let v_a = ha + ca;
        let v_b = hb + cb;
        let t_swap_comm = cfg.swap.sample(rng);
        counter.charge(2 * na.max(nb) + 1);
        let swap_ok = rng.gen_bool(cfg.p_swap);
        if !swap_ok {
            // a failed swap still costs the waiting span and its heralding
            t_gamma += v_a.max(v_b) + t_swap_comm;
            continue;
        }
        let w = cfg.w0
            * cfg.w0
            * (-((v_a - v_b).abs() + ca + cb + t_swap_comm) / cfg.t_c).exp();
        let t_teleport_comm = cfg.ab.sample(rng);
        counter.charge(1);
        let p = p_lambda(w, t_teleport_comm, cfg);
        let success = rng.gen_bool(p.clamp(0.0, 1.0));
        return TeleportOutcome {
            duration: t_gamma + v_a.max(v_b) + t_swap_comm + t_teleport_comm,
            success,
            werner_at_teleport: w,
            t_gamma,
            v_a,
            v_b,
        };
    }
}

/// One full protocol run: attempts repeat until reconciliation succeeds.
/// Returns the completion time and the attempt count.
pub fn simulate_bb84<R: Rng + ?Sized>(
    cfg: &HardwareConfig,
    rng: &mut R,
    counter: &mut DrawCounter,
) -> (f64, u32) {
    let n = cfg.n as usize;
    let alpha = crate::bb84::Ratio::from_f64(cfg.alpha).expect("validated config");
    let beta = crate::bb84::Ratio::from_f64(cfg.beta).expect("validated config");
    let mut total = 0.0;
    let mut attempts = 0u32;
    let mut agree_idx: Vec<usize> = Vec::with_capacity(n);
    let mut outcomes: Vec<bool> = vec![false; n];
    loop {
        attempts += 1;
        // n sequential teleportations (single channel)
        for slot in outcomes.iter_mut() {
            let o = simulate_teleport(cfg, rng, counter);
            total += o.duration;
            *slot = o.success;
        }
        // per-qubit fair coins realise the basis agreement, keeping the
        // identities of the agreeing qubits for sampling
        agree_idx.clear();
        for i in 0..n {
            if rng.gen_bool(0.5) {
                agree_idx.push(i);
            }
        }
        let b = agree_idx.len() as u64;
        let b1 = alpha.ceil_mul(b) as usize;
        // partial Fisher-Yates: the first b1 entries become the sample
        let mut matched = 0u64;
        for i in 0..b1 {
            let j = rng.gen_range(i..agree_idx.len());
            agree_idx.swap(i, j);
            if outcomes[agree_idx[i]] {
                matched += 1;
            }
        }
        total += cfg.ab.sample(rng);
        counter.charge(1);
        let success = b1 >= 1 && beta.ratio_at_least(matched, b1 as u64);
        if success {
            return (total, attempts);
        }
    }
}

/// One record of a completion-time batch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub n_attempts: u32,
    pub total_time: f64,
    pub draws_used: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    FullScale,
    Synthetic,
}

/// A seeded, reproducible batch of completion-time samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleBatch {
    pub generator: GeneratorKind,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
}

impl SampleBatch {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total_time).collect()
    }

    pub fn mean_draws(&self) -> f64 {
        self.records.iter().map(|r| r.draws_used as f64).sum::<f64>() / self.records.len() as f64
    }
}

/// RNG stream for sample `index` of a batch: ChaCha12 seeded by the batch
/// seed with the sample index as the stream id.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generate a full-scale batch in parallel; output is a deterministic
/// function of (seed, sample index) regardless of scheduling.
pub fn run_batch(cfg: &HardwareConfig, seed: u64, samples: usize) -> Result<SampleBatch> {
    cfg.validate()?;
    if samples == 0 {
        return Err(Error::Parameter("samples must be at least 1".into()));
    }
    let records: Vec<SampleRecord> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let mut counter = DrawCounter::default();
            let (total_time, n_attempts) = simulate_bb84(cfg, &mut rng, &mut counter);
            SampleRecord {
                sample_id: i,
                n_attempts,
                total_time,
                draws_used: counter.units,
            }
        })
        .collect();
    Ok(SampleBatch {
        generator: GeneratorKind::FullScale,
        seed,
        records,
    })
}

/// Expected cost-model draws per completion sample:
/// (n·((2·E[max(N_A,N_B)] + 1)/p_swap + 1) + 1)/p₁.
pub fn expected_draws_full(cfg: &HardwareConfig, p1: f64) -> f64 {
    let p = cfg.p_gen;
    let pair_rounds = (6.0 - 4.0 * p) / (p * (2.0 - p));
    ((cfg.n as f64) * ((pair_rounds + 1.0) / cfg.p_swap + 1.0) + 1.0) / p1
}

/// 2×2 complex matrix for the density-matrix oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[Complex64; 2]; 2]);

impl Mat2 {
    pub fn zero() -> Self {
        Mat2([[Complex64::default(); 2]; 2])
    }

    pub fn from_rows(r0: [Complex64; 2], r1: [Complex64; 2]) -> Self {
        Mat2([r0, r1])
    }

    /// |v⟩⟨v| for a (not necessarily normalised) 2-vector.
    pub fn projector(v: [Complex64; 2]) -> Self {
        let mut m = Mat2::zero();
        let norm2 = (v[0].conj() * v[0] + v[1].conj() * v[1]).re;
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] = v[i] * v[j].conj() / norm2;
            }
        }
        m
    }

    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        let mut out = Mat2::zero();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    out.0[i][j] += self.0[i][k] * rhs.0[k][j];
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> Mat2 {
        let mut out = Mat2::zero();
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] = self.0[j][i].conj();
            }
        }
        out
    }

    pub fn add(&self, rhs: &Mat2) -> Mat2 {
        let mut out = *self;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] += rhs.0[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        let mut out = *self;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] *= s;
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    /// ⟨v|M|v⟩ for a normalised vector.
    pub fn expectation(&self, v: [Complex64; 2]) -> f64 {
        let mut acc = Complex64::default();
        for i in 0..2 {
            for j in 0..2 {
                acc += v[i].conj() * self.0[i][j] * v[j];
            }
        }
        acc.re
    }
}

/// Dephasing plus asymmetric amplitude damping acting on one memory:
/// ρ ↦ (1−p(t))(M₀ρM₀† + M₁ρM₁†) + p(t)·Z(M₀ρM₀† + M₁ρM₁†)Z with
/// p(t) = (1 − e^{−t/t_de})/2 and γ(t) = 1 − e^{−t/t_da}.
#[derive(Debug, Clone, Copy)]
pub struct NoiseChannel {
    pub t_de: f64,
    pub t_da: f64,
}

impl NoiseChannel {
    pub fn dephase_prob(&self, t: f64) -> f64 {
        0.5 * (1.0 - (-t / self.t_de).exp())
    }

    pub fn damping(&self, t: f64) -> f64 {
        1.0 - (-t / self.t_da).exp()
    }

    pub fn apply(&self, rho: &Mat2, t: f64) -> Mat2 {
        let gamma = self.damping(t);
        let p = self.dephase_prob(t);
        let c = |x: f64| Complex64::new(x, 0.0);
        let m0 = Mat2::from_rows([c(1.0), c(0.0)], [c(0.0), c((1.0 - gamma).sqrt())]);
        let m1 = Mat2::from_rows([c(0.0), c(gamma.sqrt())], [c(0.0), c(0.0)]);
        let damped = m0
            .mul(rho)
            .mul(&m0.adjoint())
            .add(&m1.mul(rho).mul(&m1.adjoint()));
        let z = Mat2::from_rows([c(1.0), c(0.0)], [c(0.0), c(-1.0)]);
        damped.scale(1.0 - p).add(&z.mul(&damped).mul(&z).scale(p))
    }
}

/// Density-matrix verification of the closed-form p_Λ.
///
/// For each BB84 data state, Bob's post-measurement state is the stated
/// (1±w)/2 mixture of the state and its flipped partner, each branch with
/// probability 1/2; the noise channel acts during T-COMM, then the
/// branch-appropriate corrective unitary is applied and the recovery
/// probability read off. The average over the four data states must equal
/// the closed form.
pub fn p_lambda_oracle(w: f64, tc2: f64, cfg: &HardwareConfig) -> Result<f64> {
    let c = |x: f64| Complex64::new(x, 0.0);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let ket0 = [c(1.0), c(0.0)];
    let ket1 = [c(0.0), c(1.0)];
    let ket_plus = [c(inv_sqrt2), c(inv_sqrt2)];
    let ket_minus = [c(inv_sqrt2), c(-inv_sqrt2)];
    let x_gate = Mat2::from_rows([c(0.0), c(1.0)], [c(1.0), c(0.0)]);
    let z_gate = Mat2::from_rows([c(1.0), c(0.0)], [c(0.0), c(-1.0)]);
    let channel = NoiseChannel {
        t_de: cfg.t_de,
        t_da: cfg.t_da,
    };

    // (data state, flipped partner, corrective unitary for the flipped branch)
    let cases = [
        (ket0, ket1, x_gate),
        (ket1, ket0, x_gate),
        (ket_plus, ket_minus, z_gate),
        (ket_minus, ket_plus, z_gate),
    ];
    let mut acc = 0.0;
    for (phi, phi_flip, flip_gate) in cases {
        let aligned = Mat2::projector(phi)
            .scale((1.0 + w) / 2.0)
            .add(&Mat2::projector(phi_flip).scale((1.0 - w) / 2.0));
        let flipped = Mat2::projector(phi)
            .scale((1.0 - w) / 2.0)
            .add(&Mat2::projector(phi_flip).scale((1.0 + w) / 2.0));
        for rho in [&aligned, &flipped] {
            let t = rho.trace();
            if (t.re - 1.0).abs() > 1e-12 || t.im.abs() > 1e-12 {
                return Err(Error::Instability(format!(
                    "pre-noise state not normalised: trace {t}"
                )));
            }
        }
        let noisy_aligned = channel.apply(&aligned, tc2);
        let noisy_flipped = channel.apply(&flipped, tc2);
        for rho in [&noisy_aligned, &noisy_flipped] {
            let t = rho.trace();
            if (t.re - 1.0).abs() > 1e-12 || t.im.abs() > 1e-12 {
                return Err(Error::Instability(format!(
                    "noise channel not trace-preserving: trace {t}"
                )));
            }
        }
        // aligned branch needs no correction; flipped branch is corrected
        // by the data-basis flip before readout
        let corrected = flip_gate.mul(&noisy_flipped).mul(&flip_gate.adjoint());
        let recover = 0.5 * noisy_aligned.expectation(phi) + 0.5 * corrected.expectation(phi);
        acc += recover;
    }
    Ok(acc / 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_channel_is_identity_at_zero() {
        let ch = NoiseChannel {
            t_de: 10.0,
            t_da: 20.0,
        };
        let rho = Mat2::projector([
            Complex64::new(0.6, 0.0),
            Complex64::new(0.0, 0.8),
        ]);
        let out = ch.apply(&rho, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((out.0[i][j] - rho.0[i][j]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn noise_channel_preserves_trace() {
        let ch = NoiseChannel {
            t_de: 3.0,
            t_da: 7.0,
        };
        let states = [
            [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
            [Complex64::new(0.6, 0.0), Complex64::new(0.48, 0.64)],
        ];
        for v in states {
            let rho = Mat2::projector(v);
            for t in [0.1, 1.0, 50.0] {
                let out = ch.apply(&rho, t);
                let tr = out.trace();
                assert!((tr.re - 1.0).abs() < 1e-12 && tr.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_limits() {
        let cfg = HardwareConfig::baseline(0.1);
        assert!((p_lambda_oracle(1.0, 0.0, &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert!((p_lambda_oracle(0.0, 123.0, &cfg).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_closed_form() {
        let cfg = HardwareConfig::baseline(0.1);
        for (w, tc2) in [(0.3, 0.5), (0.7, 2.0), (0.98, 1.0), (0.5, 1e4)] {
            let o = p_lambda_oracle(w, tc2, &cfg).unwrap();
            let f = p_lambda(w, tc2, &cfg);
            assert!((o - f).abs() < 1e-12, "w={w} tc2={tc2}: {o} vs {f}");
        }
    }

    #[test]
    fn werner_semigroup() {
        let w = werner_after(werner_after(0.9, 1.5, 10.0), 2.5, 10.0);
        assert!((w - werner_after(0.9, 4.0, 10.0)).abs() < 1e-14);
    }

    #[test]
    fn heralded_link_floor() {
        let cfg = HardwareConfig::baseline(0.3);
        let mut rng = stream_rng(7, 0);
        for _ in 0..200 {
            let (t_h, t_c, _) = simulate_heralded_link(&cfg, &mut rng);
            assert!(t_h >= cfg.gen.shift);
            assert!(t_c >= cfg.com.shift);
        }
    }

    #[test]
    fn batch_is_deterministic() {
        let cfg = HardwareConfig::baseline(0.5);
        let a = run_batch(&cfg, 42, 64).unwrap();
        let b = run_batch(&cfg, 42, 64).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn sample_floor_respected() {
        let cfg = HardwareConfig::baseline(0.5);
        let batch = run_batch(&cfg, 1, 32).unwrap();
        let floor = cfg.floor_v1();
        for r in batch.records {
            assert!(r.total_time >= floor, "{} < {floor}", r.total_time);
        }
    }
}
