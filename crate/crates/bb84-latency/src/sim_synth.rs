//! Synthetic completion-time sampler.
//!
//! Teleportation times are approximated by shifted Coxian phase-type
//! distributions fitted by moment matching, once per configuration. A
//! completion sample then needs only the protocol-trial count, the
//! conditional success/failure counts per trial, and three gamma–binomial
//! cascades that aggregate IID sums of the fitted laws in a number of draws
//! independent of the qubit count.

use crate::bb84::{Analyzer, CountTables, HardwareConfig};
use crate::rus::sample_geometric;
use crate::sim_full::{DrawCounter, GeneratorKind, SampleBatch, SampleRecord};
use crate::transforms::ShiftedExp;
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Shifted Coxian phase-type distribution: a deterministic shift plus `d`
/// sequential exponential phases, continuing from phase i to i+1 with
/// probability q_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxianPhaseType {
    pub rates: Vec<f64>,
    pub continue_probs: Vec<f64>,
    pub shift: f64,
}

impl CoxianPhaseType {
    pub fn new(rates: Vec<f64>, continue_probs: Vec<f64>, shift: f64) -> Result<Self> {
        if rates.is_empty() || continue_probs.len() + 1 != rates.len() {
            return Err(Error::Parameter(
                "Coxian needs d rates and d−1 continuation probabilities".into(),
            ));
        }
        if rates.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Parameter("Coxian rates must be positive".into()));
        }
        if continue_probs.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
            return Err(Error::Parameter(
                "Coxian continuation probabilities must lie in [0, 1]".into(),
            ));
        }
        if shift < 0.0 {
            return Err(Error::Parameter("Coxian shift must be nonnegative".into()));
        }
        Ok(CoxianPhaseType {
            rates,
            continue_probs,
            shift,
        })
    }

    pub fn phases(&self) -> usize {
        self.rates.len()
    }

    /// Raw moments 1..=order of the distribution including the shift.
    pub fn raw_moments(&self, order: usize) -> Vec<f64> {
        let core = coxian_core_moments(&self.rates, &self.continue_probs, order);
        shift_moments(&core, self.shift, order)
    }

    pub fn mean(&self) -> f64 {
        self.raw_moments(1)[0]
    }

    /// One draw of the distribution itself (a cascade with k = 1).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_coxian_iid_sum(self, 1, rng)
    }
}

/// Raw moments of the pure (unshifted) Coxian via the recursion
/// T_i = Exp(λ_i) + Bern(q_i)·T_{i+1}.
fn coxian_core_moments(rates: &[f64], qs: &[f64], order: usize) -> Vec<f64> {
    let d = rates.len();
    // moments[r] of the tail chain starting at the last phase
    let mut tail: Vec<f64> = (0..=order)
        .map(|r| factorial(r) / rates[d - 1].powi(r as i32))
        .collect();
    for i in (0..d - 1).rev() {
        let mut cur = vec![0.0; order + 1];
        cur[0] = 1.0;
        for r in 1..=order {
            let mut acc = 0.0;
            for m in 0..=r {
                let exp_mom = factorial(r - m) / rates[i].powi((r - m) as i32);
                let tail_mom = if m == 0 { 1.0 } else { qs[i] * tail[m] };
                acc += binom_f(r, m) * exp_mom * tail_mom;
            }
            cur[r] = acc;
        }
        tail = cur;
    }
    tail[1..].to_vec()
}

/// Raw moments of shift + T from the raw moments of T.
fn shift_moments(core: &[f64], shift: f64, order: usize) -> Vec<f64> {
    (1..=order)
        .map(|r| {
            let mut acc = shift.powi(r as i32);
            for i in 1..=r {
                acc += binom_f(r, i) * shift.powi((r - i) as i32) * core[i - 1];
            }
            acc
        })
        .collect()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

fn binom_f(n: usize, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Outcome report of a moment-matching fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub d_requested: usize,
    pub d_used: usize,
    /// relative errors of the matched raw moments, in order
    pub rel_errors: Vec<f64>,
    pub degraded: bool,
    pub iterations: usize,
}

impl FitReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().cloned().fold(0.0, f64::max)
    }
}

const FIT_TOL: f64 = 1e-6;
const FIT_TOL_LAST_RESORT: f64 = 1e-3;
const MULTI_STARTS: usize = 32;

/// Fit a shifted Coxian with `d` phases to the first 2d−1 raw moments of
/// the target by damped least squares on relative moment errors, parameters
/// in log/logit space, with multi-start. On persistent infeasibility the
/// phase count degrades one step at a time; d = 2 is accepted at a relaxed
/// tolerance before giving up.
pub fn fit_coxian(moments: &[f64], shift: f64, d: usize) -> Result<(CoxianPhaseType, FitReport)> {
    if d == 0 {
        return Err(Error::Parameter("phase count must be positive".into()));
    }
    if moments.len() < 2 * d - 1 {
        return Err(Error::Parameter(format!(
            "need {} moments for d = {d}, got {}",
            2 * d - 1,
            moments.len()
        )));
    }
    if !(moments[0] > shift) {
        return Err(Error::Parameter(
            "first moment must exceed the deterministic shift".into(),
        ));
    }
    // normalised target: moments of (X − shift)/scale, scale = mean − shift
    let scale = moments[0] - shift;
    let normalized = normalize_target(moments, shift, scale, moments.len());

    for d_try in (1..=d).rev() {
        let m_count = 2 * d_try - 1;
        let target = &normalized[..m_count];
        if d_try == 1 {
            // single phase: exact one-moment identity λ = 1/mean
            let cox = CoxianPhaseType::new(vec![1.0 / (scale * target[0])], vec![], shift)?;
            let errs = rel_errors(&cox, moments, 1);
            if errs[0] < FIT_TOL || d == 1 {
                return Ok((
                    cox,
                    FitReport {
                        d_requested: d,
                        d_used: 1,
                        rel_errors: errs,
                        degraded: d > 1,
                        iterations: 0,
                    },
                ));
            }
            break;
        }
        if let Some((params, iters)) = solve_moment_system(target, d_try) {
            let cox = denormalize(&params, d_try, scale, shift);
            let errs = rel_errors(&cox, moments, m_count);
            let tol = if d_try == 2 { FIT_TOL_LAST_RESORT } else { FIT_TOL };
            let max_err = errs.iter().cloned().fold(0.0, f64::max);
            if max_err < tol {
                return Ok((
                    cox,
                    FitReport {
                        d_requested: d,
                        d_used: d_try,
                        rel_errors: errs,
                        degraded: d_try < d,
                        iterations: iters,
                    },
                ));
            }
        }
    }
    Err(Error::FitFailure(format!(
        "no Coxian with 2..={d} phases matched the target moments"
    )))
}

fn normalize_target(moments: &[f64], shift: f64, scale: f64, count: usize) -> Vec<f64> {
    // E[((X − shift)/scale)^r] by binomial recentering
    (1..=count)
        .map(|r| {
            let mut acc = 0.0;
            for i in 0..=r {
                let raw = if i == 0 { 1.0 } else { moments[i - 1] };
                acc += binom_f(r, i) * (-shift).powi((r - i) as i32) * raw;
            }
            acc / scale.powi(r as i32)
        })
        .collect()
}

fn rel_errors(cox: &CoxianPhaseType, target: &[f64], count: usize) -> Vec<f64> {
    let got = cox.raw_moments(count);
    (0..count)
        .map(|i| ((got[i] - target[i]) / target[i]).abs())
        .collect()
}

fn denormalize(params: &FitParams, d: usize, scale: f64, shift: f64) -> CoxianPhaseType {
    CoxianPhaseType {
        rates: params.rates[..d].iter().map(|r| r / scale).collect(),
        continue_probs: params.qs[..d - 1].to_vec(),
        shift,
    }
}

struct FitParams {
    rates: Vec<f64>,
    qs: Vec<f64>,
}

/// Damped Gauss-Newton in log-rate / logit-q space with multi-start.
fn solve_moment_system(target: &[f64], d: usize) -> Option<(FitParams, usize)> {
    let m_count = target.len();
    let dim = 2 * d - 1;
    let residuals = |theta: &[f64]| -> Vec<f64> {
        let p = unpack(theta, d);
        let got = coxian_core_moments(&p.rates, &p.qs, m_count);
        (0..m_count)
            .map(|i| (got[i] - target[i]) / target[i])
            .collect()
    };

    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_c021);
    for start in starting_points(d, &mut rng) {
        let mut theta = start;
        let mut r = residuals(&theta);
        let mut cost = norm2(&r);
        let mut mu = 1e-3;
        let mut iters = 0;
        for _ in 0..250 {
            iters += 1;
            if max_abs(&r) < FIT_TOL * 1e-3 {
                break;
            }
            // forward-difference Jacobian
            let mut jac = vec![vec![0.0; dim]; m_count];
            for k in 0..dim {
                let h = 1e-7 * theta[k].abs().max(1.0);
                let mut bumped = theta.clone();
                bumped[k] += h;
                let rb = residuals(&bumped);
                for (j, row) in jac.iter_mut().enumerate() {
                    row[k] = (rb[j] - r[j]) / h;
                }
            }
            // normal equations with Levenberg damping
            let mut improved = false;
            for _ in 0..8 {
                let mut a = vec![vec![0.0; dim]; dim];
                let mut b = vec![0.0; dim];
                for i in 0..dim {
                    for j in 0..dim {
                        let mut acc = 0.0;
                        for row in jac.iter() {
                            acc += row[i] * row[j];
                        }
                        a[i][j] = acc;
                    }
                    a[i][i] *= 1.0 + mu;
                    a[i][i] += 1e-14;
                    let mut acc = 0.0;
                    for (row, rr) in jac.iter().zip(&r) {
                        acc += row[i] * rr;
                    }
                    b[i] = -acc;
                }
                let Some(delta) = solve_linear(a, b) else {
                    mu *= 10.0;
                    continue;
                };
                let cand: Vec<f64> = theta
                    .iter()
                    .zip(&delta)
                    .map(|(t, dd)| (t + dd).clamp(-40.0, 40.0))
                    .collect();
                let rc = residuals(&cand);
                let cc = norm2(&rc);
                if cc.is_finite() && cc < cost {
                    theta = cand;
                    r = rc;
                    cost = cc;
                    mu = (mu * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
                mu *= 10.0;
            }
            if !improved {
                break;
            }
        }
        let err = max_abs(&r);
        if best.as_ref().map_or(true, |(_, e, _)| err < *e) {
            best = Some((theta, err, iters));
        }
        if err < FIT_TOL * 1e-2 {
            break;
        }
    }
    best.map(|(theta, _, iters)| (unpack(&theta, d), iters))
}

fn unpack(theta: &[f64], d: usize) -> FitParams {
    FitParams {
        rates: theta[..d].iter().map(|t| t.exp()).collect(),
        qs: theta[d..2 * d - 1]
            .iter()
            .map(|t| 1.0 / (1.0 + (-t).exp()))
            .collect(),
    }
}

fn starting_points<R: Rng>(d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let dim = 2 * d - 1;
    let mut starts = Vec::with_capacity(MULTI_STARTS);
    let ladders = [1.0f64, 0.6, 1.6, 0.35, 2.8];
    for (idx, g) in ladders.iter().enumerate() {
        let mut theta = vec![0.0; dim];
        for (i, slot) in theta.iter_mut().enumerate().take(d) {
            // a normalized Erlang-d has per-phase rate d; tilt by the ladder
            *slot = (d as f64 * g.powi(i as i32)).ln();
        }
        let q0: f64 = if idx == 3 { 0.35 } else { 0.92 };
        for slot in theta.iter_mut().take(dim).skip(d) {
            *slot = (q0 / (1.0 - q0)).ln();
        }
        starts.push(theta);
    }
    while starts.len() < MULTI_STARTS {
        let base = starts[starts.len() % ladders.len()].clone();
        let jitter: Vec<f64> = base.iter().map(|t| t + rng.gen_range(-0.8..0.8)).collect();
        starts.push(jitter);
    }
    starts
}

fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let (pivot, pval) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())?;
        if pval < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Some(x)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &x| a.max(x.abs()))
}

/// Sum of `k` IID draws of a Coxian phase-type law, aggregated as
/// k·shift + Σ_l Gamma(D_l, λ_l) with D_1 = k and D_{l+1} ~ Bin(D_l, q_l).
/// The number of draws is constant in k.
pub fn sample_coxian_iid_sum<R: Rng + ?Sized>(cox: &CoxianPhaseType, k: u64, rng: &mut R) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let mut total = k as f64 * cox.shift;
    let mut count = k;
    for (l, &rate) in cox.rates.iter().enumerate() {
        if l > 0 {
            let q = cox.continue_probs[l - 1];
            count = if q == 0.0 || count == 0 {
                0
            } else if q == 1.0 {
                count
            } else {
                Binomial::new(count, q).expect("valid q").sample(rng)
            };
        }
        if count == 0 {
            break;
        }
        let g = Gamma::new(count as f64, 1.0 / rate).expect("valid gamma");
        total += g.sample(rng);
    }
    total
}

/// Inverse-CDF sampler over a flattened count table.
#[derive(Debug, Clone)]
pub struct CountSampler {
    entries: Vec<(u32, u32)>,
    cumulative: Vec<f64>,
}

impl CountSampler {
    pub fn new(rows: &[(u32, u32, f64)]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Parameter("empty count table".into()));
        }
        let mut entries = Vec::with_capacity(rows.len());
        let mut cumulative = Vec::with_capacity(rows.len());
        let mut acc = 0.0;
        for &(s, f, p) in rows {
            acc += p;
            entries.push((s, f));
            cumulative.push(acc);
        }
        if (acc - 1.0).abs() > 1e-6 {
            return Err(Error::Parameter(format!(
                "count table mass {acc} is not normalised"
            )));
        }
        for c in &mut cumulative {
            *c /= acc;
        }
        Ok(CountSampler {
            entries,
            cumulative,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, u32) {
        let u: f64 = rng.gen();
        let idx = self
            .cumulative
            .partition_point(|&c| c < u)
            .min(self.entries.len() - 1);
        self.entries[idx]
    }
}

/// Everything the synthetic sampler needs, reusable across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthModel {
    pub config_hash: String,
    pub d: usize,
    pub p1: f64,
    pub fit_success: CoxianPhaseType,
    pub fit_failure: CoxianPhaseType,
    pub fit_uncond: CoxianPhaseType,
    pub count_tables: CountTables,
    pub kc: ShiftedExp,
    pub n: u32,
    pub fit_reports: Vec<FitReport>,
}

/// Canonical hash of a hardware configuration, for model-cache validation.
pub fn config_hash(cfg: &HardwareConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serialises");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

impl SynthModel {
    /// Build the model from the analytic pipeline: conditional moments in,
    /// fitted phase-type laws and count tables out. The fit never sees raw
    /// samples, so the preprocessing is reusable across simulation runs.
    pub fn build(analyzer: &Analyzer, d: usize) -> Result<SynthModel> {
        use crate::bb84::MomentKind;
        let cfg = analyzer.cfg().clone();
        let shift = cfg.a_w();
        let order = 2 * d - 1;
        let mut reports = Vec::new();
        let mut fits = Vec::new();
        for kind in [
            MomentKind::Success,
            MomentKind::Failure,
            MomentKind::Unconditional,
        ] {
            let moments: Vec<f64> = (1..=order)
                .map(|r| analyzer.moments_of_x(kind, r))
                .collect::<Result<_>>()?;
            let (cox, report) = fit_coxian(&moments, shift, d)?;
            fits.push(cox);
            reports.push(report);
        }
        let p1 = analyzer.p1()?;
        if !(p1 > 0.0) {
            return Err(Error::DegenerateSuccess);
        }
        let count_tables = analyzer.count_tables()?;
        let fit_uncond = fits.pop().expect("three fits");
        let fit_failure = fits.pop().expect("three fits");
        let fit_success = fits.pop().expect("three fits");
        Ok(SynthModel {
            config_hash: config_hash(&cfg),
            d,
            p1,
            fit_success,
            fit_failure,
            fit_uncond,
            count_tables,
            kc: cfg.ab,
            n: cfg.n,
            fit_reports: reports,
        })
    }

    pub fn matches(&self, cfg: &HardwareConfig) -> bool {
        self.config_hash == config_hash(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json)
            .map_err(|e| Error::Parameter(format!("synthetic model parse failure: {e}")))
    }
}

/// One synthetic completion-time sample.
///
/// Draws N ~ Geo(p₁) protocol trials, one success-conditioned count pair and
/// N−1 failure-conditioned pairs, aggregates the success, failure and
/// unchecked teleportation times through gamma-binomial cascades, and adds
/// the reconciliation phases N·a_AB + Gamma(N, λ_AB).
pub fn synthetic_w_n<R: Rng + ?Sized>(
    model: &SynthModel,
    samplers: &(CountSampler, CountSampler),
    rng: &mut R,
    counter: &mut DrawCounter,
) -> (f64, u32) {
    let n_trials = sample_geometric(model.p1, rng);
    counter.charge(1);
    let (s0, f0) = samplers.1.sample(rng);
    counter.charge(2);
    let mut s_total = s0 as u64;
    let mut f_total = f0 as u64;
    for _ in 0..n_trials - 1 {
        let (s, f) = samplers.0.sample(rng);
        counter.charge(2);
        s_total += s as u64;
        f_total += f as u64;
    }
    let unchecked = model.n as u64 * n_trials - s_total - f_total;
    let w_success = sample_coxian_iid_sum(&model.fit_success, s_total, rng);
    let w_failure = sample_coxian_iid_sum(&model.fit_failure, f_total, rng);
    let w_uncond = sample_coxian_iid_sum(&model.fit_uncond, unchecked, rng);
    // cost model: one gamma-binomial cascade per observation
    counter.charge(2 * model.d as u64 - 1);
    let kc_gamma = Gamma::new(n_trials as f64, 1.0 / model.kc.rate)
        .expect("valid gamma")
        .sample(rng);
    counter.charge(1);
    let total = n_trials as f64 * model.kc.shift + kc_gamma + w_success + w_failure + w_uncond;
    (total, n_trials as u32)
}

/// Generate a synthetic batch with the same (seed, index) stream-splitting
/// contract as the full-scale simulator.
pub fn run_synth_batch(model: &SynthModel, seed: u64, samples: usize) -> Result<SampleBatch> {
    if samples == 0 {
        return Err(Error::Parameter("samples must be at least 1".into()));
    }
    let samplers = (
        CountSampler::new(&model.count_tables.u0)?,
        CountSampler::new(&model.count_tables.u1)?,
    );
    let records: Vec<SampleRecord> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let mut counter = DrawCounter::default();
            let (total_time, n_attempts) = synthetic_w_n(model, &samplers, &mut rng, &mut counter);
            SampleRecord {
                sample_id: i,
                n_attempts,
                total_time,
                draws_used: counter.units,
            }
        })
        .collect();
    Ok(SampleBatch {
        generator: GeneratorKind::Synthetic,
        seed,
        records,
    })
}

/// Expected cost-model draws per synthetic observation: 2d + 1 + 2/p₁.
pub fn expected_draws_synth(d: usize, p1: f64) -> f64 {
    2.0 * d as f64 + 1.0 + 2.0 / p1
}
