//! BB84-specific analytic stack: the teleportation success probability, the
//! per-qubit MGF ingredients m₁/m₀/M_X, the threshold-count recurrence and
//! its closed solution, D_n, the completion-time MGFs of protocol versions
//! V0 and V1, CDF and Chernoff evaluation, the attempt success probability
//! p₁, and the conditional count distributions feeding the synthetic
//! sampler.

use crate::numeric::jet::Jet;
use crate::numeric::{ln_gamma, KahanSum};
use crate::rus::{self, MgfEvaluator, TrialSpec};
use crate::transforms::halfplane::Coherence;
use crate::transforms::{ilt, HalfPlaneEngine, LinkKernel, ShiftedExp};
use crate::{Error, Result};
use dashmap::DashMap;
use num_complex::Complex64;
use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// All protocol and hardware parameters of a run.
///
/// Phase durations are shifted exponentials: `gen` is LINK-GEN, `com` is
/// L-COMM, `swap` is S-COMM, and `ab` covers both T-COMM and the
/// reconciliation phase K-COMM (they share parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    /// qubits teleported per BB84 attempt
    pub n: u32,
    /// fraction of basis-agreeing qubits sampled for reconciliation
    pub alpha: f64,
    /// fraction of sampled qubits that must agree for success
    pub beta: f64,
    pub gen: ShiftedExp,
    pub com: ShiftedExp,
    pub swap: ShiftedExp,
    pub ab: ShiftedExp,
    /// link-level entanglement generation success probability
    pub p_gen: f64,
    /// Bell-state measurement success probability at the repeater
    pub p_swap: f64,
    /// Werner parameter of a freshly generated link
    pub w0: f64,
    /// joint coherence time of the memories involved in the swap
    pub t_c: f64,
    /// dephasing constant of the receiving memory
    pub t_de: f64,
    /// amplitude damping constant of the receiving memory
    pub t_da: f64,
}

pub const MAX_QUBITS: u32 = 10_000;

impl HardwareConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Parameter(msg.to_string()))
            }
        };
        check(self.n >= 1, "n must be at least 1")?;
        check(self.n <= MAX_QUBITS, "n exceeds the supported cap of 10000")?;
        check(
            self.alpha > 0.0 && self.alpha <= 1.0,
            "alpha must lie in (0, 1]",
        )?;
        check(
            self.beta > 0.0 && self.beta <= 1.0,
            "beta must lie in (0, 1]",
        )?;
        check(
            self.p_gen > 0.0 && self.p_gen < 1.0,
            "p_gen must lie in (0, 1)",
        )?;
        check(
            self.p_swap > 0.0 && self.p_swap <= 1.0,
            "p_swap must lie in (0, 1]",
        )?;
        check(self.w0 > 0.0 && self.w0 <= 1.0, "w0 must lie in (0, 1]")?;
        check(self.t_c > 0.0, "t_c must be positive")?;
        check(self.t_de > 0.0, "t_de must be positive")?;
        check(self.t_da > 0.0, "t_da must be positive")?;
        for (se, name) in [
            (self.gen, "gen"),
            (self.com, "com"),
            (self.swap, "swap"),
            (self.ab, "ab"),
        ] {
            check(
                se.rate > 0.0 && se.shift >= 0.0,
                &format!("phase {name} needs rate > 0 and shift ≥ 0"),
            )?;
        }
        Ok(())
    }

    /// Minimum possible single-qubit teleportation time.
    pub fn a_w(&self) -> f64 {
        self.gen.shift + self.com.shift + self.swap.shift + self.ab.shift
    }

    /// Hard lower bound on the V1 completion time: n·a_W plus the
    /// reconciliation shift.
    pub fn floor_v1(&self) -> f64 {
        self.n as f64 * self.a_w() + self.ab.shift
    }

    /// The evaluation setup from the experiments: LINK-GEN, L-COMM and
    /// S-COMM are SE(2, 1/2), T-COMM and K-COMM are SE(1, 1), w0 = 0.98,
    /// t_c = t_de = t_da = 4·10⁴, n = 50, α = 0.3, β = 0.95. The swap
    /// probability is not reported there; 0.5 is this crate's choice.
    pub fn baseline(p_gen: f64) -> Self {
        HardwareConfig {
            n: 50,
            alpha: 0.3,
            beta: 0.95,
            gen: ShiftedExp {
                rate: 2.0,
                shift: 0.5,
            },
            com: ShiftedExp {
                rate: 2.0,
                shift: 0.5,
            },
            swap: ShiftedExp {
                rate: 2.0,
                shift: 0.5,
            },
            ab: ShiftedExp {
                rate: 1.0,
                shift: 1.0,
            },
            p_gen,
            p_swap: 0.5,
            w0: 0.98,
            t_c: 4.0e4,
            t_de: 4.0e4,
            t_da: 4.0e4,
        }
    }
}

/// Success probability of a single teleportation given the Werner parameter
/// `w` of the entanglement resource and the classical-communication delay
/// `tc2` (the T-COMM duration):
/// (2 + w·e^{−tc2/t_da} + w·e^{−tc2·(1/t_de + 1/(2·t_da))}) / 4.
pub fn p_lambda(w: f64, tc2: f64, cfg: &HardwareConfig) -> f64 {
    0.25 * (2.0
        + w * (-tc2 / cfg.t_da).exp()
        + w * (-tc2 * (1.0 / cfg.t_de + 1.0 / (2.0 * cfg.t_da))).exp())
}

/// A rational approximation num/den of a configured fraction, used to
/// resolve index-set boundaries like ⌈αB⌉ and ⌈βk⌉ with exact integer
/// arithmetic instead of float comparisons.
#[derive(Debug, Clone, Copy)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    /// Continued-fraction rationalisation; denominators stay small for the
    /// fractions that appear in configs (0.3 → 3/10, 0.95 → 19/20).
    pub fn from_f64(x: f64) -> Result<Self> {
        if !(x > 0.0 && x <= 1.0) {
            return Err(Error::Parameter(format!(
                "fraction must lie in (0, 1], got {x}"
            )));
        }
        let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
        let mut frac = x;
        for _ in 0..64 {
            let a = frac.floor();
            let p2 = a as u64 * p1 + p0;
            let q2 = a as u64 * q1 + q0;
            if q2 > 1_000_000_000 {
                break;
            }
            (p0, q0, p1, q1) = (p1, q1, p2, q2);
            let rem = frac - a;
            if (p1 as f64 / q1 as f64 - x).abs() < 1e-12 * x || rem.abs() < 1e-15 {
                break;
            }
            frac = 1.0 / rem;
        }
        Ok(Ratio { num: p1, den: q1 })
    }

    /// ⌈self · k⌉ via integer arithmetic.
    pub fn ceil_mul(&self, k: u64) -> u64 {
        (k * self.num).div_ceil(self.den)
    }

    /// The integer range {j : (k−1)/r < j ≤ k/r}, i.e. the basis counts B
    /// for which ⌈r·B⌉ = k, clamped to 0..=n.
    pub fn preimage_range(&self, k: u64, n: u64) -> (u64, u64) {
        let j_min = (k.saturating_sub(1) * self.den) / self.num + 1;
        let j_max = ((k * self.den) / self.num).min(n);
        (j_min, j_max)
    }

    /// Exact test of s/(s+f) ≥ self for integer counts.
    pub fn ratio_at_least(&self, s: u64, total: u64) -> bool {
        if total == 0 {
            return false;
        }
        s * self.den >= total * self.num
    }
}

/// ln C(n, j)
fn ln_binom(n: u64, j: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(j as f64 + 1.0) - ln_gamma((n - j) as f64 + 1.0)
}

/// P(B₁ = k) = 2^{−n} Σ_{(k−1)/α < j ≤ k/α} C(n, j), in log-space with
/// compensated summation.
fn prob_b1_equals(n: u64, alpha: &Ratio, k: u64) -> f64 {
    let (j_min, j_max) = alpha.preimage_range(k, n);
    if j_min > j_max {
        return 0.0;
    }
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let mut acc = KahanSum::default();
    for j in j_min..=j_max {
        acc.add((ln_binom(n, j) - ln2n).exp());
    }
    acc.value()
}

/// Closed-form solution of the recurrence a_{l,j} = m₀·a_{l−1,j} +
/// m₁·a_{l−1,j−1}: the MGF-with-indicator E[e^{tΣX} 1{ΣY ≥ j}] over l IID
/// qubits expressed through m₀(t), m₁(t).
pub fn m1_recursive_values(m0: Complex64, m1: Complex64, l: u32, j: u32) -> Result<Complex64> {
    if j > l {
        return Err(Error::IndexOutOfRange(format!("need 0 ≤ j ≤ l, got j={j}, l={l}")));
    }
    let l_ = l as u64;
    let j_ = j as u64;
    let sum = m0 + m1;
    if m1.norm() == 0.0 {
        return Ok(if j == 0 { cpow(sum, l_) } else { Complex64::default() });
    }
    if m0.norm() == 0.0 {
        return Ok(cpow(m1, l_));
    }
    if j == 0 {
        return Ok(cpow(sum, l_));
    }
    if j == l {
        return Ok(cpow(m1, l_));
    }
    if j == l - 1 {
        return Ok(cpow(m1, l_) + l as f64 * m0 * cpow(m1, l_ - 1));
    }
    // interior case 1 ≤ j ≤ l−2, assembled in log space so large l stays in
    // range: C(l,j)·m0^{l−j}·m1^j + C(l−1,j)·m0^{l−1−j}·m1^{j+1}
    //        + m1·Σ_{k=j}^{l−2} (m0+m1)^{l−1−k}·C(k,j)·m0^{k−j}·m1^j
    let lm0 = m0.ln();
    let lm1 = m1.ln();
    let lsum = sum.ln();
    let mut acc = Complex64::default();
    acc += cexp(ln_binom(l_, j_) + (l_ - j_) as f64 * lm0.re + j_ as f64 * lm1.re,
        (l_ - j_) as f64 * lm0.im + j_ as f64 * lm1.im);
    acc += cexp(
        ln_binom(l_ - 1, j_) + (l_ - 1 - j_) as f64 * lm0.re + (j_ + 1) as f64 * lm1.re,
        (l_ - 1 - j_) as f64 * lm0.im + (j_ + 1) as f64 * lm1.im,
    );
    for k in j_..=(l_ - 2) {
        acc += cexp(
            ln_binom(k, j_)
                + (l_ - 1 - k) as f64 * lsum.re
                + (k - j_) as f64 * lm0.re
                + (j_ + 1) as f64 * lm1.re,
            (l_ - 1 - k) as f64 * lsum.im + (k - j_) as f64 * lm0.im + (j_ + 1) as f64 * lm1.im,
        );
    }
    Ok(acc)
}

/// Companion M⁽⁰⁾(t; l, j) = (m₀+m₁)^l − M⁽¹⁾(t; l, j).
pub fn m0_recursive_values(m0: Complex64, m1: Complex64, l: u32, j: u32) -> Result<Complex64> {
    Ok(cpow(m0 + m1, l as u64) - m1_recursive_values(m0, m1, l, j)?)
}

/// D_n assembled from explicit per-qubit values m₀(t), m₁(t): the sum over
/// sampled counts k of the threshold term times M_X^{n−k} times P(B₁ = k).
pub fn d_n_values(
    m0: Complex64,
    m1: Complex64,
    n: u32,
    alpha: &Ratio,
    beta: &Ratio,
) -> Result<Complex64> {
    let n = n as u64;
    let mx = m0 + m1;
    let k_max = alpha.ceil_mul(n);
    let mut acc = Complex64::default();
    for k in 1..=k_max {
        let pk = prob_b1_equals(n, alpha, k);
        if pk == 0.0 {
            continue;
        }
        let thr = beta.ceil_mul(k);
        let inner = m1_recursive_values(m0, m1, k as u32, thr as u32)?;
        acc += inner * cpow(mx, n - k) * pk;
    }
    Ok(acc)
}

fn cpow(z: Complex64, e: u64) -> Complex64 {
    if e == 0 {
        return ONE;
    }
    if z.norm() == 0.0 {
        return Complex64::default();
    }
    let l = z.ln();
    cexp(e as f64 * l.re, e as f64 * l.im)
}

fn cexp(log_mag: f64, phase: f64) -> Complex64 {
    Complex64::from_polar(log_mag.exp(), phase)
}

/// The three per-qubit MGF evaluators: m₁(t) = E[e^{tX} Y],
/// m₀(t) = E[e^{tX}(1−Y)], and M_X(t) = E[e^{tX}].
#[derive(Clone)]
pub struct QubitMgfTriple {
    pub m1: MgfEvaluator,
    pub m0: MgfEvaluator,
    pub mx: MgfEvaluator,
}

/// M⁽¹⁾ evaluated through a [`QubitMgfTriple`].
pub fn m1_recursive(
    t: Complex64,
    l: u32,
    j: u32,
    triple: &QubitMgfTriple,
) -> Result<Complex64> {
    let m0 = triple.m0.eval(t)?;
    let m1 = triple.m1.eval(t)?;
    m1_recursive_values(m0, m1, l, j)
}

/// Jet-space variant of the closed recurrence solution, used for moment
/// extraction at t = 0. Direct binomial coefficients cap the block count.
fn m1_recursive_jet(m0: &Jet, m1: &Jet, l: u32, j: u32) -> Result<Jet> {
    if j > l {
        return Err(Error::IndexOutOfRange(format!("need 0 ≤ j ≤ l, got j={j}, l={l}")));
    }
    if l > 900 {
        return Err(Error::Parameter(
            "moment-space recurrence supports sample sizes up to 900".into(),
        ));
    }
    let sum = m0.add(m1);
    if j == 0 {
        return Ok(sum.powi(l));
    }
    if j == l {
        return Ok(m1.powi(l));
    }
    if j == l - 1 {
        return Ok(m1.powi(l).add(&m0.mul(&m1.powi(l - 1)).scale(Complex64::new(l as f64, 0.0))));
    }
    let binom = |n: u64, k: u64| ln_binom(n, k).exp();
    let (l_, j_) = (l as u64, j as u64);
    let mut acc = m0
        .powi(l - j)
        .mul(&m1.powi(j))
        .scale(Complex64::new(binom(l_, j_), 0.0));
    acc = acc.add(
        &m0.powi(l - 1 - j)
            .mul(&m1.powi(j + 1))
            .scale(Complex64::new(binom(l_ - 1, j_), 0.0)),
    );
    for k in j..=(l - 2) {
        acc = acc.add(
            &sum.powi(l - 1 - k)
                .mul(&m0.powi(k - j))
                .mul(&m1.powi(j + 1))
                .scale(Complex64::new(binom(k as u64, j_), 0.0)),
        );
    }
    Ok(acc)
}

/// Which teleportation-time law a moment refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentKind {
    Unconditional,
    Success,
    Failure,
}

pub const MAX_MOMENT_ORDER: usize = 13;

/// Precomputed conditional count tables P(N_S, N_F | U = u).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CountTables {
    /// flattened (n_s, n_f, probability) rows for U = 0
    pub u0: Vec<(u32, u32, f64)>,
    /// rows for U = 1
    pub u1: Vec<(u32, u32, f64)>,
}

/// Analytic evaluator bound to one hardware configuration.
///
/// Clones share the underlying caches; expensive I(t, s) evaluations are
/// memoised per transform argument and safe under concurrent readers.
#[derive(Clone)]
pub struct Analyzer {
    inner: Arc<Inner>,
}

struct Inner {
    cfg: HardwareConfig,
    kernel: LinkKernel,
    alpha: Ratio,
    beta: Ratio,
    i_cache: DashMap<(u64, u64, u8), Complex64>,
    qubit_jets: OnceCell<Result<(Jet, Jet)>>,
    p1: OnceCell<Result<f64>>,
    w_abscissa: OnceCell<Result<f64>>,
}

impl Analyzer {
    pub fn new(cfg: HardwareConfig) -> Result<Self> {
        Self::with_engine(cfg, HalfPlaneEngine::Auto, 128)
    }

    pub fn with_engine(cfg: HardwareConfig, engine: HalfPlaneEngine, cutoff: u32) -> Result<Self> {
        cfg.validate()?;
        let kernel = LinkKernel::new(cfg.gen, cfg.com, cfg.p_gen, engine, cutoff)?;
        let alpha = Ratio::from_f64(cfg.alpha)?;
        let beta = Ratio::from_f64(cfg.beta)?;
        Ok(Analyzer {
            inner: Arc::new(Inner {
                cfg,
                kernel,
                alpha,
                beta,
                i_cache: DashMap::new(),
                qubit_jets: OnceCell::new(),
                p1: OnceCell::new(),
                w_abscissa: OnceCell::new(),
            }),
        })
    }

    pub fn cfg(&self) -> &HardwareConfig {
        &self.inner.cfg
    }

    pub fn kernel(&self) -> &LinkKernel {
        &self.inner.kernel
    }

    pub fn alpha_ratio(&self) -> &Ratio {
        &self.inner.alpha
    }

    pub fn beta_ratio(&self) -> &Ratio {
        &self.inner.beta
    }

    /// Memoised I(t, s); s is either ∞ or the configured coherence time.
    pub fn i_of(&self, t: Complex64, s: Coherence) -> Result<Complex64> {
        let tag = match s {
            Coherence::Infinite => 0u8,
            Coherence::Finite(_) => 1u8,
        };
        let key = (t.re.to_bits(), t.im.to_bits(), tag);
        if let Some(hit) = self.inner.i_cache.get(&key) {
            return Ok(*hit);
        }
        let v = self.inner.kernel.i_of(t, s)?;
        self.inner.i_cache.insert(key, v);
        Ok(v)
    }

    fn coherence(&self) -> Coherence {
        Coherence::Finite(self.inner.cfg.t_c)
    }

    /// MGF of the total failed-swap time T_γ: the geometric compound
    /// p_swap / (1 − (1−p_swap)·M_{T_C'}(t)·I(t, ∞)).
    pub fn mgf_t_gamma(&self, t: Complex64) -> Result<Complex64> {
        let cfg = &self.inner.cfg;
        if cfg.p_swap == 1.0 {
            return Ok(ONE);
        }
        let product = cfg.swap.mgf(t)? * self.i_of(t, Coherence::Infinite)?;
        if (1.0 - cfg.p_swap) * product.norm() >= 1.0 {
            return Err(Error::Divergent { at: t.re });
        }
        Ok(cfg.p_swap / (ONE - (1.0 - cfg.p_swap) * product))
    }

    /// m₁(t) per the success-probability decomposition: the swap compound
    /// times the decoherence-weighted communication factors.
    pub fn m1(&self, t: Complex64) -> Result<Complex64> {
        let cfg = &self.inner.cfg;
        let tg = self.mgf_t_gamma(t)?;
        let i_inf = self.i_of(t, Coherence::Infinite)?;
        let i_tc = self.i_of(t, self.coherence())?;
        let mp = cfg.swap.mgf(t)?;
        let mpp = cfg.ab.mgf(t)?;
        let mp_tc = cfg.swap.mgf(t - 1.0 / cfg.t_c)?;
        let mpp_da = cfg.ab.mgf(t - 1.0 / cfg.t_da)?;
        let mpp_de = cfg.ab.mgf(t - 1.0 / cfg.t_de - 1.0 / (2.0 * cfg.t_da))?;
        Ok(0.25
            * tg
            * (2.0 * i_inf * mp * mpp
                + cfg.w0 * cfg.w0 * i_tc * mp_tc * (mpp_da + mpp_de)))
    }

    /// M_X(t) = M_{T_γ}(t)·I(t, ∞)·M_{T_C'}(t)·M_{T_C''}(t).
    pub fn mx(&self, t: Complex64) -> Result<Complex64> {
        let cfg = &self.inner.cfg;
        Ok(self.mgf_t_gamma(t)?
            * self.i_of(t, Coherence::Infinite)?
            * cfg.swap.mgf(t)?
            * cfg.ab.mgf(t)?)
    }

    pub fn m0(&self, t: Complex64) -> Result<Complex64> {
        Ok(self.mx(t)? - self.m1(t)?)
    }

    /// The per-qubit MGF triple as shareable evaluators.
    pub fn qubit_mgfs(&self) -> QubitMgfTriple {
        let b = self.qubit_abscissa_hint();
        let a1 = self.clone();
        let a0 = self.clone();
        let ax = self.clone();
        QubitMgfTriple {
            m1: MgfEvaluator::new(b, move |t| a1.m1(t)),
            m0: MgfEvaluator::new(b, move |t| a0.m0(t)),
            mx: MgfEvaluator::new(b, move |t| ax.mx(t)),
        }
    }

    /// Upper bound used to seed abscissa searches; the true boundary is
    /// found dynamically from divergence errors.
    fn qubit_abscissa_hint(&self) -> f64 {
        let cfg = &self.inner.cfg;
        (2.0 * self.inner.kernel.b_h())
            .min(cfg.swap.rate)
            .min(cfg.ab.rate)
    }

    /// D_n(t) = Σ_k M⁽¹⁾(t; k, ⌈βk⌉)·M_X^{n−k}(t)·P(B₁ = k).
    pub fn d_n(&self, t: Complex64) -> Result<Complex64> {
        let m0 = self.m0(t)?;
        let m1 = self.m1(t)?;
        d_n_values(
            m0,
            m1,
            self.inner.cfg.n,
            &self.inner.alpha,
            &self.inner.beta,
        )
    }

    /// MGF of the V1 completion time:
    /// M_{K_C}·D_n / (1 − M_{K_C}·(M_Xⁿ − D_n)).
    pub fn mgf_w_v1(&self, t: Complex64) -> Result<Complex64> {
        let mk = self.inner.cfg.ab.mgf(t)?;
        let dn = self.d_n(t)?;
        let mxn = cpow(self.mx(t)?, self.inner.cfg.n as u64);
        let fail = mk * (mxn - dn);
        if fail.norm() >= 1.0 {
            return Err(Error::Divergent { at: t.re });
        }
        Ok(mk * dn / (ONE - fail))
    }

    /// MGF of the V0 completion time with explicit success threshold `c`
    /// (defaults to ⌈βn⌉ when `None`).
    pub fn mgf_w_v0(&self, t: Complex64, c: Option<u32>) -> Result<Complex64> {
        let n = self.inner.cfg.n;
        let c = c.unwrap_or(self.inner.beta.ceil_mul(n as u64) as u32);
        let mk = self.inner.cfg.ab.mgf(t)?;
        let m0 = self.m0(t)?;
        let m1 = self.m1(t)?;
        let one_part = m1_recursive_values(m0, m1, n, c)?;
        let zero_part = cpow(m0 + m1, n as u64) - one_part;
        let fail = mk * zero_part;
        if fail.norm() >= 1.0 {
            return Err(Error::Divergent { at: t.re });
        }
        Ok(mk * one_part / (ONE - fail))
    }

    /// The V1 protocol as a repeat-until-success trial spec: success term
    /// D_n, failure term M_Xⁿ − D_n, communication K_C.
    pub fn trial_spec_v1(&self) -> TrialSpec {
        let b = self.qubit_abscissa_hint();
        let succ = self.clone();
        let fail = self.clone();
        TrialSpec {
            success_term: MgfEvaluator::new(b, move |t| succ.d_n(t)),
            failure_term: MgfEvaluator::new(b, move |t| {
                let dn = fail.d_n(t)?;
                let mxn = cpow(fail.mx(t)?, fail.inner.cfg.n as u64);
                Ok(mxn - dn)
            }),
            comm_mgf: self.inner.cfg.ab.mgf_evaluator(),
        }
    }

    /// Convergence abscissa of the V1 completion-time MGF (cached).
    pub fn w_abscissa(&self) -> Result<f64> {
        self.inner
            .w_abscissa
            .get_or_init(|| rus::convergence_abscissa(&self.trial_spec_v1()))
            .clone()
    }

    /// The V1 completion-time MGF as an evaluator carrying its abscissa.
    pub fn w_mgf_evaluator(&self) -> Result<MgfEvaluator> {
        let b = self.w_abscissa()?;
        let a = self.clone();
        Ok(MgfEvaluator::new(b, move |t| a.mgf_w_v1(t)))
    }

    /// CDF of the V1 completion time via Laplace inversion (Euler method by
    /// default; the composed MGF cannot be continued onto a Talbot contour).
    pub fn cdf_w_v1(&self, s: f64) -> Result<f64> {
        self.cdf_w_v1_with(s, ilt::IltMethod::Euler, 30)
    }

    pub fn cdf_w_v1_with(&self, s: f64, method: ilt::IltMethod, nodes: usize) -> Result<f64> {
        let floor = self.inner.cfg.floor_v1();
        if s <= floor {
            return Ok(0.0);
        }
        let m = self.w_mgf_evaluator()?;
        ilt::invert_laplace_cdf_floored(&m, floor, s, method, nodes)
    }

    /// Grid-minimised Chernoff bound on P(W > s).
    pub fn chernoff_w_v1(&self, s: f64, grid_size: usize) -> Result<f64> {
        let m = self.w_mgf_evaluator()?;
        rus::chernoff_bound(&m, s, grid_size)
    }

    /// Jets of (m₁, M_X) at t = 0, to `MAX_MOMENT_ORDER + 1` coefficients.
    fn qubit_jets(&self) -> Result<(Jet, Jet)> {
        self.inner
            .qubit_jets
            .get_or_init(|| self.build_qubit_jets(MAX_MOMENT_ORDER + 1))
            .clone()
    }

    fn build_qubit_jets(&self, order: usize) -> Result<(Jet, Jet)> {
        let cfg = &self.inner.cfg;
        let i_inf = self.inner.kernel.i_jet(Coherence::Infinite, order)?;
        let i_tc = self.inner.kernel.i_jet(self.coherence(), order)?;
        let se_jet = |se: &ShiftedExp, base: f64| {
            Jet::exp_affine(se.shift, Complex64::new(base, 0.0), order).mul(
                &Jet::exp_rate_kernel(se.rate, Complex64::new(base, 0.0), order),
            )
        };
        let mp = se_jet(&cfg.swap, 0.0);
        let mpp = se_jet(&cfg.ab, 0.0);
        let mp_tc = se_jet(&cfg.swap, -1.0 / cfg.t_c);
        let mpp_da = se_jet(&cfg.ab, -1.0 / cfg.t_da);
        let mpp_de = se_jet(&cfg.ab, -1.0 / cfg.t_de - 1.0 / (2.0 * cfg.t_da));
        let tg = if cfg.p_swap == 1.0 {
            Jet::constant(ONE, order)
        } else {
            let denom = Jet::constant(ONE, order).sub(
                &mp.mul(&i_inf)
                    .scale(Complex64::new(1.0 - cfg.p_swap, 0.0)),
            );
            denom.recip().scale(Complex64::new(cfg.p_swap, 0.0))
        };
        let m1 = tg
            .mul(
                &i_inf
                    .mul(&mp)
                    .mul(&mpp)
                    .scale(Complex64::new(2.0, 0.0))
                    .add(
                        &i_tc
                            .mul(&mp_tc)
                            .mul(&mpp_da.add(&mpp_de))
                            .scale(Complex64::new(cfg.w0 * cfg.w0, 0.0)),
                    ),
            )
            .scale(Complex64::new(0.25, 0.0));
        let mx = tg.mul(&i_inf).mul(&mp).mul(&mpp);
        Ok((m1, mx))
    }

    /// P(Y = 1): the probability a single teleported qubit is measured
    /// faithfully.
    pub fn p_y(&self) -> Result<f64> {
        let (m1, _) = self.qubit_jets()?;
        Ok(m1.coeff(0).re)
    }

    /// Raw moments of the teleportation time X, conditionally on the
    /// teleportation outcome or unconditionally, extracted from the MGF
    /// jets at zero.
    pub fn moments_of_x(&self, kind: MomentKind, order: usize) -> Result<f64> {
        if order == 0 || order > MAX_MOMENT_ORDER {
            return Err(Error::Parameter(format!(
                "moment order must lie in 1..={MAX_MOMENT_ORDER}, got {order}"
            )));
        }
        let (m1, mx) = self.qubit_jets()?;
        let value = match kind {
            MomentKind::Unconditional => {
                let norm = mx.coeff(0).re;
                mx.derivative(order).re / norm
            }
            MomentKind::Success => {
                let p = m1.coeff(0).re;
                if !(p > 0.0) {
                    return Err(Error::Parameter(
                        "success-conditional moments need P(Y=1) > 0".into(),
                    ));
                }
                m1.derivative(order).re / p
            }
            MomentKind::Failure => {
                let m0 = mx.sub(&m1);
                let p = m0.coeff(0).re;
                if !(p > 0.0) {
                    return Err(Error::Parameter(
                        "failure-conditional moments need P(Y=0) > 0".into(),
                    ));
                }
                m0.derivative(order).re / p
            }
        };
        Ok(value)
    }

    /// Mean and variance of the V1 completion time, from the MGF jet at 0.
    pub fn w_v1_mean_var(&self) -> Result<(f64, f64)> {
        let w = self.w_jet(2)?;
        let mean = w.derivative(1).re;
        let second = w.derivative(2).re;
        Ok((mean, second - mean * mean))
    }

    /// Jet of the V1 completion-time MGF at t = 0.
    pub fn w_jet(&self, order: usize) -> Result<Jet> {
        let (m1_full, mx_full) = self.qubit_jets()?;
        // truncate to the requested order
        let mut m1 = Jet::zero(order);
        let mut mx = Jet::zero(order);
        for k in 0..=order {
            m1.set_coeff(k, m1_full.coeff(k));
            mx.set_coeff(k, mx_full.coeff(k));
        }
        let m0 = mx.sub(&m1);
        let cfg = &self.inner.cfg;
        let n = cfg.n as u64;
        let mk = Jet::exp_affine(cfg.ab.shift, Complex64::default(), order)
            .mul(&Jet::exp_rate_kernel(cfg.ab.rate, Complex64::default(), order));
        let k_max = self.inner.alpha.ceil_mul(n);
        let mut dn = Jet::zero(order);
        for k in 1..=k_max {
            let pk = prob_b1_equals(n, &self.inner.alpha, k);
            if pk == 0.0 {
                continue;
            }
            let thr = self.inner.beta.ceil_mul(k);
            let inner = m1_recursive_jet(&m0, &m1, k as u32, thr as u32)?;
            dn = dn.add(
                &inner
                    .mul(&mx.powi((n - k) as u32))
                    .scale(Complex64::new(pk, 0.0)),
            );
        }
        let mxn = mx.powi(n as u32);
        let fail = mk.mul(&mxn.sub(&dn));
        let denom = Jet::constant(ONE, order).sub(&fail);
        Ok(mk.mul(&dn).div(&denom))
    }

    /// P(U = 1): probability one BB84 attempt succeeds (cached).
    pub fn p1(&self) -> Result<f64> {
        self.inner
            .p1
            .get_or_init(|| {
                let py = self.p_y()?;
                Ok(self.p1_given_py(py))
            })
            .clone()
    }

    /// p₁ for an explicitly supplied per-qubit success probability; the
    /// split keeps enumeration oracles independent of the MGF pipeline.
    pub fn p1_given_py(&self, py: f64) -> f64 {
        let n = self.inner.cfg.n as u64;
        let mut acc = KahanSum::default();
        let k_max = self.inner.alpha.ceil_mul(n);
        for k in 1..=k_max {
            let pk = prob_b1_equals(n, &self.inner.alpha, k);
            if pk == 0.0 {
                continue;
            }
            let thr = self.inner.beta.ceil_mul(k);
            acc.add(binomial_tail_at_least(k, py, thr) * pk);
        }
        acc.value()
    }

    /// P(N_S = s, N_F = f | U = u).
    pub fn cond_counts_pmf(&self, s: u32, f: u32, u: u8) -> Result<f64> {
        let py = self.p_y()?;
        let p1 = self.p1()?;
        self.cond_counts_pmf_given(s, f, u, py, p1)
    }

    pub fn cond_counts_pmf_given(&self, s: u32, f: u32, u: u8, py: f64, p1: f64) -> Result<f64> {
        if u > 1 {
            return Err(Error::Parameter(format!("u must be 0 or 1, got {u}")));
        }
        if p1 <= 0.0 || p1 >= 1.0 {
            return Err(Error::Parameter(format!(
                "conditional count tables need p1 in (0,1), got {p1}"
            )));
        }
        let n = self.inner.cfg.n as u64;
        let d = (s + f) as u64;
        if d > self.inner.alpha.ceil_mul(n) {
            return Ok(0.0);
        }
        let meets = self.inner.beta.ratio_at_least(s as u64, d);
        if (u == 1) != meets {
            return Ok(0.0);
        }
        let pb1 = prob_b1_equals_zero_ok(n, &self.inner.alpha, d);
        if pb1 == 0.0 {
            return Ok(0.0);
        }
        let binom = if d == 0 {
            1.0
        } else {
            (ln_binom(d, s as u64) + xlny(s as f64, py) + xlny(f as f64, 1.0 - py)).exp()
        };
        let norm = if u == 1 { p1 } else { 1.0 - p1 };
        Ok(binom * pb1 / norm)
    }

    /// Both count tables, enumerated over the full support.
    pub fn count_tables(&self) -> Result<CountTables> {
        let py = self.p_y()?;
        let p1 = self.p1()?;
        self.count_tables_given(py, p1)
    }

    pub fn count_tables_given(&self, py: f64, p1: f64) -> Result<CountTables> {
        let n = self.inner.cfg.n as u64;
        let d_max = self.inner.alpha.ceil_mul(n) as u32;
        let mut u0 = Vec::new();
        let mut u1 = Vec::new();
        for d in 0..=d_max {
            for s in 0..=d {
                let f = d - s;
                let p0 = self.cond_counts_pmf_given(s, f, 0, py, p1)?;
                if p0 > 0.0 {
                    u0.push((s, f, p0));
                }
                let p1v = self.cond_counts_pmf_given(s, f, 1, py, p1)?;
                if p1v > 0.0 {
                    u1.push((s, f, p1v));
                }
            }
        }
        Ok(CountTables { u0, u1 })
    }
}

/// P(B₁ = d) including the degenerate d = 0 cell (no basis agreement).
fn prob_b1_equals_zero_ok(n: u64, alpha: &Ratio, d: u64) -> f64 {
    if d == 0 {
        return (-(n as f64) * std::f64::consts::LN_2).exp();
    }
    prob_b1_equals(n, alpha, d)
}

/// x·ln(y) with the 0·ln(0) = 0 convention.
fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// P(Bin(k, p) ≥ thr), summed in log space.
pub fn binomial_tail_at_least(k: u64, p: f64, thr: u64) -> f64 {
    if thr == 0 {
        return 1.0;
    }
    if thr > k {
        return 0.0;
    }
    let mut acc = KahanSum::default();
    for j in thr..=k {
        acc.add((ln_binom(k, j) + xlny(j as f64, p) + xlny((k - j) as f64, 1.0 - p)).exp());
    }
    acc.value().min(1.0)
}
