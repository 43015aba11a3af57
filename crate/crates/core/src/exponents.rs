//! Bootstrap exponent recursions for the three chemotaxis regimes and their
//! programmatic verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Sensitivity regimes: weak `[0, 1]`, moderate `(1, 3/2]`, strong `(3/2, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Weak,
    Moderate,
    Strong,
}

impl Regime {
    pub fn of(alpha: f64) -> Option<Regime> {
        if (0.0..=1.0).contains(&alpha) {
            Some(Regime::Weak)
        } else if alpha > 1.0 && alpha <= 1.5 {
            Some(Regime::Moderate)
        } else if alpha > 1.5 && alpha < 2.0 {
            Some(Regime::Strong)
        } else {
            None
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::Weak => "weak",
            Regime::Moderate => "moderate",
            Regime::Strong => "strong",
        }
    }
}

/// One step `k` of a recursion; `first` is m_k, m̂_k or q_k depending on the regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentTriple {
    pub k: usize,
    pub first: f64,
    pub p: f64,
    pub r: f64,
}

pub const DEFAULT_SLACK: f64 = 1e-6;

/// Exponent reached from a bound on `∫u^r` in the weak regime:
/// `r + (2r/3 − 2α + 1) − slack`, which must stay above `r + 1/4`.
pub fn weak_feedback_p(r: f64, alpha: f64, slack: f64) -> Result<f64> {
    if !(r >= 2.0) {
        return Err(Error::InvalidArgument(format!("r must be at least 2, got {r}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if !(slack > 0.0) {
        return Err(Error::InvalidArgument("slack must be positive".into()));
    }
    let increment = 2.0 * r / 3.0 - 2.0 * alpha + 1.0;
    if increment - slack <= 0.25 {
        return Err(Error::InvalidArgument(format!(
            "slack {slack} too large: p would not exceed r + 1/4"
        )));
    }
    Ok(r + increment - slack)
}

/// Exclusive supremum of the admissible gradient exponent in the weak regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum P0Sup {
    Finite(f64),
    Unbounded,
}

pub fn p0_sup(alpha: f64) -> Result<P0Sup> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if alpha == 0.0 {
        Ok(P0Sup::Unbounded)
    } else {
        Ok(P0Sup::Finite(3.0 * (3.0 - alpha) / alpha))
    }
}

/// `p_k = m_k/2 + 7/2 − 2α`, `r_k = min(4p_k/3 − 2, p_k − 1)`, `m_{k+1} = 2p_k/3 + r_k + 2`.
///
/// Returns `steps` triples `(m_k, p_k, r_k)`, k = 0..steps.
pub fn moderate_seq(m0: f64, alpha: f64, steps: usize) -> Vec<ExponentTriple> {
    let mut m = m0;
    (0..steps)
        .map(|k| {
            let p = m / 2.0 + 3.5 - 2.0 * alpha;
            // (4p − 6)/3 rounds 2/3 correctly where 4p/3 − 2 does not
            let r = ((4.0 * p - 6.0) / 3.0).min(p - 1.0);
            let t = ExponentTriple { k, first: m, p, r };
            m = 2.0 * p / 3.0 + r + 2.0;
            t
        })
        .collect()
}

/// `2p/3 + r + 2`, the next first component of both moderate recursions.
pub fn moderate_next(t: &ExponentTriple) -> f64 {
    2.0 * t.p / 3.0 + t.r + 2.0
}

/// `p̂_k = m̂_k + 3 − 2α`, `r̂_k = p̂_k − 1`, `m̂_{k+1} = 2p̂_k/3 + r̂_k + 2`.
pub fn moderate_seq_hat(mhat0: f64, alpha: f64, steps: usize) -> Vec<ExponentTriple> {
    let mut m = mhat0;
    (0..steps)
        .map(|k| {
            let p = m + 3.0 - 2.0 * alpha;
            let r = p - 1.0;
            let t = ExponentTriple { k, first: m, p, r };
            m = 2.0 * p / 3.0 + r + 2.0;
            t
        })
        .collect()
}

/// `p_k = q_k + 5 − 2α`, `r_k = p_k − 1`, `q_{k+1} = 7p_k/6 + 2α − 5`.
pub fn strong_seq(q0: f64, alpha: f64, steps: usize) -> Vec<ExponentTriple> {
    let mut q = q0;
    (0..steps)
        .map(|k| {
            let p = q + 5.0 - 2.0 * alpha;
            let t = ExponentTriple { k, first: q, p, r: p - 1.0 };
            q = 7.0 * p / 6.0 + 2.0 * alpha - 5.0;
            t
        })
        .collect()
}

/// A failed check with the tuple that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub sequence: &'static str,
    pub check: &'static str,
    pub alpha: f64,
    pub seed_value: f64,
    pub k: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceVerification {
    pub sequence: &'static str,
    pub samples: usize,
    pub checks_run: u64,
    pub violations: Vec<Violation>,
    /// Seeds with p₀ ≤ 1 (so r₀ ≤ 0) in the strong regime; logged, not failed.
    pub boundary_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub iterations: usize,
    pub sequences: Vec<SequenceVerification>,
}

impl VerifyReport {
    pub fn total_violations(&self) -> usize {
        self.sequences.iter().map(|s| s.violations.len()).sum()
    }
}

pub const VERIFY_ITERATIONS: usize = 200;

/// Relative tolerance for checks that hold with equality in exact arithmetic.
const ROUNDING: f64 = 1e-12;

struct Checker {
    sequence: &'static str,
    alpha: f64,
    seed_value: f64,
    checks: u64,
    violations: Vec<Violation>,
}

impl Checker {
    fn check(&mut self, ok: bool, check: &'static str, k: usize, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.violations.push(Violation {
                sequence: self.sequence,
                check,
                alpha: self.alpha,
                seed_value: self.seed_value,
                k,
                detail: detail(),
            });
        }
    }
}

/// Checks parts a)–c) of the moderate recursion for one (α, m₀).
pub fn check_moderate(alpha: f64, m0: f64, iterations: usize) -> (u64, Vec<Violation>) {
    let seq = moderate_seq(m0, alpha, iterations + 1);
    let mut c = Checker {
        sequence: "moderate",
        alpha,
        seed_value: m0,
        checks: 0,
        violations: Vec::new(),
    };
    let mut k0 = None;
    for w in seq.windows(2) {
        let (t, next) = (&w[0], &w[1]);
        let k = t.k;
        c.check(t.p > 1.0, "a: p_k > 1", k, || format!("p={}", t.p));
        // equality when r_k = 4p_k/3 − 2, so allow rounding
        c.check(1.5 * (t.r + 2.0) <= next.first * (1.0 + ROUNDING), "a: 3(r_k+2)/2 <= m_k+1", k, || {
            format!("r={}, m_next={}", t.r, next.first)
        });
        if k0.is_none() && t.p > 3.0 {
            k0 = Some(k);
            c.check(next.first > 6.0, "b: m_k0+1 > 6", k, || format!("m_next={}", next.first));
            let closed = 5.0 * t.p / 3.0 + 1.0;
            c.check((next.first - closed).abs() <= ROUNDING * closed, "b: m_k0+1 = 5p/3 + 1", k, || {
                format!("m_next={}, 5p/3+1={closed}", next.first)
            });
        }
        // m_{k+1} − m_k = (24 − 12α − p_k)/3 once r_k = p_k − 1, which rounds to
        // zero when p_k sits within a few ulps of the threshold
        let threshold = 24.0 - 12.0 * alpha;
        if t.p - threshold > ROUNDING * t.p.abs().max(1.0) {
            c.check(next.first < t.first, "c: m decreasing above 24-12a", k, || {
                format!("m={}, m_next={}", t.first, next.first)
            });
        }
    }
    c.check(k0.is_some(), "b: some p_k > 3", iterations, || "never exceeded 3".into());
    (c.checks, c.violations)
}

/// Checks parts a) and c) of the hatted moderate recursion for one (α, m̂₀).
pub fn check_moderate_hat(alpha: f64, mhat0: f64, iterations: usize) -> (u64, Vec<Violation>) {
    let seq = moderate_seq_hat(mhat0, alpha, iterations + 1);
    let mut c = Checker {
        sequence: "moderate_hat",
        alpha,
        seed_value: mhat0,
        checks: 0,
        violations: Vec::new(),
    };
    let floor = 6.0 - 2.0 * alpha;
    for w in seq.windows(2) {
        let (t, next) = (&w[0], &w[1]);
        let k = t.k;
        c.check(t.p > 3.0, "a: p_k > 3", k, || format!("p={}", t.p));
        c.check(1.5 * (t.r + 2.0) <= next.first, "a: 3(r_k+2)/2 <= m_k+1", k, || {
            format!("r={}, m_next={}", t.r, next.first)
        });
        c.check(next.first - t.first > floor, "c: increment > 6-2a", k, || {
            format!("increment={}", next.first - t.first)
        });
        c.check(next.p > t.p, "c: p increasing", k, || format!("{} -> {}", t.p, next.p));
    }
    let last = seq.last().expect("nonempty");
    c.check(
        last.first >= mhat0 + iterations as f64 * floor,
        "c: divergence floor",
        last.k,
        || format!("m_K={}", last.first),
    );
    (c.checks, c.violations)
}

/// Checks monotonicity, geometric growth and sign claims of the strong
/// recursion for one (α, q₀). Returns whether p₀ ≤ 1 (the logged boundary case).
pub fn check_strong(alpha: f64, q0: f64, iterations: usize) -> (u64, Vec<Violation>, bool) {
    let seq = strong_seq(q0, alpha, iterations + 1);
    let mut c = Checker {
        sequence: "strong",
        alpha,
        seed_value: q0,
        checks: 0,
        violations: Vec::new(),
    };
    let p0 = seq[0].p;
    for t in &seq {
        let exact = (7.0f64 / 6.0).powi(t.k as i32) * p0;
        c.check((t.p - exact).abs() <= 1e-12 * exact.abs(), "p_k = (7/6)^k p0", t.k, || {
            format!("p={}, exact={exact}", t.p)
        });
        c.check(t.first > -1.0, "q_k > -1", t.k, || format!("q={}", t.first));
        if t.p > 1.0 {
            c.check(t.r > 0.0, "r_k > 0 where p_k > 1", t.k, || format!("r={}", t.r));
        }
    }
    for w in seq.windows(2) {
        c.check(w[1].first > w[0].first, "q increasing", w[0].k, || {
            format!("{} -> {}", w[0].first, w[1].first)
        });
        c.check(w[1].p > w[0].p, "p increasing", w[0].k, || format!("{} -> {}", w[0].p, w[1].p));
    }
    let needed = ((100.0 / p0).ln() / (7.0f64 / 6.0).ln()).ceil().max(0.0) as usize;
    if needed < seq.len() {
        c.check(seq[needed].p >= 100.0 * (1.0 - 1e-12), "p exceeds 100 on schedule", needed, || {
            format!("p={}", seq[needed].p)
        });
    }
    (c.checks, c.violations, p0 <= 1.0)
}

/// Draws random admissible (α, seed) pairs per regime and checks every
/// stated property over [`VERIFY_ITERATIONS`] steps.
pub fn verify_regime_lemmas(samples: usize, seed: u64) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let iterations = VERIFY_ITERATIONS;
    let mut moderate = SequenceVerification {
        sequence: "moderate",
        samples,
        checks_run: 0,
        violations: Vec::new(),
        boundary_cases: 0,
    };
    let mut hat = SequenceVerification {
        sequence: "moderate_hat",
        ..moderate.clone()
    };
    let mut strong = SequenceVerification {
        sequence: "strong",
        ..moderate.clone()
    };
    for _ in 0..samples {
        // α ∈ (1, 3/2]
        let alpha = 1.5 - rng.gen_range(0.0..0.5);
        let m0 = rng.gen_range(2.0..60.0);
        let (n, v) = check_moderate(alpha, m0, iterations);
        moderate.checks_run += n;
        moderate.violations.extend(v);

        let mhat0 = 6.0 + rng.gen_range(1e-9..60.0);
        let (n, v) = check_moderate_hat(alpha, mhat0, iterations);
        hat.checks_run += n;
        hat.violations.extend(v);

        let alpha_s = 2.0 - rng.gen_range(1e-9..0.5);
        let q0 = -1.0 + rng.gen_range(1e-9..11.0);
        let (n, v, boundary) = check_strong(alpha_s, q0, iterations);
        strong.checks_run += n;
        strong.violations.extend(v);
        strong.boundary_cases += boundary as usize;
    }
    VerifyReport {
        seed,
        iterations,
        sequences: vec![moderate, hat, strong],
    }
}
