//! Sample-size rules for order-statistic calibration.
//!
//! Everything here answers one question: how many i.i.d. scores `N` must be
//! drawn, and which descending rank `r` taken, so that the r-th largest
//! score upper-bounds a fresh score with probability at least `1 - epsilon`,
//! with confidence at least `1 - delta` over the draw. The governing
//! condition is the binomial tail inequality `B(r-1; N, epsilon) <= delta`;
//! the functions below evaluate that tail stably and solve it for `N` by a
//! closed-form bound, by an explicit-constant rule, or exactly.

use serde::Serialize;

use crate::error::{Error, Result};

/// Default constant of the closed-form rule `N >= (c / eps) * ln(1 / delta)`.
pub const LEMMA_CONSTANT: f64 = 7.47;

/// The exact threshold `(1 + sqrt(3))^2` the closed-form rule is proved at.
/// Constants below this void the guarantee and are rejected.
pub fn lemma_constant_exact() -> f64 {
    4.0 + 2.0 * 3.0_f64.sqrt()
}

/// Accuracy/confidence pair `(epsilon, delta)`, both strictly inside (0, 1).
///
/// `epsilon` bounds the violation probability of a calibrated bound;
/// `1 - delta` bounds the probability, over the calibration draw, that the
/// epsilon-guarantee holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbabilityLevels {
    epsilon: f64,
    delta: f64,
}

impl ProbabilityLevels {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidLevel {
                name: "epsilon",
                value: epsilon,
            });
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidLevel {
                name: "delta",
                value: delta,
            });
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Which rule produced a [`SampleSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecRule {
    /// Closed-form rule with an explicit constant (`N = ceil((c/eps) ln(1/delta))`,
    /// `r = floor(eps N / 2)`), or the explicit inequality for a caller-chosen `r`.
    ExplicitConstant,
    /// Minimal `N` found by solving the binomial inequality numerically.
    ExactBinomial,
    /// Closed-form rule with `delta` split across a finite family.
    Family,
    /// Constructed directly from caller-supplied `(N, r)`.
    Manual,
}

/// A validated calibration sample size `N` together with the descending
/// rank `r` to select, the levels it was built for, and the rule used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleSpec {
    n_samples: usize,
    discard_rank: usize,
    levels: ProbabilityLevels,
    rule: SpecRule,
}

impl SampleSpec {
    /// Wrap caller-supplied `(N, r)`. Only the structural invariant
    /// `1 <= r <= N` is checked here; use [`validate_spec`] to test the
    /// binomial condition against the levels.
    pub fn manual(n_samples: usize, discard_rank: usize, levels: ProbabilityLevels) -> Result<Self> {
        if discard_rank < 1 || discard_rank > n_samples {
            return Err(Error::RankOutOfRange {
                rank: discard_rank,
                count: n_samples,
            });
        }
        Ok(Self {
            n_samples,
            discard_rank,
            levels,
            rule: SpecRule::Manual,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn discard_rank(&self) -> usize {
        self.discard_rank
    }

    pub fn levels(&self) -> ProbabilityLevels {
        self.levels
    }

    pub fn rule(&self) -> SpecRule {
        self.rule
    }
}

/// A binomial CDF query `B(k; n, p)` with its domain invariant `0 <= k <= n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinomialQuery {
    k: u64,
    n: u64,
    p: f64,
}

impl BinomialQuery {
    pub fn new(k: u64, n: u64, p: f64) -> Result<Self> {
        check_binomial_domain(k, n, p)?;
        Ok(Self { k, n, p })
    }

    pub fn evaluate(&self) -> f64 {
        binomial_tail(self.k, self.n, self.p).expect("domain validated at construction")
    }
}

fn check_binomial_domain(k: u64, n: u64, p: f64) -> Result<()> {
    if k > n || p.is_nan() || !(0.0..=1.0).contains(&p) {
        return Err(Error::BinomialDomain { k, n, p });
    }
    Ok(())
}

/// Binomial CDF `B(k; n, p) = sum_{i=0}^{k} C(n,i) p^i (1-p)^(n-i)`.
///
/// Evaluated in log space: log-gamma binomial coefficients and a
/// log-sum-exp accumulation, so tails near 1e-6 and far below keep their
/// leading digits even at `n` in the tens of thousands.
pub fn binomial_tail(k: u64, n: u64, p: f64) -> Result<f64> {
    check_binomial_domain(k, n, p)?;
    if k == n {
        return Ok(1.0);
    }
    if p == 0.0 {
        return Ok(1.0);
    }
    if p == 1.0 {
        return Ok(0.0); // k < n here
    }
    if k == 0 && n <= (i32::MAX as u64) {
        // Exact for dyadic p (B(0; N, 0.5) and friends land on spec
        // boundaries); also a few ulps sharper than the log route.
        return Ok((1.0 - p).powi(n as i32));
    }

    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let ln_gamma_n1 = ln_gamma((n + 1) as f64);
    let nf = n as f64;

    let mut log_terms = Vec::with_capacity(k as usize + 1);
    let mut max_term = f64::NEG_INFINITY;
    for i in 0..=k {
        let fi = i as f64;
        let ln_coeff = ln_gamma_n1 - ln_gamma(fi + 1.0) - ln_gamma(nf - fi + 1.0);
        let t = ln_coeff + fi * ln_p + (nf - fi) * ln_q;
        max_term = max_term.max(t);
        log_terms.push(t);
    }

    let sum: f64 = log_terms.iter().map(|t| (t - max_term).exp()).sum();
    Ok((max_term + sum.ln()).exp().min(1.0))
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

// Rounding to a count at exact-integer boundaries: a handful of ulps of
// upward noise in `x` must not bump the result to the next integer.
const BOUNDARY_SLACK: f64 = 1e-12;

fn ceil_count(x: f64) -> usize {
    (x - x.abs().max(1.0) * BOUNDARY_SLACK).ceil() as usize
}

fn floor_count(x: f64) -> usize {
    (x + x.abs().max(1.0) * BOUNDARY_SLACK).floor() as usize
}

/// Sample count for the plain-max (`r = 1`) scheme:
/// `N = ceil((1 / eps) * ln(1 / delta))`.
pub fn min_samples_max(levels: ProbabilityLevels) -> usize {
    let n = ceil_count((1.0 / levels.epsilon()) * (1.0 / levels.delta()).ln());
    n.max(1)
}

/// Smallest `N` satisfying the explicit inequality
/// `eps * N >= r - 1 + ln(1/delta) + sqrt(2 (r-1) ln(1/delta))`,
/// which guarantees `B(r-1; N, eps) <= delta`.
pub fn min_samples_explicit(levels: ProbabilityLevels, r: usize) -> Result<usize> {
    if r < 1 {
        return Err(Error::RankOutOfRange { rank: r, count: 0 });
    }
    let log_term = (1.0 / levels.delta()).ln();
    let rm1 = (r - 1) as f64;
    let rhs = rm1 + log_term + (2.0 * rm1 * log_term).sqrt();
    Ok(ceil_count(rhs / levels.epsilon()).max(r))
}

/// Closed-form rule: `N = ceil((constant / eps) * ln(1 / delta))` together
/// with `r = floor(eps * N / 2)`.
///
/// `constant` must be at least `(1 + sqrt(3))^2`; the printed default is
/// [`LEMMA_CONSTANT`]. Errors with [`Error::InfeasibleDiscardRank`] when the
/// rule would give `r = 0` (very large `eps * delta`), since silently
/// clamping to `r = 1` would change the guarantee.
pub fn min_samples_lemma(levels: ProbabilityLevels, constant: f64) -> Result<SampleSpec> {
    let (n_samples, discard_rank) =
        lemma_counts(levels.epsilon(), levels.delta(), levels.delta(), constant)?;
    Ok(SampleSpec {
        n_samples,
        discard_rank,
        levels,
        rule: SpecRule::ExplicitConstant,
    })
}

/// Closed-form family rule: [`min_samples_lemma`] with `delta` replaced by
/// `delta / n_family`, so the guarantee holds simultaneously for all
/// `n_family` members. With `n_family = 1` this equals the plain rule.
pub fn min_samples_family(
    levels: ProbabilityLevels,
    n_family: usize,
    constant: f64,
) -> Result<SampleSpec> {
    if n_family < 1 {
        return Err(Error::InvalidConfig(
            "family size must be at least 1".into(),
        ));
    }
    let delta_eff = levels.delta() / n_family as f64;
    let (n_samples, discard_rank) =
        lemma_counts(levels.epsilon(), delta_eff, levels.delta(), constant)?;
    Ok(SampleSpec {
        n_samples,
        discard_rank,
        levels,
        rule: if n_family == 1 {
            SpecRule::ExplicitConstant
        } else {
            SpecRule::Family
        },
    })
}

fn lemma_counts(
    epsilon: f64,
    delta_eff: f64,
    delta_reported: f64,
    constant: f64,
) -> Result<(usize, usize)> {
    let minimum = lemma_constant_exact();
    if constant < minimum - 1e-12 || !constant.is_finite() {
        return Err(Error::ConstantTooSmall {
            value: constant,
            minimum,
        });
    }
    let n = ceil_count((constant / epsilon) * (1.0 / delta_eff).ln()).max(1);
    let r = floor_count(epsilon * n as f64 / 2.0);
    if r < 1 {
        return Err(Error::InfeasibleDiscardRank {
            epsilon,
            delta: delta_reported,
        });
    }
    Ok((n, r))
}

/// [`min_samples_explicit`] packaged as a validated spec for the given
/// caller-chosen rank.
pub fn explicit_spec(levels: ProbabilityLevels, r: usize) -> Result<SampleSpec> {
    let n_samples = min_samples_explicit(levels, r)?;
    Ok(SampleSpec {
        n_samples,
        discard_rank: r,
        levels,
        rule: SpecRule::ExplicitConstant,
    })
}

/// [`min_samples_exact`] packaged as a spec for the given rank.
pub fn exact_spec(levels: ProbabilityLevels, r: usize) -> Result<SampleSpec> {
    let n_samples = min_samples_exact(levels, r)?;
    Ok(SampleSpec {
        n_samples,
        discard_rank: r,
        levels,
        rule: SpecRule::ExactBinomial,
    })
}

/// Smallest `N >= r` with `B(r-1; N, eps) <= delta`, found by doubling from
/// `r` and then binary search. `B(r-1; N, eps)` is nonincreasing in `N` for
/// fixed `r`, and the explicit bound provides a finite valid bracket, so the
/// search always terminates.
pub fn min_samples_exact(levels: ProbabilityLevels, r: usize) -> Result<usize> {
    if r < 1 {
        return Err(Error::RankOutOfRange { rank: r, count: 0 });
    }
    let eps = levels.epsilon();
    let delta = levels.delta();
    let tail_ok = |n: usize| {
        binomial_tail((r - 1) as u64, n as u64, eps).expect("k <= n by construction") <= delta
    };

    let cap = min_samples_explicit(levels, r)?;
    let mut hi = r;
    while hi < cap && !tail_ok(hi) {
        hi = (hi * 2).min(cap);
    }
    debug_assert!(tail_ok(hi), "explicit bound must validate");

    let mut lo = r;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if tail_ok(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// True iff `B(r-1; N, eps) <= delta / n_family`.
pub fn validate_spec(spec: &SampleSpec, levels: ProbabilityLevels, n_family: usize) -> bool {
    assert!(n_family >= 1, "family size must be at least 1");
    let tail = binomial_tail(
        (spec.discard_rank() - 1) as u64,
        spec.n_samples() as u64,
        levels.epsilon(),
    )
    .expect("spec invariant guarantees r <= N");
    tail <= levels.delta() / n_family as f64
}
