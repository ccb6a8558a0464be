//! Generalized max: the r-th largest element of a finite score multiset.
//!
//! This is the selection primitive every calibration routine reduces to.
//! Rank 1 is the plain maximum, rank N the minimum; duplicates count with
//! multiplicity, so the result is the element at index `r - 1` of the
//! descending-sorted sequence.

use crate::error::{Error, Result};

/// A nonempty collection of finite scores.
///
/// NaN or infinite entries are rejected at construction: a non-finite score
/// means the predictor or scale estimator misbehaved, and surfacing that
/// beats silently corrupting a probabilistic guarantee.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCollection {
    values: Vec<f64>,
}

impl ScoreCollection {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty {
                what: "score collection",
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteScore { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // nonempty by construction
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// See [`generalized_max`].
    pub fn generalized_max(&self, r: usize) -> Result<f64> {
        generalized_max(self, r)
    }
}

/// The r-th largest element of the collection, `1 <= r <= N`.
///
/// Partial selection, expected O(N): equivalent to descending-sorting and
/// taking index `r - 1`, without the full sort.
pub fn generalized_max(scores: &ScoreCollection, r: usize) -> Result<f64> {
    let n = scores.len();
    if r < 1 || r > n {
        return Err(Error::RankOutOfRange { rank: r, count: n });
    }
    let mut scratch = scores.values.clone();
    let (_, pivot, _) = scratch.select_nth_unstable_by(n - r, f64::total_cmp);
    Ok(*pivot)
}
