//! Calibration routines: fixed-size bound, conditioned bound, finite-family
//! calibration, the Markov / Gaussian baseline bounds, and empirical
//! violation measurement.
//!
//! All routines share one contract the library cannot check for you: the
//! calibration data must be i.i.d. from the target distribution and
//! disjoint from anything used to build the predictor or the scale
//! estimator. The CLI enforces this by construction when it generates the
//! data itself.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::normal::two_sided_quantile;
use crate::order_statistics::{generalized_max, ScoreCollection};
use crate::sample_complexity::{validate_spec, ProbabilityLevels, SampleSpec};

/// An evaluatable prediction map `x -> T(x)`.
///
/// Implementations must be deterministic: repeated evaluation at the same
/// `x` returns the same value.
pub trait Predictor: Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// An evaluatable conditional-scale map `x -> sigma_hat(x)`, expected to be
/// strictly positive everywhere it is evaluated. Calibration checks the
/// returned values and reports the offending observation index on a
/// violation.
pub trait ScaleEstimator: Sync {
    fn scale(&self, x: &[f64]) -> f64;
}

impl<F> ScaleEstimator for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn scale(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// A predictor paired with its conditional-scale estimate: one family
/// member. `predict_and_scale` exists so implementations that derive both
/// values from one shared computation (the local kernel fit does) can
/// avoid doing that work twice.
pub trait ScaledPredictor: Sync {
    fn predict(&self, x: &[f64]) -> f64;
    fn scale(&self, x: &[f64]) -> f64;

    fn predict_and_scale(&self, x: &[f64]) -> (f64, f64) {
        (self.predict(x), self.scale(x))
    }
}

/// Pair an independent predictor and scale estimator into a family member.
#[derive(Debug, Clone, Copy)]
pub struct Paired<P, S> {
    pub predictor: P,
    pub scale: S,
}

impl<P: Predictor, S: ScaleEstimator> ScaledPredictor for Paired<P, S> {
    fn predict(&self, x: &[f64]) -> f64 {
        self.predictor.predict(x)
    }

    fn scale(&self, x: &[f64]) -> f64 {
        self.scale.scale(x)
    }
}

impl<T: ScaledPredictor + ?Sized> ScaledPredictor for &T {
    fn predict(&self, x: &[f64]) -> f64 {
        (**self).predict(x)
    }

    fn scale(&self, x: &[f64]) -> f64 {
        (**self).scale(x)
    }

    fn predict_and_scale(&self, x: &[f64]) -> (f64, f64) {
        (**self).predict_and_scale(x)
    }
}

/// A fixed (query-independent) bound `rho` on `|y - T(x)|`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FixedBound {
    rho: f64,
    spec: SampleSpec,
}

impl FixedBound {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn spec(&self) -> SampleSpec {
        self.spec
    }

    pub fn levels(&self) -> ProbabilityLevels {
        self.spec.levels()
    }
}

/// A scaling factor `gamma_bar`; the per-query bound is
/// `gamma_bar * sigma_hat(x)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScaledBound {
    gamma_bar: f64,
    spec: SampleSpec,
}

impl ScaledBound {
    pub fn gamma_bar(&self) -> f64 {
        self.gamma_bar
    }

    pub fn spec(&self) -> SampleSpec {
        self.spec
    }

    pub fn levels(&self) -> ProbabilityLevels {
        self.spec.levels()
    }

    /// The bound at a query, given the same scale estimator that was
    /// calibrated against.
    pub fn bound_at<S: ScaleEstimator + ?Sized>(&self, scale: &S, x: &[f64]) -> f64 {
        self.gamma_bar * scale.scale(x)
    }
}

/// Per-member scaling factors for a finite family, plus the selected
/// member (the one with the sharpest aggregate bound).
#[derive(Debug, Clone, Serialize)]
pub struct FamilyCalibration {
    gamma_bars: Vec<f64>,
    criterion_values: Vec<f64>,
    selected_index: usize,
    spec: SampleSpec,
    levels: ProbabilityLevels,
}

impl FamilyCalibration {
    pub fn gamma_bars(&self) -> &[f64] {
        &self.gamma_bars
    }

    /// Aggregate bound size per member: `gamma_bar_j * sum_i sigma_j(x_i)`
    /// over the selection inputs.
    pub fn criterion_values(&self) -> &[f64] {
        &self.criterion_values
    }

    pub fn selected_index(&self) -> usize {
        self.selected_index
    }

    pub fn selected_gamma_bar(&self) -> f64 {
        self.gamma_bars[self.selected_index]
    }

    pub fn spec(&self) -> SampleSpec {
        self.spec
    }

    pub fn levels(&self) -> ProbabilityLevels {
        self.levels
    }
}

/// Violation counts of a bound on a dataset. `ratio` is exactly
/// `violations / total`; `mean_bound_width` is the average of the bound
/// values over the dataset.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ViolationReport {
    pub total: usize,
    pub violations: usize,
    pub ratio: f64,
    pub mean_bound_width: f64,
}

/// Fixed-size bound: the r-th largest absolute residual
/// `|y_i - T(x_i)|` over a calibration sample of exactly `spec.n_samples()`
/// observations.
pub fn calibrate_fixed<P: Predictor + ?Sized>(
    predictor: &P,
    data: &Dataset,
    spec: &SampleSpec,
) -> Result<FixedBound> {
    check_sample_count(data, spec)?;
    let residuals: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map(|i| (data.y(i) - predictor.predict(data.x(i))).abs())
        .collect();
    let scores = ScoreCollection::new(residuals)?;
    let rho = generalized_max(&scores, spec.discard_rank())?;
    Ok(FixedBound { rho, spec: *spec })
}

/// Conditioned bound: the r-th largest of the scaled scores
/// `|y_i - T(x_i)| / sigma_hat(x_i)`. The per-query bound is then
/// `gamma_bar * sigma_hat(x)`.
pub fn calibrate_conditioned<P, S>(
    predictor: &P,
    scale: &S,
    data: &Dataset,
    spec: &SampleSpec,
) -> Result<ScaledBound>
where
    P: Predictor + ?Sized,
    S: ScaleEstimator + ?Sized,
{
    check_sample_count(data, spec)?;
    let (scores, _) = scored_rows(|x| (predictor.predict(x), scale.scale(x)), data)?;
    let gamma_bar = generalized_max(&ScoreCollection::new(scores)?, spec.discard_rank())?;
    Ok(ScaledBound {
        gamma_bar,
        spec: *spec,
    })
}

/// [`calibrate_conditioned`] for a fused (predictor, scale) member: both
/// values come from one `predict_and_scale` call per observation, which
/// matters when they share a local fit.
pub fn calibrate_conditioned_member<M: ScaledPredictor + ?Sized>(
    member: &M,
    data: &Dataset,
    spec: &SampleSpec,
) -> Result<ScaledBound> {
    check_sample_count(data, spec)?;
    let (scores, _) = scored_rows(|x| member.predict_and_scale(x), data)?;
    let gamma_bar = generalized_max(&ScoreCollection::new(scores)?, spec.discard_rank())?;
    Ok(ScaledBound {
        gamma_bar,
        spec: *spec,
    })
}

/// Calibrate every member of a finite family on one shared multi-sample.
///
/// The spec must validate against `delta / n_family` (checked); all members
/// then satisfy the epsilon-guarantee simultaneously with confidence
/// `1 - delta`. The member whose aggregate bound
/// `gamma_bar_j * sum_i sigma_j(x_i)` over the calibration inputs is
/// smallest is selected; ties go to the smallest index.
pub fn calibrate_family<M: ScaledPredictor>(
    family: &[M],
    data: &Dataset,
    levels: ProbabilityLevels,
    spec: &SampleSpec,
) -> Result<FamilyCalibration> {
    calibrate_family_impl(family, data, levels, spec, None)
}

/// [`calibrate_family`] with a separate dataset for the selection
/// criterion (the guarantee itself still comes from `data`).
pub fn calibrate_family_with_selection<M: ScaledPredictor>(
    family: &[M],
    data: &Dataset,
    levels: ProbabilityLevels,
    spec: &SampleSpec,
    selection: &Dataset,
) -> Result<FamilyCalibration> {
    calibrate_family_impl(family, data, levels, spec, Some(selection))
}

fn calibrate_family_impl<M: ScaledPredictor>(
    family: &[M],
    data: &Dataset,
    levels: ProbabilityLevels,
    spec: &SampleSpec,
    selection: Option<&Dataset>,
) -> Result<FamilyCalibration> {
    if family.is_empty() {
        return Err(Error::Empty { what: "family" });
    }
    check_sample_count(data, spec)?;
    if !validate_spec(spec, levels, family.len()) {
        return Err(Error::SpecValidationFailed {
            n_samples: spec.n_samples(),
            discard_rank: spec.discard_rank(),
            n_family: family.len(),
        });
    }

    let mut gamma_bars = Vec::with_capacity(family.len());
    let mut criterion_values = Vec::with_capacity(family.len());
    for member in family {
        let (scores, sigmas) = scored_rows(|x| member.predict_and_scale(x), data)?;
        let gamma = generalized_max(&ScoreCollection::new(scores)?, spec.discard_rank())?;
        let sigma_sum = match selection {
            None => sigmas.iter().sum::<f64>(),
            Some(sel) => {
                let values: Vec<f64> = (0..sel.len())
                    .into_par_iter()
                    .map(|i| member.scale(sel.x(i)))
                    .collect();
                if let Some(index) = values.iter().position(|v| !v.is_finite() || *v <= 0.0) {
                    return Err(Error::NonPositiveScale {
                        index,
                        value: values[index],
                    });
                }
                values.iter().sum()
            }
        };
        gamma_bars.push(gamma);
        criterion_values.push(gamma * sigma_sum);
    }

    let mut selected_index = 0;
    for (j, value) in criterion_values.iter().enumerate() {
        if *value < criterion_values[selected_index] {
            selected_index = j;
        }
    }

    Ok(FamilyCalibration {
        gamma_bars,
        criterion_values,
        selected_index,
        spec: *spec,
        levels,
    })
}

/// Scores `|y_i - T(x_i)| / sigma(x_i)` plus the sigma values themselves.
fn scored_rows<E>(eval: E, data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)>
where
    E: Fn(&[f64]) -> (f64, f64) + Sync,
{
    let evals: Vec<(f64, f64)> = (0..data.len())
        .into_par_iter()
        .map(|i| eval(data.x(i)))
        .collect();
    let mut scores = Vec::with_capacity(data.len());
    let mut sigmas = Vec::with_capacity(data.len());
    for (index, &(prediction, sigma)) in evals.iter().enumerate() {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::NonPositiveScale {
                index,
                value: sigma,
            });
        }
        scores.push((data.y(index) - prediction).abs() / sigma);
        sigmas.push(sigma);
    }
    Ok((scores, sigmas))
}

fn check_sample_count(data: &Dataset, spec: &SampleSpec) -> Result<()> {
    if data.len() != spec.n_samples() {
        return Err(Error::SampleCountMismatch {
            required: spec.n_samples(),
            got: data.len(),
        });
    }
    Ok(())
}

/// Markov-inequality bound: `Pr{|y - T(x)| >= sigma / sqrt(eps)} <= eps`.
pub fn markov_bound(sigma_value: f64, epsilon: f64) -> f64 {
    debug_assert!(sigma_value >= 0.0);
    debug_assert!(epsilon > 0.0 && epsilon < 1.0);
    sigma_value / epsilon.sqrt()
}

/// Gaussian-error bound: `gamma_eps * sigma` with the two-sided normal
/// quantile `Pr{|Z| > gamma_eps} = eps` (about 1.96 at eps = 0.05). Sharp
/// when the errors really are Gaussian, unlike the Markov fallback.
pub fn gaussian_quantile_bound(sigma_value: f64, epsilon: f64) -> f64 {
    debug_assert!(sigma_value >= 0.0);
    two_sided_quantile(epsilon) * sigma_value
}

/// Count how often `|y - T(x)|` strictly exceeds `bound(x)` on a dataset.
///
/// Ties count as non-violations: the guarantee is stated for the event
/// `score > bound`. The data must be disjoint from the calibration sample
/// (caller contract).
pub fn evaluate_violation<B, P>(bound: &B, predictor: &P, data: &Dataset) -> ViolationReport
where
    B: Fn(&[f64]) -> f64 + Sync,
    P: Predictor + ?Sized,
{
    let rows: Vec<(bool, f64)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let b = bound(data.x(i));
            let violated = (data.y(i) - predictor.predict(data.x(i))).abs() > b;
            (violated, b)
        })
        .collect();
    let violations = rows.iter().filter(|(v, _)| *v).count();
    let total = data.len();
    let mean_bound_width = rows.iter().map(|(_, b)| *b).sum::<f64>() / total as f64;
    ViolationReport {
        total,
        violations,
        ratio: violations as f64 / total as f64,
        mean_bound_width,
    }
}
