//! Reproducible synthetic benchmark with a known optimal predictor.
//!
//! The generative model is
//! `y = (10 + n1) x + 10 sin(4 x) + 5 + n2` with `x` uniform on a fixed
//! interval and `n1`, `n2` zero-mean Gaussians, so the optimal predictor
//! `T(x) = 10 x + 10 sin(4 x) + 5` and the exact conditional scale
//! `sigma(x) = sqrt(v1 x^2 + v2)` are available in closed form. That makes
//! the benchmark a full oracle: calibrated bounds can be compared against
//! exact ones, and the coverage guarantee can be verified by Monte Carlo.
//!
//! # Randomness
//!
//! All draws come from ChaCha8 keyed by the config seed, with one stream
//! id per purpose ([`streams`]); distinct streams never overlap, which
//! makes training/calibration/validation sets disjoint by construction.
//! Gaussians are produced by inverse-CDF transform (no rejection step), so
//! every sample costs exactly three `u64` draws and the sequences are
//! stable across platforms.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{
    calibrate_conditioned, calibrate_fixed, evaluate_violation, gaussian_quantile_bound,
    Predictor,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::normal;
use crate::sample_complexity::{min_samples_lemma, ProbabilityLevels, SampleSpec, LEMMA_CONSTANT};

/// Stream ids for the per-purpose ChaCha8 sub-generators.
pub mod streams {
    /// Training data for predictor construction.
    pub const TRAINING: u64 = 0;
    /// Calibration multi-sample.
    pub const CALIBRATION: u64 = 1;
    /// Held-out validation data.
    pub const VALIDATION: u64 = 2;
    /// Optional separate family-selection data.
    pub const SELECTION: u64 = 3;

    const COVERAGE_BASE: u64 = 16;

    /// Calibration stream of one coverage-experiment repetition.
    pub fn coverage_calibration(rep: u64) -> u64 {
        COVERAGE_BASE + 2 * rep
    }

    /// Validation stream of one coverage-experiment repetition.
    pub fn coverage_validation(rep: u64) -> u64 {
        COVERAGE_BASE + 2 * rep + 1
    }
}

/// Parameters of the generative model, plus the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExampleConfig {
    x_low: f64,
    x_high: f64,
    slope_noise_var: f64,
    additive_noise_var: f64,
    seed: u64,
}

impl ExampleConfig {
    /// The standard configuration: `x` uniform on [-2.5, 2.5], slope noise
    /// variance 7, additive noise variance 3.
    pub fn new(seed: u64) -> Self {
        Self {
            x_low: -2.5,
            x_high: 2.5,
            slope_noise_var: 7.0,
            additive_noise_var: 3.0,
            seed,
        }
    }

    /// Override the sampling interval. `x_low = x_high` pins `x` to a
    /// point, which is occasionally useful in tests.
    pub fn with_range(mut self, x_low: f64, x_high: f64) -> Result<Self> {
        if !x_low.is_finite() || !x_high.is_finite() || x_low > x_high {
            return Err(Error::InvalidConfig(format!(
                "need x_low <= x_high, got [{x_low}, {x_high}]"
            )));
        }
        self.x_low = x_low;
        self.x_high = x_high;
        Ok(self)
    }

    /// Override the noise variances. Zero is allowed (degenerate,
    /// deterministic noise); negative values are rejected.
    pub fn with_noise_variances(mut self, slope: f64, additive: f64) -> Result<Self> {
        if !slope.is_finite() || !additive.is_finite() || slope < 0.0 || additive < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise variances must be nonnegative, got {slope} and {additive}"
            )));
        }
        self.slope_noise_var = slope;
        self.additive_noise_var = additive;
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Exact conditional scale of `y - T(x)` under this config:
    /// `sqrt(slope_var * x^2 + additive_var)`.
    pub fn conditional_sigma(&self, x: f64) -> f64 {
        (self.slope_noise_var * x * x + self.additive_noise_var).sqrt()
    }
}

fn mean_function(x: f64) -> f64 {
    10.0 * x + 10.0 * (4.0 * x).sin() + 5.0
}

/// The optimal predictor for the generative model (scalar regressor).
#[derive(Debug, Clone, Copy)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, x: &[f64]) -> f64 {
        mean_function(x[0])
    }
}

/// `T(x) = 10 x + 10 sin(4 x) + 5`.
pub fn oracle_predictor() -> OraclePredictor {
    OraclePredictor
}

/// Exact conditional scale under the standard configuration:
/// `sqrt(7 x^2 + 3)`.
pub fn exact_sigma(x: f64) -> f64 {
    (7.0 * x * x + 3.0).sqrt()
}

/// The exact probabilistic bound `gamma_eps * sigma(x)` under the standard
/// configuration (about `1.96 sqrt(7 x^2 + 3)` at eps = 0.05).
pub fn exact_bound(x: f64, epsilon: f64) -> f64 {
    gaussian_quantile_bound(exact_sigma(x), epsilon)
}

/// Draw `count` i.i.d. observations on the default stream
/// ([`streams::TRAINING`]). Deterministic given the config seed.
pub fn sample_example(count: usize, cfg: &ExampleConfig) -> Dataset {
    sample_example_stream(count, cfg, streams::TRAINING)
}

/// Draw `count` i.i.d. observations on an explicit stream. Different
/// streams of the same seed are independent and never overlap.
pub fn sample_example_stream(count: usize, cfg: &ExampleConfig, stream: u64) -> Dataset {
    assert!(count >= 1, "sample count must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let slope_sd = cfg.slope_noise_var.sqrt();
    let additive_sd = cfg.additive_noise_var.sqrt();
    let span = cfg.x_high - cfg.x_low;

    let mut xs = Vec::with_capacity(count);
    let mut ys = Vec::with_capacity(count);
    for _ in 0..count {
        // Fixed draw order: x, slope noise, additive noise.
        let x = cfg.x_low + span * unit_open(&mut rng);
        let n1 = slope_sd * normal::inverse_cdf(unit_open(&mut rng));
        let n2 = additive_sd * normal::inverse_cdf(unit_open(&mut rng));
        xs.push(x);
        ys.push(mean_function(x) + n1 * x + n2);
    }
    Dataset::from_scalar(xs, ys).expect("generated data is finite by construction")
}

/// Uniform draw on the open interval (0, 1): 53 random bits centered in
/// their bucket, so the inverse normal CDF never sees 0 or 1.
#[inline]
fn unit_open(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Which calibration algorithm the coverage experiment exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageMode {
    /// Fixed-size bound with the oracle predictor.
    #[default]
    Fixed,
    /// Conditioned bound with the oracle predictor and the exact
    /// conditional scale.
    Conditioned,
}

/// Configuration of the Monte-Carlo coverage experiment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoverageConfig {
    repetitions: usize,
    levels: ProbabilityLevels,
    validation_size: usize,
    mode: CoverageMode,
    constant: f64,
    example: ExampleConfig,
    spec_override: Option<SampleSpec>,
}

impl CoverageConfig {
    pub fn new(
        repetitions: usize,
        levels: ProbabilityLevels,
        validation_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if repetitions < 1 {
            return Err(Error::InvalidConfig(
                "coverage needs at least one repetition".into(),
            ));
        }
        if validation_size < 1000 {
            return Err(Error::InvalidConfig(format!(
                "validation size must be at least 1000 to make a per-run ratio \
                 meaningful, got {validation_size}"
            )));
        }
        Ok(Self {
            repetitions,
            levels,
            validation_size,
            mode: CoverageMode::default(),
            constant: LEMMA_CONSTANT,
            example: ExampleConfig::new(seed),
            spec_override: None,
        })
    }

    pub fn with_mode(mut self, mode: CoverageMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    pub fn with_example(mut self, example: ExampleConfig) -> Self {
        self.example = example;
        self
    }

    /// Use a caller-supplied spec instead of the closed-form rule.
    pub fn with_spec_override(mut self, spec: SampleSpec) -> Self {
        self.spec_override = Some(spec);
        self
    }
}

/// One repetition of the coverage experiment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoverageRun {
    /// Empirical violation ratio on the fresh validation set.
    pub violation_ratio: f64,
    /// The calibrated bound scale: `rho` in fixed mode, `gamma_bar` in
    /// conditioned mode.
    pub bound_scale: f64,
    /// Ratio above `epsilon` plus the measurement margin.
    pub failed: bool,
}

/// Aggregate result of the coverage experiment.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub epsilon: f64,
    pub delta: f64,
    pub n_samples: usize,
    pub discard_rank: usize,
    pub repetitions: usize,
    pub validation_size: usize,
    pub mode: CoverageMode,
    /// Per-run allowance for validation noise: `3 sqrt(eps / validation_size)`.
    pub measurement_margin: f64,
    /// Acceptance threshold on the failure fraction:
    /// `delta + 3 sqrt(delta (1 - delta) / repetitions)`.
    pub failure_threshold: f64,
    pub failure_fraction: f64,
    pub runs: Vec<CoverageRun>,
}

impl CoverageReport {
    pub fn passed(&self) -> bool {
        self.failure_fraction <= self.failure_threshold
    }
}

/// Monte-Carlo verification of the coverage guarantee: repeatedly draw a
/// fresh calibration set, calibrate, and measure the violation ratio on an
/// independent validation set. A run fails when its measured ratio exceeds
/// `epsilon` plus a three-sigma binomial measurement margin; the guarantee
/// says the failure fraction stays below `delta` (plus Monte-Carlo noise).
pub fn run_coverage_experiment(cfg: &CoverageConfig) -> Result<CoverageReport> {
    let spec = match cfg.spec_override {
        Some(spec) => spec,
        None => min_samples_lemma(cfg.levels, cfg.constant)?,
    };
    let eps = cfg.levels.epsilon();
    let delta = cfg.levels.delta();
    let margin = 3.0 * (eps / cfg.validation_size as f64).sqrt();

    let outcomes: Vec<Result<CoverageRun>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| {
            let calibration = sample_example_stream(
                spec.n_samples(),
                &cfg.example,
                streams::coverage_calibration(rep as u64),
            );
            let validation = sample_example_stream(
                cfg.validation_size,
                &cfg.example,
                streams::coverage_validation(rep as u64),
            );
            let oracle = OraclePredictor;
            let (bound_scale, report) = match cfg.mode {
                CoverageMode::Fixed => {
                    let bound = calibrate_fixed(&oracle, &calibration, &spec)?;
                    let rho = bound.rho();
                    (rho, evaluate_violation(&|_: &[f64]| rho, &oracle, &validation))
                }
                CoverageMode::Conditioned => {
                    let example = cfg.example;
                    let sigma = move |x: &[f64]| example.conditional_sigma(x[0]);
                    let bound = calibrate_conditioned(&oracle, &sigma, &calibration, &spec)?;
                    let gamma = bound.gamma_bar();
                    (
                        gamma,
                        evaluate_violation(
                            &move |x: &[f64]| gamma * example.conditional_sigma(x[0]),
                            &oracle,
                            &validation,
                        ),
                    )
                }
            };
            Ok(CoverageRun {
                violation_ratio: report.ratio,
                bound_scale,
                failed: report.ratio > eps + margin,
            })
        })
        .collect();

    let mut runs = Vec::with_capacity(cfg.repetitions);
    for outcome in outcomes {
        runs.push(outcome?);
    }
    let failures = runs.iter().filter(|r| r.failed).count();

    Ok(CoverageReport {
        epsilon: eps,
        delta,
        n_samples: spec.n_samples(),
        discard_rank: spec.discard_rank(),
        repetitions: cfg.repetitions,
        validation_size: cfg.validation_size,
        mode: cfg.mode,
        measurement_margin: margin,
        failure_threshold: delta + 3.0 * (delta * (1.0 - delta) / cfg.repetitions as f64).sqrt(),
        failure_fraction: failures as f64 / cfg.repetitions as f64,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_noiseless_sample_is_the_mean() {
        let cfg = ExampleConfig::new(7)
            .with_range(0.0, 0.0)
            .unwrap()
            .with_noise_variances(0.0, 0.0)
            .unwrap();
        let data = sample_example(5, &cfg);
        for i in 0..data.len() {
            assert_eq!(data.x(i)[0], 0.0);
            assert_eq!(data.y(i), 5.0);
        }
    }

    #[test]
    fn x_is_centered_on_the_interval() {
        let cfg = ExampleConfig::new(11);
        let data = sample_example(1_000_000, &cfg);
        let mean_x: f64 =
            (0..data.len()).map(|i| data.x(i)[0]).sum::<f64>() / data.len() as f64;
        assert!(mean_x.abs() <= 0.01, "mean x = {mean_x}");
    }

    #[test]
    fn conditional_variance_matches_the_model_near_x_two() {
        let cfg = ExampleConfig::new(13);
        let data = sample_example(1_000_000, &cfg);
        let oracle = OraclePredictor;
        let residuals: Vec<f64> = (0..data.len())
            .filter(|&i| (data.x(i)[0] - 2.0).abs() <= 0.05)
            .map(|i| data.y(i) - oracle.predict(data.x(i)))
            .collect();
        assert!(residuals.len() > 5000);
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / residuals.len() as f64;
        // 7 * 4 + 3 = 31, within 10%.
        assert!((var - 31.0).abs() <= 3.1, "var = {var}");
    }

    #[test]
    fn oracle_values() {
        let oracle = OraclePredictor;
        assert_eq!(oracle.predict(&[0.0]), 5.0);
        let q = std::f64::consts::FRAC_PI_4;
        // sin(4 * pi/4) = 0, so T = 2.5 pi + 5.
        let expected = 2.5 * std::f64::consts::PI + 5.0;
        assert!((oracle.predict(&[q]) - expected).abs() <= 1e-12);
    }

    #[test]
    fn oracle_residuals_are_unbiased() {
        let cfg = ExampleConfig::new(17);
        let data = sample_example(1_000_000, &cfg);
        let oracle = OraclePredictor;
        let mean: f64 = (0..data.len())
            .map(|i| data.y(i) - oracle.predict(data.x(i)))
            .sum::<f64>()
            / data.len() as f64;
        assert!(mean.abs() <= 0.02, "residual mean = {mean}");
    }

    #[test]
    fn exact_sigma_values() {
        assert!((exact_sigma(0.0) - 3.0_f64.sqrt()).abs() <= 1e-15);
        assert_eq!(exact_sigma(1.25), exact_sigma(-1.25));
        assert!((exact_sigma(2.0) - 31.0_f64.sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn exact_bound_values() {
        let b0 = exact_bound(0.0, 0.05);
        assert!((b0 - 1.959963984540054 * 3.0_f64.sqrt()).abs() <= 1e-6);
        let b25 = exact_bound(2.5, 0.05);
        assert!((b25 - 1.959963984540054 * 46.75_f64.sqrt()).abs() <= 1e-6);
    }

    #[test]
    fn sampling_is_deterministic_and_streams_are_disjoint() {
        let cfg = ExampleConfig::new(99);
        let a = sample_example_stream(500, &cfg, streams::CALIBRATION);
        let b = sample_example_stream(500, &cfg, streams::CALIBRATION);
        assert_eq!(a, b);

        let v = sample_example_stream(500, &cfg, streams::VALIDATION);
        let overlap = (0..a.len())
            .filter(|&i| (0..v.len()).any(|j| a.x(i) == v.x(j) && a.y(i) == v.y(j)))
            .count();
        assert_eq!(overlap, 0, "calibration and validation streams overlap");
    }

    #[test]
    fn coverage_config_validation() {
        let levels = ProbabilityLevels::new(0.1, 0.2).unwrap();
        assert!(CoverageConfig::new(0, levels, 10_000, 1).is_err());
        assert!(CoverageConfig::new(10, levels, 999, 1).is_err());
        assert!(CoverageConfig::new(10, levels, 1000, 1).is_ok());
    }

    #[test]
    fn degenerate_single_sample_spec_runs() {
        let levels = ProbabilityLevels::new(0.99, 0.9).unwrap();
        let spec = SampleSpec::manual(1, 1, levels).unwrap();
        let cfg = CoverageConfig::new(8, levels, 1000, 5)
            .unwrap()
            .with_spec_override(spec);
        let report = run_coverage_experiment(&cfg).unwrap();
        assert_eq!(report.runs.len(), 8);
        assert!(report.failure_fraction >= 0.0 && report.failure_fraction <= 1.0);
        assert_eq!(report.n_samples, 1);
    }

    #[test]
    fn coverage_experiment_is_deterministic() {
        let levels = ProbabilityLevels::new(0.2, 0.3).unwrap();
        let cfg = CoverageConfig::new(12, levels, 1000, 42).unwrap();
        let a = run_coverage_experiment(&cfg).unwrap();
        let b = run_coverage_experiment(&cfg).unwrap();
        assert_eq!(a.failure_fraction, b.failure_fraction);
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            assert_eq!(ra.violation_ratio, rb.violation_ratio);
            assert_eq!(ra.bound_scale, rb.bound_scale);
        }
    }
}
