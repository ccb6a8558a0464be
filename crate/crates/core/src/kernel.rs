//! Locally weighted kernel ridge prediction with a Parzen conditional
//! scale estimate.
//!
//! For a query `x`, the predictor minimizes
//! `theta' S theta + sum_i (y_i - theta' phi(x_i))^2 G(x, x_i)` with an
//! exponentially decaying locality weight `G`. Both the primal form (over
//! an explicit feature map) and the dual form (over the kernel Gram
//! matrix, permitting implicit feature spaces) are implemented; they are
//! algebraically identical for `k(a, b) = phi(a)' S^-1 phi(b)`, and the
//! tests hold them to that.
//!
//! The same local fit yields per-training-point estimates `y_hat_i(x)`,
//! which feed a Parzen weighted average of squared residuals: the
//! conditional-scale estimate `sigma_hat(x)`. A (predictor, scale) pair
//! per locality parameter `lambda` forms the candidate family consumed by
//! the calibration module.

use std::cell::RefCell;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{Predictor, ScaledPredictor, ScaleEstimator};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Squared-exponential kernel `amplitude * exp(-||a - b||^2 / lengthscale_sq)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelConfig {
    amplitude: f64,
    lengthscale_sq: f64,
}

impl KernelConfig {
    pub fn new(amplitude: f64, lengthscale_sq: f64) -> Result<Self> {
        if !amplitude.is_finite() || amplitude <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "kernel amplitude must be positive, got {amplitude}"
            )));
        }
        if !lengthscale_sq.is_finite() || lengthscale_sq <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "kernel lengthscale_sq must be positive, got {lengthscale_sq}"
            )));
        }
        Ok(Self {
            amplitude,
            lengthscale_sq,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn lengthscale_sq(&self) -> f64 {
        self.lengthscale_sq
    }

    #[inline]
    fn eval_sq_dist(&self, sq_dist: f64) -> f64 {
        self.amplitude * (-sq_dist / self.lengthscale_sq).exp()
    }
}

/// Anything usable as a positive-definite kernel on regressor vectors.
pub trait Kernel: Sync {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64;
}

impl Kernel for KernelConfig {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.eval_sq_dist(sq_euclidean(a, b))
    }
}

impl<F> Kernel for F
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self(a, b)
    }
}

#[inline]
fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Vector norm used inside the locality weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    Manhattan,
    #[default]
    Euclidean,
    Chebyshev,
}

impl Norm {
    #[inline]
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Norm::Euclidean => sq_euclidean(a, b).sqrt(),
            Norm::Chebyshev => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        }
    }
}

/// Locality weight `G(a, b) = exp(-lambda * ||a - b||)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightConfig {
    lambda: f64,
    norm: Norm,
}

impl WeightConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "weight lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            lambda,
            norm: Norm::default(),
        })
    }

    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    #[inline]
    fn weight_at_distance(&self, distance: f64) -> f64 {
        (-self.lambda * distance).exp()
    }

    #[inline]
    fn weight(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weight_at_distance(self.norm.distance(a, b))
    }
}

/// `exp(-lambda * ||a - b||)`, always in (0, 1].
pub fn exp_weight(a: &[f64], b: &[f64], cfg: &WeightConfig) -> Result<f64> {
    check_dims(a, b)?;
    Ok(cfg.weight(a, b))
}

/// `amplitude * exp(-||a - b||^2 / lengthscale_sq)`, always positive.
pub fn rbf_kernel(a: &[f64], b: &[f64], cfg: &KernelConfig) -> Result<f64> {
    check_dims(a, b)?;
    Ok(cfg.eval(a, b))
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Result of one local fit: the central prediction at the query plus the
/// per-training-point estimates `y_hat_i(query)`, in dataset order.
#[derive(Debug, Clone)]
pub struct LocalFit {
    prediction: f64,
    local_estimates: Vec<f64>,
    query: Vec<f64>,
}

impl LocalFit {
    pub fn prediction(&self) -> f64 {
        self.prediction
    }

    pub fn local_estimates(&self) -> &[f64] {
        &self.local_estimates
    }

    pub fn query(&self) -> &[f64] {
        &self.query
    }
}

/// Dual (kernel-trick) form of the local fit, exact over all M training
/// points.
///
/// Solves the symmetric stabilized system
/// `(W^1/2 K W^1/2 + I) beta = W^1/2 y`, sets `alpha = W^1/2 beta`, and
/// reads the prediction as `sum_i alpha_i k(query, x_i)` and the local
/// estimates as `K alpha`. Algebraically this is `alpha = (K + W^-1)^-1 y`,
/// but the stabilized form stays bounded when weights underflow to zero.
pub fn fit_local_dual<K: Kernel>(
    train: &Dataset,
    kernel: &K,
    weight: &WeightConfig,
    query: &[f64],
) -> Result<LocalFit> {
    if query.len() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: query.len(),
        });
    }
    let m = train.len();
    let ws: Vec<f64> = (0..m)
        .map(|i| weight.weight(query, train.x(i)).sqrt())
        .collect();

    let gram = DMatrix::from_fn(m, m, |i, j| kernel.eval(train.x(i), train.x(j)));
    let mut system = DMatrix::from_fn(m, m, |i, j| ws[i] * ws[j] * gram[(i, j)]);
    for i in 0..m {
        system[(i, i)] += 1.0;
    }
    let rhs = DVector::from_fn(m, |i, _| ws[i] * train.y(i));

    let chol = nalgebra::Cholesky::new(system).ok_or_else(|| Error::SolveFailed {
        context: format!(
            "stabilized dual system lost positive definiteness (M = {m}); \
             the Gram matrix is numerically degenerate"
        ),
    })?;
    let beta = chol.solve(&rhs);
    let alpha: Vec<f64> = (0..m).map(|i| ws[i] * beta[i]).collect();

    let prediction = (0..m)
        .map(|i| alpha[i] * kernel.eval(query, train.x(i)))
        .sum();
    let local_estimates: Vec<f64> = (0..m)
        .map(|j| (0..m).map(|i| gram[(j, i)] * alpha[i]).sum())
        .collect();

    Ok(LocalFit {
        prediction,
        local_estimates,
        query: query.to_vec(),
    })
}

/// An owned regressor-to-feature-vector map.
pub type FeatureMap = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Explicit feature map plus a positive-definite regularizer matrix.
pub struct PrimalConfig {
    feature_map: FeatureMap,
    regularizer: DMatrix<f64>,
    inverse_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl PrimalConfig {
    /// `regularizer` must be symmetric positive-definite (its Cholesky
    /// factorization is taken here and must succeed).
    pub fn new(feature_map: FeatureMap, regularizer: DMatrix<f64>) -> Result<Self> {
        if regularizer.nrows() != regularizer.ncols() || regularizer.nrows() == 0 {
            return Err(Error::InvalidConfig(format!(
                "regularizer must be square and nonempty, got {}x{}",
                regularizer.nrows(),
                regularizer.ncols()
            )));
        }
        let inverse_chol =
            nalgebra::Cholesky::new(regularizer.clone()).ok_or_else(|| Error::InvalidConfig(
                "regularizer is not positive-definite".into(),
            ))?;
        Ok(Self {
            feature_map,
            regularizer,
            inverse_chol,
        })
    }

    /// The common choice `tau * I` on `n_features` features.
    pub fn identity_ridge(feature_map: FeatureMap, n_features: usize, tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "ridge strength tau must be positive, got {tau}"
            )));
        }
        Self::new(feature_map, DMatrix::identity(n_features, n_features) * tau)
    }

    pub fn n_features(&self) -> usize {
        self.regularizer.nrows()
    }

    fn features(&self, x: &[f64]) -> Result<DVector<f64>> {
        let phi = (self.feature_map)(x);
        if phi.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: phi.len(),
            });
        }
        Ok(DVector::from_vec(phi))
    }

    /// The kernel this primal problem induces: `k(a, b) = phi(a)' S^-1 phi(b)`.
    /// Feeding it to [`fit_local_dual`] reproduces the primal fit exactly.
    pub fn induced_kernel(&self) -> InducedKernel<'_> {
        InducedKernel { config: self }
    }
}

/// See [`PrimalConfig::induced_kernel`].
pub struct InducedKernel<'a> {
    config: &'a PrimalConfig,
}

impl Kernel for InducedKernel<'_> {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let phi_a = (self.config.feature_map)(a);
        let phi_b = DVector::from_vec((self.config.feature_map)(b));
        let solved = self.config.inverse_chol.solve(&phi_b);
        phi_a.iter().zip(solved.iter()).map(|(x, y)| x * y).sum()
    }
}

/// Primal form of the local fit: solves the normal equations
/// `(S + sum_i G_i phi_i phi_i') theta = sum_i G_i y_i phi_i` for the
/// minimizer `theta_c(query)` directly.
pub fn fit_local_primal(
    train: &Dataset,
    primal: &PrimalConfig,
    weight: &WeightConfig,
    query: &[f64],
) -> Result<LocalFit> {
    if query.len() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: query.len(),
        });
    }
    let m = train.len();
    let p = primal.n_features();

    let mut normal = primal.regularizer.clone();
    let mut rhs = DVector::zeros(p);
    let mut feature_rows = Vec::with_capacity(m);
    for i in 0..m {
        let phi = primal.features(train.x(i))?;
        let w = weight.weight(query, train.x(i));
        for r in 0..p {
            for c in 0..p {
                normal[(r, c)] += w * phi[r] * phi[c];
            }
            rhs[r] += w * train.y(i) * phi[r];
        }
        feature_rows.push(phi);
    }

    let chol = nalgebra::Cholesky::new(normal).ok_or_else(|| Error::SolveFailed {
        context: "primal normal matrix lost positive definiteness".into(),
    })?;
    let theta = chol.solve(&rhs);

    let prediction = primal.features(query)?.dot(&theta);
    let local_estimates = feature_rows.iter().map(|phi| phi.dot(&theta)).collect();
    Ok(LocalFit {
        prediction,
        local_estimates,
        query: query.to_vec(),
    })
}

/// Default positivity floor applied to Parzen scale estimates.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-9;

/// A Parzen scale estimate plus a flag marking the all-weights-underflowed
/// fallback (an unweighted mean was used instead).
#[derive(Debug, Clone, Copy)]
pub struct ParzenEstimate {
    pub sigma: f64,
    pub uniform_fallback: bool,
}

/// Parzen conditional-scale estimate at `query`:
/// `sigma^2 = sum_i r_i^2 G(query, x_i) / sum_i G(query, x_i)` over the
/// training inputs, with caller-supplied residuals `r_i`.
pub fn parzen_sigma(
    train: &Dataset,
    residuals: &[f64],
    weight: &WeightConfig,
    query: &[f64],
) -> Result<ParzenEstimate> {
    parzen_sigma_with_floor(train, residuals, weight, query, DEFAULT_SIGMA_FLOOR)
}

/// [`parzen_sigma`] with an explicit positivity floor.
pub fn parzen_sigma_with_floor(
    train: &Dataset,
    residuals: &[f64],
    weight: &WeightConfig,
    query: &[f64],
    floor: f64,
) -> Result<ParzenEstimate> {
    if query.len() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: query.len(),
        });
    }
    if residuals.len() != train.len() {
        return Err(Error::DimensionMismatch {
            expected: train.len(),
            got: residuals.len(),
        });
    }
    let weights: Vec<f64> = (0..train.len())
        .map(|i| weight.weight(query, train.x(i)))
        .collect();
    let squared: Vec<f64> = residuals.iter().map(|r| r * r).collect();
    Ok(parzen_from_parts(&squared, &weights, floor))
}

fn parzen_from_parts(squared_residuals: &[f64], weights: &[f64], floor: f64) -> ParzenEstimate {
    let weight_sum: f64 = weights.iter().sum();
    if weight_sum > 0.0 && weight_sum.is_finite() {
        let weighted: f64 = squared_residuals
            .iter()
            .zip(weights)
            .map(|(r2, w)| r2 * w)
            .sum();
        ParzenEstimate {
            sigma: (weighted / weight_sum).sqrt().max(floor),
            uniform_fallback: false,
        }
    } else {
        let mean =
            squared_residuals.iter().sum::<f64>() / squared_residuals.len().max(1) as f64;
        ParzenEstimate {
            sigma: mean.sqrt().max(floor),
            uniform_fallback: true,
        }
    }
}

/// Which residuals feed the Parzen scale estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    /// `y_i - y_hat_i(query)`: the local estimates from the same fit that
    /// produces the prediction. Default; the natural companion of the
    /// local kernel pipeline.
    #[default]
    Local,
    /// `y_i - T(x_i)` with the predictor evaluated once per training
    /// point: residuals are fixed across queries, only the weights move.
    FixedPredictor,
}

/// How many training points participate in each local fit.
///
/// The locality weights decay exponentially, so the fit is dominated by
/// the points nearest the query; `Nearest(m)` keeps only those, reducing a
/// per-query O(M^3) solve to O(m^3). `Exact` keeps all M points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Truncation {
    Exact,
    Nearest(usize),
}

/// Default neighborhood size for truncated fits.
pub const DEFAULT_NEIGHBORHOOD: usize = 300;

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Nearest(DEFAULT_NEIGHBORHOOD)
    }
}

// Precomputing the full Gram matrix costs M^2 doubles; above this many
// training points the kernel block is recomputed per query instead.
const GRAM_PRECOMPUTE_MAX_POINTS: usize = 2800;

/// Immutable training snapshot shared by every family member built on it:
/// the (internally sorted, for scalar regressors) training data, the
/// kernel, and the precomputed Gram matrix when affordable.
#[derive(Debug)]
pub struct LocalKernelModel {
    xs: Vec<f64>,
    dim: usize,
    ys: Vec<f64>,
    kernel: KernelConfig,
    neighborhood: usize,
    gram: Option<Vec<f64>>,
}

impl LocalKernelModel {
    pub fn new(train: &Dataset, kernel: KernelConfig, truncation: Truncation) -> Self {
        let m = train.len();
        let neighborhood = match truncation {
            Truncation::Exact => m,
            Truncation::Nearest(k) => k.clamp(1, m),
        };

        // Scalar regressors are sorted so that every query's nearest
        // neighbors form a contiguous window (and contiguous Gram block).
        let dim = train.dim();
        let order: Vec<usize> = if dim == 1 {
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_by(|&a, &b| f64::total_cmp(&train.x(a)[0], &train.x(b)[0]));
            idx
        } else {
            (0..m).collect()
        };
        let mut xs = Vec::with_capacity(m * dim);
        let mut ys = Vec::with_capacity(m);
        for &i in &order {
            xs.extend_from_slice(train.x(i));
            ys.push(train.y(i));
        }

        let gram = (m <= GRAM_PRECOMPUTE_MAX_POINTS).then(|| {
            let mut g = vec![0.0; m * m];
            for i in 0..m {
                for j in i..m {
                    let v = kernel.eval(&xs[i * dim..(i + 1) * dim], &xs[j * dim..(j + 1) * dim]);
                    g[i * m + j] = v;
                    g[j * m + i] = v;
                }
            }
            g
        });

        Self {
            xs,
            dim,
            ys,
            kernel,
            neighborhood,
            gram,
        }
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn kernel(&self) -> KernelConfig {
        self.kernel
    }

    pub fn neighborhood(&self) -> usize {
        self.neighborhood
    }

    #[inline]
    fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    /// Indices of the `neighborhood` training points closest to the query
    /// in the weight norm. For sorted scalar data this is a contiguous
    /// window found by two-pointer expansion; ties prefer the left/lower
    /// index, so the result is deterministic.
    fn select_neighborhood(&self, query: &[f64], norm: Norm, out: &mut Vec<usize>) {
        let m = self.len();
        let k = self.neighborhood;
        out.clear();
        if k >= m {
            out.extend(0..m);
            return;
        }
        if self.dim == 1 {
            let q = query[0];
            let window = window_1d(&self.xs, q, k);
            out.extend(window);
            return;
        }
        let mut by_dist: Vec<(f64, usize)> = (0..m)
            .map(|i| (norm.distance(query, self.x(i)), i))
            .collect();
        by_dist.select_nth_unstable_by(k - 1, |a, b| {
            f64::total_cmp(&a.0, &b.0).then(a.1.cmp(&b.1))
        });
        out.extend(by_dist[..k].iter().map(|&(_, i)| i));
        out.sort_unstable();
    }

    #[inline]
    fn gram_entry(&self, i: usize, j: usize) -> f64 {
        match &self.gram {
            Some(g) => g[i * self.len() + j],
            None => self.kernel.eval(self.x(i), self.x(j)),
        }
    }

    /// One truncated local fit. Returns the prediction; when
    /// `compute_estimates` is set, also fills `local_estimates` with
    /// `y_hat_l(query)` for the neighborhood points (aligned with
    /// `indices`).
    fn fit_at(
        &self,
        weight: &WeightConfig,
        query: &[f64],
        compute_estimates: bool,
        scratch: &mut Scratch,
    ) -> Result<f64> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let norm = weight.norm();
        self.select_neighborhood(query, norm, &mut scratch.indices);
        let k = scratch.indices.len();

        scratch.sqrt_weights.clear();
        scratch.rhs.clear();
        for &i in &scratch.indices {
            let w = weight.weight(query, self.x(i));
            scratch.sqrt_weights.push(w.sqrt());
            scratch.rhs.push(self.ys[i]);
        }

        // Kernel block over the neighborhood, then the shifted system
        // C = Ws K Ws + I in a second buffer.
        scratch.kernel_block.resize(k * k, 0.0);
        scratch.system.resize(k * k, 0.0);
        for (a, &i) in scratch.indices.iter().enumerate() {
            for (b, &j) in scratch.indices.iter().enumerate().skip(a) {
                let v = self.gram_entry(i, j);
                scratch.kernel_block[a * k + b] = v;
                scratch.kernel_block[b * k + a] = v;
            }
        }
        for a in 0..k {
            let wa = scratch.sqrt_weights[a];
            for b in 0..k {
                scratch.system[a * k + b] =
                    wa * scratch.sqrt_weights[b] * scratch.kernel_block[a * k + b];
            }
            scratch.system[a * k + a] += 1.0;
        }

        for a in 0..k {
            scratch.rhs[a] *= scratch.sqrt_weights[a];
        }
        cholesky_solve_inplace(&mut scratch.system, k, &mut scratch.rhs).map_err(|pivot| {
            Error::SolveFailed {
                context: format!(
                    "shifted kernel system lost positive definiteness at pivot {pivot} \
                     (neighborhood {k})"
                ),
            }
        })?;
        // alpha = Ws beta, reusing the rhs buffer.
        for a in 0..k {
            scratch.rhs[a] *= scratch.sqrt_weights[a];
        }

        let mut prediction = 0.0;
        for (a, &i) in scratch.indices.iter().enumerate() {
            prediction += scratch.rhs[a] * self.kernel.eval(query, self.x(i));
        }

        scratch.local_estimates.clear();
        if compute_estimates {
            for a in 0..k {
                let row = &scratch.kernel_block[a * k..(a + 1) * k];
                scratch.local_estimates.push(dot(row, &scratch.rhs[..k]));
            }
        }
        Ok(prediction)
    }

    /// Locality weights of the query against every training point.
    fn fill_weights(&self, weight: &WeightConfig, query: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for i in 0..self.len() {
            out.push(weight.weight(query, self.x(i)));
        }
    }
}

/// A (predictor, scale) family member: truncated local kernel fits plus a
/// Parzen scale over the full training set. `lambda` indexes the member
/// within a family.
#[derive(Debug, Clone)]
pub struct KernelScaledEstimator {
    model: Arc<LocalKernelModel>,
    weight: WeightConfig,
    mode: ResidualMode,
    // Squared fixed residuals in the model's internal point order.
    fixed_residuals_sq: Option<Arc<Vec<f64>>>,
    sigma_floor: f64,
}

impl KernelScaledEstimator {
    pub fn new(
        model: Arc<LocalKernelModel>,
        weight: WeightConfig,
        mode: ResidualMode,
    ) -> Result<Self> {
        let mut member = Self {
            model,
            weight,
            mode,
            fixed_residuals_sq: None,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        };
        if mode == ResidualMode::FixedPredictor {
            let model = &member.model;
            let residuals: Result<Vec<f64>> = (0..model.len())
                .into_par_iter()
                .map(|i| {
                    let (prediction, _) = member.raw_evaluate(model.x(i))?;
                    let r = model.ys[i] - prediction;
                    Ok(r * r)
                })
                .collect();
            member.fixed_residuals_sq = Some(Arc::new(residuals?));
        }
        Ok(member)
    }

    pub fn lambda(&self) -> f64 {
        self.weight.lambda()
    }

    pub fn weight_config(&self) -> WeightConfig {
        self.weight
    }

    pub fn residual_mode(&self) -> ResidualMode {
        self.mode
    }

    pub fn model(&self) -> &Arc<LocalKernelModel> {
        &self.model
    }

    /// Prediction and scale from one shared local fit.
    pub fn evaluate(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.raw_evaluate(x)
    }

    fn raw_evaluate(&self, x: &[f64]) -> Result<(f64, f64)> {
        SCRATCH.with(|cell| {
            let scratch = &mut *cell.borrow_mut();
            let need_estimates = self.mode == ResidualMode::Local;
            let prediction = self.model.fit_at(&self.weight, x, need_estimates, scratch)?;

            // Fixed residuals are valid at every training point, so their
            // Parzen average runs over the full set. Local residuals only
            // exist where the truncated fit has support; their average is
            // confined to the fit neighborhood.
            let Scratch {
                indices,
                local_estimates,
                squared_residuals,
                parzen_weights,
                ..
            } = scratch;
            squared_residuals.clear();
            match (&self.mode, &self.fixed_residuals_sq) {
                (ResidualMode::Local, _) => {
                    parzen_weights.clear();
                    for (a, &i) in indices.iter().enumerate() {
                        let r = self.model.ys[i] - local_estimates[a];
                        squared_residuals.push(r * r);
                        parzen_weights.push(self.weight.weight(x, self.model.x(i)));
                    }
                }
                (ResidualMode::FixedPredictor, Some(res)) => {
                    self.model.fill_weights(&self.weight, x, parzen_weights);
                    squared_residuals.extend_from_slice(res);
                }
                (ResidualMode::FixedPredictor, None) => {
                    // Only reachable during the residual precomputation
                    // pass itself, which ignores the scale.
                    parzen_weights.clear();
                    parzen_weights.push(1.0);
                    squared_residuals.push(0.0);
                }
            }
            let estimate =
                parzen_from_parts(squared_residuals, parzen_weights, self.sigma_floor);
            Ok((prediction, estimate.sigma))
        })
    }
}

impl ScaledPredictor for KernelScaledEstimator {
    fn predict(&self, x: &[f64]) -> f64 {
        self.predict_and_scale(x).0
    }

    fn scale(&self, x: &[f64]) -> f64 {
        self.predict_and_scale(x).1
    }

    fn predict_and_scale(&self, x: &[f64]) -> (f64, f64) {
        self.evaluate(x)
            .expect("shifted kernel system is positive definite by construction")
    }
}

impl Predictor for KernelScaledEstimator {
    fn predict(&self, x: &[f64]) -> f64 {
        ScaledPredictor::predict(self, x)
    }
}

impl ScaleEstimator for KernelScaledEstimator {
    fn scale(&self, x: &[f64]) -> f64 {
        ScaledPredictor::scale(self, x)
    }
}

/// Build the lambda-indexed candidate family: one
/// (predictor, scale) member per locality parameter, all sharing one
/// training snapshot and Gram matrix.
pub fn build_family(
    train: &Dataset,
    kernel: KernelConfig,
    lambdas: &[f64],
    mode: ResidualMode,
    truncation: Truncation,
) -> Result<Vec<KernelScaledEstimator>> {
    if lambdas.is_empty() {
        return Err(Error::Empty { what: "lambda list" });
    }
    for (i, a) in lambdas.iter().enumerate() {
        if !a.is_finite() || *a <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {a}"
            )));
        }
        if lambdas[..i].contains(a) {
            return Err(Error::InvalidConfig(format!(
                "duplicate lambda {a} in family"
            )));
        }
    }
    let model = Arc::new(LocalKernelModel::new(train, kernel, truncation));
    lambdas
        .iter()
        .map(|&lambda| KernelScaledEstimator::new(model.clone(), WeightConfig::new(lambda)?, mode))
        .collect()
}

/// Parzen scale estimator around an arbitrary external predictor: the
/// residuals `y_i - T(x_i)` are computed once over the training data and
/// reweighted per query.
#[derive(Debug, Clone)]
pub struct ParzenScale {
    xs: Vec<f64>,
    dim: usize,
    weight: WeightConfig,
    squared_residuals: Vec<f64>,
    sigma_floor: f64,
}

impl ParzenScale {
    pub fn from_predictor<P: Predictor + ?Sized>(
        train: &Dataset,
        predictor: &P,
        weight: WeightConfig,
    ) -> Self {
        let squared_residuals = (0..train.len())
            .map(|i| {
                let r = train.y(i) - predictor.predict(train.x(i));
                r * r
            })
            .collect();
        Self {
            xs: (0..train.len()).flat_map(|i| train.x(i).to_vec()).collect(),
            dim: train.dim(),
            weight,
            squared_residuals,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        }
    }
}

impl ScaleEstimator for ParzenScale {
    fn scale(&self, x: &[f64]) -> f64 {
        let weights: Vec<f64> = (0..self.squared_residuals.len())
            .map(|i| {
                self.weight
                    .weight(x, &self.xs[i * self.dim..(i + 1) * self.dim])
            })
            .collect();
        parzen_from_parts(&self.squared_residuals, &weights, self.sigma_floor).sigma
    }
}

// ---------------------------------------------------------------------
// Dense SPD solve machinery for the truncated hot path. The shifted
// system has eigenvalues >= 1, so the factorization cannot break down in
// practice; failures indicate NaN poisoning and are reported.

#[derive(Default)]
struct Scratch {
    indices: Vec<usize>,
    sqrt_weights: Vec<f64>,
    parzen_weights: Vec<f64>,
    kernel_block: Vec<f64>,
    system: Vec<f64>,
    rhs: Vec<f64>,
    local_estimates: Vec<f64>,
    squared_residuals: Vec<f64>,
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch::default());
}

/// Contiguous window of the `k` values closest to `q` in a sorted slice.
fn window_1d(sorted: &[f64], q: f64, k: usize) -> Range<usize> {
    let n = sorted.len();
    let mut hi = sorted.partition_point(|&v| v < q);
    let mut lo = hi;
    while hi - lo < k {
        let left = if lo > 0 {
            q - sorted[lo - 1]
        } else {
            f64::INFINITY
        };
        let right = if hi < n {
            sorted[hi] - q
        } else {
            f64::INFINITY
        };
        if left <= right {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    lo..hi
}

/// In-place Cholesky of a row-major SPD matrix followed by the two
/// triangular solves; `rhs` holds the solution on return. Errors with the
/// failing pivot index.
fn cholesky_solve_inplace(
    a: &mut [f64],
    n: usize,
    rhs: &mut [f64],
) -> std::result::Result<(), usize> {
    debug_assert!(a.len() >= n * n && rhs.len() >= n);
    for j in 0..n {
        let (upper, below) = a.split_at_mut((j + 1) * n);
        let row_j = &mut upper[j * n..(j + 1) * n];
        let d = row_j[j] - dot(&row_j[..j], &row_j[..j]);
        if d.is_nan() || d <= 0.0 {
            return Err(j);
        }
        let diag = d.sqrt();
        row_j[j] = diag;
        let inv = 1.0 / diag;
        let row_j: &[f64] = row_j;
        for i in 0..n - j - 1 {
            let row_i = &mut below[i * n..(i + 1) * n];
            let s = dot(&row_i[..j], &row_j[..j]);
            row_i[j] = (row_i[j] - s) * inv;
        }
    }
    // Forward solve L z = rhs.
    for i in 0..n {
        let row = &a[i * n..i * n + i];
        let s = dot(row, &rhs[..i]);
        rhs[i] = (rhs[i] - s) / a[i * n + i];
    }
    // Backward solve L' x = z, saxpy form over rows.
    for i in (0..n).rev() {
        rhs[i] /= a[i * n + i];
        let xi = rhs[i];
        let row = &a[i * n..i * n + i];
        for (k, &l) in row.iter().enumerate() {
            rhs[k] -= l * xi;
        }
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_dataset(xs: Vec<f64>, ys: Vec<f64>) -> Dataset {
        Dataset::from_scalar(xs, ys).unwrap()
    }

    #[test]
    fn exp_weight_examples() {
        let cfg = WeightConfig::new(1.0).unwrap();
        assert_eq!(exp_weight(&[2.0, 3.0], &[2.0, 3.0], &cfg).unwrap(), 1.0);
        let e1 = exp_weight(&[0.0], &[1.0], &cfg).unwrap();
        assert!((e1 - (-1.0f64).exp()).abs() <= 1e-15);
        let cfg3 = WeightConfig::new(3.0).unwrap();
        let e6 = exp_weight(&[0.0], &[2.0], &cfg3).unwrap();
        assert!((e6 - (-6.0f64).exp()).abs() <= 1e-15);
        assert!(exp_weight(&[0.0], &[0.0, 1.0], &cfg).is_err());
    }

    #[test]
    fn rbf_kernel_examples() {
        let cfg = KernelConfig::new(50.0, 0.2).unwrap();
        assert_eq!(rbf_kernel(&[1.5], &[1.5], &cfg).unwrap(), 50.0);
        // |a - b|^2 = 0.2 with lengthscale_sq = 0.2 -> 50 / e.
        let v = rbf_kernel(&[0.0], &[0.2f64.sqrt()], &cfg).unwrap();
        assert!((v - 50.0 * (-1.0f64).exp()).abs() <= 1e-12);
        let far = rbf_kernel(&[0.0], &[100.0], &KernelConfig::new(1.0, 0.2).unwrap()).unwrap();
        assert!((0.0..1e-300).contains(&far));
    }

    #[test]
    fn config_validation() {
        assert!(KernelConfig::new(0.0, 1.0).is_err());
        assert!(KernelConfig::new(1.0, -1.0).is_err());
        assert!(WeightConfig::new(0.0).is_err());
        assert!(WeightConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn dual_single_point_closed_form() {
        let train = scalar_dataset(vec![1.0], vec![3.0]);
        let kernel = KernelConfig::new(2.0, 1.0).unwrap();
        let weight = WeightConfig::new(0.7).unwrap();
        let query = [0.4];
        let fit = fit_local_dual(&train, &kernel, &weight, &query).unwrap();
        let k_qq = rbf_kernel(&query, &[1.0], &kernel).unwrap();
        let k_11 = rbf_kernel(&[1.0], &[1.0], &kernel).unwrap();
        let g = exp_weight(&query, &[1.0], &weight).unwrap();
        let expected = k_qq * 3.0 / (k_11 + 1.0 / g);
        assert!((fit.prediction() - expected).abs() <= 1e-12);
        assert_eq!(fit.local_estimates().len(), 1);
    }

    #[test]
    fn dual_zero_targets_give_zero_fit() {
        let train = scalar_dataset(vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 0.0]);
        let kernel = KernelConfig::new(5.0, 0.5).unwrap();
        let weight = WeightConfig::new(1.0).unwrap();
        let fit = fit_local_dual(&train, &kernel, &weight, &[0.5]).unwrap();
        assert_eq!(fit.prediction(), 0.0);
        assert!(fit.local_estimates().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn primal_single_point_hand_computed() {
        // phi(x) = x, one point (1, 1), weight 1, tau = 1:
        // (1 + 1) theta = 1 -> theta = 0.5.
        let train = scalar_dataset(vec![1.0], vec![1.0]);
        let primal =
            PrimalConfig::identity_ridge(Box::new(|x: &[f64]| vec![x[0]]), 1, 1.0).unwrap();
        // lambda tiny so the single weight is exactly 1.
        let weight = WeightConfig::new(1e-300).unwrap();
        let fit = fit_local_primal(&train, &primal, &weight, &[1.0]).unwrap();
        assert!((fit.prediction() - 0.5).abs() <= 1e-12);
        assert!((fit.local_estimates()[0] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn primal_strong_ridge_shrinks_to_zero() {
        let train = scalar_dataset(vec![0.0, 1.0, 2.0], vec![5.0, 6.0, 7.0]);
        let weight = WeightConfig::new(0.5).unwrap();
        let feature = |x: &[f64]| vec![1.0, x[0]];
        let mut last = f64::INFINITY;
        for tau in [1.0, 1e3, 1e6, 1e9] {
            let primal = PrimalConfig::identity_ridge(Box::new(feature), 2, tau).unwrap();
            let fit = fit_local_primal(&train, &primal, &weight, &[1.0]).unwrap();
            assert!(fit.prediction().abs() < last);
            last = fit.prediction().abs();
        }
        assert!(last <= 1e-6);
    }

    #[test]
    fn primal_and_dual_agree_through_the_induced_kernel() {
        // Deterministic small instances; the full randomized sweep lives
        // in the acceptance suite.
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.8).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.3 * x * x - 0.4 * x + 0.2).collect();
        let train = scalar_dataset(xs, ys);
        let feature = |x: &[f64]| vec![1.0, x[0], x[0] * x[0]];
        let primal = PrimalConfig::identity_ridge(Box::new(feature), 3, 0.7).unwrap();
        let weight = WeightConfig::new(1.2).unwrap();
        for q in [-1.5, 0.0, 0.9] {
            let p = fit_local_primal(&train, &primal, &weight, &[q]).unwrap();
            let d = fit_local_dual(&train, &primal.induced_kernel(), &weight, &[q]).unwrap();
            let scale = p.prediction().abs().max(1.0);
            assert!(
                (p.prediction() - d.prediction()).abs() <= 1e-8 * scale,
                "q = {q}: primal {} vs dual {}",
                p.prediction(),
                d.prediction()
            );
            for (a, b) in p.local_estimates().iter().zip(d.local_estimates()) {
                assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn interpolation_limit_with_growing_amplitude() {
        let xs: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 1.1).cos() * 2.0 + x).collect();
        let train = scalar_dataset(xs.clone(), ys.clone());
        let weight = WeightConfig::new(0.8).unwrap();
        let target = 4; // query one of the training points
        let mut last = f64::INFINITY;
        for amplitude in [1.0, 10.0, 100.0, 1000.0] {
            let kernel = KernelConfig::new(amplitude, 0.5).unwrap();
            let fit = fit_local_dual(&train, &kernel, &weight, &[xs[target]]).unwrap();
            let err = (fit.prediction() - ys[target]).abs();
            assert!(err < last, "amplitude {amplitude}: {err} !< {last}");
            last = err;
        }
    }

    #[test]
    fn parzen_constant_residuals() {
        let train = scalar_dataset(vec![0.0, 1.0, 2.0], vec![0.0; 3]);
        let weight = WeightConfig::new(2.0).unwrap();
        let est = parzen_sigma(&train, &[-3.0, -3.0, -3.0], &weight, &[0.7]).unwrap();
        assert!((est.sigma - 3.0).abs() <= 1e-12);
        assert!(!est.uniform_fallback);
    }

    #[test]
    fn parzen_uniform_weights_give_rms() {
        let train = scalar_dataset(vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 4]);
        // lambda small enough that every weight is exactly 1.
        let weight = WeightConfig::new(1e-300).unwrap();
        let residuals = [1.0, 2.0, 3.0, 4.0];
        let est = parzen_sigma(&train, &residuals, &weight, &[1.5]).unwrap();
        let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / 4.0).sqrt();
        assert!((est.sigma - rms).abs() <= 1e-12);
    }

    #[test]
    fn parzen_two_point_hand_case() {
        // Weights {1, 1/3} reproduce the 3:1 weighting: sigma^2 = 4/4 = 1.
        let train = scalar_dataset(vec![0.0, 3.0f64.ln()], vec![0.0, 0.0]);
        let weight = WeightConfig::new(1.0).unwrap();
        let est = parzen_sigma(&train, &[0.0, 2.0], &weight, &[0.0]).unwrap();
        assert!((est.sigma - 1.0).abs() <= 1e-12, "sigma = {}", est.sigma);
    }

    #[test]
    fn parzen_underflow_falls_back_to_uniform_mean() {
        let train = scalar_dataset(vec![0.0, 1.0], vec![0.0, 0.0]);
        // Distances ~1e4 with lambda 1: weights underflow to exactly 0.
        let weight = WeightConfig::new(1.0).unwrap();
        let est = parzen_sigma(&train, &[2.0, 4.0], &weight, &[1e4]).unwrap();
        assert!(est.uniform_fallback);
        assert!((est.sigma - 10.0f64.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn parzen_floor_keeps_sigma_positive() {
        let train = scalar_dataset(vec![0.0, 1.0], vec![0.0, 0.0]);
        let weight = WeightConfig::new(1.0).unwrap();
        let est = parzen_sigma(&train, &[0.0, 0.0], &weight, &[0.5]).unwrap();
        assert_eq!(est.sigma, DEFAULT_SIGMA_FLOOR);
    }

    #[test]
    fn build_family_rejects_bad_lambda_lists() {
        let train = scalar_dataset(vec![0.0, 1.0], vec![0.0, 1.0]);
        let kernel = KernelConfig::new(1.0, 1.0).unwrap();
        assert!(build_family(&train, kernel, &[], ResidualMode::Local, Truncation::Exact).is_err());
        assert!(build_family(
            &train,
            kernel,
            &[1.0, 2.0, 1.0],
            ResidualMode::Local,
            Truncation::Exact
        )
        .is_err());
        assert!(build_family(
            &train,
            kernel,
            &[1.0, -2.0],
            ResidualMode::Local,
            Truncation::Exact
        )
        .is_err());
    }

    #[test]
    fn truncated_member_matches_exact_dual_when_window_is_everything() {
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.61).sin() * 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + (x * 2.0).cos()).collect();
        let train = scalar_dataset(xs, ys.clone());
        let kernel = KernelConfig::new(10.0, 0.5).unwrap();
        let weight = WeightConfig::new(1.0).unwrap();
        let family = build_family(
            &train,
            kernel,
            &[1.0],
            ResidualMode::Local,
            Truncation::Exact,
        )
        .unwrap();
        let member = &family[0];
        for q in [-1.7, 0.0, 0.33, 1.9] {
            let (prediction, sigma) = member.evaluate(&[q]).unwrap();
            let fit = fit_local_dual(&train, &kernel, &weight, &[q]).unwrap();
            assert!(
                (prediction - fit.prediction()).abs() <= 1e-9 * prediction.abs().max(1.0),
                "prediction mismatch at {q}"
            );
            // Parzen over the same local estimates, original order.
            let residuals: Vec<f64> = train
                .ys()
                .iter()
                .zip(fit.local_estimates())
                .map(|(y, est)| y - est)
                .collect();
            let expected = parzen_sigma(&train, &residuals, &weight, &[q]).unwrap();
            assert!(
                (sigma - expected.sigma).abs() <= 1e-9 * expected.sigma.max(1e-9),
                "sigma mismatch at {q}: {sigma} vs {}",
                expected.sigma
            );
        }
    }

    #[test]
    fn truncation_keeps_nearest_window() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let ys = xs.clone();
        let train = scalar_dataset(xs, ys);
        let model = LocalKernelModel::new(
            &train,
            KernelConfig::new(1.0, 10.0).unwrap(),
            Truncation::Nearest(5),
        );
        let mut idx = Vec::new();
        model.select_neighborhood(&[50.2], Norm::Euclidean, &mut idx);
        assert_eq!(idx, vec![48, 49, 50, 51, 52]);
        model.select_neighborhood(&[0.0], Norm::Euclidean, &mut idx);
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        model.select_neighborhood(&[99.9], Norm::Euclidean, &mut idx);
        assert_eq!(idx, vec![95, 96, 97, 98, 99]);
    }

    #[test]
    fn hand_rolled_cholesky_matches_nalgebra() {
        // Deterministic pseudo-random SPD systems of several sizes.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for n in [1usize, 2, 5, 17, 64] {
            let b = DMatrix::from_fn(n, n, |_, _| next());
            let spd = &b * b.transpose() + DMatrix::identity(n, n);
            let rhs = DVector::from_fn(n, |_, _| next());

            let mut a: Vec<f64> = (0..n * n).map(|i| spd[(i / n, i % n)]).collect();
            let mut x: Vec<f64> = rhs.iter().copied().collect();
            cholesky_solve_inplace(&mut a, n, &mut x).unwrap();

            let expected = nalgebra::Cholesky::new(spd).unwrap().solve(&rhs);
            for i in 0..n {
                assert!(
                    (x[i] - expected[i]).abs() <= 1e-9 * expected[i].abs().max(1.0),
                    "n = {n}, row {i}: {} vs {}",
                    x[i],
                    expected[i]
                );
            }
        }
    }

    #[test]
    fn cholesky_reports_failed_pivot() {
        // Not positive definite: second pivot fails.
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        let mut rhs = vec![1.0, 1.0];
        assert_eq!(cholesky_solve_inplace(&mut a, 2, &mut rhs), Err(1));
    }

    #[test]
    fn window_1d_edges_and_ties() {
        let sorted = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(window_1d(&sorted, 2.0, 3), 1..4);
        assert_eq!(window_1d(&sorted, -5.0, 2), 0..2);
        assert_eq!(window_1d(&sorted, 9.0, 2), 3..5);
        // Equidistant neighbors prefer the left one.
        assert_eq!(window_1d(&sorted, 1.5, 1), 1..2);
        assert_eq!(window_1d(&sorted, 2.0, 5), 0..5);
    }
}
