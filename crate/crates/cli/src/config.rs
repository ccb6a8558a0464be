//! Run configuration: data sources, predictor/scale choices, kernel
//! settings, and the hash that ties a calibration report to them.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use probscale::calibration::{Predictor, ScaleEstimator, ScaledPredictor};
use probscale::kernel::{
    build_family, KernelConfig, KernelScaledEstimator, LocalKernelModel, ParzenScale,
    ResidualMode, Truncation, WeightConfig,
};
use probscale::synthetic::{self, exact_sigma, ExampleConfig, OraclePredictor};
use probscale::Dataset;

use crate::error::{CliError, CliResult};
use crate::io::read_dataset;

/// Where a dataset comes from. Synthetic sources are reproducible from the
/// (seed, stream, count) triple; file sources are pinned by content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic { seed: u64, stream: u64, count: usize },
    Csv { path: PathBuf, sha256: String },
}

impl DataSource {
    pub fn synthetic(seed: u64, stream: u64, count: usize) -> Self {
        DataSource::Synthetic {
            seed,
            stream,
            count,
        }
    }

    pub fn from_csv_path(path: &Path) -> CliResult<Self> {
        Ok(DataSource::Csv {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        })
    }

    /// Load the dataset, re-verifying the content hash for file sources.
    pub fn load(&self) -> CliResult<Dataset> {
        match self {
            DataSource::Synthetic {
                seed,
                stream,
                count,
            } => Ok(synthetic::sample_example_stream(
                *count,
                &ExampleConfig::new(*seed),
                *stream,
            )),
            DataSource::Csv { path, sha256 } => {
                let now = file_sha256(path)?;
                if &now != sha256 {
                    return Err(CliError::Contract(format!(
                        "{} changed since calibration (hash {now} != recorded {sha256})",
                        path.display()
                    )));
                }
                read_dataset(path)
            }
        }
    }

    /// True when two sources would produce the same observations, which
    /// violates the calibration/validation disjointness contract.
    pub fn same_draw(&self, other: &DataSource) -> bool {
        match (self, other) {
            (
                DataSource::Synthetic { seed, stream, .. },
                DataSource::Synthetic {
                    seed: s2,
                    stream: t2,
                    ..
                },
            ) => seed == s2 && stream == t2,
            (DataSource::Csv { sha256, .. }, DataSource::Csv { sha256: h2, .. }) => sha256 == h2,
            _ => false,
        }
    }
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex_digest(&bytes))
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Kernel-pipeline settings as stored in reports and experiment config
/// files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSettings {
    pub amplitude: f64,
    pub lengthscale_sq: f64,
    pub truncation_m: usize,
    pub residual_mode: ResidualModeArg,
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self {
            amplitude: 50.0,
            lengthscale_sq: 0.2,
            truncation_m: 300,
            residual_mode: ResidualModeArg::Local,
        }
    }
}

impl KernelSettings {
    pub fn kernel_config(&self) -> CliResult<KernelConfig> {
        Ok(KernelConfig::new(self.amplitude, self.lengthscale_sq)?)
    }

    pub fn truncation(&self) -> Truncation {
        Truncation::Nearest(self.truncation_m)
    }

    pub fn residual_mode(&self) -> ResidualMode {
        self.residual_mode.into()
    }
}

/// `local` or `fixed-t` on the command line and in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualModeArg {
    #[default]
    Local,
    #[value(name = "fixed-t")]
    #[serde(rename = "fixed-t")]
    FixedT,
}

impl From<ResidualModeArg> for ResidualMode {
    fn from(arg: ResidualModeArg) -> Self {
        match arg {
            ResidualModeArg::Local => ResidualMode::Local,
            ResidualModeArg::FixedT => ResidualMode::FixedPredictor,
        }
    }
}

/// On-disk experiment config (all sections optional; flags override).
///
/// ```json
/// {
///   "kernel": {"amplitude": 50.0, "lengthscale_sq": 0.2},
///   "weight": {"lambda": 1.0},
///   "truncation": {"m": 300},
///   "residual_mode": "local"
/// }
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ExperimentFile {
    pub kernel: Option<KernelFileSection>,
    pub weight: Option<WeightFileSection>,
    pub truncation: Option<TruncationFileSection>,
    pub residual_mode: Option<ResidualModeArg>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct KernelFileSection {
    pub amplitude: Option<f64>,
    pub lengthscale_sq: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct WeightFileSection {
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TruncationFileSection {
    pub m: Option<usize>,
}

impl ExperimentFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// The predictor half of a run, as recorded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PredictorSpec {
    /// Closed-form optimal predictor of the synthetic benchmark.
    Oracle,
    /// Single locally weighted kernel member.
    Kernel {
        train: DataSource,
        settings: KernelSettings,
        lambda: f64,
    },
    /// Lambda-indexed family of kernel members.
    KernelFamily {
        train: DataSource,
        settings: KernelSettings,
        lambdas: Vec<f64>,
    },
}

/// The scale half of a run, as recorded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SigmaSpec {
    /// No conditioning: fixed-size bound.
    None,
    Constant {
        value: f64,
    },
    /// Exact conditional scale of the synthetic benchmark.
    Exact,
    /// Parzen estimate around the predictor's own local fits (kernel
    /// predictors only).
    Member,
    /// Parzen estimate with fixed residuals of an external predictor over
    /// a training set.
    Parzen {
        train: DataSource,
        lambda: f64,
    },
}

/// An evaluatable (predictor, scale) pair reconstructed from specs.
pub enum BuiltModel {
    Oracle {
        sigma: BuiltSigma,
    },
    Kernel {
        member: KernelScaledEstimator,
        sigma: BuiltSigma,
    },
    Family {
        members: Vec<KernelScaledEstimator>,
    },
}

pub enum BuiltSigma {
    None,
    Constant(f64),
    Exact,
    Member,
    Parzen(ParzenScale),
}

impl BuiltModel {
    pub fn predictor(&self, member_index: usize) -> CliResult<&dyn Predictor> {
        Ok(match self {
            BuiltModel::Oracle { .. } => &OraclePredictor,
            BuiltModel::Kernel { member, .. } => member,
            BuiltModel::Family { members, .. } => members
                .get(member_index)
                .ok_or_else(|| CliError::Contract(format!(
                    "selected member {member_index} out of range"
                )))?,
        })
    }
}

/// Build the evaluatable model from its recorded specification.
///
/// The `parzen` sigma route pins its residuals to the oracle predictor;
/// kernel runs carry their own scale (`member`) instead.
pub fn build_model(predictor: &PredictorSpec, sigma: &SigmaSpec) -> CliResult<BuiltModel> {
    let built_sigma = || -> CliResult<BuiltSigma> {
        Ok(match sigma {
            SigmaSpec::None => BuiltSigma::None,
            SigmaSpec::Constant { value } => {
                if !value.is_finite() || *value <= 0.0 {
                    return Err(CliError::Usage(format!(
                        "constant sigma must be positive, got {value}"
                    )));
                }
                BuiltSigma::Constant(*value)
            }
            SigmaSpec::Exact => BuiltSigma::Exact,
            SigmaSpec::Member => BuiltSigma::Member,
            SigmaSpec::Parzen { train, lambda } => {
                let data = train.load()?;
                let weight = WeightConfig::new(*lambda)?;
                BuiltSigma::Parzen(ParzenScale::from_predictor(&data, &OraclePredictor, weight))
            }
        })
    };

    match predictor {
        PredictorSpec::Oracle => Ok(BuiltModel::Oracle {
            sigma: built_sigma()?,
        }),
        PredictorSpec::Kernel {
            train,
            settings,
            lambda,
        } => {
            let train_data = train.load()?;
            let model = Arc::new(LocalKernelModel::new(
                &train_data,
                settings.kernel_config()?,
                settings.truncation(),
            ));
            let member = KernelScaledEstimator::new(
                model,
                WeightConfig::new(*lambda)?,
                settings.residual_mode(),
            )?;
            Ok(BuiltModel::Kernel {
                member,
                sigma: built_sigma()?,
            })
        }
        PredictorSpec::KernelFamily {
            train,
            settings,
            lambdas,
        } => {
            let train_data = train.load()?;
            let members = build_family(
                &train_data,
                settings.kernel_config()?,
                lambdas,
                settings.residual_mode(),
                settings.truncation(),
            )?;
            Ok(BuiltModel::Family { members })
        }
    }
}

/// The per-query bound of a calibrated report:
/// `bound(x) = scale_factor * sigma(x)`, with `sigma = 1` for fixed
/// bounds. `member_index` picks the family member where applicable.
pub struct BoundEvaluator<'a> {
    pub model: &'a BuiltModel,
    pub member_index: usize,
    pub scale_factor: f64,
}

impl BoundEvaluator<'_> {
    pub fn bound(&self, x: &[f64]) -> f64 {
        self.scale_factor * self.sigma_at(x)
    }

    fn sigma_at(&self, x: &[f64]) -> f64 {
        let (sigma, member) = match self.model {
            BuiltModel::Family { members, .. } => {
                return ScaledPredictor::scale(&members[self.member_index], x);
            }
            BuiltModel::Oracle { sigma } => (sigma, None),
            BuiltModel::Kernel { member, sigma } => (sigma, Some(member)),
        };
        match (sigma, member) {
            (BuiltSigma::None, _) => 1.0,
            (BuiltSigma::Constant(c), _) => *c,
            (BuiltSigma::Exact, _) => exact_sigma(x[0]),
            (BuiltSigma::Parzen(p), _) => p.scale(x),
            (BuiltSigma::Member, Some(m)) => ScaledPredictor::scale(m, x),
            (BuiltSigma::Member, None) => f64::NAN,
        }
    }
}
