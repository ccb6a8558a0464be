//! On-disk JSON report schemas shared by `calibrate`, `family`, and
//! `validate`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PredictorSpec, SigmaSpec};
use crate::error::{CliError, CliResult};

/// The configuration section of a calibration report; the hash over its
/// canonical serialization ties later validation runs to the exact same
/// predictor and data provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub predictor: PredictorSpec,
    pub sigma: SigmaSpec,
    pub calibration_data: crate::config::DataSource,
}

impl RunConfig {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// A calibration result plus everything needed to validate it later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// "fixed", "conditioned", or "family".
    pub kind: String,
    pub epsilon: f64,
    pub delta: f64,
    pub n_samples: usize,
    pub discard_rank: usize,
    pub rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_bars: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_lambda: Option<f64>,
    pub config: RunConfig,
    pub config_hash: String,
}

impl CalibrationReport {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let report: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let recomputed = report.config.hash();
        if recomputed != report.config_hash {
            return Err(CliError::Contract(format!(
                "{}: config hash mismatch (stored {}, recomputed {recomputed}); \
                 refusing to validate against a different predictor configuration",
                path.display(),
                report.config_hash
            )));
        }
        Ok(report)
    }

    /// The scale factor multiplying sigma(x) in the per-query bound.
    pub fn scale_factor(&self) -> CliResult<f64> {
        match self.kind.as_str() {
            "fixed" => self.rho.ok_or_else(|| missing_field("rho")),
            "conditioned" => self.gamma_bar.ok_or_else(|| missing_field("gamma_bar")),
            "family" => {
                let index = self
                    .selected_index
                    .ok_or_else(|| missing_field("selected_index"))?;
                self.gamma_bars
                    .as_ref()
                    .and_then(|g| g.get(index).copied())
                    .ok_or_else(|| missing_field("gamma_bars"))
            }
            other => Err(CliError::Usage(format!("unknown report kind {other:?}"))),
        }
    }
}

fn missing_field(name: &str) -> CliError {
    CliError::Usage(format!("report is missing required field {name}"))
}

/// Violation measurement of a saved calibration on fresh data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub epsilon: f64,
    pub delta: f64,
    pub total: usize,
    pub violations: usize,
    pub violation_ratio: f64,
    pub mean_bound_width: f64,
    pub calibration_kind: String,
    pub validation_data: crate::config::DataSource,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}
