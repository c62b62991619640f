//! Serializable command outputs. All maps are ordered so reruns with the
//! same seed produce byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use defectsim::fitting::{CountHistogram, FitResult, GofResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamValue {
    pub value: f64,
    pub std_error: f64,
}

/// JSON form of a fit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub model: String,
    pub converged: bool,
    pub n_iterations: u32,
    pub residual_norm: f64,
    pub params: BTreeMap<String, ParamValue>,
}

impl FitArtifact {
    pub fn from_fit(model: &str, fit: &FitResult) -> Self {
        let mut params = BTreeMap::new();
        for (i, name) in fit.param_names.iter().enumerate() {
            params.insert(
                name.clone(),
                ParamValue {
                    value: fit.params[i],
                    std_error: fit.std_errors[i],
                },
            );
        }
        FitArtifact {
            model: model.to_string(),
            converged: fit.converged,
            n_iterations: fit.n_iterations,
            residual_norm: fit.residual_norm,
            params,
        }
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.params.get(name).map(|p| p.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplantSummary {
    pub kind: String,
    pub n_spots: usize,
    pub dose: u32,
    pub total_defects: usize,
    pub lambda_hat: f64,
    pub histogram: CountHistogram,
    pub plan_fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbtArtifact {
    pub k_emitters: u32,
    pub signal_kcps_total: f64,
    pub background_kcps: f64,
    pub rho: f64,
    pub duration_s: f64,
    pub power_mw: f64,
    pub n_photons: usize,
    pub g2_zero: Option<f64>,
    pub g2_zero_err: Option<f64>,
    /// "biexp" for the full four-parameter fit; "amplitudes_frozen_tau"
    /// when the integration time cannot identify the time constants and
    /// only the amplitudes were fit.
    pub fit_mode: String,
    pub fit: Option<FitArtifact>,
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationArtifact {
    pub points: Vec<SaturationPoint>,
    pub fit: FitArtifact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationPoint {
    pub power_mw: f64,
    pub rate_kcps: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrArtifact {
    pub fit: FitArtifact,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseRow {
    pub dose: u32,
    pub n_spots: usize,
    pub n_detected: usize,
    pub n_unmatched_detections: usize,
    pub mean_counts_kcps: f64,
    pub lambda_hat: f64,
    pub lambda_se: f64,
    pub conversion_yield: f64,
    pub single_fraction: f64,
    pub analytic_p1: f64,
    pub gof: Option<GofResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseSweepArtifact {
    pub rows: Vec<DoseRow>,
    pub unit_brightness_kcps: f64,
}

/// One comparison row of the reproduction report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub quantity: String,
    pub units: String,
    pub value: Option<f64>,
    pub target: f64,
    /// Absolute tolerance; rows without one are informational.
    pub tolerance: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .with_context(|| format!("serializing {}", path.display()))?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
