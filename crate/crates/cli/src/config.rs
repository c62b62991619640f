//! Experiment configuration: one JSON document with a block per module,
//! every field defaulted so an empty `{}` runs the reference scenario.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use defectsim::emitter::{saturation_rate, EmitterRates, SaturationParams};
use defectsim::implantation::{BeamStraggleModel, DamageYieldModel};
use defectsim::odmr::{ModulationScheme, OdmrLine};

pub const DEFAULT_SEED: u64 = 20260810;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub implantation: ImplantationConfig,
    pub emitter: EmitterConfig,
    pub correlator: CorrelatorConfig,
    pub odmr: OdmrConfig,
    pub scanner: ScannerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: 1,
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("out"),
            implantation: ImplantationConfig::default(),
            emitter: EmitterConfig::default(),
            correlator: CorrelatorConfig::default(),
            odmr: OdmrConfig::default(),
            scanner: ScannerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            bail!("config version {} is not supported (expected 1)", self.version);
        }
        self.implantation.validate().context("implantation block")?;
        self.emitter.validate().context("emitter block")?;
        self.correlator.validate().context("correlator block")?;
        self.odmr.validate().context("odmr block")?;
        self.scanner.validate().context("scanner block")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImplantationConfig {
    pub rows: u32,
    pub cols: u32,
    pub pitch_um: f64,
    pub dose: u32,
    pub beam: BeamStraggleModel,
    pub yield_model: DamageYieldModel,
    /// When set, the implant command lays out this stripe instead of the
    /// array.
    pub stripe: Option<StripeConfig>,
}

impl Default for ImplantationConfig {
    fn default() -> Self {
        ImplantationConfig {
            rows: 5,
            cols: 10,
            pitch_um: 2.0,
            dose: 40,
            beam: BeamStraggleModel::default(),
            yield_model: DamageYieldModel::default(),
            stripe: None,
        }
    }
}

impl ImplantationConfig {
    fn validate(&self) -> Result<()> {
        if self.rows < 1 || self.cols < 1 {
            bail!("rows and cols must be >= 1");
        }
        if !(self.pitch_um > 0.0) {
            bail!("pitch_um must be > 0, got {}", self.pitch_um);
        }
        self.beam.validate()?;
        self.yield_model.validate()?;
        if let Some(s) = &self.stripe {
            if !(s.length_um > 0.0 && s.width_um > 0.0 && s.step_nm > 0.0) {
                bail!("stripe dimensions and step must be > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StripeConfig {
    pub length_um: f64,
    pub width_um: f64,
    pub step_nm: f64,
    pub dose_per_site: u32,
}

impl Default for StripeConfig {
    fn default() -> Self {
        StripeConfig {
            length_um: 1.5,
            width_um: 1.5,
            step_nm: 20.0,
            dose_per_site: 700,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitterConfig {
    pub k_emitters: u32,
    /// Detected rate of one emitter at `power_mw`, kcps.
    pub signal_kcps: f64,
    pub background_kcps: f64,
    pub power_mw: f64,
    pub duration_s: f64,
    /// Saturation power pinned into the calibrated rates, mW.
    pub p0_mw: f64,
    /// Explicit kinetic rates; overrides the calibration when set.
    pub rates: Option<EmitterRates>,
    pub saturation: SaturationScanConfig,
}

impl Default for EmitterConfig {
    fn default() -> Self {
        EmitterConfig {
            k_emitters: 1,
            signal_kcps: 3.0,
            background_kcps: 2.0,
            power_mw: 0.65,
            duration_s: 600.0,
            p0_mw: 0.48,
            rates: None,
            saturation: SaturationScanConfig::default(),
        }
    }
}

impl EmitterConfig {
    fn validate(&self) -> Result<()> {
        if !(self.signal_kcps > 0.0) || !(self.power_mw > 0.0) || !(self.p0_mw > 0.0) {
            bail!("signal_kcps, power_mw, and p0_mw must be > 0");
        }
        if !(self.background_kcps >= 0.0) {
            bail!("background_kcps must be >= 0");
        }
        if !(self.duration_s > 0.0) {
            bail!("duration_s must be > 0");
        }
        if let Some(r) = &self.rates {
            r.validate()?;
        }
        self.saturation.validate()?;
        Ok(())
    }

    /// Rates used by the HBT scenario.
    pub fn hbt_rates(&self) -> Result<EmitterRates> {
        match &self.rates {
            Some(r) => Ok(*r),
            None => Ok(EmitterRates::for_detected_rate(
                self.signal_kcps,
                self.power_mw,
                self.p0_mw,
            )?),
        }
    }

    pub fn duration_ns(&self) -> u64 {
        (self.duration_s * 1e9).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaturationScanConfig {
    pub powers_mw: Vec<f64>,
    pub duration_s: f64,
    /// Calibration target for the scanned emitter.
    pub i_s_kcps: f64,
    pub p0_mw: f64,
}

impl Default for SaturationScanConfig {
    fn default() -> Self {
        SaturationScanConfig {
            powers_mw: vec![0.1, 0.2, 0.4, 0.6, 0.9, 1.35, 2.0, 3.0],
            duration_s: 20.0,
            i_s_kcps: 13.0,
            p0_mw: 0.48,
        }
    }
}

impl SaturationScanConfig {
    fn validate(&self) -> Result<()> {
        if self.powers_mw.len() < 3 {
            bail!("need at least 3 scan powers");
        }
        if !self.powers_mw.iter().all(|&p| p > 0.0) {
            bail!("scan powers must be > 0");
        }
        if !(self.duration_s > 0.0) || !(self.i_s_kcps > 0.0) || !(self.p0_mw > 0.0) {
            bail!("saturation scan parameters must be > 0");
        }
        Ok(())
    }

    pub fn rates(&self) -> Result<EmitterRates> {
        Ok(EmitterRates::calibrated(self.i_s_kcps, self.p0_mw)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelatorConfig {
    pub bin_ns: f64,
    pub tau_max_ns: f64,
}

impl Default for CorrelatorConfig {
    fn default() -> Self {
        CorrelatorConfig {
            bin_ns: 1.0,
            tau_max_ns: 2000.0,
        }
    }
}

impl CorrelatorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.bin_ns > 0.0) || !(self.tau_max_ns >= self.bin_ns) {
            bail!("need bin_ns > 0 and tau_max_ns >= bin_ns");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdmrConfig {
    pub line: OdmrLine,
    pub photon_rate_kcps: f64,
    pub scheme: ModulationScheme,
    pub f_start_mhz: f64,
    pub f_stop_mhz: f64,
    pub f_step_mhz: f64,
}

impl Default for OdmrConfig {
    fn default() -> Self {
        OdmrConfig {
            line: OdmrLine::default(),
            photon_rate_kcps: 500.0,
            scheme: ModulationScheme::default(),
            f_start_mhz: 40.0,
            f_stop_mhz: 100.0,
            f_step_mhz: 1.0,
        }
    }
}

impl OdmrConfig {
    fn validate(&self) -> Result<()> {
        self.line.validate()?;
        self.scheme.validate()?;
        if !(self.photon_rate_kcps > 0.0) {
            bail!("photon_rate_kcps must be > 0");
        }
        if !(self.f_step_mhz > 0.0) || self.f_stop_mhz < self.f_start_mhz {
            bail!("need f_stop >= f_start and f_step > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScannerConfig {
    pub psf_sigma_nm: f64,
    pub pixel_size_nm: f64,
    pub dwell_ms: f64,
    pub scan_power_mw: f64,
    /// True emission rate of one defect in the rendered scan; when unset,
    /// the saturation law at the scan power supplies it.
    pub per_defect_kcps: Option<f64>,
    /// Total background rate collected within one PSF-sized window, kcps;
    /// spread uniformly over its pixels.
    pub background_kcps: f64,
    pub threshold_sigma: f64,
    pub min_separation_nm: f64,
    pub doses: Vec<u32>,
    pub sweep_rows: u32,
    pub sweep_cols: u32,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        ScannerConfig {
            psf_sigma_nm: 150.0,
            pixel_size_nm: 100.0,
            dwell_ms: 20.0,
            scan_power_mw: 0.7,
            per_defect_kcps: None,
            background_kcps: 2.0,
            threshold_sigma: 5.0,
            min_separation_nm: 1000.0,
            doses: vec![40, 70, 100, 200, 400, 700],
            sweep_rows: 10,
            sweep_cols: 10,
        }
    }
}

impl ScannerConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("psf_sigma_nm", self.psf_sigma_nm),
            ("pixel_size_nm", self.pixel_size_nm),
            ("dwell_ms", self.dwell_ms),
            ("scan_power_mw", self.scan_power_mw),
            ("threshold_sigma", self.threshold_sigma),
            ("min_separation_nm", self.min_separation_nm),
        ] {
            if !(v > 0.0) {
                bail!("{name} must be > 0, got {v}");
            }
        }
        if !(self.background_kcps >= 0.0) {
            bail!("background_kcps must be >= 0");
        }
        if self.doses.is_empty() {
            bail!("doses must not be empty");
        }
        if self.sweep_rows < 1 || self.sweep_cols < 1 {
            bail!("sweep grid must be at least 1x1");
        }
        Ok(())
    }

    /// Single-defect brightness used both to render and to classify, kcps.
    pub fn unit_brightness_kcps(&self, sat: &SaturationScanConfig) -> Result<f64> {
        if let Some(v) = self.per_defect_kcps {
            return Ok(v);
        }
        Ok(saturation_rate(
            &SaturationParams {
                i_s: sat.i_s_kcps,
                p_0: sat.p0_mw,
            },
            self.scan_power_mw,
        )?)
    }

    /// Per-pixel background rate: `background_kcps` spread over the pixels
    /// of one PSF-FWHM-radius disc.
    pub fn background_per_pixel_kcps(&self) -> f64 {
        let fwhm = 2.354_820_045 * self.psf_sigma_nm;
        let pixels_in_window =
            std::f64::consts::PI * fwhm * fwhm / (self.pixel_size_nm * self.pixel_size_nm);
        self.background_kcps / pixels_in_window
    }
}
