//! Amplitude-modulated ODMR sweeps and the Lorentzian line model.
//!
//! No spin dynamics are simulated: the microwave drive is modeled as
//! alternating ON/OFF Poisson counting windows whose ON rate is scaled by
//! the imposed Lorentzian contrast line, matching how a cw ODMR species
//! check is read out.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Lorentzian contrast line: contrast at the drive frequency `f` is
/// `baseline + peak_contrast * (fwhm/2)^2 / ((f - center)^2 + (fwhm/2)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdmrLine {
    pub center_mhz: f64,
    pub fwhm_mhz: f64,
    /// Fractional PL change at the line center; negative for a PL dip.
    pub peak_contrast: f64,
    pub baseline: f64,
}

impl Default for OdmrLine {
    /// Zero-field resonance near 70 MHz with a sub-percent dip.
    fn default() -> Self {
        OdmrLine {
            center_mhz: 70.0,
            fwhm_mhz: 10.0,
            peak_contrast: -0.005,
            baseline: 0.0,
        }
    }
}

impl OdmrLine {
    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_mhz > 0.0) {
            return Err(Error::invalid(format!(
                "fwhm must be > 0, got {}",
                self.fwhm_mhz
            )));
        }
        if !(self.peak_contrast.abs() < 1.0) {
            return Err(Error::invalid(format!(
                "|peak_contrast| must be < 1, got {}",
                self.peak_contrast
            )));
        }
        Ok(())
    }
}

/// ON/OFF microwave amplitude modulation pattern. The period is
/// `2 * half_cycle_ms`; the ON window lasts `duty_cycle` of the period and
/// the OFF window the remainder, so duty 0.5 gives equal ON/OFF windows of
/// one half-cycle each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationScheme {
    pub half_cycle_ms: f64,
    pub duty_cycle: f64,
    pub n_cycles: u32,
}

impl Default for ModulationScheme {
    fn default() -> Self {
        ModulationScheme {
            half_cycle_ms: 2.8,
            duty_cycle: 0.5,
            n_cycles: 8000,
        }
    }
}

impl ModulationScheme {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_cycle_ms > 0.0) {
            return Err(Error::invalid("half_cycle_ms must be > 0"));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle < 1.0) {
            return Err(Error::invalid(format!(
                "duty_cycle must be in (0,1), got {}",
                self.duty_cycle
            )));
        }
        if self.n_cycles < 1 {
            return Err(Error::invalid("n_cycles must be >= 1"));
        }
        Ok(())
    }

    /// Total ON integration time, ms.
    pub fn on_time_ms(&self) -> f64 {
        f64::from(self.n_cycles) * self.duty_cycle * 2.0 * self.half_cycle_ms
    }

    /// Total OFF integration time, ms.
    pub fn off_time_ms(&self) -> f64 {
        f64::from(self.n_cycles) * (1.0 - self.duty_cycle) * 2.0 * self.half_cycle_ms
    }
}

/// One sweep point: drive frequency, measured contrast, and its standard
/// error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub freq_mhz: f64,
    pub contrast: f64,
    pub std_error: f64,
}

/// Evaluates the contrast line at frequency `f_mhz`.
pub fn lorentzian(f_mhz: f64, line: &OdmrLine) -> f64 {
    let hw = line.fwhm_mhz / 2.0;
    let d = f_mhz - line.center_mhz;
    line.baseline + line.peak_contrast * hw * hw / (d * d + hw * hw)
}

/// Contrast estimator `(ON - OFF) / OFF` from summed window counts.
pub fn compute_contrast(on_counts: u64, off_counts: u64) -> Result<f64> {
    if off_counts == 0 {
        return Err(Error::UndefinedContrast);
    }
    Ok((on_counts as f64 - off_counts as f64) / off_counts as f64)
}

/// Delta-method standard error of `(ON - OFF)/OFF` for Poisson counts,
/// evaluated at the observed counts.
fn contrast_std_error(on_counts: u64, off_counts: u64) -> f64 {
    let on = on_counts as f64;
    let off = off_counts as f64;
    (on / (off * off) + on * on / (off * off * off)).sqrt()
}

/// Simulates one amplitude-modulated sweep.
///
/// Per frequency (substream `(seed, "odmr", index)`), ON windows count
/// Poisson at `rate * (1 + lorentzian(f))` and OFF windows at `rate`,
/// accumulated over `n_cycles`; the contrast and its delta-method error
/// are computed from the summed counts. The estimator is unbiased when the
/// ON and OFF windows are equally long (duty 0.5); other duty cycles
/// follow the raw-count formula and inherit its duration imbalance.
pub fn simulate_odmr_sweep(
    freqs_mhz: &[f64],
    line: &OdmrLine,
    photon_rate_kcps: f64,
    scheme: &ModulationScheme,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    line.validate()?;
    scheme.validate()?;
    if !(photon_rate_kcps > 0.0) {
        return Err(Error::invalid("photon rate must be > 0"));
    }
    let mut out = Vec::with_capacity(freqs_mhz.len());
    for (i, &f) in freqs_mhz.iter().enumerate() {
        let mut rng = substream(seed, "odmr", i as u64);
        // kcps * ms = counts.
        let mu_on = photon_rate_kcps * (1.0 + lorentzian(f, line)) * scheme.on_time_ms();
        let mu_off = photon_rate_kcps * scheme.off_time_ms();
        if !(mu_on > 0.0) {
            return Err(Error::invalid(
                "ON rate must stay positive; contrast line drives it negative",
            ));
        }
        let on = Poisson::new(mu_on).expect("positive mean").sample(&mut rng) as u64;
        let off = Poisson::new(mu_off).expect("positive mean").sample(&mut rng) as u64;
        out.push(SweepPoint {
            freq_mhz: f,
            contrast: compute_contrast(on, off)?,
            std_error: contrast_std_error(on, off),
        });
    }
    Ok(out)
}

/// Inclusive frequency grid from `start` to `stop` in steps of `step`.
pub fn frequency_grid(start_mhz: f64, stop_mhz: f64, step_mhz: f64) -> Result<Vec<f64>> {
    if !(step_mhz > 0.0) || stop_mhz < start_mhz {
        return Err(Error::invalid("need stop >= start and step > 0"));
    }
    let n = ((stop_mhz - start_mhz) / step_mhz).floor() as usize + 1;
    Ok((0..n).map(|i| start_mhz + i as f64 * step_mhz).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorentzian_peak_half_maximum_and_tails() {
        let line = OdmrLine {
            center_mhz: 70.2,
            fwhm_mhz: 8.0,
            peak_contrast: -0.006,
            baseline: 0.001,
        };
        let peak = lorentzian(line.center_mhz, &line);
        assert!((peak - (line.baseline + line.peak_contrast)).abs() < 1e-15);
        for sign in [-1.0, 1.0] {
            let half = lorentzian(line.center_mhz + sign * line.fwhm_mhz / 2.0, &line);
            assert!((half - (line.baseline + line.peak_contrast / 2.0)).abs() < 1e-15);
        }
        let far = lorentzian(line.center_mhz + 1e9, &line);
        assert!((far - line.baseline).abs() < 1e-12);
    }

    #[test]
    fn lorentzian_is_symmetric_about_center() {
        let line = OdmrLine::default();
        for delta in [0.3, 1.7, 5.0, 42.0] {
            let lo = lorentzian(line.center_mhz - delta, &line);
            let hi = lorentzian(line.center_mhz + delta, &line);
            assert!((lo - hi).abs() < 1e-15);
        }
    }

    #[test]
    fn contrast_examples() {
        assert_eq!(compute_contrast(1000, 1000).unwrap(), 0.0);
        let c = compute_contrast(1_005_000, 1_000_000).unwrap();
        assert!((c - 0.005).abs() < 1e-15);
        assert!(compute_contrast(900, 1000).unwrap() < 0.0);
        assert!(matches!(
            compute_contrast(5, 0),
            Err(Error::UndefinedContrast)
        ));
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let freqs = frequency_grid(40.0, 100.0, 1.0).unwrap();
        assert_eq!(freqs.len(), 61);
        let line = OdmrLine::default();
        let scheme = ModulationScheme {
            n_cycles: 50,
            ..ModulationScheme::default()
        };
        let a = simulate_odmr_sweep(&freqs, &line, 500.0, &scheme, 9).unwrap();
        let b = simulate_odmr_sweep(&freqs, &line, 500.0, &scheme, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), freqs.len());
    }

    #[test]
    fn null_line_contrast_is_consistent_with_zero() {
        let freqs = frequency_grid(40.0, 100.0, 5.0).unwrap();
        let line = OdmrLine {
            peak_contrast: 0.0,
            ..OdmrLine::default()
        };
        let sweep =
            simulate_odmr_sweep(&freqs, &line, 200.0, &ModulationScheme::default(), 17).unwrap();
        for p in sweep {
            assert!(
                p.contrast.abs() < 5.0 * p.std_error,
                "contrast {} at {} MHz inconsistent with 0 (se {})",
                p.contrast,
                p.freq_mhz,
                p.std_error
            );
        }
    }

    #[test]
    fn doubling_cycles_shrinks_errors_by_sqrt2() {
        let freqs = frequency_grid(50.0, 90.0, 2.0).unwrap();
        let line = OdmrLine::default();
        let base = ModulationScheme {
            n_cycles: 400,
            ..ModulationScheme::default()
        };
        let double = ModulationScheme {
            n_cycles: 800,
            ..ModulationScheme::default()
        };
        let se = |scheme: &ModulationScheme, seed: u64| -> f64 {
            let sweep = simulate_odmr_sweep(&freqs, &line, 300.0, scheme, seed).unwrap();
            sweep.iter().map(|p| p.std_error).sum::<f64>() / sweep.len() as f64
        };
        let ratio = se(&base, 21) / se(&double, 22);
        assert!(
            (ratio - std::f64::consts::SQRT_2).abs() < 0.1 * std::f64::consts::SQRT_2,
            "ratio {ratio}"
        );
    }
}
