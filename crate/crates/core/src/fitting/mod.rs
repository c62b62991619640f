//! Nonlinear least squares and the model-specific fitters: Lorentzian
//! resonance, saturation curve, biexponential g2, and Poisson count
//! statistics.

mod engine;
mod models;

pub use engine::{FitOptions, FitResult, ParamSpec, Transform};
pub use models::{BuiltinModel, ALL_MODELS};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::correlator::CorrelationCurve;
use crate::emitter::{G2Params, SaturationParams};
use crate::error::{Error, Result};
use crate::odmr::{OdmrLine, SweepPoint};

/// Weighted least-squares fit of a built-in model to `(x, y, sigma)` data.
pub fn fit_curve(
    model: BuiltinModel,
    data: &[(f64, f64, f64)],
    init: &[f64],
    options: &FitOptions,
) -> Result<FitResult> {
    engine::fit_curve(model, data, init, options)
}

/// g2 fit output: the four curve parameters plus the derived zero-delay
/// value `g2(0) = 1 - a + b` with its propagated error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Fit {
    pub fit: FitResult,
    pub g2_zero: f64,
    pub g2_zero_err: f64,
}

/// Fits the biexponential model to a background-corrected curve.
///
/// Empty bins carry zero Poisson error; they are floored to the one-count
/// scale of the curve so the weights stay finite. The reported parameters
/// are (a, b, tau_1, tau_2) with the tau_1 < tau_2 convention built into
/// the parameterization.
pub fn fit_g2(curve: &CorrelationCurve, init: &G2Params) -> Result<G2Fit> {
    curve.validate()?;
    init.validate()?;
    if !curve.corrected {
        return Err(Error::invalid("fit_g2 expects a background-corrected curve"));
    }
    if !(init.tau_2 > init.tau_1) {
        return Err(Error::invalid("initial g2 params must have tau_1 < tau_2"));
    }
    let floor = if curve.counts_scale > 0.0 {
        curve.counts_scale
    } else {
        let smallest = curve
            .std_errors
            .iter()
            .copied()
            .filter(|&e| e > 0.0)
            .fold(f64::INFINITY, f64::min);
        if smallest.is_finite() {
            smallest
        } else {
            return Err(Error::invalid("curve carries no counts to fit"));
        }
    };
    let data: Vec<(f64, f64, f64)> = curve
        .tau_centers
        .iter()
        .zip(curve.values.iter().zip(&curve.std_errors))
        .map(|(&t, (&v, &e))| (t, v, e.max(floor)))
        .collect();

    let init_vec = [init.a, init.b, init.tau_1, init.tau_2 - init.tau_1];
    let raw = engine::fit_curve(BuiltinModel::G2Biexp, &data, &init_vec, &FitOptions::default())?;

    // Report tau_2 = tau_1 + dtau; propagate the covariance through the
    // linear reparameterization.
    let p = 4;
    let t = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0, 1.0],
    ];
    let mut covariance = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..p {
                for l in 0..p {
                    s += t[i][k] * raw.covariance[k * p + l] * t[j][l];
                }
            }
            covariance[i * p + j] = s;
        }
    }
    let params = vec![
        raw.params[0],
        raw.params[1],
        raw.params[2],
        raw.params[2] + raw.params[3],
    ];
    let std_errors: Vec<f64> = (0..p).map(|j| covariance[j * p + j].max(0.0).sqrt()).collect();

    let g2_zero = 1.0 - params[0] + params[1];
    let var_zero =
        covariance[0] + covariance[1 * p + 1] - 2.0 * covariance[1];
    let fit = FitResult {
        param_names: vec!["a".into(), "b".into(), "tau_1".into(), "tau_2".into()],
        params,
        std_errors,
        covariance,
        residual_norm: raw.residual_norm,
        converged: raw.converged,
        n_iterations: raw.n_iterations,
    };
    Ok(G2Fit {
        fit,
        g2_zero,
        g2_zero_err: var_zero.max(0.0).sqrt(),
    })
}

/// Fits the Lorentzian line to an ODMR sweep.
pub fn fit_lorentzian(sweep: &[SweepPoint], init: &OdmrLine) -> Result<FitResult> {
    init.validate()?;
    if sweep.len() < 4 {
        return Err(Error::invalid("need at least 4 sweep points"));
    }
    let data: Vec<(f64, f64, f64)> = sweep
        .iter()
        .map(|p| (p.freq_mhz, p.contrast, p.std_error))
        .collect();
    engine::fit_curve(
        BuiltinModel::Lorentzian,
        &data,
        &[init.center_mhz, init.fwhm_mhz, init.peak_contrast, init.baseline],
        &FitOptions::default(),
    )
}

/// Data-driven starting point for [`fit_lorentzian`]: the most deviant
/// sweep point marks the peak, the median marks the baseline.
pub fn initial_line_guess(sweep: &[SweepPoint]) -> Result<OdmrLine> {
    if sweep.len() < 4 {
        return Err(Error::invalid("need at least 4 sweep points"));
    }
    let mut contrasts: Vec<f64> = sweep.iter().map(|p| p.contrast).collect();
    contrasts.sort_by(|a, b| a.total_cmp(b));
    let baseline = contrasts[contrasts.len() / 2];
    let extreme = sweep
        .iter()
        .max_by(|a, b| {
            (a.contrast - baseline)
                .abs()
                .total_cmp(&(b.contrast - baseline).abs())
        })
        .expect("non-empty sweep");
    let span = sweep.iter().map(|p| p.freq_mhz).fold(f64::NEG_INFINITY, f64::max)
        - sweep.iter().map(|p| p.freq_mhz).fold(f64::INFINITY, f64::min);
    Ok(OdmrLine {
        center_mhz: extreme.freq_mhz,
        fwhm_mhz: (span / 6.0).max(1e-3),
        peak_contrast: extreme.contrast - baseline,
        baseline,
    })
}

/// Fits the saturation law to `(power mW, rate kcps, sigma)` points.
pub fn fit_saturation(points: &[(f64, f64, f64)], init: &SaturationParams) -> Result<FitResult> {
    init.validate()?;
    if points.len() < 3 {
        return Err(Error::invalid("need at least 3 saturation points"));
    }
    engine::fit_curve(
        BuiltinModel::Saturation,
        points,
        &[init.i_s, init.p_0],
        &FitOptions::default(),
    )
}

/// Histogram of defect counts per spot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    pub k_values: Vec<u32>,
    pub frequencies: Vec<u64>,
    pub n_spots: u64,
}

impl CountHistogram {
    /// Builds the histogram from raw per-spot counts.
    pub fn from_counts(counts: &[u32]) -> Self {
        let k_max = counts.iter().copied().max().unwrap_or(0);
        let mut freq = vec![0u64; k_max as usize + 1];
        for &k in counts {
            freq[k as usize] += 1;
        }
        CountHistogram {
            k_values: (0..=k_max).collect(),
            frequencies: freq,
            n_spots: counts.len() as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_values.len() != self.frequencies.len() {
            return Err(Error::invalid("k/frequency lengths differ"));
        }
        if !self.k_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("k values must be strictly increasing"));
        }
        let total: u64 = self.frequencies.iter().sum();
        if total != self.n_spots {
            return Err(Error::invalid(format!(
                "frequencies sum to {total}, n_spots says {}",
                self.n_spots
            )));
        }
        Ok(())
    }

    pub fn frequency_of(&self, k: u32) -> u64 {
        self.k_values
            .iter()
            .position(|&kv| kv == k)
            .map_or(0, |i| self.frequencies[i])
    }

    /// Dense frequencies 0..=k_max.
    fn dense(&self) -> Vec<u64> {
        let k_max = *self.k_values.last().unwrap_or(&0);
        let mut out = vec![0u64; k_max as usize + 1];
        for (&k, &f) in self.k_values.iter().zip(&self.frequencies) {
            out[k as usize] = f;
        }
        out
    }
}

/// Chi-square goodness of fit summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub chi_square: f64,
    pub dof: usize,
    /// None when pooling leaves no degrees of freedom.
    pub p_value: Option<f64>,
    pub pooled_bins: usize,
}

/// Chi-square test of dense count frequencies against an arbitrary PMF.
/// Bins are pooled left to right until each pooled bin expects at least 5
/// counts; the PMF tail beyond the observed maximum joins the last bin.
pub fn chi_square_gof(
    freqs: &[u64],
    pmf: &dyn Fn(u32) -> f64,
    n_estimated_params: usize,
) -> Result<GofResult> {
    let n: u64 = freqs.iter().sum();
    if n == 0 {
        return Err(Error::invalid("empty histogram"));
    }
    let total = n as f64;
    let mut cum_p = 0.0;
    let mut cells: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    for (k, &obs) in freqs.iter().enumerate() {
        let p = pmf(k as u32);
        cum_p += p;
        cells.push((obs as f64, total * p));
    }
    // Tail mass beyond the largest observed k.
    let tail = (1.0 - cum_p).max(0.0) * total;
    if let Some(last) = cells.last_mut() {
        last.1 += tail;
    }

    // Pool small-expectation cells left to right.
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, e) in cells {
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= 5.0 {
            pooled.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        if let Some(last) = pooled.last_mut() {
            last.0 += acc.0;
            last.1 += acc.1;
        } else {
            pooled.push(acc);
        }
    }

    let chi_square: f64 = pooled
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e) * (o - e) / e } else { 0.0 })
        .sum();
    let dof = pooled.len().saturating_sub(1 + n_estimated_params);
    let p_value = if dof >= 1 {
        let dist = ChiSquared::new(dof as f64).expect("positive dof");
        Some(1.0 - dist.cdf(chi_square))
    } else {
        None
    };
    Ok(GofResult {
        chi_square,
        dof,
        p_value,
        pooled_bins: pooled.len(),
    })
}

/// Poisson PMF evaluated by stable recurrence.
pub fn poisson_pmf(lambda: f64, k: u32) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let mut p = (-lambda).exp();
    for i in 1..=k {
        p *= lambda / f64::from(i);
    }
    p
}

/// Poisson MLE of a count histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    /// Sample-mean MLE of the Poisson rate.
    pub lambda: f64,
    /// sqrt(lambda / n).
    pub std_error: f64,
    pub gof: Option<GofResult>,
    /// Set when the histogram is all-zero and the fit is trivial.
    pub degenerate: bool,
}

/// Fits a Poisson distribution to the per-spot count histogram: the MLE is
/// the sample mean, its error sqrt(lambda/n), and the goodness of fit a
/// pooled-bin chi-square against the fitted PMF.
pub fn fit_poisson(hist: &CountHistogram) -> Result<PoissonFit> {
    hist.validate()?;
    if hist.n_spots == 0 {
        return Err(Error::invalid("histogram covers no spots"));
    }
    let n = hist.n_spots as f64;
    let sum: f64 = hist
        .k_values
        .iter()
        .zip(&hist.frequencies)
        .map(|(&k, &f)| f64::from(k) * f as f64)
        .sum();
    let lambda = sum / n;
    if lambda == 0.0 {
        return Ok(PoissonFit {
            lambda: 0.0,
            std_error: 0.0,
            gof: None,
            degenerate: true,
        });
    }
    let dense = hist.dense();
    let gof = chi_square_gof(&dense, &|k| poisson_pmf(lambda, k), 1)?;
    Ok(PoissonFit {
        lambda,
        std_error: (lambda / n).sqrt(),
        gof: Some(gof),
        degenerate: false,
    })
}

/// Conversion yield lambda / dose.
pub fn conversion_yield(lambda: f64, dose: f64) -> Result<f64> {
    if !(dose > 0.0) {
        return Err(Error::invalid(format!("dose must be > 0, got {dose}")));
    }
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be >= 0"));
    }
    Ok(lambda / dose)
}

/// Fraction of spots holding exactly one defect.
pub fn single_emitter_fraction(hist: &CountHistogram) -> Result<f64> {
    hist.validate()?;
    if hist.n_spots == 0 {
        return Err(Error::invalid("histogram covers no spots"));
    }
    Ok(hist.frequency_of(1) as f64 / hist.n_spots as f64)
}
