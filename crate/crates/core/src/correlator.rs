//! HBT coincidence analysis: stream splitting, full pairwise coincidence
//! histogramming, normalization to C_N(tau), and background correction to
//! g2(tau).
//!
//! The histogram counts *all* pairs with |t_b - t_a| <= tau_max (closed
//! interval), not start-stop pairs. Bins are half-open [low, high) with the
//! central bin centered on tau = 0; pairs of identical timestamps from
//! identical input streams self-pair into the central bin. The optimized
//! sliding-window merge and the O(n^2) reference walk the same bin rule and
//! the same comparisons, so their outputs are bit-identical.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::emitter::{Channel, PhotonStream};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Raw coincidence counts over the symmetric delay window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHistogram {
    /// Counts for bins -n_half ..= +n_half.
    pub counts: Vec<u64>,
    pub bin_ns: f64,
    pub tau_max_ns: f64,
}

impl RawHistogram {
    pub fn n_half(&self) -> i64 {
        (self.counts.len() as i64 - 1) / 2
    }

    /// Bin centers k * bin_ns for k in -n_half ..= n_half.
    pub fn tau_centers(&self) -> Vec<f64> {
        let n_half = self.n_half();
        (-n_half..=n_half).map(|k| k as f64 * self.bin_ns).collect()
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Normalized (and optionally background-corrected) correlation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub tau_centers: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub bin_width_ns: f64,
    pub normalized: bool,
    pub corrected: bool,
    /// Contribution of a single raw count in the current vertical units;
    /// fitting uses it as the error floor for empty bins.
    pub counts_scale: f64,
}

impl CorrelationCurve {
    pub fn validate(&self) -> Result<()> {
        if self.tau_centers.len() != self.values.len()
            || self.values.len() != self.std_errors.len()
        {
            return Err(Error::invalid("curve axis/value/error lengths differ"));
        }
        if !(self.bin_width_ns > 0.0) {
            return Err(Error::invalid("bin_width_ns must be > 0"));
        }
        Ok(())
    }
}

/// Measured signal and background rates entering the correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalBackground {
    pub signal_kcps: f64,
    pub background_kcps: f64,
}

impl SignalBackground {
    pub fn validate(&self) -> Result<()> {
        if self.signal_kcps < 0.0 || self.background_kcps < 0.0 {
            return Err(Error::invalid("rates must be >= 0"));
        }
        if self.signal_kcps + self.background_kcps <= 0.0 {
            return Err(Error::invalid("signal + background must be > 0"));
        }
        Ok(())
    }
}

/// Signal purity rho = s / (s + b).
pub fn signal_fraction(sb: &SignalBackground) -> Result<f64> {
    sb.validate()?;
    Ok(sb.signal_kcps / (sb.signal_kcps + sb.background_kcps))
}

/// Splits a combined stream over an ideal 50:50 beamsplitter: each
/// timestamp lands on detector A or B independently with probability 1/2.
/// The multiset union of the outputs equals the input.
pub fn split_stream(stream: &PhotonStream, seed: u64) -> Result<(PhotonStream, PhotonStream)> {
    stream.validate()?;
    if stream.channel != Channel::Combined {
        return Err(Error::invalid("split_stream expects a combined-channel stream"));
    }
    let mut rng = substream(seed, "split", 0);
    let mut a = Vec::with_capacity(stream.timestamps.len() / 2 + 1);
    let mut b = Vec::with_capacity(stream.timestamps.len() / 2 + 1);
    for &t in &stream.timestamps {
        if rng.random::<bool>() {
            a.push(t);
        } else {
            b.push(t);
        }
    }
    Ok((
        PhotonStream {
            timestamps: a,
            duration_ns: stream.duration_ns,
            channel: Channel::DetectorA,
        },
        PhotonStream {
            timestamps: b,
            duration_ns: stream.duration_ns,
            channel: Channel::DetectorB,
        },
    ))
}

/// Shared bin rule: tau lands in bin floor((tau + bin/2) / bin), i.e.
/// half-open [k*bin - bin/2, k*bin + bin/2).
#[inline(always)]
fn bin_of(tau: f64, bin_ns: f64) -> i64 {
    ((tau + 0.5 * bin_ns) / bin_ns).floor() as i64
}

fn check_histogram_args(a: &PhotonStream, b: &PhotonStream, bin_ns: f64, tau_max_ns: f64) -> Result<i64> {
    if !a.timestamps.windows(2).all(|w| w[0] <= w[1])
        || !b.timestamps.windows(2).all(|w| w[0] <= w[1])
    {
        return Err(Error::invalid("input streams must be sorted"));
    }
    if !(bin_ns > 0.0) {
        return Err(Error::invalid(format!("bin_ns must be > 0, got {bin_ns}")));
    }
    if !(tau_max_ns >= bin_ns) {
        return Err(Error::invalid(format!(
            "tau_max_ns ({tau_max_ns}) must be >= bin_ns ({bin_ns})"
        )));
    }
    Ok(bin_of(tau_max_ns, bin_ns))
}

/// Full pairwise coincidence histogram of delays tau = t_b - t_a with
/// |tau| <= tau_max, computed by a sliding-window sorted merge in
/// O(n_a + n_b + pairs).
pub fn coincidence_histogram(
    a: &PhotonStream,
    b: &PhotonStream,
    bin_ns: f64,
    tau_max_ns: f64,
) -> Result<RawHistogram> {
    let n_half = check_histogram_args(a, b, bin_ns, tau_max_ns)?;
    let mut counts = vec![0u64; (2 * n_half + 1) as usize];

    let bt = &b.timestamps;
    let mut lo = 0usize;
    for &ta in &a.timestamps {
        let ta_f = ta as f64;
        // Delays are exact integer differences; comparing tau itself against
        // tau_max keeps this loop bit-identical to the reference.
        while lo < bt.len() && (bt[lo] as f64 - ta_f) < -tau_max_ns {
            lo += 1;
        }
        for &tb in &bt[lo..] {
            let tau = tb as f64 - ta_f;
            if tau > tau_max_ns {
                break;
            }
            counts[(bin_of(tau, bin_ns) + n_half) as usize] += 1;
        }
    }
    Ok(RawHistogram {
        counts,
        bin_ns,
        tau_max_ns,
    })
}

/// O(n_a * n_b) reference for [`coincidence_histogram`]; the two must agree
/// bit for bit on every input.
pub fn brute_force_histogram(
    a: &PhotonStream,
    b: &PhotonStream,
    bin_ns: f64,
    tau_max_ns: f64,
) -> Result<RawHistogram> {
    let n_half = check_histogram_args(a, b, bin_ns, tau_max_ns)?;
    let mut counts = vec![0u64; (2 * n_half + 1) as usize];
    for &ta in &a.timestamps {
        for &tb in &b.timestamps {
            let tau = tb as f64 - ta as f64;
            if tau >= -tau_max_ns && tau <= tau_max_ns {
                counts[(bin_of(tau, bin_ns) + n_half) as usize] += 1;
            }
        }
    }
    Ok(RawHistogram {
        counts,
        bin_ns,
        tau_max_ns,
    })
}

/// Normalizes raw coincidences to C_N(tau) = counts / (r_a r_b T w), with
/// rates converted to 1/ns. Per-bin errors are Poisson, sqrt(N), scaled
/// identically.
pub fn normalize_histogram(
    hist: &RawHistogram,
    rate_a_kcps: f64,
    rate_b_kcps: f64,
    duration_ns: u64,
) -> Result<CorrelationCurve> {
    if !(rate_a_kcps > 0.0) || !(rate_b_kcps > 0.0) {
        return Err(Error::invalid("rates must be > 0"));
    }
    if duration_ns == 0 {
        return Err(Error::invalid("duration must be > 0"));
    }
    let ra = rate_a_kcps * 1e-6; // 1/ns
    let rb = rate_b_kcps * 1e-6;
    let scale = 1.0 / (ra * rb * duration_ns as f64 * hist.bin_ns);
    let values: Vec<f64> = hist.counts.iter().map(|&c| c as f64 * scale).collect();
    let std_errors: Vec<f64> = hist
        .counts
        .iter()
        .map(|&c| (c as f64).sqrt() * scale)
        .collect();
    Ok(CorrelationCurve {
        tau_centers: hist.tau_centers(),
        values,
        std_errors,
        bin_width_ns: hist.bin_ns,
        normalized: true,
        corrected: false,
        counts_scale: scale,
    })
}

/// Background correction g2(tau) = (C_N(tau) - (1 - rho^2)) / rho^2.
/// Errors scale by 1/rho^2. rho = 1 is the identity map.
pub fn background_correct(curve: &CorrelationCurve, rho: f64) -> Result<CorrelationCurve> {
    curve.validate()?;
    if !curve.normalized || curve.corrected {
        return Err(Error::invalid(
            "background correction expects a normalized, uncorrected curve",
        ));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("rho must be in (0, 1], got {rho}")));
    }
    let rho2 = rho * rho;
    let offset = 1.0 - rho2;
    Ok(CorrelationCurve {
        tau_centers: curve.tau_centers.clone(),
        values: curve.values.iter().map(|v| (v - offset) / rho2).collect(),
        std_errors: curve.std_errors.iter().map(|e| e / rho2).collect(),
        bin_width_ns: curve.bin_width_ns,
        normalized: true,
        corrected: true,
        counts_scale: curve.counts_scale / rho2,
    })
}

/// Inverse of [`background_correct`]: C_N = rho^2 g2 + (1 - rho^2).
pub fn background_correct_inverse(curve: &CorrelationCurve, rho: f64) -> Result<CorrelationCurve> {
    curve.validate()?;
    if !curve.corrected {
        return Err(Error::invalid("inverse correction expects a corrected curve"));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("rho must be in (0, 1], got {rho}")));
    }
    let rho2 = rho * rho;
    let offset = 1.0 - rho2;
    Ok(CorrelationCurve {
        tau_centers: curve.tau_centers.clone(),
        values: curve.values.iter().map(|v| v * rho2 + offset).collect(),
        std_errors: curve.std_errors.iter().map(|e| e * rho2).collect(),
        bin_width_ns: curve.bin_width_ns,
        normalized: true,
        corrected: false,
        counts_scale: curve.counts_scale * rho2,
    })
}
