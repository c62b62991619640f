//! Three-level emitter photophysics and photon-stream synthesis.
//!
//! The emitter model is a ground/excited/shelving kinetic scheme:
//!
//! ```text
//!   ground --k_pump*P--> excited --k_rad--> ground   (photon)
//!                        excited --k_isc--> shelf
//!                        shelf --k_deshelve--> ground
//! ```
//!
//! Each radiative decay is detected with probability
//! `detection_efficiency`. The scheme yields the standard biexponential
//! autocorrelation `g2(tau) = 1 - a exp(-|tau|/tau_1) + b exp(-|tau|/tau_2)`
//! and an exact saturation law `I(P) = I_s / (1 + P_0/P)`; both are
//! available in closed form from the rates.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp, Gamma, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, SimRng};

/// kcps per (1/ns): 1 ns^-1 = 1e9 cps = 1e6 kcps.
const KCPS_PER_INV_NS: f64 = 1e6;

/// Saturation-law parameters `I(P) = i_s / (1 + p_0/P)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    /// Maximum detected rate, kcps.
    pub i_s: f64,
    /// Saturation power, mW.
    pub p_0: f64,
}

impl SaturationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.i_s > 0.0) || !(self.p_0 > 0.0) {
            return Err(Error::invalid(format!(
                "saturation params must be > 0, got i_s={}, p_0={}",
                self.i_s, self.p_0
            )));
        }
        Ok(())
    }
}

/// Biexponential autocorrelation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Params {
    /// Antibunching amplitude.
    pub a: f64,
    /// Bunching amplitude.
    pub b: f64,
    /// Antibunching time constant, ns.
    pub tau_1: f64,
    /// Bunching time constant, ns.
    pub tau_2: f64,
}

impl G2Params {
    pub fn new(a: f64, b: f64, tau_1: f64, tau_2: f64) -> Result<Self> {
        let p = G2Params { a, b, tau_1, tau_2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_1 > 0.0) || !(self.tau_2 > 0.0) {
            return Err(Error::invalid("g2 time constants must be > 0"));
        }
        if self.a < 0.0 || self.b < 0.0 {
            return Err(Error::invalid("g2 amplitudes must be >= 0"));
        }
        // Rounding slack: an ideal single emitter sits exactly at 0.
        if 1.0 - self.a + self.b < -1e-9 {
            return Err(Error::invalid("g2(0) = 1 - a + b must be >= 0"));
        }
        Ok(())
    }

    /// Zero-delay value `1 - a + b`.
    pub fn zero_delay(&self) -> f64 {
        1.0 - self.a + self.b
    }
}

/// Kinetic rates of the three-level emitter. All rates are per nanosecond;
/// the pump rate is `k_pump_per_mw * power_mw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterRates {
    /// Pump rate coefficient, 1/(ns mW).
    pub k_pump_per_mw: f64,
    /// Radiative decay rate, 1/ns.
    pub k_rad: f64,
    /// Intersystem crossing (shelving) rate, 1/ns.
    pub k_isc: f64,
    /// Deshelving rate, 1/ns.
    pub k_deshelve: f64,
    /// Probability that a radiative decay is detected, in (0, 1].
    pub detection_efficiency: f64,
}

impl Default for EmitterRates {
    /// Calibrated so the detected saturation curve is
    /// (i_s, p_0) = (13.0 kcps, 0.48 mW).
    fn default() -> Self {
        EmitterRates::calibrated(13.0, 0.48).expect("default calibration is valid")
    }
}

impl EmitterRates {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("k_pump_per_mw", self.k_pump_per_mw),
            ("k_rad", self.k_rad),
            ("k_isc", self.k_isc),
            ("k_deshelve", self.k_deshelve),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.detection_efficiency > 0.0 && self.detection_efficiency <= 1.0) {
            return Err(Error::invalid(format!(
                "detection_efficiency must be in (0,1], got {}",
                self.detection_efficiency
            )));
        }
        Ok(())
    }

    /// Builds rates whose analytic detected saturation curve equals
    /// `(i_s_kcps, p_0_mw)`, holding the internal kinetics at
    /// k_rad = 0.16/ns, k_isc = 0.004/ns, k_deshelve = 0.01/ns. The
    /// detection efficiency absorbs all collection losses.
    pub fn calibrated(i_s_kcps: f64, p_0_mw: f64) -> Result<Self> {
        if !(i_s_kcps > 0.0) || !(p_0_mw > 0.0) {
            return Err(Error::invalid("calibration targets must be > 0"));
        }
        let k_rad = 0.16;
        let k_isc = 0.004;
        let k_deshelve = 0.01;
        let k_pump_per_mw =
            k_deshelve * (k_rad + k_isc) / (p_0_mw * (k_deshelve + k_isc));
        let detection_efficiency =
            i_s_kcps / KCPS_PER_INV_NS * (k_deshelve + k_isc) / (k_rad * k_deshelve);
        let rates = EmitterRates {
            k_pump_per_mw,
            k_rad,
            k_isc,
            k_deshelve,
            detection_efficiency,
        };
        rates.validate().map_err(|_| {
            Error::invalid(format!(
                "i_s = {i_s_kcps} kcps exceeds what the internal kinetics can deliver"
            ))
        })?;
        Ok(rates)
    }

    /// Builds rates whose detected rate at `power_mw` equals `rate_kcps`,
    /// with the saturation power pinned at `p_0_mw`.
    pub fn for_detected_rate(rate_kcps: f64, power_mw: f64, p_0_mw: f64) -> Result<Self> {
        if !(power_mw > 0.0) {
            return Err(Error::invalid("power must be > 0"));
        }
        EmitterRates::calibrated(rate_kcps * (1.0 + p_0_mw / power_mw), p_0_mw)
    }

    /// Steady-state excited population at the given power.
    pub fn excited_steady_state(&self, power_mw: f64) -> f64 {
        let k_p = self.k_pump_per_mw * power_mw;
        let sum = k_p + self.k_rad + self.k_isc;
        k_p * self.k_deshelve / (sum * self.k_deshelve + k_p * self.k_isc)
    }

    /// Detected photon rate at the given power, kcps.
    pub fn detected_rate_kcps(&self, power_mw: f64) -> f64 {
        self.detection_efficiency
            * self.k_rad
            * self.excited_steady_state(power_mw)
            * KCPS_PER_INV_NS
    }

    /// The exact saturation-law parameters implied by the rates.
    pub fn analytic_saturation(&self) -> SaturationParams {
        let denom = self.k_deshelve + self.k_isc;
        SaturationParams {
            i_s: self.detection_efficiency * self.k_rad * self.k_deshelve / denom
                * KCPS_PER_INV_NS,
            p_0: self.k_deshelve * (self.k_rad + self.k_isc)
                / (self.k_pump_per_mw * denom),
        }
    }
}

/// Detection channel label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Combined,
    DetectorA,
    DetectorB,
}

impl Channel {
    pub fn code(self) -> u8 {
        match self {
            Channel::Combined => 0,
            Channel::DetectorA => 1,
            Channel::DetectorB => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Channel::Combined),
            1 => Ok(Channel::DetectorA),
            2 => Ok(Channel::DetectorB),
            _ => Err(Error::Format(format!("unknown channel code {code}"))),
        }
    }
}

/// A sorted stream of detection timestamps in integer nanoseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotonStream {
    pub timestamps: Vec<u64>,
    pub duration_ns: u64,
    pub channel: Channel,
}

impl PhotonStream {
    pub fn validate(&self) -> Result<()> {
        if self.duration_ns == 0 {
            return Err(Error::invalid("stream duration must be > 0"));
        }
        if !self.timestamps.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::invalid("timestamps must be sorted"));
        }
        if let Some(&last) = self.timestamps.last() {
            if last >= self.duration_ns {
                return Err(Error::invalid("timestamps must be < duration_ns"));
            }
        }
        Ok(())
    }

    /// Mean detected rate over the stream duration, kcps.
    pub fn mean_rate_kcps(&self) -> f64 {
        self.timestamps.len() as f64 / self.duration_ns as f64 * KCPS_PER_INV_NS
    }
}

/// Counts per consecutive intensity-trace bin. The trailing part of the
/// stream that does not fill a whole bin is dropped and reported.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTrace {
    pub counts: Vec<u64>,
    pub bin_ms: f64,
    /// Timestamps falling after the last full bin.
    pub dropped: u64,
}

/// Detected rate from the saturation law, kcps.
pub fn saturation_rate(params: &SaturationParams, power_mw: f64) -> Result<f64> {
    params.validate()?;
    if !(power_mw > 0.0) {
        return Err(Error::invalid(format!("power must be > 0, got {power_mw}")));
    }
    Ok(params.i_s / (1.0 + params.p_0 / power_mw))
}

/// Evaluates `1 - a exp(-|tau|/tau_1) + b exp(-|tau|/tau_2)`.
pub fn g2_model(params: &G2Params, tau_ns: f64) -> f64 {
    let t = tau_ns.abs();
    1.0 - params.a * (-t / params.tau_1).exp() + params.b * (-t / params.tau_2).exp()
}

/// Closed-form biexponential parameters of the three-level scheme at the
/// given power.
///
/// The reduced population dynamics of (excited, shelf) relax with the two
/// eigenvalues of
///
/// ```text
///   A = [ -(k_p + k_rad + k_isc)   -k_p        ]
///       [  k_isc                   -k_deshelve ]
/// ```
///
/// and starting from the ground state after a detection the excited
/// population rises as a combination of both decaying modes, giving
/// `g2(0) = 0` exactly for a single emitter. Rates for which the two
/// eigenvalues are complex or degenerate have no biexponential form and
/// are rejected.
pub fn g2_from_rates(rates: &EmitterRates, power_mw: f64) -> Result<G2Params> {
    rates.validate()?;
    if !(power_mw > 0.0) {
        return Err(Error::invalid(format!("power must be > 0, got {power_mw}")));
    }
    let k_p = rates.k_pump_per_mw * power_mw;
    let k_r = rates.k_rad;
    let k_i = rates.k_isc;
    let k_d = rates.k_deshelve;

    let sum = k_p + k_r + k_i;
    let trace = -(sum + k_d);
    let det = sum * k_d + k_p * k_i;
    let disc = (sum - k_d).powi(2) - 4.0 * k_p * k_i;
    if disc <= 1e-12 * trace * trace {
        return Err(Error::invalid(
            "rate matrix relaxation is not biexponential (complex or degenerate eigenvalues)",
        ));
    }
    let sq = disc.sqrt();
    let lambda_fast = 0.5 * (trace - sq);
    let lambda_slow = 0.5 * (trace + sq);

    let p_e = k_p * k_d / det;
    let p_s = k_i / k_d * p_e;

    // Decompose the initial deviation (-p_e, -p_s) into the eigenvectors
    // (1, k_isc/(k_deshelve + lambda)).
    let u_fast = k_i / (k_d + lambda_fast);
    let u_slow = k_i / (k_d + lambda_slow);
    let alpha_fast = (p_s - p_e * u_slow) / (u_slow - u_fast);
    let alpha_slow = -p_e - alpha_fast;

    let clamp = |v: f64| if v.abs() < 1e-14 { 0.0 } else { v };
    G2Params::new(
        clamp(-alpha_fast / p_e),
        clamp(alpha_slow / p_e),
        -1.0 / lambda_fast,
        -1.0 / lambda_slow,
    )
}

/// Exact per-emitter sampler of detected-photon times.
///
/// Detected photons of the chain are renewal points (after each detection
/// the emitter sits in the ground state), so the inter-detection interval
/// is the absorption time of the kinetic scheme with detected emission as
/// the absorbing event. Per interval the chain makes `n` pump cycles
/// (geometric in the per-cycle detection probability), of which `s`
/// shelved; the interval is then the exact Erlang sum of the individual
/// exponential waits:
///
/// ```text
///   T = Gamma(n, 1/k_pump) + Gamma(n, 1/(k_rad+k_isc)) + Gamma(s, 1/k_deshelve)
/// ```
///
/// This is distributionally identical to stepping the chain transition by
/// transition but costs O(1) per detected photon; the transition-level
/// reference lives in [`simulate_emitter_direct`] and the equivalence is
/// covered by the test suite.
fn sample_emitter_photons(
    rates: &EmitterRates,
    power_mw: f64,
    duration_ns: u64,
    rng: &mut SimRng,
    out: &mut Vec<u64>,
) {
    let k_p = rates.k_pump_per_mw * power_mw;
    let k_e = rates.k_rad + rates.k_isc;
    let eta = rates.detection_efficiency;

    let p_detect = eta * rates.k_rad / k_e;
    let p_shelf_given_fail = rates.k_isc / (rates.k_isc + (1.0 - eta) * rates.k_rad);

    let failures = Geometric::new(p_detect).expect("valid detection probability");
    let duration = duration_ns as f64;
    let mut t = 0.0_f64;
    loop {
        let n_fail = failures.sample(rng);
        let n_cycles = n_fail + 1;
        let n_shelved = if n_fail == 0 || p_shelf_given_fail == 0.0 {
            0
        } else {
            Binomial::new(n_fail, p_shelf_given_fail)
                .expect("valid shelf probability")
                .sample(rng)
        };

        let mut dt = erlang(n_cycles, k_p, rng) + erlang(n_cycles, k_e, rng);
        if n_shelved > 0 {
            dt += erlang(n_shelved, rates.k_deshelve, rng);
        }
        t += dt;
        if t >= duration {
            return;
        }
        out.push(t as u64);
    }
}

/// Sum of `n` iid Exp(rate) waits.
fn erlang(n: u64, rate: f64, rng: &mut SimRng) -> f64 {
    match n {
        0 => 0.0,
        1 => Exp::new(rate).expect("positive rate").sample(rng),
        _ => Gamma::new(n as f64, 1.0 / rate)
            .expect("positive shape and scale")
            .sample(rng),
    }
}

/// Transition-by-transition Gillespie reference for the emitter chain.
/// Exact but O(total transitions); used as the distributional oracle for
/// [`simulate_photon_stream`] on short runs.
pub fn simulate_emitter_direct(
    rates: &EmitterRates,
    power_mw: f64,
    duration_ns: u64,
    rng: &mut SimRng,
) -> Vec<u64> {
    #[derive(Clone, Copy)]
    enum State {
        Ground,
        Excited,
        Shelf,
    }
    let k_p = rates.k_pump_per_mw * power_mw;
    let k_e = rates.k_rad + rates.k_isc;
    let p_rad = rates.k_rad / k_e;
    let pump = Exp::new(k_p).expect("positive rate");
    let excited = Exp::new(k_e).expect("positive rate");
    let deshelve = Exp::new(rates.k_deshelve).expect("positive rate");

    let duration = duration_ns as f64;
    let mut out = Vec::new();
    let mut t = 0.0_f64;
    let mut state = State::Ground;
    loop {
        match state {
            State::Ground => {
                t += pump.sample(rng);
                state = State::Excited;
            }
            State::Excited => {
                t += excited.sample(rng);
                if t >= duration {
                    return out;
                }
                if rng.random::<f64>() < p_rad {
                    if rng.random::<f64>() < rates.detection_efficiency {
                        out.push(t as u64);
                    }
                    state = State::Ground;
                } else {
                    state = State::Shelf;
                }
            }
            State::Shelf => {
                t += deshelve.sample(rng);
                state = State::Ground;
            }
        }
        if t >= duration {
            return out;
        }
    }
}

/// Homogeneous Poisson stream at `rate_kcps` over `duration_ns`.
fn sample_poisson_stream(
    rate_kcps: f64,
    duration_ns: u64,
    rng: &mut SimRng,
    out: &mut Vec<u64>,
) {
    if rate_kcps == 0.0 {
        return;
    }
    let rate_per_ns = rate_kcps / KCPS_PER_INV_NS;
    let exp = Exp::new(rate_per_ns).expect("positive rate");
    let duration = duration_ns as f64;
    let mut t = 0.0_f64;
    loop {
        t += exp.sample(rng);
        if t >= duration {
            return;
        }
        out.push(t as u64);
    }
}

/// Synthesizes the combined detection stream of `k_emitters` independent
/// emitters plus a homogeneous Poisson background.
///
/// Emitter `e` draws from the substream `(seed, "emitter", e)` and the
/// background from `(seed, "background", 0)`, so the result is independent
/// of evaluation order.
pub fn simulate_photon_stream(
    k_emitters: u32,
    rates: &EmitterRates,
    background_kcps: f64,
    power_mw: f64,
    duration_ns: u64,
    seed: u64,
) -> Result<PhotonStream> {
    rates.validate()?;
    if duration_ns == 0 {
        return Err(Error::invalid("duration_ns must be > 0"));
    }
    if !(power_mw > 0.0) {
        return Err(Error::invalid(format!("power must be > 0, got {power_mw}")));
    }
    if !(background_kcps >= 0.0) {
        return Err(Error::invalid("background rate must be >= 0"));
    }

    let mut timestamps = Vec::new();
    for e in 0..k_emitters {
        let mut rng = substream(seed, "emitter", u64::from(e));
        sample_emitter_photons(rates, power_mw, duration_ns, &mut rng, &mut timestamps);
    }
    let mut rng = substream(seed, "background", 0);
    sample_poisson_stream(background_kcps, duration_ns, &mut rng, &mut timestamps);
    timestamps.sort_unstable();

    Ok(PhotonStream {
        timestamps,
        duration_ns,
        channel: Channel::Combined,
    })
}

/// Bins the stream into consecutive intensity-trace windows of `bin_ms`.
///
/// Bins are right-closed: bin k covers (k*w, (k+1)*w] with the first bin
/// additionally including t = 0. Only `floor(duration/w)` full bins are
/// kept; later timestamps are dropped and reported.
pub fn intensity_trace(stream: &PhotonStream, bin_ms: f64) -> Result<IntensityTrace> {
    stream.validate()?;
    if !(bin_ms > 0.0) {
        return Err(Error::invalid(format!("bin_ms must be > 0, got {bin_ms}")));
    }
    let w = bin_ms * 1e6; // ns
    let n_bins = (stream.duration_ns as f64 / w).floor() as usize;
    let mut counts = vec![0u64; n_bins];
    let mut dropped = 0u64;
    for &t in &stream.timestamps {
        let idx = if t == 0 {
            0
        } else {
            (t as f64 / w).ceil() as usize - 1
        };
        if idx < n_bins {
            counts[idx] += 1;
        } else {
            dropped += 1;
        }
    }
    Ok(IntensityTrace {
        counts,
        bin_ms,
        dropped,
    })
}
