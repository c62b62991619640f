//! Oracle equivalence and normalization properties of the correlator.

use defectsim::correlator::{
    brute_force_histogram, coincidence_histogram, normalize_histogram, split_stream,
};
use defectsim::emitter::{simulate_photon_stream, Channel, EmitterRates, PhotonStream};
use proptest::prelude::*;

fn stream_of(mut ts: Vec<u64>, channel: Channel) -> PhotonStream {
    ts.sort_unstable();
    let duration = ts.last().map_or(1, |&t| t + 1);
    PhotonStream {
        timestamps: ts,
        duration_ns: duration,
        channel,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    /// The sliding-window histogram is bit-identical to the O(n^2)
    /// reference for arbitrary streams, bin widths, and windows.
    #[test]
    fn optimized_equals_brute_force(
        a in prop::collection::vec(0u64..3000, 0..200),
        b in prop::collection::vec(0u64..3000, 0..200),
        bin_tenths in 5u64..100,
        window_mult in 1u64..40,
    ) {
        let bin_ns = bin_tenths as f64 / 10.0;
        let tau_max = bin_ns * window_mult as f64;
        let a = stream_of(a, Channel::DetectorA);
        let b = stream_of(b, Channel::DetectorB);
        let fast = coincidence_histogram(&a, &b, bin_ns, tau_max).unwrap();
        let slow = brute_force_histogram(&a, &b, bin_ns, tau_max).unwrap();
        prop_assert_eq!(fast, slow);
    }

    /// Mirroring the histogram in tau equals swapping detectors.
    #[test]
    fn histogram_symmetry_under_swap(
        a in prop::collection::vec(0u64..2000, 0..120),
        b in prop::collection::vec(0u64..2000, 0..120),
    ) {
        let a = stream_of(a, Channel::DetectorA);
        let b = stream_of(b, Channel::DetectorB);
        let ab = coincidence_histogram(&a, &b, 1.0, 64.0).unwrap();
        let ba = coincidence_histogram(&b, &a, 1.0, 64.0).unwrap();
        let mut mirrored = ab.counts.clone();
        mirrored.reverse();
        prop_assert_eq!(mirrored, ba.counts);
    }
}

#[test]
fn poisson_streams_normalize_to_unity() {
    // Two independent Poisson streams over 100 s: every C_N bin is 1.0
    // within errors (99% of bins inside 3 sigma, none beyond 6). Rates are
    // chosen so bins hold hundreds of counts and the sqrt(N) error model
    // is in its Gaussian regime.
    let rates = EmitterRates::default();
    let duration = 100_000_000_000u64;
    let a = simulate_photon_stream(0, &rates, 20.0, 1.0, duration, 101).unwrap();
    let b = simulate_photon_stream(0, &rates, 20.0, 1.0, duration, 102).unwrap();
    let a = PhotonStream {
        channel: Channel::DetectorA,
        ..a
    };
    let b = PhotonStream {
        channel: Channel::DetectorB,
        ..b
    };
    let hist = coincidence_histogram(&a, &b, 10.0, 2000.0).unwrap();
    let curve =
        normalize_histogram(&hist, a.mean_rate_kcps(), b.mean_rate_kcps(), duration).unwrap();
    // The outermost bins are only half-covered by the closed |tau| window
    // and sit at C_N ~ 0.5 by construction; skip them.
    let inner = 1..curve.values.len() - 1;
    let mut outside = 0usize;
    for i in inner.clone() {
        let (v, se) = (curve.values[i], curve.std_errors[i]);
        let z = (v - 1.0).abs() / se.max(curve.counts_scale);
        if z > 3.0 {
            outside += 1;
        }
        assert!(z < 6.0, "bin value {v} (z = {z})");
    }
    assert!(
        (outside as f64) < 0.01 * inner.len() as f64,
        "{outside} of {} bins off unity",
        inner.len()
    );
}

#[test]
fn normalization_is_duration_invariant() {
    // The same physical process at twice the duration normalizes to the
    // same C_N level.
    let rates = EmitterRates::default();
    let short = 50_000_000_000u64;
    let long = 100_000_000_000u64;
    let mean_cn = |duration: u64, seed: u64| -> f64 {
        let s = simulate_photon_stream(0, &rates, 40.0, 1.0, duration, seed).unwrap();
        let (a, b) = split_stream(&s, seed + 1).unwrap();
        let hist = coincidence_histogram(&a, &b, 10.0, 1000.0).unwrap();
        let curve =
            normalize_histogram(&hist, a.mean_rate_kcps(), b.mean_rate_kcps(), duration).unwrap();
        curve.values.iter().sum::<f64>() / curve.values.len() as f64
    };
    let c_short = mean_cn(short, 7);
    let c_long = mean_cn(long, 9);
    assert!(
        (c_short - c_long).abs() < 0.05,
        "C_N {c_short} vs {c_long}"
    );
}

#[test]
fn split_counts_are_binomial() {
    // 1e6 photons: |count_A - count_B| < 5 sqrt(1e6)/... the binomial
    // half-split bound.
    let rates = EmitterRates::default();
    let stream = simulate_photon_stream(0, &rates, 1000.0, 1.0, 1_000_000_000, 55).unwrap();
    let n = stream.timestamps.len();
    assert!(n > 900_000);
    let (a, b) = split_stream(&stream, 56).unwrap();
    assert_eq!(a.timestamps.len() + b.timestamps.len(), n);
    let diff = a.timestamps.len() as f64 - b.timestamps.len() as f64;
    assert!(
        diff.abs() < 5.0 * (n as f64).sqrt() / 2.0 * 2.0,
        "imbalance {diff} over {n}"
    );
}
