//! Statistical oracles for the implantation module: straggle moments from
//! large-sample theory, per-spot defect counts against the analytic
//! Binomial and Poisson PMFs, and the positional quantile envelope.

use defectsim::fitting::{chi_square_gof, CountHistogram};
use defectsim::implantation::{
    convert_to_defects, plan_array, sample_ion_positions, yield_at_dose, BeamStraggleModel,
    DamageYieldModel,
};

const SEED: u64 = 20260810;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[test]
fn straggle_moments_match_model() {
    // One spot, 1e6 ions: sample std of x within 1% of sqrt(beam^2 +
    // lateral^2), depth mean/std within 0.05 nm.
    let plan = plan_array(1, 1, 2.0, 1_000_000).unwrap();
    let model = BeamStraggleModel {
        beam_sigma_nm: 3.0,
        depth_mean_nm: 18.5,
        depth_sigma_nm: 7.0,
        lateral_sigma_nm: 6.0,
    };
    let ions = sample_ion_positions(&plan, &model, SEED).unwrap();
    let xs: Vec<f64> = ions[0].positions.iter().map(|p| p.0).collect();
    let zs: Vec<f64> = ions[0].positions.iter().map(|p| p.2).collect();

    let (x_mean, x_std) = mean_std(&xs);
    let expected_std = 45.0_f64.sqrt();
    assert!(x_mean.abs() < 0.05, "x mean {x_mean}");
    assert!(
        (x_std - expected_std).abs() / expected_std < 0.01,
        "x std {x_std} vs {expected_std}"
    );

    let (z_mean, z_std) = mean_std(&zs);
    assert!((z_mean - 18.5).abs() < 0.05, "z mean {z_mean}");
    assert!((z_std - 7.0).abs() < 0.05, "z std {z_std}");
}

#[test]
fn positional_envelope_within_100nm() {
    // Default beam/straggle: 99.7% of defects within 100 nm of the nominal
    // spot center on every axis (depth measured from the mean implant
    // plane).
    let plan = plan_array(1, 1, 2.0, 200_000).unwrap();
    let model = BeamStraggleModel::default();
    let ions = sample_ion_positions(&plan, &model, SEED + 1).unwrap();
    let inside = ions[0]
        .positions
        .iter()
        .filter(|p| {
            p.0.abs() <= 100.0 && p.1.abs() <= 100.0 && (p.2 - model.depth_mean_nm).abs() <= 100.0
        })
        .count();
    let frac = inside as f64 / ions[0].positions.len() as f64;
    assert!(frac >= 0.997, "only {frac} inside the 100 nm envelope");
}

fn binomial_pmf(n: u32, p: f64, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    // Stable product form of C(n,k) p^k q^(n-k).
    let mut log_p = 0.0;
    for i in 0..k {
        log_p += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    log_p += f64::from(k) * p.ln() + f64::from(n - k) * (1.0 - p).ln();
    log_p.exp()
}

#[test]
fn defect_counts_follow_binomial() {
    // 1e5 spots at dose 40 with a forced conversion probability: the
    // per-spot count histogram passes a 1% chi-square test against
    // Binomial(40, p).
    let n_spots = 100_000u32;
    let dose = 40u32;
    let plan = plan_array(250, 400, 2.0, dose).unwrap();
    assert_eq!(plan.spots.len(), n_spots as usize);
    let beam = BeamStraggleModel::default();
    let ions = sample_ion_positions(&plan, &beam, SEED + 2).unwrap();

    let yield_model = DamageYieldModel::default();
    let p = yield_at_dose(&yield_model, f64::from(dose)).unwrap();
    let map = convert_to_defects(&ions, &yield_model, &plan, SEED + 3).unwrap();
    let counts = map.counts_per_spot(&plan);
    let hist = CountHistogram::from_counts(&counts);

    let mean = counts.iter().map(|&c| f64::from(c)).sum::<f64>() / f64::from(n_spots);
    let lambda = f64::from(dose) * p;
    assert!(
        (mean - lambda).abs() < 5.0 * (lambda / f64::from(n_spots)).sqrt(),
        "mean {mean} vs lambda {lambda}"
    );

    let dense: Vec<u64> = (0..=*hist.k_values.last().unwrap())
        .map(|k| hist.frequency_of(k))
        .collect();
    let gof = chi_square_gof(&dense, &|k| binomial_pmf(dose, p, k), 0).unwrap();
    let p_value = gof.p_value.expect("enough bins for a p-value");
    assert!(
        p_value > 0.01,
        "chi2 {} (dof {}) p {p_value}",
        gof.chi_square,
        gof.dof
    );
}

#[test]
fn poisson_limit_at_large_dose() {
    // dose -> large at fixed dose*p: Binomial converges to Poisson; at dose
    // 4000 with lambda ~ 1.56 a 1% chi-square against Poisson passes on
    // 2e4 spots.
    let n_spots = 20_000u32;
    let dose = 4000u32;
    let plan = plan_array(100, 200, 2.0, dose).unwrap();
    let beam = BeamStraggleModel::default();
    let ions = sample_ion_positions(&plan, &beam, SEED + 4).unwrap();

    // Pick the roll-off so that p ~ 1.56/4000.
    let target_lambda = 1.56;
    let p = target_lambda / f64::from(dose);
    let yield_model = DamageYieldModel {
        y0: p,
        d_c: 1e9,
        n: 1.0,
    };
    let map = convert_to_defects(&ions, &yield_model, &plan, SEED + 5).unwrap();
    let counts = map.counts_per_spot(&plan);
    let hist = CountHistogram::from_counts(&counts);
    let dense: Vec<u64> = (0..=*hist.k_values.last().unwrap())
        .map(|k| hist.frequency_of(k))
        .collect();
    let lambda_hat =
        counts.iter().map(|&c| f64::from(c)).sum::<f64>() / f64::from(n_spots);
    let gof = chi_square_gof(
        &dense,
        &|k| defectsim::fitting::poisson_pmf(lambda_hat, k),
        1,
    )
    .unwrap();
    let p_value = gof.p_value.expect("enough bins");
    assert!(
        p_value > 0.01,
        "chi2 {} (dof {}) p {p_value}",
        gof.chi_square,
        gof.dof
    );
}

#[test]
fn conversion_is_deterministic_per_seed() {
    let plan = plan_array(5, 5, 2.0, 60).unwrap();
    let beam = BeamStraggleModel::default();
    let ions = sample_ion_positions(&plan, &beam, 42).unwrap();
    let ym = DamageYieldModel::default();
    let a = convert_to_defects(&ions, &ym, &plan, 42).unwrap();
    let b = convert_to_defects(&ions, &ym, &plan, 42).unwrap();
    assert_eq!(a, b);
    let c = convert_to_defects(&ions, &ym, &plan, 43).unwrap();
    assert_ne!(a, c);
}
