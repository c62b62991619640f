//! Built-in parametric models with analytic Jacobians.
//!
//! The g2 model is parameterized as (a, b, tau_1, dtau) with
//! tau_2 = tau_1 + dtau and dtau log-positive, which bakes in the
//! tau_1 < tau_2 convention (antibunching faster than bunching) and removes
//! the ordering ambiguity from the optimizer.

use super::engine::{ParamSpec, Transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinModel {
    /// y = slope * x
    Linear,
    /// y = baseline + peak * (fwhm/2)^2 / ((x - center)^2 + (fwhm/2)^2)
    Lorentzian,
    /// y = i_s / (1 + p_0 / x)
    Saturation,
    /// y = 1 - a exp(-|x|/tau_1) + b exp(-|x|/(tau_1 + dtau))
    G2Biexp,
}

const LINEAR_SPECS: [ParamSpec; 1] = [ParamSpec {
    name: "slope",
    transform: Transform::Free,
}];

const LORENTZIAN_SPECS: [ParamSpec; 4] = [
    ParamSpec {
        name: "center",
        transform: Transform::Free,
    },
    ParamSpec {
        name: "fwhm",
        transform: Transform::LogPositive,
    },
    ParamSpec {
        name: "peak",
        transform: Transform::Free,
    },
    ParamSpec {
        name: "baseline",
        transform: Transform::Free,
    },
];

const SATURATION_SPECS: [ParamSpec; 2] = [
    ParamSpec {
        name: "i_s",
        transform: Transform::LogPositive,
    },
    ParamSpec {
        name: "p_0",
        transform: Transform::LogPositive,
    },
];

const G2_SPECS: [ParamSpec; 4] = [
    ParamSpec {
        name: "a",
        transform: Transform::Free,
    },
    ParamSpec {
        name: "b",
        transform: Transform::Free,
    },
    ParamSpec {
        name: "tau_1",
        transform: Transform::LogPositive,
    },
    ParamSpec {
        name: "dtau",
        transform: Transform::LogPositive,
    },
];

impl BuiltinModel {
    pub fn param_specs(&self) -> &'static [ParamSpec] {
        match self {
            BuiltinModel::Linear => &LINEAR_SPECS,
            BuiltinModel::Lorentzian => &LORENTZIAN_SPECS,
            BuiltinModel::Saturation => &SATURATION_SPECS,
            BuiltinModel::G2Biexp => &G2_SPECS,
        }
    }

    pub fn eval(&self, theta: &[f64], x: f64) -> f64 {
        match self {
            BuiltinModel::Linear => theta[0] * x,
            BuiltinModel::Lorentzian => {
                let (center, fwhm, peak, baseline) = (theta[0], theta[1], theta[2], theta[3]);
                let hw = 0.5 * fwhm;
                let d = x - center;
                baseline + peak * hw * hw / (d * d + hw * hw)
            }
            BuiltinModel::Saturation => theta[0] / (1.0 + theta[1] / x),
            BuiltinModel::G2Biexp => {
                let (a, b, tau_1, dtau) = (theta[0], theta[1], theta[2], theta[3]);
                let t = x.abs();
                1.0 - a * (-t / tau_1).exp() + b * (-t / (tau_1 + dtau)).exp()
            }
        }
    }

    /// Writes d eval / d theta_j into `out`.
    pub fn jacobian(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        match self {
            BuiltinModel::Linear => out[0] = x,
            BuiltinModel::Lorentzian => {
                let (center, fwhm, peak) = (theta[0], theta[1], theta[2]);
                let hw = 0.5 * fwhm;
                let d = x - center;
                let denom = d * d + hw * hw;
                out[0] = peak * hw * hw * 2.0 * d / (denom * denom);
                out[1] = peak * hw * d * d / (denom * denom);
                out[2] = hw * hw / denom;
                out[3] = 1.0;
            }
            BuiltinModel::Saturation => {
                let (i_s, p_0) = (theta[0], theta[1]);
                let q = 1.0 + p_0 / x;
                out[0] = 1.0 / q;
                out[1] = -i_s / (x * q * q);
            }
            BuiltinModel::G2Biexp => {
                let (a, b, tau_1, dtau) = (theta[0], theta[1], theta[2], theta[3]);
                let t = x.abs();
                let tau_2 = tau_1 + dtau;
                let e1 = (-t / tau_1).exp();
                let e2 = (-t / tau_2).exp();
                out[0] = -e1;
                out[1] = e2;
                // tau_2 depends on tau_1, so both exponentials move with it.
                out[2] = -a * e1 * t / (tau_1 * tau_1) + b * e2 * t / (tau_2 * tau_2);
                out[3] = b * e2 * t / (tau_2 * tau_2);
            }
        }
    }
}

pub const ALL_MODELS: [BuiltinModel; 4] = [
    BuiltinModel::Linear,
    BuiltinModel::Lorentzian,
    BuiltinModel::Saturation,
    BuiltinModel::G2Biexp,
];
