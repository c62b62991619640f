//! Damped Gauss-Newton (Levenberg-Marquardt) weighted least squares.
//!
//! The engine minimizes chi^2 = sum ((y_i - f(x_i; theta)) / sigma_i)^2
//! over a low-dimensional parameter vector. Positive-only parameters are
//! handled by an internal log reparameterization, so no constrained solver
//! is needed. The damping factor multiplies the normal-matrix diagonal and
//! follows the classic schedule: x10 on a rejected step, /10 on an
//! accepted one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::models::BuiltinModel;

/// How a parameter maps between external (model) and internal (optimizer)
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Free,
    /// theta = exp(u); keeps the external value strictly positive.
    LogPositive,
}

impl Transform {
    fn to_internal(self, theta: f64, name: &str) -> Result<f64> {
        match self {
            Transform::Free => Ok(theta),
            Transform::LogPositive => {
                if theta > 0.0 && theta.is_finite() {
                    Ok(theta.ln())
                } else {
                    Err(Error::invalid(format!(
                        "initial {name} must be > 0, got {theta}"
                    )))
                }
            }
        }
    }

    fn to_external(self, u: f64) -> f64 {
        match self {
            Transform::Free => u,
            Transform::LogPositive => u.exp(),
        }
    }

    /// d(external)/d(internal).
    fn scale(self, u: f64) -> f64 {
        match self {
            Transform::Free => 1.0,
            Transform::LogPositive => u.exp(),
        }
    }
}

/// Name and coordinate mapping of one model parameter.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub transform: Transform,
}

/// Engine knobs; the defaults implement the documented convergence
/// criteria (relative chi^2 change < 1e-10 or gradient norm < 1e-8).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: u32,
    /// Relative chi^2 decrease below which an accepted step terminates.
    pub ftol: f64,
    /// Infinity norm of the chi^2/2 gradient below which the fit is
    /// converged.
    pub gtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            ftol: 1e-10,
            gtol: 1e-8,
        }
    }
}

/// Result of a weighted least-squares fit, in external parameter
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    /// 1-sigma errors from the inverse approximate Hessian diagonal.
    pub std_errors: Vec<f64>,
    /// Row-major p x p covariance matrix.
    pub covariance: Vec<f64>,
    /// sqrt(chi^2) of the weighted residual vector at the solution.
    pub residual_norm: f64,
    pub converged: bool,
    pub n_iterations: u32,
}

impl FitResult {
    pub fn chi_square(&self) -> f64 {
        self.residual_norm * self.residual_norm
    }

    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.param_names
            .iter()
            .position(|n| n == name)
            .map(|i| (self.params[i], self.std_errors[i]))
    }

    pub fn covariance_at(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.params.len() + j]
    }
}

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-13;
const LAMBDA_MAX: f64 = 1e13;
/// Relative Cholesky pivot below which the normal matrix is declared
/// singular.
const RANK_TOL: f64 = 1e-12;

/// Fits `model` to `(x, y, sigma)` triples starting from `init`
/// (external coordinates).
pub fn fit_curve(
    model: BuiltinModel,
    data: &[(f64, f64, f64)],
    init: &[f64],
    options: &FitOptions,
) -> Result<FitResult> {
    let specs = model.param_specs();
    let p = specs.len();
    if init.len() != p {
        return Err(Error::invalid(format!(
            "{model:?} expects {p} initial parameters, got {}",
            init.len()
        )));
    }
    if data.len() < p {
        return Err(Error::invalid(format!(
            "need at least {p} data points, got {}",
            data.len()
        )));
    }
    for &(x, y, sigma) in data {
        if !x.is_finite() || !y.is_finite() || !(sigma > 0.0) {
            return Err(Error::invalid(
                "data must be finite with strictly positive sigma",
            ));
        }
    }

    let mut u = Vec::with_capacity(p);
    for (spec, &theta) in specs.iter().zip(init) {
        u.push(spec.transform.to_internal(theta, spec.name)?);
    }

    let external = |u: &[f64]| -> Vec<f64> {
        specs
            .iter()
            .zip(u)
            .map(|(s, &ui)| s.transform.to_external(ui))
            .collect()
    };
    let chi2_of = |u: &[f64]| -> f64 {
        let theta = external(u);
        data.iter()
            .map(|&(x, y, sigma)| {
                let r = (y - model.eval(&theta, x)) / sigma;
                r * r
            })
            .sum()
    };

    // Weighted design matrix D_ij = (df_i/dtheta_j * dtheta_j/du_j)/sigma_i,
    // gradient g = D^T r (of chi^2/2 with sign such that the step is +delta),
    // normal matrix h = D^T D.
    let build_normal = |u: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let theta = external(u);
        let scales: Vec<f64> = specs
            .iter()
            .zip(u)
            .map(|(s, &ui)| s.transform.scale(ui))
            .collect();
        let mut g = vec![0.0; p];
        let mut h = vec![0.0; p * p];
        let mut row = vec![0.0; p];
        for &(x, y, sigma) in data {
            model.jacobian(&theta, x, &mut row);
            let r = (y - model.eval(&theta, x)) / sigma;
            for j in 0..p {
                let d = row[j] * scales[j] / sigma;
                g[j] += d * r;
                for k in 0..=j {
                    h[j * p + k] += d * row[k] * scales[k] / sigma;
                }
            }
        }
        for j in 0..p {
            for k in j + 1..p {
                h[j * p + k] = h[k * p + j];
            }
        }
        (g, h)
    };

    let mut chi2 = chi2_of(&u);
    if !chi2.is_finite() {
        return Err(Error::invalid("chi^2 is not finite at the initial guess"));
    }
    let mut lambda = LAMBDA_INIT;
    let mut converged = false;
    let mut n_iterations = 0u32;

    for iter in 0..options.max_iterations {
        n_iterations = iter;
        let (g, h) = build_normal(&u);
        let gnorm = g.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        if gnorm < options.gtol {
            converged = true;
            break;
        }

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = h.clone();
            for j in 0..p {
                let d = h[j * p + j];
                damped[j * p + j] = d + lambda * d.max(1e-30);
            }
            if let Some(delta) = cholesky_solve(&damped, &g, p) {
                let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, b)| a + b).collect();
                let trial_chi2 = chi2_of(&trial);
                if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                    let rel_drop = (chi2 - trial_chi2) / chi2.max(f64::MIN_POSITIVE);
                    u = trial;
                    chi2 = trial_chi2;
                    lambda = (lambda / 10.0).max(LAMBDA_MIN);
                    accepted = true;
                    if rel_drop < options.ftol {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        n_iterations = iter + 1;
        if !accepted || converged {
            break;
        }
    }

    // Covariance from the undamped normal matrix at the solution.
    let (_, h) = build_normal(&u);
    let cov_int = invert_spd(&h, p).ok_or_else(|| {
        Error::RankDeficient(
            "normal matrix is singular; one or more parameters are unidentifiable".into(),
        )
    })?;

    let params = external(&u);
    let scales: Vec<f64> = specs
        .iter()
        .zip(&u)
        .map(|(s, &ui)| s.transform.scale(ui))
        .collect();
    let mut covariance = vec![0.0; p * p];
    for j in 0..p {
        for k in 0..p {
            covariance[j * p + k] = cov_int[j * p + k] * scales[j] * scales[k];
        }
    }
    let std_errors: Vec<f64> = (0..p).map(|j| covariance[j * p + j].max(0.0).sqrt()).collect();

    Ok(FitResult {
        param_names: specs.iter().map(|s| s.name.to_string()).collect(),
        params,
        std_errors,
        covariance,
        residual_norm: chi2.sqrt(),
        converged,
        n_iterations,
    })
}

/// Cholesky decomposition with a relative pivot guard. Returns the lower
/// factor packed row-major, or None if the matrix is not (numerically)
/// positive definite.
fn cholesky(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let max_diag = (0..p).fold(0.0_f64, |m, j| m.max(a[j * p + j]));
    if max_diag <= 0.0 {
        return None;
    }
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= RANK_TOL * max_diag {
                    return None;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    let l = cholesky(a, p)?;
    // Forward then back substitution.
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Some(x)
}

fn invert_spd(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; p * p];
    for col in 0..p {
        let mut e = vec![0.0; p];
        e[col] = 1.0;
        let x = cholesky_solve(a, &e, p)?;
        for row in 0..p {
            inv[row * p + col] = x[row];
        }
    }
    Some(inv)
}
