//! Maximum-a-posteriori scale values under Thurstone's Case V model.
//!
//! The objective is
//! `L(μ) = Σ_{i≠j} C_ij · ln Φ((μ_i − μ_j)/√2) − Σ_k μ_k² / (2 σ_p²)`,
//! which is strictly concave, so a damped Newton ascent reaches the unique
//! maximizer from any start.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::PreferenceMatrix;
use crate::error::{Error, Result};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThurstoneOptions {
    pub prior_std: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ThurstoneOptions {
    fn default() -> Self {
        ThurstoneOptions {
            prior_std: 4.0,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScale {
    pub ids: Vec<String>,
    pub mu: Vec<f64>,
    pub log_posterior: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub prior_std: f64,
}

/// Asymptotic `Q(x)/φ(x)` for large positive `x`.
fn mills_tail(x: f64) -> f64 {
    let x2 = x * x;
    (1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)) / x
}

/// `ln Φ(d)`.
pub fn ln_norm_cdf(d: f64) -> f64 {
    if d > -30.0 {
        (0.5 * erfc(-d * INV_SQRT2)).ln()
    } else {
        let x = -d;
        -0.5 * x * x - LN_SQRT_2PI + mills_tail(x).ln()
    }
}

/// Inverse Mills ratio `φ(d)/Φ(d)`.
pub fn inverse_mills(d: f64) -> f64 {
    if d > -30.0 {
        (-0.5 * d * d - LN_SQRT_2PI - ln_norm_cdf(d)).exp()
    } else {
        1.0 / mills_tail(-d)
    }
}

fn check_shape(matrix: &PreferenceMatrix, mu: &[f64]) {
    assert_eq!(
        matrix.len(),
        mu.len(),
        "scale length must match matrix size"
    );
}

pub fn log_posterior(matrix: &PreferenceMatrix, mu: &[f64], prior_std: f64) -> f64 {
    check_shape(matrix, mu);
    let mut total = 0.0;
    for (i, row) in matrix.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                total += c * ln_norm_cdf((mu[i] - mu[j]) * INV_SQRT2);
            }
        }
    }
    total - mu.iter().map(|m| m * m).sum::<f64>() / (2.0 * prior_std * prior_std)
}

pub fn gradient(matrix: &PreferenceMatrix, mu: &[f64], prior_std: f64) -> Vec<f64> {
    check_shape(matrix, mu);
    let prior_precision = 1.0 / (prior_std * prior_std);
    let mut grad: Vec<f64> = mu.iter().map(|m| -m * prior_precision).collect();
    for (i, row) in matrix.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                let g = c * INV_SQRT2 * inverse_mills((mu[i] - mu[j]) * INV_SQRT2);
                grad[i] += g;
                grad[j] -= g;
            }
        }
    }
    grad
}

/// Hessian of the log posterior (negative definite).
pub fn hessian(matrix: &PreferenceMatrix, mu: &[f64], prior_std: f64) -> DMatrix<f64> {
    check_shape(matrix, mu);
    let m = mu.len();
    let mut h = DMatrix::from_diagonal_element(m, m, -1.0 / (prior_std * prior_std));
    for (i, row) in matrix.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                let d = (mu[i] - mu[j]) * INV_SQRT2;
                let r = inverse_mills(d);
                // d²/dd² ln Φ(d) = −r (d + r), chain rule contributes 1/2
                let curvature = -c * 0.5 * r * (d + r);
                h[(i, i)] += curvature;
                h[(j, j)] += curvature;
                h[(i, j)] -= curvature;
                h[(j, i)] -= curvature;
            }
        }
    }
    h
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn thurstone_map(
    matrix: &PreferenceMatrix,
    options: &ThurstoneOptions,
) -> Result<QualityScale> {
    thurstone_map_from(matrix, options, None)
}

/// Same as [`thurstone_map`] with an explicit starting point.
pub fn thurstone_map_from(
    matrix: &PreferenceMatrix,
    options: &ThurstoneOptions,
    init: Option<&[f64]>,
) -> Result<QualityScale> {
    let m = matrix.len();
    if m < 2 {
        return Err(Error::Aggregation(format!(
            "need at least 2 items, got {m}"
        )));
    }
    if matrix.total() <= 0.0 {
        return Err(Error::Aggregation(
            "preference matrix has no comparisons".into(),
        ));
    }
    if !(options.prior_std > 0.0 && options.prior_std.is_finite()) {
        return Err(Error::Aggregation(format!(
            "prior_std must be positive, got {}",
            options.prior_std
        )));
    }
    let prior_std = options.prior_std;
    let mut mu: Vec<f64> = match init {
        Some(start) if start.len() == m => start.to_vec(),
        Some(start) => {
            return Err(Error::Aggregation(format!(
                "initial scale has {} values for {m} items",
                start.len()
            )))
        }
        None => vec![0.0; m],
    };
    let mut value = log_posterior(matrix, &mu, prior_std);
    let mut grad = gradient(matrix, &mu, prior_std);
    let mut iterations = 0;
    while max_abs(&grad) > options.tol && iterations < options.max_iter {
        iterations += 1;
        let neg_h = -hessian(matrix, &mu, prior_std);
        let g = DVector::from_column_slice(&grad);
        let direction = match neg_h.cholesky() {
            Some(chol) => chol.solve(&g),
            None => g.clone(),
        };
        let slope = g.dot(&direction);
        // Near the optimum the predicted gain is below the rounding noise of L,
        // so Armijo cannot see progress; judge the full Newton step by the gradient.
        if slope <= 1e-9 * (1.0 + value.abs()) {
            let full: Vec<f64> = mu
                .iter()
                .zip(direction.iter())
                .map(|(m, d)| m + d)
                .collect();
            let full_grad = gradient(matrix, &full, prior_std);
            if max_abs(&full_grad) >= max_abs(&grad) {
                break;
            }
            value = log_posterior(matrix, &full, prior_std);
            mu = full;
            grad = full_grad;
            continue;
        }
        let mut step = 1.0;
        let accepted = loop {
            let candidate: Vec<f64> = mu
                .iter()
                .zip(direction.iter())
                .map(|(m, d)| m + step * d)
                .collect();
            let cand_value = log_posterior(matrix, &candidate, prior_std);
            if cand_value >= value + 1e-4 * step * slope {
                break Some((candidate, cand_value));
            }
            step *= 0.5;
            if step < 1e-12 {
                break None;
            }
        };
        let Some((next_mu, next_value)) = accepted else {
            break;
        };
        let next_grad = gradient(matrix, &next_mu, prior_std);
        mu = next_mu;
        value = next_value;
        grad = next_grad;
    }
    let gradient_norm = max_abs(&grad);
    Ok(QualityScale {
        ids: matrix.ids.clone(),
        log_posterior: log_posterior(matrix, &mu, prior_std),
        mu,
        gradient_norm,
        converged: gradient_norm <= options.tol,
        iterations,
        prior_std,
    })
}
