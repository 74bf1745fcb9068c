//! Four-parameter logistic mapping used to compensate prediction nonlinearity
//! before computing linear correlation:
//!
//! `q̂ = (η₁ − η₂) / (1 + exp(−(q − η₃) / |η₄|)) + η₂`

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::correlation::{check_pair, is_constant, pearson};
use crate::error::{Error, Result};

const MAX_ITER: usize = 2000;
const STEP_TOL: f64 = 1e-10;
const PERTURBED_STARTS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when every logistic start diverged and an affine map was used instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_fallback: Option<AffineFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
}

impl AffineFit {
    pub fn apply(&self, q: f64) -> f64 {
        self.slope * q + self.intercept
    }
}

/// Ordinary least squares `target ≈ slope · pred + intercept`.
pub fn fit_affine(pred: &[f64], target: &[f64]) -> AffineFit {
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = target.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in pred.iter().zip(target) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = pred
        .iter()
        .zip(target)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    AffineFit {
        slope,
        intercept,
        residual_rms: (sse / n).sqrt(),
    }
}

fn curve(p: &Vector4<f64>, q: f64) -> f64 {
    let s = 1.0 / (1.0 + (-(q - p[2]) / p[3].abs()).exp());
    (p[0] - p[1]) * s + p[1]
}

impl LogisticFit {
    pub fn apply(&self, q: f64) -> f64 {
        match &self.linear_fallback {
            Some(affine) => affine.apply(q),
            None => curve(&Vector4::new(self.eta1, self.eta2, self.eta3, self.eta4), q),
        }
    }

    pub fn apply_all(&self, pred: &[f64]) -> Vec<f64> {
        pred.iter().map(|&q| self.apply(q)).collect()
    }
}

fn sse(p: &Vector4<f64>, pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(&q, &t)| (t - curve(p, q)).powi(2))
        .sum()
}

struct Outcome {
    params: Vector4<f64>,
    sse: f64,
    converged: bool,
    iterations: usize,
}

/// Levenberg-Marquardt with Marquardt's diagonal scaling.
fn levenberg_marquardt(start: Vector4<f64>, pred: &[f64], target: &[f64]) -> Outcome {
    let mut p = start;
    let mut cost = sse(&p, pred, target);
    let mut damping = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        let scale = p[3].abs();
        let sign = if p[3] < 0.0 { -1.0 } else { 1.0 };
        for (&q, &t) in pred.iter().zip(target) {
            let z = (q - p[2]) / scale;
            let s = 1.0 / (1.0 + (-z).exp());
            let ds = s * (1.0 - s);
            let amp = p[0] - p[1];
            let row = Vector4::new(s, 1.0 - s, -amp * ds / scale, -amp * ds * z / scale * sign);
            let r = t - (amp * s + p[1]);
            jtj += row * row.transpose();
            jtr += row * r;
        }
        if jtr.amax() == 0.0 {
            converged = true;
            break;
        }
        let diag_floor = jtj.diagonal().max() * 1e-12;
        let mut accepted = false;
        while damping < 1e16 {
            let mut lhs = jtj;
            for k in 0..4 {
                lhs[(k, k)] += damping * jtj[(k, k)].max(diag_floor);
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let candidate = p + step;
            let new_cost = sse(&candidate, pred, target);
            if new_cost.is_finite() && candidate[3] != 0.0 && new_cost <= cost {
                let step_norm = step.norm();
                p = candidate;
                cost = new_cost;
                damping = (damping / 3.0).max(1e-15);
                accepted = true;
                if step_norm <= STEP_TOL * (1.0 + p.norm()) {
                    converged = true;
                }
                break;
            }
            damping *= 4.0;
        }
        if !accepted {
            // no descent direction left at machine precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Outcome {
        params: p,
        sse: cost,
        converged,
        iterations,
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Least-squares fit of the four-parameter logistic mapping `pred` onto `target`.
///
/// Starts from `η = (max t, min t, median q, std q / 4)` plus three seeded
/// perturbations of `η₃, η₄`; each start is also tried with `η₁, η₂` swapped so
/// that decreasing relations are reachable. The start with the lowest residual wins.
pub fn fit_logistic(pred: &[f64], target: &[f64]) -> Result<LogisticFit> {
    check_pair(pred, target)?;
    if pred.len() < 5 {
        return Err(Error::Metrics(format!(
            "logistic fit needs at least 5 samples, got {}",
            pred.len()
        )));
    }
    if is_constant(pred) {
        return Err(Error::Metrics(
            "cannot fit a logistic to constant predictions".into(),
        ));
    }

    let hi = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = target.iter().copied().fold(f64::INFINITY, f64::min);
    let center = median(pred);
    let spread = (std_dev(pred) / 4.0).max(f64::MIN_POSITIVE);

    let mut starts = vec![(center, spread)];
    for seed in 0..PERTURBED_STARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift: f64 = rng.gen_range(-1.0..1.0) * 4.0 * spread;
        let stretch: f64 = 2f64.powf(rng.gen_range(-2.0..2.0));
        starts.push((center + shift, spread * stretch));
    }

    let mut best: Option<Outcome> = None;
    for &(eta3, eta4) in &starts {
        for (eta1, eta2) in [(hi, lo), (lo, hi)] {
            let outcome = levenberg_marquardt(Vector4::new(eta1, eta2, eta3, eta4), pred, target);
            if !outcome.sse.is_finite() || outcome.params.iter().any(|v| !v.is_finite()) {
                continue;
            }
            if best.as_ref().is_none_or(|b| outcome.sse < b.sse) {
                best = Some(outcome);
            }
        }
    }

    let n = pred.len() as f64;
    Ok(match best {
        Some(o) => LogisticFit {
            eta1: o.params[0],
            eta2: o.params[1],
            eta3: o.params[2],
            eta4: o.params[3],
            residual_rms: (o.sse / n).sqrt(),
            converged: o.converged,
            iterations: o.iterations,
            linear_fallback: None,
        },
        None => {
            let affine = fit_affine(pred, target);
            LogisticFit {
                eta1: f64::NAN,
                eta2: f64::NAN,
                eta3: f64::NAN,
                eta4: f64::NAN,
                residual_rms: affine.residual_rms,
                converged: false,
                iterations: 0,
                linear_fallback: Some(affine),
            }
        }
    })
}

/// Pearson correlation between logistic-mapped predictions and the target.
pub fn plcc(pred: &[f64], target: &[f64]) -> Result<f64> {
    let fit = fit_logistic(pred, target)?;
    Ok(plcc_with_fit(&fit, pred, target))
}

pub fn plcc_with_fit(fit: &LogisticFit, pred: &[f64], target: &[f64]) -> f64 {
    pearson(&fit.apply_all(pred), target).unwrap_or(0.0)
}
