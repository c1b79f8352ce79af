//! Convergence diagnostics: random-iterate gradient-norm tracking, rate
//! fitting against `c n^{-p}` and `c log(n)/sqrt(n)`, and per-sample
//! gradient variance.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::Vec64;
use crate::Result;

/// One evaluation-cadence row of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub iter: usize,
    /// `||grad L||^2` estimated with the held-out evaluation budget.
    pub grad_norm_sq: f64,
    pub elbo_train: f64,
    pub elbo_test: f64,
    /// Per-sample gradient variance of the training estimator.
    pub est_var: f64,
    pub snr_theta: f64,
    pub snr_phi: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Functional form fitted to the gradient-norm decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `y = c n^{-p}`.
    Power,
    /// `y = c log(n) / sqrt(n)`.
    LogOverSqrt,
}

/// A fitted decay model over an iteration window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    pub c: f64,
    /// Exponent; only fitted for the power model.
    pub p: Option<f64>,
    pub r2: f64,
    pub window: (usize, usize),
}

/// Empirical expectation over the uniformly random iterate: the unweighted
/// mean of `grad_norm_sq` over all records.
pub fn random_iterate_metric(records: &[DiagnosticsRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("records", "need at least one record"));
    }
    Ok(records.iter().map(|r| r.grad_norm_sq).sum::<f64>() / records.len() as f64)
}

/// Fit both decay models to `grad_norm_sq` over iterations in
/// `[window.0, window.1]` by least squares in log space. Returns
/// `(power fit, log-over-sqrt fit)`.
pub fn fit_rate(records: &[DiagnosticsRecord], window: (usize, usize)) -> Result<(RateFit, RateFit)> {
    if window.0 < 2 {
        return Err(Error::invalid("window", "window must start at iteration >= 2"));
    }
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.iter >= window.0 && r.iter <= window.1)
        .map(|r| (r.iter as f64, r.grad_norm_sq))
        .collect();
    if pts.len() < 20 {
        return Err(Error::invalid("window", "need at least 20 records in the window"));
    }
    if pts.iter().any(|(_, y)| !(*y > 0.0)) {
        return Err(Error::invalid("records", "grad_norm_sq must be positive to fit in log space"));
    }
    let log_y: Vec<f64> = pts.iter().map(|(_, y)| y.ln()).collect();
    let ybar = log_y.iter().sum::<f64>() / log_y.len() as f64;
    let ss_tot: f64 = log_y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let r2_of = |residuals: &[f64]| {
        let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
        if ss_tot == 0.0 {
            if ss_res == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
        }
    };

    // Power model: log y = log c - p log n.
    let log_n: Vec<f64> = pts.iter().map(|(n, _)| n.ln()).collect();
    let xbar = log_n.iter().sum::<f64>() / log_n.len() as f64;
    let sxx: f64 = log_n.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = log_n
        .iter()
        .zip(&log_y)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let res_pow: Vec<f64> = log_n
        .iter()
        .zip(&log_y)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    let power = RateFit {
        model: RateModel::Power,
        c: intercept.exp(),
        p: Some(-slope),
        r2: r2_of(&res_pow),
        window,
    };

    // Paper model: log y = log c + log(log n / sqrt n), slope fixed at 1.
    let log_g: Vec<f64> = pts.iter().map(|(n, _)| (n.ln() / n.sqrt()).ln()).collect();
    let gbar = log_g.iter().sum::<f64>() / log_g.len() as f64;
    let log_c = ybar - gbar;
    let res_paper: Vec<f64> = log_g
        .iter()
        .zip(&log_y)
        .map(|(g, y)| y - (log_c + g))
        .collect();
    let paper = RateFit {
        model: RateModel::LogOverSqrt,
        c: log_c.exp(),
        p: None,
        r2: r2_of(&res_paper),
        window,
    };
    Ok((power, paper))
}

/// Mean squared deviation of the per-sample flat gradients from their mean
/// (biased-`n` convention).
pub fn estimator_variance(per_sample_terms: &[Vec64]) -> Result<f64> {
    if per_sample_terms.len() < 2 {
        return Err(Error::invalid("per_sample_terms", "need at least 2 terms"));
    }
    let n = per_sample_terms.len() as f64;
    let mean = per_sample_terms.iter().sum::<Vec64>() / n;
    Ok(per_sample_terms
        .iter()
        .map(|t| (t - &mean).norm_squared())
        .sum::<f64>()
        / n)
}
