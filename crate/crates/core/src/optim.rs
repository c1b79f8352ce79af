//! Ascent optimizers: plain SGD and Adam with the decreasing step size
//! `gamma_n = C_gamma n^{-1/2}`.
//!
//! The Adam variant used here has no bias correction and adds the
//! regularizer inside the square root, `(v + delta)^{-1/2}` — both
//! deliberate divergences from the common PyTorch formulation.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::Vec64;
use crate::Result;

/// Which update rule an [`OptimState`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    Adam,
}

/// Optimizer state: first/second moment buffers (Adam), iteration counter,
/// and hyperparameters. `step` is pure: replaying `(state, params, grad)`
/// triples reproduces a trajectory bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub kind: OptimKind,
    pub m: Vec64,
    pub v: Vec64,
    /// Completed iterations.
    pub k: usize,
    pub c_gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
}

impl OptimState {
    /// SGD with step size `C_gamma n^{-1/2}`.
    pub fn sgd(dim: usize, c_gamma: f64) -> Result<Self> {
        check_c_gamma(c_gamma)?;
        Ok(OptimState {
            kind: OptimKind::Sgd,
            m: Vec64::zeros(dim),
            v: Vec64::zeros(dim),
            k: 0,
            c_gamma,
            beta1: 0.0,
            beta2: 0.0,
            delta: 0.0,
        })
    }

    /// Adam with defaults `beta1 = 0.9`, `beta2 = 0.999`, `delta = 1e-8`.
    pub fn adam(dim: usize, c_gamma: f64) -> Result<Self> {
        OptimState::adam_with(dim, c_gamma, 0.9, 0.999, 1e-8)
    }

    pub fn adam_with(dim: usize, c_gamma: f64, beta1: f64, beta2: f64, delta: f64) -> Result<Self> {
        check_c_gamma(c_gamma)?;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(beta1 < beta2.sqrt()) {
            return Err(Error::invalid("beta1/beta2", "need beta1 < sqrt(beta2) < 1"));
        }
        if !(delta >= 0.0) {
            return Err(Error::invalid("delta", "must be nonnegative"));
        }
        Ok(OptimState {
            kind: OptimKind::Adam,
            m: Vec64::zeros(dim),
            v: Vec64::zeros(dim),
            k: 0,
            c_gamma,
            beta1,
            beta2,
            delta,
        })
    }

    /// Step size applied at the `n`-th update (`n >= 1`).
    pub fn gamma(&self, n: usize) -> f64 {
        self.c_gamma / (n as f64).sqrt()
    }

    /// One ascent step: returns the updated state and parameters.
    ///
    /// SGD: `params + gamma_{k+1} grad`.
    /// Adam: `m <- beta1 m + (1-beta1) g`, `v <- beta2 v + (1-beta2) g^2`,
    /// `params + gamma_{k+1} m / sqrt(v + delta)` (no bias correction).
    pub fn step(&self, params: &Vec64, grad: &Vec64) -> Result<(OptimState, Vec64)> {
        if params.len() != grad.len() {
            return Err(Error::dim("grad", params.len(), grad.len()));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: "gradient".into(),
                at: Some(format!("coordinate {i}")),
            });
        }
        let mut state = self.clone();
        state.k = self.k + 1;
        let gamma = self.gamma(state.k);
        let new_params = match self.kind {
            OptimKind::Sgd => params + grad * gamma,
            OptimKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::dim("adam state", params.len(), self.m.len()));
                }
                state.m = &self.m * self.beta1 + grad * (1.0 - self.beta1);
                state.v = &self.v * self.beta2 + grad.component_mul(grad) * (1.0 - self.beta2);
                let upd = Vec64::from_iterator(
                    params.len(),
                    state
                        .m
                        .iter()
                        .zip(state.v.iter())
                        .map(|(m, v)| m / (v + self.delta).sqrt()),
                );
                params + upd * gamma
            }
        };
        Ok((state, new_params))
    }
}

/// The paper-prescribed schedule `n -> C_gamma n^{-1/2}` as a closure.
pub fn make_schedule(c_gamma: f64) -> Result<impl Fn(usize) -> f64> {
    check_c_gamma(c_gamma)?;
    Ok(move |n: usize| c_gamma / (n as f64).sqrt())
}

fn check_c_gamma(c_gamma: f64) -> Result<()> {
    if !(c_gamma > 0.0) {
        return Err(Error::invalid("c_gamma", "must be positive"));
    }
    Ok(())
}
