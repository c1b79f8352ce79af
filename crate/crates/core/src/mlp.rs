//! Fully connected networks `NN(z; theta, f, N)` with forward evaluation,
//! exact reverse-mode backpropagation, the compact-parameter projection
//! `||theta||_inf <= a`, and per-network Lipschitz/smoothness coefficients.
//!
//! Gradients are computed by reverse accumulation over a [`ForwardTrace`]
//! (cost `O(params)`); the closed-form product formulas
//! `grad_{W_i} = (prod_{j>i} f_j'(u_j) W_j) f_i'(u_i) f_{i-1}(u_{i-1})^T`
//! serve as test oracles on small networks.

use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::error::Error;
use crate::numerics::{gauss_sample, spectral_norm, Mat64, RngKey, Vec64};
use crate::Result;

/// One affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Mat64,
    pub b: Vec64,
}

/// Parameters of a fully connected network: ordered layers, one activation
/// per layer, and an optional norm bound `a` for the compact parameter set
/// `max_i max(||W_i||_spec, ||b_i||_2) <= a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub acts: Vec<Activation>,
    /// `None` means unbounded (no projection, no computable bounds).
    pub norm_bound: Option<f64>,
}

/// Pre- and post-activations recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Network input `u_0 = z`.
    pub input: Vec64,
    /// Pre-activations `u_1 .. u_N`.
    pub pre: Vec<Vec64>,
    /// Post-activations `f_1(u_1) .. f_N(u_N)`.
    pub post: Vec<Vec64>,
}

/// Gradient of a scalar with respect to every `(W_i, b_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Construct with dimension/activation validation.
    pub fn new(layers: Vec<Layer>, acts: Vec<Activation>, norm_bound: Option<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("layers", "network needs at least one layer"));
        }
        if layers.len() != acts.len() {
            return Err(Error::dim("activations per layer", layers.len(), acts.len()));
        }
        for a in &acts {
            a.validate()?;
        }
        for (i, l) in layers.iter().enumerate() {
            if l.w.nrows() != l.b.len() {
                return Err(Error::dim(format!("layer {i} bias"), l.w.nrows(), l.b.len()));
            }
            if i > 0 && layers[i - 1].w.nrows() != l.w.ncols() {
                return Err(Error::dim(
                    format!("layer {i} input"),
                    layers[i - 1].w.nrows(),
                    l.w.ncols(),
                ));
            }
        }
        if let Some(a) = norm_bound {
            if !(a > 0.0) {
                return Err(Error::invalid("norm_bound", "must be positive"));
            }
        }
        Ok(MlpParams {
            layers,
            acts,
            norm_bound,
        })
    }

    /// Random initialization: weights i.i.d. `N(0, 1/sqrt(fan_in))`, biases
    /// zero, followed by one projection when a norm bound is set.
    ///
    /// `dims` is `[in, h1, ..., out]`; `acts` must have `dims.len() - 1`
    /// entries.
    pub fn init(dims: &[usize], acts: Vec<Activation>, norm_bound: Option<f64>, key: RngKey) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("dims", "need at least input and output dims"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (nin, nout) = (dims[i], dims[i + 1]);
            let std = (1.0 / (nin as f64).sqrt()).sqrt();
            let raw = gauss_sample(key.derive_tag("init").derive(i as u64), nin * nout);
            let w = Mat64::from_iterator(nout, nin, raw.iter().map(|v| v * std));
            layers.push(Layer {
                w,
                b: Vec64::zeros(nout),
            });
        }
        let p = MlpParams::new(layers, acts, norm_bound)?;
        Ok(if norm_bound.is_some() { p.project_norm() } else { p })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    /// Forward pass, recording the trace needed for backpropagation.
    pub fn forward(&self, z: &Vec64) -> Result<(Vec64, ForwardTrace)> {
        if z.len() != self.in_dim() {
            return Err(Error::dim("network input (layer 0)", self.in_dim(), z.len()));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut cur = z.clone();
        for (l, act) in self.layers.iter().zip(&self.acts) {
            let u = &l.w * &cur + &l.b;
            cur = act.act_vec(&u);
            pre.push(u);
            post.push(cur.clone());
        }
        Ok((
            cur,
            ForwardTrace {
                input: z.clone(),
                pre,
                post,
            },
        ))
    }

    /// Gradient of `upstream . G(z)` with respect to every `(W_i, b_i)`,
    /// by reverse accumulation over the trace.
    pub fn backprop_params(&self, trace: &ForwardTrace, upstream: &Vec64) -> Result<MlpGrad> {
        let delta = self.check_trace(trace, upstream)?;
        let mut grads = vec![
            Layer {
                w: Mat64::zeros(0, 0),
                b: Vec64::zeros(0),
            };
            self.layers.len()
        ];
        let mut delta = delta;
        for i in (0..self.layers.len()).rev() {
            let inp = if i == 0 { &trace.input } else { &trace.post[i - 1] };
            grads[i] = Layer {
                w: &delta * inp.transpose(),
                b: delta.clone(),
            };
            if i > 0 {
                let back = self.layers[i].w.transpose() * &delta;
                delta = back.component_mul(&self.acts[i - 1].act_d1_vec(&trace.pre[i - 1]));
            }
        }
        Ok(MlpGrad { layers: grads })
    }

    /// Gradient of `upstream . G(z)` with respect to the input `z`.
    pub fn backprop_input(&self, trace: &ForwardTrace, upstream: &Vec64) -> Result<Vec64> {
        let mut delta = self.check_trace(trace, upstream)?;
        for i in (1..self.layers.len()).rev() {
            let back = self.layers[i].w.transpose() * &delta;
            delta = back.component_mul(&self.acts[i - 1].act_d1_vec(&trace.pre[i - 1]));
        }
        Ok(self.layers[0].w.transpose() * delta)
    }

    /// Shared head of the two backprop entry points: validates the trace and
    /// returns `delta_N = upstream (.) f_N'(u_N)`.
    fn check_trace(&self, trace: &ForwardTrace, upstream: &Vec64) -> Result<Vec64> {
        if trace.pre.len() != self.layers.len() || trace.input.len() != self.in_dim() {
            return Err(Error::invalid("trace", "stale trace: layer count or input dim mismatch"));
        }
        for (i, u) in trace.pre.iter().enumerate() {
            if u.len() != self.layers[i].w.nrows() {
                return Err(Error::dim(format!("trace layer {i}"), self.layers[i].w.nrows(), u.len()));
            }
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::dim("upstream", self.out_dim(), upstream.len()));
        }
        let n = self.layers.len();
        Ok(upstream.component_mul(&self.acts[n - 1].act_d1_vec(&trace.pre[n - 1])))
    }

    /// Project onto the ball `||theta||_inf <= a`: each `W_i` is rescaled by
    /// `min(1, a / ||W_i||_spec)` and each `b_i` by `min(1, a / ||b_i||_2)`.
    /// Identity when no bound is set. Idempotent.
    pub fn project_norm(&self) -> MlpParams {
        let Some(a) = self.norm_bound else {
            return self.clone();
        };
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let sw = spectral_norm(&l.w);
                let cw = if sw > a { a / sw } else { 1.0 };
                let sb = l.b.norm();
                let cb = if sb > a { a / sb } else { 1.0 };
                Layer {
                    w: &l.w * cw,
                    b: &l.b * cb,
                }
            })
            .collect();
        MlpParams {
            layers,
            acts: self.acts.clone(),
            norm_bound: self.norm_bound,
        }
    }

    /// `||theta||_inf = max_i max(||W_i||_spec, ||b_i||_2)`, the norm the
    /// projection controls.
    pub fn norm_inf(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| spectral_norm(&l.w).max(l.b.norm()))
            .fold(0.0, f64::max)
    }

    /// Per-layer activation constants `(M_f, L_f)`; errors if any layer has
    /// no smoothness constant (ReLU).
    pub fn layer_constants(&self) -> Result<Vec<(f64, f64)>> {
        self.acts
            .iter()
            .map(|a| {
                let (m, l) = a.constants();
                l.map(|l| (m, l)).ok_or_else(|| {
                    Error::NoSmoothnessConstant(format!("{a:?} has no smoothness constant"))
                })
            })
            .collect()
    }

    /// Coefficient of the parameter-gradient bound
    /// `||grad_theta G(z)|| <= (||z|| + 1) * a^{N-1} * prod_j M_{f_j}`;
    /// returns the factor multiplying `(||z|| + 1)`.
    pub fn lipschitz_bound(&self) -> Result<f64> {
        let a = self.require_bound()?;
        let consts = self.layer_constants()?;
        let n = self.n_layers() as i32;
        let prod_m: f64 = consts.iter().map(|(m, _)| m).product();
        Ok(a.powi(n - 1) * prod_m)
    }

    /// Coefficient of the parameter-smoothness bound
    /// `||grad_theta G(z) - grad_theta G(z')|| <=
    ///  N (||z||^2 + 1) * sum_k L_{f_k} a^{N-2+k} prod_{j<k} M_{f_j}^2 prod_{j>k} M_{f_j}`;
    /// returns the sum factor (multiplying `N (||z||^2 + 1)`).
    pub fn smoothness_bound(&self) -> Result<f64> {
        let a = self.require_bound()?;
        let consts = self.layer_constants()?;
        Ok(smoothness_sum(a, &consts, -2))
    }

    fn require_bound(&self) -> Result<f64> {
        self.norm_bound
            .ok_or_else(|| Error::invalid("norm_bound", "bound computation requires a finite a"))
    }
}

/// `sum_k L_{f_k} a^{N + offset + k} prod_{j<k} M_{f_j}^2 prod_{j>k} M_{f_j}`
/// with `k` one-based — the recurring sum in the network smoothness lemmas.
/// `offset` is `-2` for parameter smoothness and `0` for input smoothness.
pub(crate) fn smoothness_sum(a: f64, consts: &[(f64, f64)], offset: i32) -> f64 {
    let n = consts.len() as i32;
    let mut total = 0.0;
    for k in 1..=consts.len() {
        let mut term = consts[k - 1].1 * a.powi(n + offset + k as i32);
        for (j, (m, _)) in consts.iter().enumerate() {
            if j + 1 < k {
                term *= m * m;
            } else if j + 1 > k {
                term *= m;
            }
        }
        total += term;
    }
    total
}

impl MlpGrad {
    /// All-zero gradient with the same shape as `p`.
    pub fn zeros_like(p: &MlpParams) -> MlpGrad {
        MlpGrad {
            layers: p
                .layers
                .iter()
                .map(|l| Layer {
                    w: Mat64::zeros(l.w.nrows(), l.w.ncols()),
                    b: Vec64::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    /// In-place `self += other * scale`.
    pub fn axpy(&mut self, other: &MlpGrad, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w * scale;
            a.b += &b.b * scale;
        }
    }

    /// Append to a flat buffer in canonical order (per layer: `W` in
    /// column-major storage order, then `b`).
    pub fn extend_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
    }

    /// Total scalar count.
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Flatten parameters in the same canonical order as [`MlpGrad::extend_flat`].
pub fn extend_flat_params(p: &MlpParams, out: &mut Vec<f64>) {
    for l in &p.layers {
        out.extend(l.w.iter());
        out.extend(l.b.iter());
    }
}

/// Overwrite parameters from a flat slice (canonical order); returns the
/// number of scalars consumed.
pub fn assign_from_flat(p: &mut MlpParams, flat: &[f64]) -> usize {
    let mut idx = 0;
    for l in &mut p.layers {
        for v in l.w.iter_mut() {
            *v = flat[idx];
            idx += 1;
        }
        for v in l.b.iter_mut() {
            *v = flat[idx];
            idx += 1;
        }
    }
    idx
}
