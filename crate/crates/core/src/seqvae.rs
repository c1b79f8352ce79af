//! Toy-scale sequential VAE: a Gaussian nonlinear state-space model, a
//! backward variational smoothing family, the sequential ELBO, and its
//! pathwise gradient.
//!
//! Sampling runs backward — `z_T` from the terminal head, then
//! `z_t | z_{t+1}` through the per-step heads — so the gradient uses an
//! adjoint sweep: direct partials of the sampled objective with respect to
//! each `z_t` are accumulated from `t = 0` upward through the chain rule of
//! the reparameterized backward kernels.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimators::{EstimatorKind, GradEstimate};
use crate::mlp::{extend_flat_params, ForwardTrace, MlpParams};
use crate::models::{Clamps, GaussianHead};
use crate::numerics::{gauss_sample, RngKey, Vec64, LN_2PI};
use crate::Result;

/// Gaussian state-space model:
/// `z_0 ~ N(0, tau_m2 I)`, `z_{t+1} | z_t ~ N(mu_m(z_t), tau_m2 I)`,
/// `x_t | z_t ~ N(mu_g(z_t), tau_g2 I)`.
///
/// A bounded final activation on the transition net keeps the state space
/// compact; linear test configurations may omit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ssm {
    /// Transition mean net `mu_m: R^{d_z} -> R^{d_z}`.
    pub transition: MlpParams,
    /// Emission mean net `mu_g: R^{d_z} -> R^{d_x}`.
    pub emission: MlpParams,
    pub tau_m2: f64,
    pub tau_g2: f64,
}

impl Ssm {
    pub fn new(transition: MlpParams, emission: MlpParams, tau_m2: f64, tau_g2: f64) -> Result<Self> {
        if transition.in_dim() != transition.out_dim() {
            return Err(Error::dim("transition output", transition.in_dim(), transition.out_dim()));
        }
        if emission.in_dim() != transition.in_dim() {
            return Err(Error::dim("emission input", transition.in_dim(), emission.in_dim()));
        }
        if !(tau_m2 > 0.0 && tau_g2 > 0.0) {
            return Err(Error::invalid("tau", "variances must be positive"));
        }
        Ok(Ssm { transition, emission, tau_m2, tau_g2 })
    }

    pub fn d_z(&self) -> usize {
        self.transition.in_dim()
    }

    pub fn d_x(&self) -> usize {
        self.emission.out_dim()
    }

    /// Sample a trajectory `(z_{0:T}, x_{0:T})` forward.
    pub fn simulate(&self, t_len: usize, key: RngKey) -> Result<(Vec<Vec64>, Vec<Vec64>)> {
        let mut zs = Vec::with_capacity(t_len + 1);
        let mut xs = Vec::with_capacity(t_len + 1);
        let sm = self.tau_m2.sqrt();
        let sg = self.tau_g2.sqrt();
        let mut z = gauss_sample(key.derive_tag("z0"), self.d_z()) * sm;
        for t in 0..=t_len {
            let (gx, _) = self.emission.forward(&z)?;
            let x = gx + gauss_sample(key.derive_tag("x").derive(t as u64), self.d_x()) * sg;
            xs.push(x);
            zs.push(z.clone());
            if t < t_len {
                let (mz, _) = self.transition.forward(&z)?;
                z = mz + gauss_sample(key.derive_tag("z").derive(t as u64 + 1), self.d_z()) * sm;
            }
        }
        Ok((zs, xs))
    }

    fn log_gauss(resid: &Vec64, var: f64) -> f64 {
        -0.5 * resid.len() as f64 * (LN_2PI + var.ln()) - resid.norm_squared() / (2.0 * var)
    }
}

/// Backward variational family: a terminal head `q_T(z_T | x_T)` and
/// per-step heads `q_{t|t+1}(z_t | z_{t+1})`, each a network emitting
/// `(mu, log sigma^2)`.
///
/// `clamps = Some(..)` applies the same soft clips as the static VAE
/// encoder; `None` is the clamp-free (linear-exactness) mode. With
/// `shared = true` one step net serves every `t` (amortized); otherwise
/// `steps[t]` parameterizes step `t`, the paper-faithful mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardVariational {
    /// Input `d_x`, output `2 d_z`.
    pub terminal: MlpParams,
    /// Input `d_z`, output `2 d_z`; one entry if `shared`.
    pub steps: Vec<MlpParams>,
    pub shared: bool,
    pub clamps: Option<Clamps>,
}

impl BackwardVariational {
    pub fn new(
        terminal: MlpParams,
        steps: Vec<MlpParams>,
        shared: bool,
        clamps: Option<Clamps>,
    ) -> Result<Self> {
        if terminal.out_dim() % 2 != 0 {
            return Err(Error::dim("terminal output", terminal.out_dim() + 1, terminal.out_dim()));
        }
        let d_z = terminal.out_dim() / 2;
        if steps.is_empty() {
            return Err(Error::invalid("steps", "need at least one step net"));
        }
        if shared && steps.len() != 1 {
            return Err(Error::invalid("steps", "shared mode takes exactly one step net"));
        }
        for (i, s) in steps.iter().enumerate() {
            if s.in_dim() != d_z || s.out_dim() != 2 * d_z {
                return Err(Error::dim(format!("step net {i}"), 2 * d_z, s.out_dim()));
            }
        }
        if let Some(c) = &clamps {
            c.validate()?;
        }
        Ok(BackwardVariational { terminal, steps, shared, clamps })
    }

    /// Amortized family with randomly initialized nets.
    pub fn init(
        d_x: usize,
        d_z: usize,
        hidden: &[usize],
        act: crate::activations::Activation,
        t_len: usize,
        shared: bool,
        clamps: Option<Clamps>,
        norm_bound: Option<f64>,
        key: RngKey,
    ) -> Result<Self> {
        let build = |in_dim: usize, k: RngKey| -> Result<MlpParams> {
            let mut dims = vec![in_dim];
            dims.extend_from_slice(hidden);
            dims.push(2 * d_z);
            let mut acts = vec![act; dims.len() - 2];
            acts.push(crate::activations::Activation::Identity);
            MlpParams::init(&dims, acts, norm_bound, k)
        };
        let terminal = build(d_x, key.derive_tag("terminal"))?;
        let n_steps = if shared { 1 } else { t_len.max(1) };
        let steps = (0..n_steps)
            .map(|t| build(d_z, key.derive_tag("step").derive(t as u64)))
            .collect::<Result<Vec<_>>>()?;
        BackwardVariational::new(terminal, steps, shared, clamps)
    }

    pub fn d_z(&self) -> usize {
        self.terminal.out_dim() / 2
    }

    fn step_index(&self, t: usize) -> usize {
        if self.shared {
            0
        } else {
            t
        }
    }

    /// Evaluate a head net on `input`, applying the clamps if configured.
    fn head(&self, net: &MlpParams, input: &Vec64) -> Result<(GaussianHead, HeadTrace)> {
        let (raw, trace) = net.forward(input)?;
        let d_z = self.d_z();
        let mu_raw = raw.rows(0, d_z).into_owned();
        let lv_raw = raw.rows(d_z, d_z).into_owned();
        let head = match &self.clamps {
            Some(c) => GaussianHead {
                mu: c.mu_clip(d_z).act_vec(&mu_raw),
                logvar: c.logvar_clip().act_vec(&lv_raw),
            },
            None => GaussianHead {
                mu: mu_raw.clone(),
                logvar: lv_raw.clone(),
            },
        };
        Ok((head, HeadTrace { net: trace, mu_raw, lv_raw }))
    }

    /// Chain head-space gradients `(d/d mu, d/d logvar)` through the clamps
    /// into the raw-network upstream vector.
    fn head_upstream(&self, trace: &HeadTrace, g_mu: &Vec64, g_lv: &Vec64) -> Vec64 {
        let d_z = self.d_z();
        let (mu_d1, lv_d1) = match &self.clamps {
            Some(c) => (
                c.mu_clip(d_z).act_d1_vec(&trace.mu_raw),
                c.logvar_clip().act_d1_vec(&trace.lv_raw),
            ),
            None => (Vec64::from_element(d_z, 1.0), Vec64::from_element(d_z, 1.0)),
        };
        let mut up = Vec64::zeros(2 * d_z);
        for j in 0..d_z {
            up[j] = g_mu[j] * mu_d1[j];
            up[d_z + j] = g_lv[j] * lv_d1[j];
        }
        up
    }
}

struct HeadTrace {
    net: ForwardTrace,
    mu_raw: Vec64,
    lv_raw: Vec64,
}

/// One backward-sampled latent trajectory with everything needed for the
/// adjoint sweep.
struct SampledPath {
    /// `z_0 .. z_T`.
    z: Vec<Vec64>,
    /// Per-step noise (index `t` drives `z_t`).
    eps: Vec<Vec64>,
    heads: Vec<GaussianHead>,
    traces: Vec<HeadTrace>,
}

fn sample_backward(
    q: &BackwardVariational,
    x_last: &Vec64,
    t_len: usize,
    key: RngKey,
) -> Result<SampledPath> {
    let d_z = q.d_z();
    let mut z = vec![Vec64::zeros(0); t_len + 1];
    let mut eps = vec![Vec64::zeros(0); t_len + 1];
    let mut heads = Vec::with_capacity(t_len + 1);
    let mut traces = Vec::with_capacity(t_len + 1);
    heads.resize(t_len + 1, GaussianHead { mu: Vec64::zeros(0), logvar: Vec64::zeros(0) });

    // Per-step noise keys are `key.derive(0).derive(t)`, which makes the
    // T = 0 case draw the same noise as the static estimator run with the
    // same sample key.
    let ek = key.derive(0);
    let (head_t, trace_t) = q.head(&q.terminal, x_last)?;
    let e = gauss_sample(ek.derive(t_len as u64), d_z);
    z[t_len] = head_t.reparam(&e);
    eps[t_len] = e;
    heads[t_len] = head_t;
    traces.push(trace_t); // traces stored in sweep order: terminal first

    let mut step_traces: Vec<Option<HeadTrace>> = (0..t_len).map(|_| None).collect();
    for t in (0..t_len).rev() {
        let net = &q.steps[q.step_index(t)];
        let (head, trace) = q.head(net, &z[t + 1])?;
        let e = gauss_sample(ek.derive(t as u64), d_z);
        z[t] = head.reparam(&e);
        eps[t] = e;
        heads[t] = head;
        step_traces[t] = Some(trace);
    }
    let mut all = traces;
    all.extend(step_traces.into_iter().map(|t| t.unwrap()));
    // all = [terminal, step 0, step 1, ..., step T-1]
    Ok(SampledPath { z, eps, heads, traces: all })
}

impl SampledPath {
    fn terminal_trace(&self) -> &HeadTrace {
        &self.traces[0]
    }

    fn step_trace(&self, t: usize) -> &HeadTrace {
        &self.traces[1 + t]
    }
}

/// Monte Carlo sequential ELBO over `k` backward-sampled trajectories:
/// `E_q[log nu(z_0) + sum log m(z_{t+1}|z_t) + sum log g(x_t|z_t) - log q]`.
pub fn seq_elbo(s: &Ssm, q: &BackwardVariational, xs: &[Vec64], k: usize, key: RngKey) -> Result<f64> {
    check_seq(s, q, xs, k)?;
    let t_len = xs.len() - 1;
    let mut acc = 0.0;
    for l in 0..k {
        let path = sample_backward(q, &xs[t_len], t_len, key.derive_tag("mc").derive(l as u64))?;
        let mut val = Ssm::log_gauss(&path.z[0], s.tau_m2); // prior nu
        for t in 0..=t_len {
            let (g, _) = s.emission.forward(&path.z[t])?;
            val += Ssm::log_gauss(&(&xs[t] - g), s.tau_g2);
            if t < t_len {
                let (mz, _) = s.transition.forward(&path.z[t])?;
                val += Ssm::log_gauss(&(&path.z[t + 1] - mz), s.tau_m2);
            }
            val -= path.heads[t].log_q(&path.z[t]);
        }
        acc += val;
    }
    Ok(acc / k as f64)
}

/// Reparameterized gradient of the sequential ELBO with respect to all
/// model parameters (`theta`: transition then emission) and all variational
/// parameters (`phi`: terminal then step nets in `t` order).
pub fn seq_pathwise_grad(
    s: &Ssm,
    q: &BackwardVariational,
    xs: &[Vec64],
    k: usize,
    key: RngKey,
) -> Result<GradEstimate> {
    check_seq(s, q, xs, k)?;
    let t_len = xs.len() - 1;
    let d_theta = s.transition.n_params() + s.emission.n_params();
    let d_phi =
        q.terminal.n_params() + q.steps.iter().map(|n| n.n_params()).sum::<usize>();
    let mut terms = Vec::with_capacity(k);

    for l in 0..k {
        let path = sample_backward(q, &xs[t_len], t_len, key.derive_tag("mc").derive(l as u64))?;

        let mut g_trans = crate::mlp::MlpGrad::zeros_like(&s.transition);
        let mut g_emit = crate::mlp::MlpGrad::zeros_like(&s.emission);
        let mut g_term = crate::mlp::MlpGrad::zeros_like(&q.terminal);
        let mut g_steps: Vec<crate::mlp::MlpGrad> =
            q.steps.iter().map(crate::mlp::MlpGrad::zeros_like).collect();

        // Direct partials dF/dz_t (model terms only) plus theta grads.
        let mut direct = vec![Vec64::zeros(s.d_z()); t_len + 1];
        direct[0] -= &path.z[0] / s.tau_m2; // prior
        for t in 0..=t_len {
            let (g_out, tr) = s.emission.forward(&path.z[t])?;
            let up = (&xs[t] - &g_out) / s.tau_g2;
            g_emit.axpy(&s.emission.backprop_params(&tr, &up)?, 1.0);
            direct[t] += s.emission.backprop_input(&tr, &up)?;
            if t < t_len {
                let (mz, tr) = s.transition.forward(&path.z[t])?;
                let resid = (&path.z[t + 1] - &mz) / s.tau_m2;
                g_trans.axpy(&s.transition.backprop_params(&tr, &resid)?, 1.0);
                direct[t] += s.transition.backprop_input(&tr, &resid)?;
                direct[t + 1] -= &resid;
            }
        }

        // Adjoint sweep from t = 0 upward: z_t generates z_{t-1} through
        // step net t-1, so lambda_t collects the chained sensitivity of
        // everything below plus its own direct partial. The entropy term
        // -log q(z_{t-1}|z_t) contributes +1/2 per logvar coordinate.
        let mut lambda = direct[0].clone();
        for t in 1..=t_len {
            let head = &path.heads[t - 1];
            let sigma = head.sigma();
            let g_mu = lambda.clone();
            let g_lv = Vec64::from_iterator(
                s.d_z(),
                (0..s.d_z()).map(|j| 0.5 * (lambda[j] * path.eps[t - 1][j] * sigma[j] + 1.0)),
            );
            let trace = path.step_trace(t - 1);
            let up = q.head_upstream(trace, &g_mu, &g_lv);
            let net = &q.steps[q.step_index(t - 1)];
            g_steps[q.step_index(t - 1)].axpy(&net.backprop_params(&trace.net, &up)?, 1.0);
            lambda = &direct[t] + net.backprop_input(&trace.net, &up)?;
        }

        // Terminal head: phi_T gradient (input is the fixed x_T).
        {
            let head = &path.heads[t_len];
            let sigma = head.sigma();
            let g_mu = lambda.clone();
            let g_lv = Vec64::from_iterator(
                s.d_z(),
                (0..s.d_z()).map(|j| 0.5 * (lambda[j] * path.eps[t_len][j] * sigma[j] + 1.0)),
            );
            let trace = path.terminal_trace();
            let up = q.head_upstream(trace, &g_mu, &g_lv);
            g_term.axpy(&q.terminal.backprop_params(&trace.net, &up)?, 1.0);
        }

        let mut flat = Vec::with_capacity(d_theta + d_phi);
        g_trans.extend_flat(&mut flat);
        g_emit.extend_flat(&mut flat);
        g_term.extend_flat(&mut flat);
        for g in &g_steps {
            g.extend_flat(&mut flat);
        }
        terms.push(Vec64::from_vec(flat));
    }
    GradEstimate::from_terms(terms, d_theta, 1, k, EstimatorKind::Pathwise(crate::estimators::PathwiseMode::Sampled))
}

/// Flatten `(theta, phi)` of a sequential model/variational pair in the
/// gradient's canonical order.
pub fn seq_to_flat(s: &Ssm, q: &BackwardVariational) -> Vec64 {
    let mut flat = Vec::new();
    extend_flat_params(&s.transition, &mut flat);
    extend_flat_params(&s.emission, &mut flat);
    extend_flat_params(&q.terminal, &mut flat);
    for n in &q.steps {
        extend_flat_params(n, &mut flat);
    }
    Vec64::from_vec(flat)
}

/// Inverse of [`seq_to_flat`].
pub fn seq_assign_from_flat(s: &mut Ssm, q: &mut BackwardVariational, flat: &Vec64) -> Result<()> {
    let total = s.transition.n_params()
        + s.emission.n_params()
        + q.terminal.n_params()
        + q.steps.iter().map(|n| n.n_params()).sum::<usize>();
    if flat.len() != total {
        return Err(Error::dim("flat params", total, flat.len()));
    }
    let sl = flat.as_slice();
    let mut i = crate::mlp::assign_from_flat(&mut s.transition, sl);
    i += crate::mlp::assign_from_flat(&mut s.emission, &sl[i..]);
    i += crate::mlp::assign_from_flat(&mut q.terminal, &sl[i..]);
    for n in &mut q.steps {
        i += crate::mlp::assign_from_flat(n, &sl[i..]);
    }
    Ok(())
}

fn check_seq(s: &Ssm, q: &BackwardVariational, xs: &[Vec64], k: usize) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::invalid("xs", "need at least one observation"));
    }
    if k == 0 {
        return Err(Error::invalid("k", "K must be >= 1"));
    }
    if q.d_z() != s.d_z() {
        return Err(Error::dim("latent dim", s.d_z(), q.d_z()));
    }
    if q.terminal.in_dim() != s.d_x() || xs.iter().any(|x| x.len() != s.d_x()) {
        return Err(Error::dim("observation dim", s.d_x(), q.terminal.in_dim()));
    }
    if !q.shared && q.steps.len() < xs.len().saturating_sub(1) {
        return Err(Error::dim("step nets", xs.len() - 1, q.steps.len()));
    }
    Ok(())
}
