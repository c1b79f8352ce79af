//! Model families: the Linear Gaussian VAE with closed-form ELBO and exact
//! gradients, the clamped Deep Gaussian VAE, and the objective variants
//! (beta-ELBO, IWAE-K, BBVI).
//!
//! The deep model enforces its compactness clamps by construction: the
//! decoder mean passes through a per-coordinate soft clip so that
//! `||G(z)|| <= C_G`, the encoder mean through one so `||mu(x)|| <= C_mu`,
//! and the encoder log-variance through `SoftClip(log c_sigma, log C_sigma)`.

use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::error::Error;
use crate::estimators::{EstimatorKind, GradEstimate};
use crate::mlp::{ForwardTrace, MlpParams};
use crate::numerics::{log_mean_exp, spectral_norm, Mat64, RngKey, Vec64};
use crate::Result;

const LN_2PI: f64 = 1.8378770664093453;

/// Linear Gaussian VAE: `p(x|z) = N(W1 z + b1, c2 I)`, prior `N(0, I)`,
/// `q(z|x) = N(W2 x + b2, D)` with `D` diagonal.
///
/// `c2` is a fixed hyperparameter, not a learned parameter. `D` is floored
/// at `c_d` and optimized in log-space when flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearVae {
    pub w1: Mat64,
    pub b1: Vec64,
    pub c2: f64,
    pub w2: Mat64,
    pub b2: Vec64,
    /// Diagonal of the encoder covariance.
    pub d: Vec64,
    /// Floor on every entry of `d`.
    pub c_d: f64,
}

/// Closed-form per-block Lipschitz constants of the Linear-VAE gradient map
/// (each constant bounds the gradient variation when only that block moves).
#[derive(Debug, Clone, Serialize)]
pub struct LinearBlockSmoothness {
    pub w1: f64,
    pub b1: f64,
    pub w2: f64,
    pub b2: f64,
    pub d: f64,
}

impl LinearVae {
    pub fn new(w1: Mat64, b1: Vec64, c2: f64, w2: Mat64, b2: Vec64, d: Vec64, c_d: f64) -> Result<Self> {
        let (dx, dz) = (w1.nrows(), w1.ncols());
        if b1.len() != dx {
            return Err(Error::dim("b1", dx, b1.len()));
        }
        if w2.nrows() != dz || w2.ncols() != dx {
            return Err(Error::dim("w2 rows", dz, w2.nrows()));
        }
        if b2.len() != dz || d.len() != dz {
            return Err(Error::dim("b2/d", dz, b2.len().min(d.len())));
        }
        if !(c2 > 0.0) {
            return Err(Error::invalid("c2", "must be positive"));
        }
        if !(c_d > 0.0) {
            return Err(Error::invalid("c_d", "must be positive"));
        }
        let m = LinearVae { w1, b1, c2, w2, b2, d, c_d };
        m.check_d()?;
        Ok(m)
    }

    fn check_d(&self) -> Result<()> {
        if self.d.iter().any(|v| *v < self.c_d) {
            return Err(Error::InvariantViolation(format!(
                "encoder variance below floor c_d = {}",
                self.c_d
            )));
        }
        Ok(())
    }

    pub fn d_x(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_z(&self) -> usize {
        self.w1.ncols()
    }

    /// Encoder mean `m(x) = W2 x + b2`.
    pub fn enc_mean(&self, x: &Vec64) -> Vec64 {
        &self.w2 * x + &self.b2
    }

    /// `KL(q(.|x) || N(0,I))` in closed form:
    /// `1/2 (-sum log d_i + ||m||^2 + sum d_i - d_z)`.
    pub fn kl(&self, x: &Vec64) -> f64 {
        let m = self.enc_mean(x);
        0.5 * (-self.d.iter().map(|v| v.ln()).sum::<f64>()
            + m.norm_squared()
            + self.d.sum()
            - self.d_z() as f64)
    }

    /// Closed-form reconstruction term
    /// `E_q[log p(x|z)] = -(d_x/2) log(2 pi c2)
    ///  - (tr(W1 D W1^T) + ||W1 m + b1 - x||^2) / (2 c2)`.
    pub fn recon(&self, x: &Vec64) -> f64 {
        let m = self.enc_mean(x);
        let resid = &self.w1 * &m + &self.b1 - x;
        // tr(W1 D W1^T) = sum_j d_j ||col_j(W1)||^2
        let trace: f64 = (0..self.d_z())
            .map(|j| self.d[j] * self.w1.column(j).norm_squared())
            .sum();
        -0.5 * self.d_x() as f64 * (LN_2PI + self.c2.ln())
            - (trace + resid.norm_squared()) / (2.0 * self.c2)
    }

    /// Exact ELBO: reconstruction term minus KL, no sampling.
    pub fn elbo(&self, x: &Vec64) -> Result<f64> {
        if x.len() != self.d_x() {
            return Err(Error::dim("x", self.d_x(), x.len()));
        }
        Ok(self.recon(x) - self.kl(x))
    }

    /// Exact batch-mean ELBO gradient (ascent direction) with respect to
    /// `(W1, b1)` and `(W2, b2, D)`; no Monte Carlo.
    pub fn grad(&self, batch: &[Vec64]) -> Result<GradEstimate> {
        self.check_d()?;
        if batch.is_empty() {
            return Err(Error::invalid("batch", "must be non-empty"));
        }
        let c2 = self.c2;
        let mut per_sample = Vec::with_capacity(batch.len());
        for x in batch {
            if x.len() != self.d_x() {
                return Err(Error::dim("x", self.d_x(), x.len()));
            }
            let m = self.enc_mean(x);
            let xb = x - &self.b1;
            let w1m = &self.w1 * &m;
            let w1d = Mat64::from_columns(
                &(0..self.d_z())
                    .map(|j| self.w1.column(j) * self.d[j])
                    .collect::<Vec<_>>(),
            );
            let g_w1 = (&xb * m.transpose() - w1d - &w1m * m.transpose()) / c2;
            let g_b1 = (&xb - &w1m) / c2;
            // Shared encoder back-projection v = W1^T (x - b1 - W1 m)/c2 - m.
            let v = (self.w1.transpose() * (&xb - &w1m)) / c2 - &m;
            let g_w2 = &v * x.transpose();
            let g_b2 = v;
            let g_d = Vec64::from_iterator(
                self.d_z(),
                (0..self.d_z()).map(|j| {
                    0.5 * (1.0 / self.d[j] - 1.0 - self.w1.column(j).norm_squared() / c2)
                }),
            );
            // Log-space chain rule for the flattened D block.
            let g_logd = g_d.component_mul(&self.d);

            let mut term = Vec::with_capacity(self.n_params());
            term.extend(g_w1.iter());
            term.extend(g_b1.iter());
            term.push(0.0); // fixed-c2 slot
            term.extend(g_w2.iter());
            term.extend(g_b2.iter());
            term.extend(g_logd.iter());
            per_sample.push(Vec64::from_vec(term));
        }
        let d_theta = self.d_x() * self.d_z() + self.d_x() + 1;
        GradEstimate::from_terms(per_sample, d_theta, batch.len(), 1, EstimatorKind::LinearAnalytic)
    }

    /// Number of flattened parameters, including the fixed-`c2` slot.
    pub fn n_params(&self) -> usize {
        2 * self.d_x() * self.d_z() + self.d_x() + 1 + 2 * self.d_z()
    }

    /// Flatten in canonical order `[W1, b1, c2-slot, W2, b2, log D]`
    /// (matrices in column-major storage order).
    pub fn to_flat(&self) -> Vec64 {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.push(self.c2);
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out.extend(self.d.iter().map(|v| v.ln()));
        Vec64::from_vec(out)
    }

    /// Overwrite parameters from a flat vector in canonical order. The
    /// `c2` slot is ignored (`c2` is fixed); `D` entries are read in
    /// log-space and floored at `c_d`.
    pub fn assign_from_flat(&mut self, flat: &Vec64) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::dim("flat params", self.n_params(), flat.len()));
        }
        let mut i = 0;
        let mut take = |n: usize| {
            let s = flat.rows(i, n).into_owned();
            i += n;
            s
        };
        let w1 = take(self.d_x() * self.d_z());
        self.w1 = Mat64::from_column_slice(self.d_x(), self.d_z(), w1.as_slice());
        self.b1 = take(self.d_x());
        take(1); // fixed-c2 slot
        let w2 = take(self.d_z() * self.d_x());
        self.w2 = Mat64::from_column_slice(self.d_z(), self.d_x(), w2.as_slice());
        self.b2 = take(self.d_z());
        let c_d = self.c_d;
        self.d = take(self.d_z()).map(|v| v.exp().max(c_d));
        Ok(())
    }

    /// Closed-form per-block Lipschitz constants of the gradient, evaluated
    /// with the empirical second moments of `batch` and a lower bound
    /// `d_min` on the `D` entries over the audited region.
    pub fn block_smoothness(&self, batch: &[Vec64], d_min: f64) -> Result<LinearBlockSmoothness> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "must be non-empty"));
        }
        if !(d_min > 0.0) {
            return Err(Error::invalid("d_min", "must be positive"));
        }
        let n = batch.len() as f64;
        let dx = self.d_x();
        let dz = self.d_z();
        let mut exx = Mat64::zeros(dx, dx);
        let mut emm = Mat64::zeros(dz, dz);
        for x in batch {
            exx += x * x.transpose() / n;
            let m = self.enc_mean(x);
            emm += &m * m.transpose() / n;
        }
        let dmax = self.d.max();
        let w1tw1 = self.w1.transpose() * &self.w1 + Mat64::identity(dz, dz) * self.c2;
        let nw = spectral_norm(&w1tw1);
        Ok(LinearBlockSmoothness {
            w1: (dmax + spectral_norm(&emm)) / self.c2,
            b1: 1.0 / self.c2,
            w2: nw * spectral_norm(&exx) / self.c2,
            b2: nw / self.c2,
            d: 0.5 / (d_min * d_min),
        })
    }
}

/// Compactness clamps of the deep model's function classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamps {
    /// Encoder mean bound `||mu(x)|| <= c_mu`.
    pub c_mu: f64,
    /// Decoder mean bound `||G(z)|| <= c_g`.
    pub c_g: f64,
    /// Encoder variance range `c_sigma_min <= sigma_i^2 <= c_sigma_max`.
    pub c_sigma_min: f64,
    pub c_sigma_max: f64,
    /// Soft-clip sharpness.
    pub s: f64,
}

impl Default for Clamps {
    fn default() -> Self {
        Clamps {
            c_mu: 10.0,
            c_g: 10.0,
            c_sigma_min: 1e-3,
            c_sigma_max: 10.0,
            s: 5.0,
        }
    }
}

impl Clamps {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_mu > 0.0 && self.c_g > 0.0 && self.s > 0.0) {
            return Err(Error::invalid("clamps", "c_mu, c_g, s must be positive"));
        }
        if !(self.c_sigma_min > 0.0 && self.c_sigma_min < self.c_sigma_max) {
            return Err(Error::invalid("clamps", "need 0 < c_sigma_min < c_sigma_max"));
        }
        Ok(())
    }

    /// Soft clip applied per coordinate of the encoder mean.
    pub fn mu_clip(&self, d_z: usize) -> Activation {
        let r = self.c_mu / (d_z as f64).sqrt();
        Activation::SoftClip { s1: -r, s2: r, s: self.s }
    }

    /// Soft clip applied per coordinate of the decoder mean.
    pub fn g_clip(&self, d_x: usize) -> Activation {
        let r = self.c_g / (d_x as f64).sqrt();
        Activation::SoftClip { s1: -r, s2: r, s: self.s }
    }

    /// Soft clip applied to the encoder log-variance.
    pub fn logvar_clip(&self) -> Activation {
        Activation::SoftClip {
            s1: self.c_sigma_min.ln(),
            s2: self.c_sigma_max.ln(),
            s: self.s,
        }
    }
}

/// Encoder output: clamped mean and log-variance of the diagonal Gaussian
/// `q(z|x) = N(mu, diag(exp(logvar)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mu: Vec64,
    pub logvar: Vec64,
}

impl GaussianHead {
    pub fn sigma(&self) -> Vec64 {
        self.logvar.map(|v| (0.5 * v).exp())
    }

    /// `z = mu + sigma (.) eps`.
    pub fn reparam(&self, eps: &Vec64) -> Vec64 {
        &self.mu + self.sigma().component_mul(eps)
    }

    /// `KL(N(mu, diag sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - logvar - 1)`.
    pub fn kl(&self) -> f64 {
        self.mu
            .iter()
            .zip(self.logvar.iter())
            .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
            .sum()
    }

    /// `log q(z | x)` for this head.
    pub fn log_q(&self, z: &Vec64) -> f64 {
        self.mu
            .iter()
            .zip(self.logvar.iter())
            .zip(z.iter())
            .map(|((m, lv), zi)| -0.5 * (LN_2PI + lv + (zi - m) * (zi - m) / lv.exp()))
            .sum()
    }
}

/// Trace of one encoder evaluation: the raw network trace plus the
/// pre-clip head outputs needed to backpropagate through the clips.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub net: ForwardTrace,
    /// Raw (pre-clip) mean head output.
    pub mu_raw: Vec64,
    /// Raw (pre-clip) log-variance head output.
    pub logvar_raw: Vec64,
}

/// Deep Gaussian VAE: decoder `p(x|z) = N(G(z), c2 I)` with a soft-clipped
/// mean, standard-normal prior, and a clamped diagonal-Gaussian encoder.
///
/// The encoder network ends in an identity layer emitting `2 d_z` values;
/// the model splits them into mean and log-variance heads and applies the
/// clamp activations on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepGaussianVae {
    pub decoder: MlpParams,
    pub c2: f64,
    pub encoder: MlpParams,
    pub clamps: Clamps,
}

impl DeepGaussianVae {
    pub fn new(decoder: MlpParams, encoder: MlpParams, c2: f64, clamps: Clamps) -> Result<Self> {
        clamps.validate()?;
        if !(c2 > 0.0) {
            return Err(Error::invalid("c2", "must be positive"));
        }
        let d_z = decoder.in_dim();
        if encoder.out_dim() != 2 * d_z {
            return Err(Error::dim("encoder output", 2 * d_z, encoder.out_dim()));
        }
        if encoder.in_dim() != decoder.out_dim() {
            return Err(Error::dim("encoder input", decoder.out_dim(), encoder.in_dim()));
        }
        Ok(DeepGaussianVae { decoder, c2, encoder, clamps })
    }

    /// Build a fresh model: hidden activations `act`, soft-clipped decoder
    /// mean, identity encoder output layer, random initialization.
    pub fn init(
        d_x: usize,
        d_z: usize,
        hidden: &[usize],
        act: Activation,
        c2: f64,
        clamps: Clamps,
        norm_bound: Option<f64>,
        key: RngKey,
    ) -> Result<Self> {
        let mut dec_dims = vec![d_z];
        dec_dims.extend_from_slice(hidden);
        dec_dims.push(d_x);
        let mut dec_acts = vec![act; dec_dims.len() - 2];
        dec_acts.push(clamps.g_clip(d_x));
        let decoder = MlpParams::init(&dec_dims, dec_acts, norm_bound, key.derive_tag("dec"))?;

        let mut enc_dims = vec![d_x];
        enc_dims.extend_from_slice(hidden);
        enc_dims.push(2 * d_z);
        let mut enc_acts = vec![act; enc_dims.len() - 2];
        enc_acts.push(Activation::Identity);
        let encoder = MlpParams::init(&enc_dims, enc_acts, norm_bound, key.derive_tag("enc"))?;

        DeepGaussianVae::new(decoder, encoder, c2, clamps)
    }

    pub fn d_x(&self) -> usize {
        self.decoder.out_dim()
    }

    pub fn d_z(&self) -> usize {
        self.decoder.in_dim()
    }

    /// Clamped encoder pass.
    pub fn encode(&self, x: &Vec64) -> Result<(GaussianHead, EncodeTrace)> {
        let (raw, net) = self.encoder.forward(x)?;
        let d_z = self.d_z();
        let mu_raw = raw.rows(0, d_z).into_owned();
        let logvar_raw = raw.rows(d_z, d_z).into_owned();
        let head = GaussianHead {
            mu: self.clamps.mu_clip(d_z).act_vec(&mu_raw),
            logvar: self.clamps.logvar_clip().act_vec(&logvar_raw),
        };
        Ok((head, EncodeTrace { net, mu_raw, logvar_raw }))
    }

    /// Decoder mean `G(z)` with trace.
    pub fn decode(&self, z: &Vec64) -> Result<(Vec64, ForwardTrace)> {
        self.decoder.forward(z)
    }

    /// `log p(x | z) = -(d_x/2) log(2 pi c2) - ||x - G(z)||^2 / (2 c2)`.
    pub fn log_px_given_z(&self, x: &Vec64, g: &Vec64) -> f64 {
        -0.5 * self.d_x() as f64 * (LN_2PI + self.c2.ln()) - (x - g).norm_squared() / (2.0 * self.c2)
    }

    /// `log p(x, z)` under the standard-normal prior.
    pub fn log_joint(&self, x: &Vec64, z: &Vec64) -> Result<f64> {
        let (g, _) = self.decode(z)?;
        let log_prior = -0.5 * self.d_z() as f64 * LN_2PI - 0.5 * z.norm_squared();
        Ok(log_prior + self.log_px_given_z(x, &g))
    }

    /// `log q(z | x)`.
    pub fn log_q(&self, x: &Vec64, z: &Vec64) -> Result<f64> {
        let (head, _) = self.encode(x)?;
        Ok(head.log_q(z))
    }

    /// Envelope bound `alpha(x, z) >= max(|log p(x,z)|, |log q(z|x)|)`,
    /// computed from the clamps alone.
    pub fn density_bound_alpha(&self, x: &Vec64, z: &Vec64) -> f64 {
        let d_z = self.d_z() as f64;
        let d_x = self.d_x() as f64;
        let c = &self.clamps;
        let lq = 0.5
            * d_z
            * (LN_2PI + c.c_sigma_min.ln()).abs().max((LN_2PI + c.c_sigma_max.ln()).abs())
            + (z.norm_squared() + c.c_mu * c.c_mu) / c.c_sigma_min;
        let lp = 0.5 * d_z * LN_2PI
            + 0.5 * z.norm_squared()
            + 0.5 * d_x * (LN_2PI + self.c2.ln()).abs()
            + (x.norm_squared() + c.c_g * c.c_g) / self.c2;
        lq.max(lp)
    }

    /// ELBO with Monte Carlo reconstruction over the supplied noise draws
    /// and closed-form KL; `beta` scales the KL term.
    pub fn beta_elbo(&self, x: &Vec64, eps: &[Vec64], beta: f64) -> Result<f64> {
        if eps.is_empty() {
            return Err(Error::invalid("eps", "need at least one noise draw"));
        }
        let (head, _) = self.encode(x)?;
        let mut recon = 0.0;
        for e in eps {
            if e.len() != self.d_z() {
                return Err(Error::dim("eps", self.d_z(), e.len()));
            }
            let z = head.reparam(e);
            let (g, _) = self.decode(&z)?;
            recon += self.log_px_given_z(x, &g);
        }
        Ok(recon / eps.len() as f64 - beta * head.kl())
    }

    /// Standard ELBO (`beta = 1`).
    pub fn elbo(&self, x: &Vec64, eps: &[Vec64]) -> Result<f64> {
        self.beta_elbo(x, eps, 1.0)
    }

    /// IWAE objective: stable log-mean-exp of the K log-weights
    /// `log w = log p(x, z) - log q(z | x)` with `z = mu + sigma (.) eps`.
    pub fn iwae_objective(&self, x: &Vec64, eps: &[Vec64]) -> Result<f64> {
        if eps.is_empty() {
            return Err(Error::invalid("eps", "K must be >= 1"));
        }
        let (head, _) = self.encode(x)?;
        let mut logw = Vec::with_capacity(eps.len());
        for e in eps {
            let z = head.reparam(e);
            logw.push(self.log_joint(x, &z)? - head.log_q(&z));
        }
        log_mean_exp(&logw)
    }

    /// Flattened decoder-side (`theta`) length, including the fixed-`c2` slot.
    pub fn n_theta(&self) -> usize {
        self.decoder.n_params() + 1
    }

    /// Flattened encoder-side (`phi`) length.
    pub fn n_phi(&self) -> usize {
        self.encoder.n_params()
    }

    /// Flatten all parameters in canonical order: decoder layers, the
    /// fixed-`c2` slot, then encoder layers.
    pub fn to_flat(&self) -> Vec64 {
        let mut out = Vec::with_capacity(self.n_theta() + self.n_phi());
        crate::mlp::extend_flat_params(&self.decoder, &mut out);
        out.push(self.c2);
        crate::mlp::extend_flat_params(&self.encoder, &mut out);
        Vec64::from_vec(out)
    }

    /// Overwrite parameters from a flat vector in canonical order; the
    /// `c2` slot is ignored (`c2` is fixed).
    pub fn assign_from_flat(&mut self, flat: &Vec64) -> Result<()> {
        let total = self.n_theta() + self.n_phi();
        if flat.len() != total {
            return Err(Error::dim("flat params", total, flat.len()));
        }
        let used = crate::mlp::assign_from_flat(&mut self.decoder, flat.as_slice());
        crate::mlp::assign_from_flat(&mut self.encoder, &flat.as_slice()[used + 1..]);
        Ok(())
    }

    /// Project both networks onto their norm balls (identity when no bound
    /// is configured).
    pub fn project_norm(&self) -> DeepGaussianVae {
        DeepGaussianVae {
            decoder: self.decoder.project_norm(),
            encoder: self.encoder.project_norm(),
            c2: self.c2,
            clamps: self.clamps,
        }
    }

    /// Evaluate an objective at `x` on the given noise draws.
    pub fn objective_value(&self, obj: &Objective, x: &Vec64, eps: &[Vec64]) -> Result<f64> {
        match obj {
            Objective::Elbo => self.elbo(x, eps),
            Objective::BetaElbo(beta) => self.beta_elbo(x, eps, *beta),
            Objective::Iwae(k) => {
                if eps.len() != *k {
                    return Err(Error::dim("IWAE noise draws", *k, eps.len()));
                }
                self.iwae_objective(x, eps)
            }
            // BBVI maximizes the same lower bound, with theta frozen.
            Objective::Bbvi => self.elbo(x, eps),
        }
    }
}

/// Objective variants. `Bbvi` freezes the decoder and treats `log p(x, z)`
/// as a fixed target density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    Elbo,
    BetaElbo(f64),
    Iwae(usize),
    Bbvi,
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        match self {
            Objective::BetaElbo(b) if !(*b > 0.0) => Err(Error::invalid("beta", "must be positive")),
            Objective::Iwae(0) => Err(Error::invalid("k", "K must be >= 1")),
            _ => Ok(()),
        }
    }

    /// Number of latent draws per data point.
    pub fn k(&self) -> usize {
        match self {
            Objective::Iwae(k) => *k,
            _ => 1,
        }
    }
}

/// Built-in fixed target densities for BBVI experiments, with analytic
/// log-density and z-gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BbviTarget {
    /// `N(mu, diag(var))`.
    Gaussian { mu: Vec<f64>, var: Vec<f64> },
    /// Equal-weight mixture of isotropic Gaussians.
    GaussianMixture { means: Vec<Vec<f64>>, var: f64 },
    /// 2-D banana: `z2 | z1 ~ N(b z1^2, 1)`, `z1 ~ N(0, s1^2)`.
    Banana { b: f64, s1: f64 },
}

impl BbviTarget {
    pub fn log_density(&self, z: &Vec64) -> f64 {
        match self {
            BbviTarget::Gaussian { mu, var } => mu
                .iter()
                .zip(var)
                .zip(z.iter())
                .map(|((m, v), zi)| -0.5 * (LN_2PI + v.ln() + (zi - m) * (zi - m) / v))
                .sum(),
            BbviTarget::GaussianMixture { means, var } => {
                let comps: Vec<f64> = means
                    .iter()
                    .map(|m| {
                        let q: f64 = m
                            .iter()
                            .zip(z.iter())
                            .map(|(mi, zi)| (zi - mi) * (zi - mi))
                            .sum();
                        -0.5 * z.len() as f64 * (LN_2PI + var.ln()) - 0.5 * q / var
                    })
                    .collect();
                log_mean_exp(&comps).expect("mixture components are finite")
            }
            BbviTarget::Banana { b, s1 } => {
                let (z1, z2) = (z[0], z[1]);
                let r = z2 - b * z1 * z1;
                -0.5 * (LN_2PI + (s1 * s1).ln() + z1 * z1 / (s1 * s1)) - 0.5 * (LN_2PI + r * r)
            }
        }
    }

    pub fn grad_z(&self, z: &Vec64) -> Vec64 {
        match self {
            BbviTarget::Gaussian { mu, var } => Vec64::from_iterator(
                z.len(),
                mu.iter().zip(var).zip(z.iter()).map(|((m, v), zi)| (m - zi) / v),
            ),
            BbviTarget::GaussianMixture { means, var } => {
                // Responsibility-weighted component gradients.
                let lps: Vec<f64> = means
                    .iter()
                    .map(|m| {
                        let q: f64 = m
                            .iter()
                            .zip(z.iter())
                            .map(|(mi, zi)| (zi - mi) * (zi - mi))
                            .sum();
                        -0.5 * q / var
                    })
                    .collect();
                let mx = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ws: Vec<f64> = lps.iter().map(|l| (l - mx).exp()).collect();
                let wsum: f64 = ws.iter().sum();
                let mut g = Vec64::zeros(z.len());
                for (m, w) in means.iter().zip(&ws) {
                    let dir = Vec64::from_iterator(z.len(), m.iter().zip(z.iter()).map(|(mi, zi)| (mi - zi) / var));
                    g += dir * (w / wsum);
                }
                g
            }
            BbviTarget::Banana { b, s1 } => {
                let (z1, z2) = (z[0], z[1]);
                let r = z2 - b * z1 * z1;
                Vec64::from_vec(vec![-z1 / (s1 * s1) + 2.0 * b * z1 * r, -r])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, gauss_sample};
    use approx::assert_relative_eq;

    fn toy_linear(seed: u64, dx: usize, dz: usize) -> LinearVae {
        let key = RngKey::new(seed);
        let w1 = Mat64::from_iterator(dx, dz, gauss_sample(key.derive(1), dx * dz).iter().cloned());
        let w2 = Mat64::from_iterator(dz, dx, gauss_sample(key.derive(2), dz * dx).iter().cloned());
        let b1 = gauss_sample(key.derive(3), dx);
        let b2 = gauss_sample(key.derive(4), dz);
        let d = gauss_sample(key.derive(5), dz).map(|v| v.abs() + 0.3);
        LinearVae::new(w1, b1, 0.7, w2, b2, d, 1e-4).unwrap()
    }

    fn toy_deep(seed: u64) -> DeepGaussianVae {
        let mut clamps = Clamps::default();
        clamps.c_sigma_min = 0.05;
        clamps.c_sigma_max = 4.0;
        DeepGaussianVae::init(
            4,
            2,
            &[6],
            Activation::Tanh,
            0.8,
            clamps,
            Some(2.0),
            RngKey::new(seed),
        )
        .unwrap()
    }

    #[test]
    fn linear_kl_zero_at_prior() {
        let mut m = toy_linear(1, 3, 2);
        m.w2 = Mat64::zeros(2, 3);
        m.b2 = Vec64::zeros(2);
        m.d = Vec64::from_element(2, 1.0);
        assert_relative_eq!(m.kl(&Vec64::zeros(3)), 0.0);
    }

    #[test]
    fn linear_recon_scalar_case() {
        // d = 1, c2 = 1, W1 = W2 = 1, b = 0, D = 0.5, x = 1:
        // m = 1, resid = 0, tr = 0.5 -> recon = -0.25 - 0.5 log 2 pi.
        let m = LinearVae::new(
            Mat64::from_element(1, 1, 1.0),
            Vec64::zeros(1),
            1.0,
            Mat64::from_element(1, 1, 1.0),
            Vec64::zeros(1),
            Vec64::from_element(1, 0.5),
            1e-4,
        )
        .unwrap();
        let x = Vec64::from_element(1, 1.0);
        assert_relative_eq!(m.recon(&x), -0.25 - 0.5 * LN_2PI, max_relative = 1e-12);
        assert!((m.recon(&x) - (-1.16894)).abs() < 1e-5);
    }

    #[test]
    fn linear_kl_plug_in() {
        // mean (1, 0), D = diag(2, 2): KL = (3 - log 4) / 2.
        let mut m = toy_linear(2, 2, 2);
        m.w2 = Mat64::zeros(2, 2);
        m.b2 = Vec64::from_vec(vec![1.0, 0.0]);
        m.d = Vec64::from_element(2, 2.0);
        assert_relative_eq!(
            m.kl(&Vec64::zeros(2)),
            0.5 * (3.0 - 4.0_f64.ln()),
            max_relative = 1e-12
        );
    }

    #[test]
    fn linear_kl_matches_monte_carlo() {
        // Closed form vs E_q[log q - log p(z)] at 1e5 samples, 3 SE.
        let m = toy_linear(3, 3, 2);
        let x = gauss_sample(RngKey::new(9), 3);
        let mean = m.enc_mean(&x);
        let n = 100_000;
        let draws = gauss_sample(RngKey::new(10), n * 2);
        let (mut acc, mut acc2) = (0.0, 0.0);
        for i in 0..n {
            let e = Vec64::from_vec(vec![draws[2 * i], draws[2 * i + 1]]);
            let z = &mean + m.d.map(|v| v.sqrt()).component_mul(&e);
            let log_q: f64 = (0..2)
                .map(|j| -0.5 * (LN_2PI + m.d[j].ln() + (z[j] - mean[j]).powi(2) / m.d[j]))
                .sum();
            let log_p = -0.5 * 2.0 * LN_2PI - 0.5 * z.norm_squared();
            let v = log_q - log_p;
            acc += v;
            acc2 += v * v;
        }
        let mc = acc / n as f64;
        let se = ((acc2 / n as f64 - mc * mc) / n as f64).sqrt();
        assert!((m.kl(&x) - mc).abs() < 3.0 * se, "kl {} mc {} se {}", m.kl(&x), mc, se);
    }

    #[test]
    fn linear_grad_b1_root_and_d_root() {
        let mut m = toy_linear(4, 3, 2);
        let batch: Vec<Vec64> = (0..8).map(|i| gauss_sample(RngKey::new(40 + i), 3)).collect();
        // b1 root: b1 = xbar - W1 (W2 xbar + b2).
        let xbar = batch.iter().sum::<Vec64>() / batch.len() as f64;
        m.b1 = &xbar - &m.w1 * (&m.w2 * &xbar + &m.b2);
        // D root: d_j = 1 / (1 + ||col_j W1||^2 / c2).
        for j in 0..2 {
            m.d[j] = 1.0 / (1.0 + m.w1.column(j).norm_squared() / m.c2);
        }
        let g = m.grad(&batch).unwrap();
        let dx = m.d_x();
        let dz = m.d_z();
        let b1_block = g.flat_theta.rows(dx * dz, dx);
        assert!(b1_block.norm() < 1e-12);
        let d_block = g.flat_phi.rows(dz * dx + dz, dz);
        assert!(d_block.norm() < 1e-12);
    }

    #[test]
    fn linear_grad_matches_finite_differences() {
        for seed in 0..100 {
            let m = toy_linear(100 + seed, 3, 2);
            let batch: Vec<Vec64> =
                (0..4).map(|i| gauss_sample(RngKey::new(seed * 10 + i), 3)).collect();
            let g = m.grad(&batch).unwrap();
            let mut flat_g = Vec::new();
            flat_g.extend(g.flat_theta.iter());
            flat_g.extend(g.flat_phi.iter());
            let fd = finite_diff_grad(
                |v| {
                    let mut mm = m.clone();
                    mm.assign_from_flat(v).unwrap();
                    batch.iter().map(|x| mm.elbo(x).unwrap()).sum::<f64>() / batch.len() as f64
                },
                &m.to_flat(),
                Some(1e-6),
            )
            .unwrap();
            let gv = Vec64::from_vec(flat_g);
            let rel = (&gv - &fd).norm() / fd.norm().max(1e-12);
            assert!(rel < 1e-6, "seed {seed}: rel {rel}");
        }
    }

    #[test]
    fn linear_grad_rejects_floored_d_breach() {
        let mut m = toy_linear(5, 2, 2);
        m.d[0] = 1e-6; // below c_d = 1e-4
        assert!(matches!(
            m.grad(&[Vec64::zeros(2)]).unwrap_err(),
            Error::InvariantViolation(_)
        ));
    }

    #[test]
    fn linear_elbo_latent_permutation_invariant() {
        let m = toy_linear(6, 3, 2);
        let mut p = m.clone();
        // Swap the two latent dimensions jointly.
        p.w1 = Mat64::from_columns(&[m.w1.column(1).clone_owned(), m.w1.column(0).clone_owned()]);
        p.w2 = Mat64::from_rows(&[m.w2.row(1).clone_owned(), m.w2.row(0).clone_owned()]);
        p.d = Vec64::from_vec(vec![m.d[1], m.d[0]]);
        p.b2 = Vec64::from_vec(vec![m.b2[1], m.b2[0]]);
        let x = gauss_sample(RngKey::new(60), 3);
        assert_relative_eq!(m.elbo(&x).unwrap(), p.elbo(&x).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn linear_flat_roundtrip() {
        let m = toy_linear(7, 3, 2);
        let mut m2 = toy_linear(8, 3, 2);
        m2.assign_from_flat(&m.to_flat()).unwrap();
        assert_relative_eq!(m2.w1, m.w1);
        assert_relative_eq!(m2.b2, m.b2);
        assert!((0..2).all(|j| (m2.d[j] - m.d[j]).abs() < 1e-12));
        // c2 is fixed: its slot is ignored on assignment.
        assert_eq!(m2.c2, 0.7);
    }

    #[test]
    fn deep_kl_zero_at_prior() {
        let head = GaussianHead {
            mu: Vec64::zeros(3),
            logvar: Vec64::zeros(3),
        };
        assert_relative_eq!(head.kl(), 0.0);
    }

    #[test]
    fn deep_elbo_with_perfect_reconstruction() {
        // G(z) = x exactly: objective = -(d_x/2) log 2 pi c2 - KL.
        let m = toy_deep(1);
        let x = gauss_sample(RngKey::new(2), 4);
        let (head, _) = m.encode(&x).unwrap();
        let eps = vec![gauss_sample(RngKey::new(3), 2)];
        let z = head.reparam(&eps[0]);
        let (g, _) = m.decode(&z).unwrap();
        // Recompute the ELBO identity manually with G forced to x.
        let expect = -0.5 * 4.0 * (LN_2PI + m.c2.ln()) - head.kl();
        let actual = m.elbo(&x, &eps).unwrap() + (&x - &g).norm_squared() / (2.0 * m.c2);
        assert_relative_eq!(actual, expect, max_relative = 1e-10);
    }

    #[test]
    fn deep_elbo_matches_straight_line_monte_carlo() {
        // ELBO (analytic KL) vs E_q[log p(x,z) - log q(z|x)] at 1e5 samples.
        let m = toy_deep(4);
        let x = gauss_sample(RngKey::new(5), 4);
        let (head, _) = m.encode(&x).unwrap();
        let n = 100_000;
        // Large-eps analytic-KL ELBO (recon term converges by LLN too).
        let key = RngKey::new(6);
        let (mut acc, mut acc2) = (0.0, 0.0);
        let mut recon = 0.0;
        for i in 0..n {
            let e = gauss_sample(key.derive(i as u64), 2);
            let z = head.reparam(&e);
            let lj = m.log_joint(&x, &z).unwrap();
            let v = lj - head.log_q(&z);
            acc += v;
            acc2 += v * v;
            let (g, _) = m.decode(&z).unwrap();
            recon += m.log_px_given_z(&x, &g);
        }
        let mc = acc / n as f64;
        let se = ((acc2 / n as f64 - mc * mc) / n as f64).sqrt();
        let analytic = recon / n as f64 - head.kl();
        assert!((analytic - mc).abs() < 3.0 * se, "{analytic} vs {mc} (se {se})");
    }

    #[test]
    fn iwae_k1_equals_single_sample_elbo_term() {
        let m = toy_deep(7);
        let x = gauss_sample(RngKey::new(8), 4);
        let eps = vec![gauss_sample(RngKey::new(9), 2)];
        let (head, _) = m.encode(&x).unwrap();
        let z = head.reparam(&eps[0]);
        let expect = m.log_joint(&x, &z).unwrap() - head.log_q(&z);
        assert_relative_eq!(m.iwae_objective(&x, &eps).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn iwae_equal_weights_is_common_value() {
        // All K noise draws identical -> identical log-weights.
        let m = toy_deep(10);
        let x = gauss_sample(RngKey::new(11), 4);
        let e = gauss_sample(RngKey::new(12), 2);
        let eps = vec![e.clone(), e.clone(), e];
        let single = m.iwae_objective(&x, &eps[..1].to_vec()).unwrap();
        assert_relative_eq!(m.iwae_objective(&x, &eps).unwrap(), single, max_relative = 1e-12);
    }

    #[test]
    fn iwae_nondecreasing_in_k() {
        // Paired Monte Carlo: shared noise prefixes, 2000 reps.
        let m = toy_deep(13);
        let x = gauss_sample(RngKey::new(14), 4);
        let key = RngKey::new(15);
        let ks = [1usize, 2, 5, 10];
        let reps = 2000;
        let mut means = [0.0; 4];
        for r in 0..reps {
            let pool: Vec<Vec64> = (0..10)
                .map(|l| gauss_sample(key.derive((r * 10 + l) as u64), 2))
                .collect();
            for (ki, &k) in ks.iter().enumerate() {
                means[ki] += m.iwae_objective(&x, &pool[..k].to_vec()).unwrap() / reps as f64;
            }
        }
        for w in means.windows(2) {
            assert!(w[1] >= w[0] - 1e-3, "IWAE means not monotone: {means:?}");
        }
    }

    #[test]
    fn clamp_invariants_hold_by_construction() {
        let m = toy_deep(16);
        let key = RngKey::new(17);
        for i in 0..2000 {
            let x = gauss_sample(key.derive(i), 4) * 10.0;
            let (head, _) = m.encode(&x).unwrap();
            assert!(head.mu.norm() <= m.clamps.c_mu + 1e-9);
            for lv in head.logvar.iter() {
                assert!(*lv >= m.clamps.c_sigma_min.ln() - 1e-9);
                assert!(*lv <= m.clamps.c_sigma_max.ln() + 1e-9);
            }
            let z = gauss_sample(key.derive(10_000 + i), 2) * 10.0;
            let (g, _) = m.decode(&z).unwrap();
            assert!(g.norm() <= m.clamps.c_g + 1e-9);
        }
    }

    #[test]
    fn alpha_dominates_log_densities() {
        let m = toy_deep(18);
        let key = RngKey::new(19);
        for i in 0..10_000 {
            let x = gauss_sample(key.derive(2 * i), 4) * 3.0;
            let z = gauss_sample(key.derive(2 * i + 1), 2) * 3.0;
            let a = m.density_bound_alpha(&x, &z);
            assert!(m.log_joint(&x, &z).unwrap().abs() <= a);
            assert!(m.log_q(&x, &z).unwrap().abs() <= a);
        }
    }

    #[test]
    fn prior_and_q_log_density_plug_ins() {
        // log N(0; 0, I_2) = -log 2 pi.
        let m = toy_deep(20);
        let z0 = Vec64::zeros(2);
        let lp = -0.5 * 2.0 * LN_2PI;
        let (g, _) = m.decode(&z0).unwrap();
        assert_relative_eq!(
            m.log_joint(&Vec64::zeros(4), &z0).unwrap() - m.log_px_given_z(&Vec64::zeros(4), &g),
            lp,
            max_relative = 1e-12
        );
        // q at its own mean: log q = -1/2 log det(2 pi Sigma).
        let x = gauss_sample(RngKey::new(21), 4);
        let (head, _) = m.encode(&x).unwrap();
        let expect = -0.5 * head.logvar.iter().map(|lv| LN_2PI + lv).sum::<f64>();
        assert_relative_eq!(head.log_q(&head.mu.clone()), expect, max_relative = 1e-12);
    }

    #[test]
    fn checkpoint_json_roundtrip() {
        let m = toy_deep(22);
        let s = serde_json::to_string(&m).unwrap();
        let m2: DeepGaussianVae = serde_json::from_str(&s).unwrap();
        assert_eq!(m2, m);
        let lin = toy_linear(23, 3, 2);
        let s = serde_json::to_string(&lin).unwrap();
        let lin2: LinearVae = serde_json::from_str(&s).unwrap();
        assert_eq!(lin2, lin);
    }

    #[test]
    fn bbvi_targets_gradients_match_finite_differences() {
        let targets = [
            BbviTarget::Gaussian {
                mu: vec![1.0, -0.5],
                var: vec![0.5, 2.0],
            },
            BbviTarget::GaussianMixture {
                means: vec![vec![1.0, 1.0], vec![-1.0, 0.5]],
                var: 0.7,
            },
            BbviTarget::Banana { b: 0.5, s1: 2.0 },
        ];
        for t in &targets {
            for seed in 0..20 {
                let z = gauss_sample(RngKey::new(500 + seed), 2);
                let g = t.grad_z(&z);
                let fd = finite_diff_grad(|v| t.log_density(v), &z, None).unwrap();
                assert!((&g - &fd).norm() / fd.norm().max(1.0) < 1e-6, "{t:?} seed {seed}");
            }
        }
    }

    #[test]
    fn objective_validation() {
        assert!(Objective::BetaElbo(0.0).validate().is_err());
        assert!(Objective::Iwae(0).validate().is_err());
        assert!(Objective::Iwae(5).validate().is_ok());
        assert_eq!(Objective::Iwae(5).k(), 5);
        assert_eq!(Objective::Elbo.k(), 1);
    }
}
