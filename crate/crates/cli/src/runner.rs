//! Training-run orchestration: builds the model, data, and optimizer from a
//! `RunConfig`, executes the iteration loop with periodic diagnostics, and
//! emits `records.csv`, `summary.json`, and `params.json`. Also implements
//! the sweep recipes (beta / K / activation / B-K grids over seeds).

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use vaekit::bounds::{compute_bounds, SmoothnessReport};
use vaekit::data::Dataset;
use vaekit::diagnostics::{estimator_variance, fit_rate, DiagnosticsRecord, RateFit};
use vaekit::estimators::{
    iwae_grad, pathwise_grad_with, score_grad, snr_measure, GradEstimate, PathwiseMode,
};
use vaekit::models::{DeepGaussianVae, LinearVae, Objective};
use vaekit::numerics::gauss_sample;
use vaekit::seqvae::{
    seq_assign_from_flat, seq_elbo, seq_pathwise_grad, seq_to_flat, BackwardVariational, Ssm,
};
use vaekit::{EstimatorKind, Mat64, OptimState, RngKey, Vec64};

use crate::config::{
    ActName, EstimatorConfig, Family, ObjectiveKind, OptimKindConfig, RunConfig, SourceConfig,
};

/// A run that could not start or could not write its outputs.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Core(#[from] vaekit::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Why a training loop stopped before its final iteration.
#[derive(Debug, Clone, Serialize)]
pub struct AbortInfo {
    pub last_good_iter: usize,
    pub reason: String,
}

/// Both fitted decay models plus which one explains the data better.
#[derive(Debug, Clone, Serialize)]
pub struct RateFitSummary {
    pub power: RateFit,
    pub paper: RateFit,
    /// `"power"` or `"log_over_sqrt"`, whichever has the higher R^2.
    pub preferred: String,
}

/// `summary.json` contents.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub iterations: usize,
    pub final_iter: usize,
    pub aborted: Option<AbortInfo>,
    pub rate_fit: Option<RateFitSummary>,
    pub smoothness: Option<SmoothnessReport>,
    pub params_path: String,
    pub final_record: DiagnosticsRecord,
}

/// In-memory result of one training run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub records: Vec<DiagnosticsRecord>,
    pub summary: RunSummary,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.summary.aborted.is_none()
    }
}

/// Final parameters, serialized to `params.json`.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum ParamsDump<'a> {
    Linear { model: &'a LinearVae },
    Deep { model: &'a DeepGaussianVae },
    Seq { ssm: &'a Ssm, variational: &'a BackwardVariational },
}

enum TrainModel {
    Linear(LinearVae),
    Deep(DeepGaussianVae),
    Seq { s: Ssm, q: BackwardVariational, t_len: usize },
}

impl TrainModel {
    fn build(cfg: &RunConfig, key: RngKey) -> Result<TrainModel, RunError> {
        let m = &cfg.model;
        let act = m.activation.to_activation();
        Ok(match m.family {
            Family::Linear => {
                let ksd = 1.0 / (m.d_z as f64).sqrt();
                let w1 = Mat64::from_iterator(
                    m.d_x,
                    m.d_z,
                    gauss_sample(key.derive_tag("w1"), m.d_x * m.d_z).iter().map(|v| v * ksd),
                );
                let xsd = 1.0 / (m.d_x as f64).sqrt();
                let w2 = Mat64::from_iterator(
                    m.d_z,
                    m.d_x,
                    gauss_sample(key.derive_tag("w2"), m.d_x * m.d_z).iter().map(|v| v * xsd),
                );
                TrainModel::Linear(LinearVae::new(
                    w1,
                    Vec64::zeros(m.d_x),
                    m.c2,
                    w2,
                    Vec64::zeros(m.d_z),
                    Vec64::from_element(m.d_z, 1.0),
                    1e-4,
                )?)
            }
            Family::Deep => TrainModel::Deep(DeepGaussianVae::init(
                m.d_x, m.d_z, &m.hidden, act, m.c2, m.clamps, m.a, key,
            )?),
            Family::Seq => {
                let build_net = |dims: &[usize],
                                 last: vaekit::Activation,
                                 k: RngKey|
                 -> vaekit::Result<vaekit::MlpParams> {
                    let mut acts = vec![act; dims.len() - 2];
                    acts.push(last);
                    vaekit::MlpParams::init(dims, acts, m.a, k)
                };
                // Transition output soft-clipped to enforce the bounded
                // state space, mirroring the decoder-mean clamp.
                let mut tdims = vec![m.d_z];
                tdims.extend_from_slice(&m.hidden);
                tdims.push(m.d_z);
                let transition =
                    build_net(&tdims, m.clamps.g_clip(m.d_z), key.derive_tag("trans"))?;
                let mut edims = vec![m.d_z];
                edims.extend_from_slice(&m.hidden);
                edims.push(m.d_x);
                let emission =
                    build_net(&edims, vaekit::Activation::Identity, key.derive_tag("emit"))?;
                let s = Ssm::new(transition, emission, m.tau_m2, m.tau_g2)?;
                let q = BackwardVariational::init(
                    m.d_x,
                    m.d_z,
                    &m.hidden,
                    act,
                    m.t_len,
                    m.shared_steps,
                    Some(m.clamps),
                    m.a,
                    key.derive_tag("var"),
                )?;
                TrainModel::Seq { s, q, t_len: m.t_len }
            }
        })
    }

    fn to_flat(&self) -> Vec64 {
        match self {
            TrainModel::Linear(m) => m.to_flat(),
            TrainModel::Deep(m) => m.to_flat(),
            TrainModel::Seq { s, q, .. } => seq_to_flat(s, q),
        }
    }

    fn assign_from_flat(&mut self, flat: &Vec64) -> vaekit::Result<()> {
        match self {
            TrainModel::Linear(m) => m.assign_from_flat(flat),
            TrainModel::Deep(m) => m.assign_from_flat(flat),
            TrainModel::Seq { s, q, .. } => seq_assign_from_flat(s, q, flat),
        }
    }

    fn project(&mut self) {
        match self {
            TrainModel::Linear(_) => {}
            TrainModel::Deep(m) => *m = m.project_norm(),
            TrainModel::Seq { s, q, .. } => {
                s.transition = s.transition.project_norm();
                s.emission = s.emission.project_norm();
                q.terminal = q.terminal.project_norm();
                for st in &mut q.steps {
                    *st = st.project_norm();
                }
            }
        }
    }

    /// Split a flattened trajectory row into `t_len + 1` observation steps.
    fn split_trajectory(row: &Vec64, t_len: usize, d_x: usize) -> vaekit::Result<Vec<Vec64>> {
        if row.len() != (t_len + 1) * d_x {
            return Err(vaekit::Error::DimensionMismatch {
                context: "trajectory row".into(),
                expected: (t_len + 1) * d_x,
                got: row.len(),
            });
        }
        Ok((0..=t_len).map(|t| row.rows(t * d_x, d_x).into_owned()).collect())
    }

    /// One stochastic gradient estimate of the configured objective.
    fn grad(&self, cfg: &RunConfig, batch: &[Vec64], k: usize, key: RngKey) -> vaekit::Result<GradEstimate> {
        match self {
            TrainModel::Linear(m) => m.grad(batch),
            TrainModel::Deep(m) => {
                let beta = match cfg.objective.kind {
                    ObjectiveKind::BetaElbo => cfg.objective.beta,
                    _ => 1.0,
                };
                match cfg.estimator {
                    EstimatorConfig::Score => score_grad(m, batch, k, key),
                    EstimatorConfig::Pathwise => {
                        pathwise_grad_with(m, batch, k, key, PathwiseMode::AnalyticKl, beta)
                    }
                    EstimatorConfig::PathwiseSampled => {
                        pathwise_grad_with(m, batch, k, key, PathwiseMode::Sampled, beta)
                    }
                    EstimatorConfig::Iwae => iwae_grad(m, batch, k, key),
                }
            }
            TrainModel::Seq { s, q, t_len } => {
                let d_theta = s.transition.n_params() + s.emission.n_params();
                let mut terms = Vec::with_capacity(batch.len() * k);
                for (i, row) in batch.iter().enumerate() {
                    let xs = TrainModel::split_trajectory(row, *t_len, s.d_x())?;
                    let g = seq_pathwise_grad(s, q, &xs, k, key.derive(i as u64))?;
                    terms.extend(g.per_sample_terms);
                }
                GradEstimate::from_terms(
                    terms,
                    d_theta,
                    batch.len(),
                    k,
                    EstimatorKind::Pathwise(PathwiseMode::Sampled),
                )
            }
        }
    }

    /// Mean objective value over `rows` with `mc` noise draws per point.
    fn objective_mean(
        &self,
        cfg: &RunConfig,
        rows: &[Vec64],
        mc: usize,
        key: RngKey,
    ) -> vaekit::Result<f64> {
        if rows.is_empty() {
            return Err(vaekit::Error::InvalidArgument {
                name: "rows".into(),
                reason: "evaluation batch is empty".into(),
            });
        }
        let mut acc = 0.0;
        match self {
            TrainModel::Linear(m) => {
                for x in rows {
                    acc += m.elbo(x)?;
                }
            }
            TrainModel::Deep(m) => {
                let obj = cfg.objective.to_objective();
                for (i, x) in rows.iter().enumerate() {
                    let ki = key.derive(i as u64);
                    match obj {
                        Objective::Iwae(k) => {
                            // Average independent IWAE_K estimates up to the
                            // per-point budget.
                            let reps = (mc / k).max(1);
                            let mut v = 0.0;
                            for r in 0..reps {
                                let eps: Vec<Vec64> = (0..k)
                                    .map(|l| {
                                        gauss_sample(
                                            ki.derive(r as u64).derive(l as u64),
                                            m.d_z(),
                                        )
                                    })
                                    .collect();
                                v += m.iwae_objective(x, &eps)?;
                            }
                            acc += v / reps as f64;
                        }
                        _ => {
                            let eps: Vec<Vec64> = (0..mc.max(1))
                                .map(|l| gauss_sample(ki.derive(l as u64), m.d_z()))
                                .collect();
                            acc += m.objective_value(&obj, x, &eps)?;
                        }
                    }
                }
            }
            TrainModel::Seq { s, q, t_len } => {
                for (i, row) in rows.iter().enumerate() {
                    let xs = TrainModel::split_trajectory(row, *t_len, s.d_x())?;
                    acc += seq_elbo(s, q, &xs, mc.max(1), key.derive(i as u64))?;
                }
            }
        }
        Ok(acc / rows.len() as f64)
    }

    fn deep(&self) -> Option<&DeepGaussianVae> {
        match self {
            TrainModel::Deep(m) => Some(m),
            _ => None,
        }
    }
}

/// Execute one training run and write `records.csv`, `summary.json`, and
/// `params.json` into `out_dir`. A NaN/degenerate abort is reported inside
/// the returned summary, not as an error.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport, RunError> {
    let iterations = cfg.iterations()?;
    let base = RngKey::new(cfg.data.seed);
    let start = Instant::now();

    // Data: generate (or load), then hold out the trailing 20% as test.
    let source = cfg.data_source()?;
    let full = source.generate(cfg.data.n, base.derive_tag("data"))?;
    let n = full.n();
    if matches!(cfg.data.source, SourceConfig::CsvFile { .. }) && cfg.train.b > n {
        return Err(crate::config::ConfigError {
            path: "train.b".into(),
            message: "B cannot exceed the loaded dataset size".into(),
        }
        .into());
    }
    let n_train = (n - n / 5).max(1);
    let train = Dataset {
        rows: full.rows[..n_train].to_vec(),
        moments: full.moments,
    };
    let test_rows: Vec<Vec64> = if n_train < n {
        full.rows[n_train..].to_vec()
    } else {
        full.rows.clone()
    };

    // Fixed evaluation batches (held-out for the gradient-norm metric).
    let eval_test: Vec<Vec64> = test_rows.iter().take(32).cloned().collect();
    let eval_train: Vec<Vec64> = train.rows.iter().take(32).cloned().collect();
    // Per-point noise draws from the total evaluation budget.
    let eval_l = (cfg.diag.eval_mc / eval_test.len().max(1)).max(1);

    let mut model = TrainModel::build(cfg, base.derive_tag("init"))?;
    model.project();
    let mut flat = model.to_flat();
    let mut opt = match cfg.optim.kind {
        OptimKindConfig::Sgd => OptimState::sgd(flat.len(), cfg.optim.c_gamma)?,
        OptimKindConfig::Adam => OptimState::adam_with(
            flat.len(),
            cfg.optim.c_gamma,
            cfg.optim.beta1,
            cfg.optim.beta2,
            cfg.optim.delta,
        )?,
    };

    let key_mb = base.derive_tag("mb");
    let key_mc = base.derive_tag("mc");
    let key_eval = base.derive_tag("eval");
    let key_snr = base.derive_tag("snr");

    let mut records: Vec<DiagnosticsRecord> = Vec::new();
    let mut aborted: Option<AbortInfo> = None;

    let evaluate = |model: &TrainModel,
                        iter: usize,
                        last_train_grad: Option<&GradEstimate>|
     -> vaekit::Result<DiagnosticsRecord> {
        let ke = key_eval.derive(iter as u64);
        let elbo_train = model.objective_mean(cfg, &eval_train, eval_l, ke.derive_tag("tr"))?;
        let elbo_test = model.objective_mean(cfg, &eval_test, eval_l, ke.derive_tag("te"))?;
        let g = model.grad(cfg, &eval_test, eval_l, ke.derive_tag("g"))?;
        let est_var = match last_train_grad {
            Some(tg) if tg.per_sample_terms.len() >= 2 => {
                estimator_variance(&tg.per_sample_terms)?
            }
            _ => estimator_variance(&g.per_sample_terms)?,
        };
        let (snr_theta, snr_phi) = if cfg.diag.snr_reps >= 30 {
            let reps: Vec<GradEstimate> = (0..cfg.diag.snr_reps)
                .map(|r| {
                    model.grad(
                        cfg,
                        &eval_test,
                        cfg.train.k_train,
                        key_snr.derive(iter as u64).derive(r as u64),
                    )
                })
                .collect::<vaekit::Result<_>>()?;
            snr_measure(&reps)?
        } else {
            (0.0, 0.0)
        };
        Ok(DiagnosticsRecord {
            iter,
            grad_norm_sq: g.norm_squared(),
            elbo_train,
            elbo_test,
            est_var,
            snr_theta,
            snr_phi,
            lr: cfg.optim.c_gamma / (iter.max(1) as f64).sqrt(),
            wall_ms: if cfg.diag.wall_clock {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        })
    };

    records.push(evaluate(&model, 0, None)?);

    let mut last_good = 0usize;
    for k in 1..=iterations {
        let step_result = (|| -> vaekit::Result<Option<GradEstimate>> {
            let batch = train.minibatch(cfg.train.b.min(train.n()), k, key_mb)?;
            let g = model.grad(cfg, &batch, cfg.train.k_train, key_mc.derive(k as u64))?;
            let (opt2, flat2) = opt.step(&flat, &g.flat())?;
            if flat2.iter().any(|v| !v.is_finite()) {
                return Err(vaekit::Error::NonFinite {
                    context: "parameter update".into(),
                    at: Some(format!("iteration {k}")),
                });
            }
            opt = opt2;
            model.assign_from_flat(&flat2)?;
            model.project();
            flat = model.to_flat();
            Ok(Some(g))
        })();

        match step_result {
            Ok(g) => {
                last_good = k;
                if k % cfg.diag.eval_every == 0 || k == iterations {
                    records.push(evaluate(&model, k, g.as_ref())?);
                }
            }
            Err(e) => {
                aborted = Some(AbortInfo {
                    last_good_iter: last_good,
                    reason: e.to_string(),
                });
                break;
            }
        }
    }

    // Rate fit over the trailing nine tenths of the schedule.
    let window = ((iterations / 10).max(2), iterations.max(2));
    let rate_fit = fit_rate(&records, window).ok().map(|(power, paper)| {
        let preferred = if power.r2 >= paper.r2 { "power" } else { "log_over_sqrt" };
        RateFitSummary { power, paper, preferred: preferred.to_string() }
    });

    let smoothness = model
        .deep()
        .filter(|m| m.decoder.norm_bound.is_some() && m.encoder.norm_bound.is_some())
        .and_then(|m| compute_bounds(m, train.moments, cfg.train.k_train).ok());

    std::fs::create_dir_all(out_dir)?;
    write_records(&records, &out_dir.join("records.csv"))?;

    let params_path = out_dir.join("params.json");
    let dump = match &model {
        TrainModel::Linear(m) => serde_json::to_string_pretty(&ParamsDump::Linear { model: m })?,
        TrainModel::Deep(m) => serde_json::to_string_pretty(&ParamsDump::Deep { model: m })?,
        TrainModel::Seq { s, q, .. } => {
            serde_json::to_string_pretty(&ParamsDump::Seq { ssm: s, variational: q })?
        }
    };
    std::fs::write(&params_path, dump)?;

    let summary = RunSummary {
        config: cfg.clone(),
        iterations,
        final_iter: last_good,
        aborted,
        rate_fit,
        smoothness,
        params_path: "params.json".to_string(),
        final_record: *records.last().expect("at least the iteration-0 record"),
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    Ok(RunReport { records, summary })
}

/// Write diagnostics records with shortest-round-trip decimals and LF line
/// endings so identical runs produce identical bytes.
fn write_records(records: &[DiagnosticsRecord], path: &Path) -> Result<(), RunError> {
    let mut out = String::from(
        "iter,elbo_train,elbo_test,grad_norm_sq,est_var,snr_theta,snr_phi,lr,wall_ms\n",
    );
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.elbo_train,
            r.elbo_test,
            r.grad_norm_sq,
            r.est_var,
            r.snr_theta,
            r.snr_phi,
            r.lr,
            r.wall_ms
        )
        .expect("string formatting");
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Sweeps.

/// One axis of the paper's comparison studies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Beta(Vec<f64>),
    K(Vec<usize>),
    Activation(Vec<ActName>),
    /// Joint `(B, K)` settings, written `BxK` on the command line.
    Bk(Vec<(usize, usize)>),
}

impl SweepAxis {
    /// Parse `AXIS=v1,v2,...` (axes: beta, K, activation, BK).
    pub fn parse(spec: &str) -> Result<SweepAxis, crate::config::ConfigError> {
        let bad = |msg: &str| crate::config::ConfigError {
            path: "--sweep".into(),
            message: msg.into(),
        };
        let (axis, rest) = spec.split_once('=').ok_or_else(|| bad("expected AXIS=v1,v2,..."))?;
        let vals: Vec<&str> = rest.split(',').filter(|v| !v.is_empty()).collect();
        if vals.is_empty() {
            return Err(bad("axis needs at least one value"));
        }
        match axis {
            "beta" => Ok(SweepAxis::Beta(
                vals.iter()
                    .map(|v| v.parse::<f64>().map_err(|e| bad(&format!("beta {v}: {e}"))))
                    .collect::<Result<_, _>>()?,
            )),
            "K" => Ok(SweepAxis::K(
                vals.iter()
                    .map(|v| v.parse::<usize>().map_err(|e| bad(&format!("K {v}: {e}"))))
                    .collect::<Result<_, _>>()?,
            )),
            "activation" => Ok(SweepAxis::Activation(
                vals.iter()
                    .map(|v| match *v {
                        "sigmoid" => Ok(ActName::Sigmoid),
                        "tanh" => Ok(ActName::Tanh),
                        "softplus" => Ok(ActName::Softplus),
                        "relu" => Ok(ActName::Relu),
                        other => Err(bad(&format!("unknown activation {other}"))),
                    })
                    .collect::<Result<_, _>>()?,
            )),
            "BK" => Ok(SweepAxis::Bk(
                vals.iter()
                    .map(|v| {
                        let (b, k) = v.split_once('x').ok_or_else(|| bad("BK values are BxK"))?;
                        Ok((
                            b.parse::<usize>().map_err(|e| bad(&format!("B {b}: {e}")))?,
                            k.parse::<usize>().map_err(|e| bad(&format!("K {k}: {e}")))?,
                        ))
                    })
                    .collect::<Result<Vec<_>, crate::config::ConfigError>>()?,
            )),
            other => Err(bad(&format!("unknown axis {other}"))),
        }
    }

    fn labels(&self) -> Vec<String> {
        match self {
            SweepAxis::Beta(v) => v.iter().map(|b| b.to_string()).collect(),
            SweepAxis::K(v) => v.iter().map(|k| k.to_string()).collect(),
            SweepAxis::Activation(v) => v
                .iter()
                .map(|a| {
                    serde_json::to_value(a)
                        .expect("activation name")
                        .as_str()
                        .expect("string variant")
                        .to_string()
                })
                .collect(),
            SweepAxis::Bk(v) => v.iter().map(|(b, k)| format!("{b}x{k}")).collect(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            SweepAxis::Beta(_) => "beta",
            SweepAxis::K(_) => "K",
            SweepAxis::Activation(_) => "activation",
            SweepAxis::Bk(_) => "BK",
        }
    }

    fn apply(&self, idx: usize, cfg: &mut RunConfig) {
        match self {
            SweepAxis::Beta(v) => {
                cfg.objective.kind = ObjectiveKind::BetaElbo;
                cfg.objective.beta = v[idx];
            }
            SweepAxis::K(v) => {
                cfg.objective.kind = ObjectiveKind::Iwae;
                cfg.objective.k = v[idx];
                cfg.estimator = EstimatorConfig::Iwae;
                cfg.train.k_train = v[idx];
            }
            SweepAxis::Activation(v) => cfg.model.activation = v[idx],
            SweepAxis::Bk(v) => {
                cfg.train.b = v[idx].0;
                cfg.train.k_train = v[idx].1;
            }
        }
    }

    fn len(&self) -> usize {
        self.labels().len()
    }
}

/// One row of the sweep comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub status: String,
    pub final_grad_norm_sq: f64,
    pub final_elbo_test: f64,
}

/// Per-value medians over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct SweepMedianRow {
    pub axis: String,
    pub value: String,
    pub median_grad_norm_sq: f64,
    pub median_elbo_test: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub medians: Vec<SweepMedianRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite medians"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Run every (axis value, seed) combination, continuing past individual
/// failures, and write `sweep.csv` / `sweep_summary.csv` into `out_dir`.
pub fn sweep(
    base: &RunConfig,
    axis: &SweepAxis,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<SweepReport, RunError> {
    if seeds.is_empty() {
        return Err(crate::config::ConfigError {
            path: "--seed".into(),
            message: "sweep needs at least one seed".into(),
        }
        .into());
    }
    std::fs::create_dir_all(out_dir)?;
    let labels = axis.labels();
    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for idx in 0..axis.len() {
        let mut gns = Vec::new();
        let mut objs = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            axis.apply(idx, &mut cfg);
            cfg.data.seed = seed;
            let sub = out_dir.join(format!(
                "run_{}_{}_s{seed}",
                axis.name(),
                labels[idx].replace(['.', 'x'], "_")
            ));
            let row = match run(&cfg, &sub) {
                Ok(rep) if rep.succeeded() => {
                    let f = rep.summary.final_record;
                    gns.push(f.grad_norm_sq);
                    objs.push(f.elbo_test);
                    SweepRow {
                        axis: axis.name().to_string(),
                        value: labels[idx].clone(),
                        seed,
                        status: "ok".into(),
                        final_grad_norm_sq: f.grad_norm_sq,
                        final_elbo_test: f.elbo_test,
                    }
                }
                Ok(rep) => SweepRow {
                    axis: axis.name().to_string(),
                    value: labels[idx].clone(),
                    seed,
                    status: format!(
                        "aborted at {}",
                        rep.summary.aborted.as_ref().map_or(0, |a| a.last_good_iter)
                    ),
                    final_grad_norm_sq: f64::NAN,
                    final_elbo_test: f64::NAN,
                },
                Err(e) => SweepRow {
                    axis: axis.name().to_string(),
                    value: labels[idx].clone(),
                    seed,
                    status: format!("error: {e}"),
                    final_grad_norm_sq: f64::NAN,
                    final_elbo_test: f64::NAN,
                },
            };
            rows.push(row);
        }
        medians.push(SweepMedianRow {
            axis: axis.name().to_string(),
            value: labels[idx].clone(),
            median_grad_norm_sq: median(gns),
            median_elbo_test: median(objs),
        });
    }

    let mut table = String::from("axis,value,seed,status,final_grad_norm_sq,final_elbo_test\n");
    for r in &rows {
        writeln!(
            table,
            "{},{},{},{},{},{}",
            r.axis,
            r.value,
            r.seed,
            r.status.replace(',', ";"),
            r.final_grad_norm_sq,
            r.final_elbo_test
        )
        .expect("string formatting");
    }
    std::fs::write(out_dir.join("sweep.csv"), table)?;

    let mut summary = String::from("axis,value,median_grad_norm_sq,median_elbo_test\n");
    for r in &medians {
        writeln!(
            summary,
            "{},{},{},{}",
            r.axis, r.value, r.median_grad_norm_sq, r.median_elbo_test
        )
        .expect("string formatting");
    }
    std::fs::write(out_dir.join("sweep_summary.csv"), summary)?;

    Ok(SweepReport { rows, medians })
}
