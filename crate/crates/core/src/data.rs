//! Synthetic data sources with closed-form moments, CSV ingestion, and
//! deterministic minibatching.
//!
//! The fourth/second moments of `||x||` feed the smoothness-constant
//! computations; synthetic sources report them exactly, CSV sources use a
//! plug-in estimate.

use std::path::{Path, PathBuf};

use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::{gauss_sample, Mat64, RngKey, Vec64};
use crate::Result;

/// One isotropic Gaussian mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    /// Per-coordinate variance.
    pub var: f64,
}

/// A data distribution `pi` with known or estimable moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// `x = W z + sqrt(noise) e`, `z ~ N(0, I_dz)`, `e ~ N(0, I_dx)`.
    LinearGaussianFactor {
        d_x: usize,
        d_z: usize,
        w: Vec<Vec<f64>>,
        /// Observation noise variance.
        noise: f64,
    },
    /// Equal-weight mixture of isotropic Gaussians.
    GaussianMixture { components: Vec<MixtureComponent> },
    CsvFile { path: PathBuf },
}

/// Second and fourth moments of `||x||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataMoments {
    pub m2: f64,
    pub m4: f64,
}

/// An immutable in-memory dataset with cached moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Vec64>,
    pub moments: DataMoments,
}

impl DataSource {
    /// Factor model with a key-derived random loading matrix (entries
    /// `N(0, 1/d_z)` so that `E||x||^2 ~ d_x` at unit noise).
    pub fn random_factor(d_x: usize, d_z: usize, noise: f64, key: RngKey) -> DataSource {
        let raw = gauss_sample(key.derive_tag("loading"), d_x * d_z);
        let scale = 1.0 / (d_z as f64).sqrt();
        let w = (0..d_x)
            .map(|r| (0..d_z).map(|c| raw[r * d_z + c] * scale).collect())
            .collect();
        DataSource::LinearGaussianFactor { d_x, d_z, w, noise }
    }

    pub fn dim(&self) -> Result<usize> {
        match self {
            DataSource::LinearGaussianFactor { d_x, .. } => Ok(*d_x),
            DataSource::GaussianMixture { components } => components
                .first()
                .map(|c| c.mean.len())
                .ok_or_else(|| Error::invalid("components", "mixture needs at least one component")),
            DataSource::CsvFile { .. } => {
                Err(Error::invalid("source", "CSV dimension known only after loading"))
            }
        }
    }

    /// Exact `(E||x||^2, E||x||^4)` for the synthetic sources.
    ///
    /// Factor model: `x ~ N(0, C)` with `C = W W^T + noise I`, so
    /// `E||x||^2 = tr C` and `E||x||^4 = (tr C)^2 + 2 tr(C^2)`.
    /// Mixture component `N(mu, v I)`:
    /// `E||x||^2 = ||mu||^2 + d v` and
    /// `E||x||^4 = (||mu||^2 + d v)^2 + 2 d v^2 + 4 v ||mu||^2`.
    pub fn exact_moments(&self) -> Result<DataMoments> {
        match self {
            DataSource::LinearGaussianFactor { d_x, d_z, w, noise } => {
                let wm = loading_matrix(*d_x, *d_z, w)?;
                let c = &wm * wm.transpose() + Mat64::identity(*d_x, *d_x) * *noise;
                let tr = c.trace();
                let tr2 = (&c * &c).trace();
                Ok(DataMoments {
                    m2: tr,
                    m4: tr * tr + 2.0 * tr2,
                })
            }
            DataSource::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(Error::invalid("components", "mixture needs at least one component"));
                }
                let n = components.len() as f64;
                let (mut m2, mut m4) = (0.0, 0.0);
                for c in components {
                    let d = c.mean.len() as f64;
                    let mu2: f64 = c.mean.iter().map(|v| v * v).sum();
                    let e2 = mu2 + d * c.var;
                    m2 += e2 / n;
                    m4 += (e2 * e2 + 2.0 * d * c.var * c.var + 4.0 * c.var * mu2) / n;
                }
                Ok(DataMoments { m2, m4 })
            }
            DataSource::CsvFile { .. } => {
                Err(Error::invalid("source", "CSV moments are estimated, not exact"))
            }
        }
    }

    /// Materialize `n` draws (or load the CSV; `n` is ignored for files).
    pub fn generate(&self, n: usize, key: RngKey) -> Result<Dataset> {
        match self {
            DataSource::LinearGaussianFactor { d_x, d_z, w, noise } => {
                let wm = loading_matrix(*d_x, *d_z, w)?;
                if !(*noise >= 0.0) {
                    return Err(Error::invalid("noise", "must be nonnegative"));
                }
                let sd = noise.sqrt();
                let rows = (0..n)
                    .map(|i| {
                        let k = key.derive(i as u64);
                        let z = gauss_sample(k.derive(0), *d_z);
                        let e = gauss_sample(k.derive(1), *d_x);
                        &wm * z + e * sd
                    })
                    .collect();
                Ok(Dataset {
                    rows,
                    moments: self.exact_moments()?,
                })
            }
            DataSource::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(Error::invalid("components", "mixture needs at least one component"));
                }
                let d = components[0].mean.len();
                if components.iter().any(|c| c.mean.len() != d) {
                    return Err(Error::dim("component mean", d, 0));
                }
                let rows = (0..n)
                    .map(|i| {
                        let k = key.derive(i as u64);
                        let j = (crate::numerics::uniform_sample(k.derive(0))
                            * components.len() as f64) as usize;
                        let c = &components[j.min(components.len() - 1)];
                        let e = gauss_sample(k.derive(1), d);
                        Vec64::from_vec(c.mean.clone()) + e * c.var.sqrt()
                    })
                    .collect();
                Ok(Dataset {
                    rows,
                    moments: self.exact_moments()?,
                })
            }
            DataSource::CsvFile { path } => Dataset::read_csv(path),
        }
    }
}

fn loading_matrix(d_x: usize, d_z: usize, w: &[Vec<f64>]) -> Result<Mat64> {
    if w.len() != d_x || w.iter().any(|r| r.len() != d_z) {
        return Err(Error::dim("loading matrix rows", d_x, w.len()));
    }
    Ok(Mat64::from_fn(d_x, d_z, |r, c| w[r][c]))
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// Plug-in moment estimates from the rows themselves.
    pub fn estimate_moments(rows: &[Vec64]) -> Result<DataMoments> {
        if rows.is_empty() {
            return Err(Error::invalid("rows", "empty dataset"));
        }
        let n = rows.len() as f64;
        let m2 = rows.iter().map(|r| r.norm_squared()).sum::<f64>() / n;
        let m4 = rows.iter().map(|r| r.norm_squared().powi(2)).sum::<f64>() / n;
        if !(m2.is_finite() && m4.is_finite()) {
            return Err(Error::NonFinite {
                context: "data moments".into(),
                at: None,
            });
        }
        Ok(DataMoments { m2, m4 })
    }

    /// Minibatch of `b` rows drawn without replacement — a pure function of
    /// `(iteration, key)`. `b = n` returns the dataset in index order.
    pub fn minibatch(&self, b: usize, iteration: usize, key: RngKey) -> Result<Vec<Vec64>> {
        if b == 0 || b > self.n() {
            return Err(Error::invalid("b", "need 0 < B <= n"));
        }
        if b == self.n() {
            return Ok(self.rows.clone());
        }
        let mut rng = key.derive_tag("batch").derive(iteration as u64).rng();
        let idx = index_sample(&mut rng, self.n(), b);
        Ok(idx.iter().map(|i| self.rows[i].clone()).collect())
    }

    /// Write as CSV: header `x0,...,x{d-1}`, shortest round-trip decimals,
    /// LF line endings.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.dim();
        w.write_record((0..d).map(|i| format!("x{i}")))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        w.flush().map_err(std::io::Error::from)?;
        Ok(())
    }

    /// Read the CSV format written by [`Dataset::write_csv`]; moments are
    /// estimated from the rows.
    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let d = r.headers()?.len();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != d {
                return Err(Error::dim("csv row", d, rec.len()));
            }
            let vals: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|s| s.parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::invalid("csv value", e.to_string()))?;
            rows.push(Vec64::from_vec(vals));
        }
        let moments = Dataset::estimate_moments(&rows)?;
        Ok(Dataset { rows, moments })
    }
}
