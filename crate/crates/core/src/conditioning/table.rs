//! Per-label Gaussians over the latent code, fitted by weighted maximum
//! likelihood: one posterior sample per training record, weighted by the
//! label head's probability for the (group, label) pair.

use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::labels::{LabelSchema, WeakLabel};
use crate::model::Model;
use crate::rng::SeedTree;
use crate::synthworld::dataset::Dataset;
use crate::conditioning::CondError;

pub const TABLE_VERSION: u32 = 1;
/// Ridge added to every fitted covariance.
pub const COV_RIDGE: f64 = 1e-6;
/// Below this effective sample weight the label is unusable.
pub const MIN_TOTAL_WEIGHT: f64 = 1e-3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelGaussian {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim` covariance (ridge included).
    pub covariance: Vec<f64>,
    /// Total label-likelihood weight behind the fit.
    pub weight: f64,
    /// Whether the covariance had to fall back to its diagonal.
    pub diagonal_fallback: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelGaussianTable {
    pub format_version: u32,
    pub schema_hash: u64,
    pub code_dim: usize,
    /// `entries[group][label]`.
    pub entries: Vec<Vec<LabelGaussian>>,
}

impl LabelGaussianTable {
    pub fn entry(&self, label: WeakLabel) -> Result<&LabelGaussian, CondError> {
        self.entries
            .get(label.group)
            .and_then(|g| g.get(label.label))
            .ok_or_else(|| CondError::UnknownLabel(format!("group {} label {}", label.group, label.label)))
    }

    pub fn check_schema(&self, schema: &LabelSchema) -> Result<(), CondError> {
        if self.schema_hash != schema.content_hash() {
            return Err(CondError::Format(
                "label table was fitted under a different label schema".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CondError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| CondError::Format(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CondError> {
        let table: LabelGaussianTable = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| CondError::Format(e.to_string()))?;
        if table.format_version != TABLE_VERSION {
            return Err(CondError::Format(format!(
                "label table version {} unsupported (expected {TABLE_VERSION})",
                table.format_version
            )));
        }
        Ok(table)
    }
}

/// Weighted mean and covariance of `samples` (rows) under `weights`.
/// Returns `None` when the total weight is negligible.
pub fn weighted_mean_cov(samples: &[Vec<f64>], weights: &[f64]) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let total: f64 = weights.iter().sum();
    if total < MIN_TOTAL_WEIGHT {
        return None;
    }
    let dim = samples.first()?.len();
    let mut mean = vec![0.0; dim];
    for (s, &w) in samples.iter().zip(weights) {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);

    let mut cov = vec![0.0; dim * dim];
    for (s, &w) in samples.iter().zip(weights) {
        for a in 0..dim {
            let da = s[a] - mean[a];
            for b in 0..dim {
                cov[a * dim + b] += w * da * (s[b] - mean[b]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= total);
    for a in 0..dim {
        cov[a * dim + a] += COV_RIDGE;
    }
    Some((mean, cov, total))
}

/// Fit one Gaussian per (group, label) from posterior samples of the
/// dataset's training split.
pub fn fit_label_gaussians(
    model: &Model,
    dataset: &Dataset,
    seed: u64,
) -> Result<LabelGaussianTable, CondError> {
    let schema = model.config.schema();
    if dataset.manifest.schema != schema {
        return Err(CondError::Format(
            "dataset schema does not match the model's scenario".into(),
        ));
    }
    let tree = SeedTree::new(seed).child("fit-labels");
    let train = dataset.train_indices();

    let mut codes: Vec<Vec<f64>> = Vec::with_capacity(train.len());
    let mut probs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(train.len());
    for &idx in &train {
        let mut rng = tree.stream("posterior", &[idx as u64]);
        let code = model.posterior_code_sample(&dataset.records[idx], &mut rng)?;
        probs.push(model.predict_label_probs(&code)?);
        codes.push(code);
    }

    let mut entries = Vec::with_capacity(schema.group_count());
    for (j, group) in schema.groups.iter().enumerate() {
        let mut row = Vec::with_capacity(group.labels.len());
        for l in 0..group.labels.len() {
            let weights: Vec<f64> = probs.iter().map(|p| p[j][l]).collect();
            let (mean, covariance, weight) =
                weighted_mean_cov(&codes, &weights).ok_or_else(|| {
                    CondError::DegenerateLabel(format!(
                        "label '{}' in group '{}' has negligible posterior mass",
                        group.labels[l], group.name
                    ))
                })?;
            let dim = mean.len();
            let chol_ok = Cholesky::new(DMatrix::from_row_slice(dim, dim, &covariance)).is_some();
            let (covariance, diagonal_fallback) = if chol_ok {
                (covariance, false)
            } else {
                log::warn!(
                    "covariance for group {j} label {l} not positive definite, keeping diagonal"
                );
                let mut diag = vec![0.0; dim * dim];
                for a in 0..dim {
                    diag[a * dim + a] = covariance[a * dim + a];
                }
                (diag, true)
            };
            row.push(LabelGaussian {
                mean,
                covariance,
                weight,
                diagonal_fallback,
            });
        }
        entries.push(row);
    }

    Ok(LabelGaussianTable {
        format_version: TABLE_VERSION,
        schema_hash: schema.content_hash(),
        code_dim: model.config.code_dim(),
        entries,
    })
}

/// Cached Cholesky factor for drawing from one label Gaussian.
pub struct GaussianSampler {
    pub mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(g: &LabelGaussian) -> Result<Self, CondError> {
        let dim = g.mean.len();
        let cov = DMatrix::from_row_slice(dim, dim, &g.covariance);
        let chol = Cholesky::new(cov)
            .ok_or_else(|| CondError::Format("stored covariance is not positive definite".into()))?
            .l();
        Ok(Self {
            mean: DVector::from_row_slice(&g.mean),
            chol,
        })
    }

    pub fn draw(&self, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        use rand::Rng;
        let dim = self.mean.len();
        let z = DVector::from_iterator(
            dim,
            (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
        );
        let x = &self.mean + &self.chol * z;
        x.iter().copied().collect()
    }
}
