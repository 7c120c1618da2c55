//! Label-conditioned trajectory generation.
//!
//! Single-label conditioning draws the whole code from that label's fitted
//! Gaussian. Compositional conditioning assembles the code axis by axis:
//! labelled aligned axes take their coordinates from per-label draws,
//! everything else falls back to the variant's prior.

use demogen_autodiff::Tensor;
use rand_chacha::ChaCha8Rng;

use crate::conditioning::table::{GaussianSampler, LabelGaussianTable};
use crate::conditioning::CondError;
use crate::labels::WeakLabel;
use crate::model::Model;
use crate::rng::SeedTree;

/// Optional label per group.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UserSpec {
    pub labels: Vec<Option<usize>>,
}

impl UserSpec {
    pub fn empty(group_count: usize) -> Self {
        Self {
            labels: vec![None; group_count],
        }
    }

    pub fn with(mut self, group: usize, label: usize) -> Self {
        self.labels[group] = Some(label);
        self
    }

    pub fn single(group_count: usize, label: WeakLabel) -> Self {
        Self::empty(group_count).with(label.group, label.label)
    }
}

/// Where each latent axis of a compositional draw came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisSource {
    Label { group: usize, label: usize },
    Prior,
}

/// Trajectories generated for one conditioning request.
pub struct Generated {
    /// Decoded `[2K, T]` channel means.
    pub trajectories: Vec<Tensor<f32>>,
    /// Latent codes behind them.
    pub codes: Vec<Vec<f64>>,
}

/// Single-label conditioning: draw the full code from N(mu_jl, Sigma_jl),
/// decode against the scene.
pub fn sample_single_label(
    model: &Model,
    table: &LabelGaussianTable,
    image: &Tensor<f32>,
    label: WeakLabel,
    n: usize,
    seed: u64,
) -> Result<Generated, CondError> {
    let schema = model.config.schema();
    schema.validate(label)?;
    table.check_schema(&schema)?;
    let sampler = GaussianSampler::new(table.entry(label)?)?;
    let mut session = model.decoder_session(image)?;
    let tree = SeedTree::new(seed).child("single-label");

    let mut trajectories = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n);
    for k in 0..n {
        let mut rng = tree.stream("draw", &[label.group as u64, label.label as u64, k as u64]);
        let code = sampler.draw(&mut rng);
        trajectories.push(session.decode(&code)?);
        codes.push(code);
    }
    Ok(Generated {
        trajectories,
        codes,
    })
}

/// Build one compositional code and its per-axis provenance.
pub fn compositional_code(
    model: &Model,
    table: &LabelGaussianTable,
    spec: &UserSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<AxisSource>), CondError> {
    let cfg = &model.config;
    let schema = cfg.schema();
    if spec.labels.len() != schema.group_count() {
        return Err(CondError::UnknownLabel(format!(
            "specification covers {} groups, schema has {}",
            spec.labels.len(),
            schema.group_count()
        )));
    }
    let variant = model.variant::<f32>();
    let mut code = vec![0.0; cfg.code_dim()];
    let mut plan = Vec::with_capacity(cfg.latent_dim);
    for axis in 0..cfg.latent_dim {
        let (start, len) = cfg.axis_slice(axis)?;
        let labelled = spec.labels.get(axis).copied().flatten();
        match labelled {
            Some(l) if axis < schema.group_count() => {
                let label = WeakLabel {
                    group: axis,
                    label: l,
                };
                schema.validate(label)?;
                let sampler = GaussianSampler::new(table.entry(label)?)?;
                let full = sampler.draw(rng);
                code[start..start + len].copy_from_slice(&full[start..start + len]);
                plan.push(AxisSource::Label {
                    group: axis,
                    label: l,
                });
            }
            _ => {
                let draw = variant.prior_axis(cfg, axis, rng);
                code[start..start + len].copy_from_slice(&draw);
                plan.push(AxisSource::Prior);
            }
        }
    }
    Ok((code, plan))
}

/// Compositional conditioning over `n` draws; also returns the per-axis
/// sampling plan (identical across draws).
pub fn sample_compositional(
    model: &Model,
    table: &LabelGaussianTable,
    image: &Tensor<f32>,
    spec: &UserSpec,
    n: usize,
    seed: u64,
) -> Result<(Generated, Vec<AxisSource>), CondError> {
    let schema = model.config.schema();
    table.check_schema(&schema)?;
    let mut session = model.decoder_session(image)?;
    let tree = SeedTree::new(seed).child("compositional");

    let mut trajectories = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n);
    let mut plan = Vec::new();
    for k in 0..n {
        let mut rng = tree.stream("draw", &[k as u64]);
        let (code, p) = compositional_code(model, table, spec, &mut rng)?;
        if k == 0 {
            plan = p;
        }
        trajectories.push(session.decode(&code)?);
        codes.push(code);
    }
    Ok((
        Generated {
            trajectories,
            codes,
        },
        plan,
    ))
}
