//! Model configuration and the latent code layout per variant.

use serde::{Deserialize, Serialize};

use crate::labels::{LabelSchema, Scenario};
use crate::model::ModelError;

/// Latent-prior strategy, selected by name at run time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    /// Gaussian prior, analytic KL.
    Vae,
    /// Uniform prior matched adversarially by a discriminator.
    Aae,
    /// Relaxed-categorical aligned axes (Gumbel-Softmax) with Gaussian
    /// unaligned axes.
    Gs,
}

impl VariantKind {
    pub fn name(&self) -> &'static str {
        match self {
            VariantKind::Vae => "vae",
            VariantKind::Aae => "aae",
            VariantKind::Gs => "gs",
        }
    }
}

impl std::str::FromStr for VariantKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "vae" => Ok(VariantKind::Vae),
            "aae" => Ok(VariantKind::Aae),
            "gs" => Ok(VariantKind::Gs),
            other => Err(ModelError::Config(format!(
                "unknown model variant '{other}' (expected vae|aae|gs)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scenario: Scenario,
    pub variant: VariantKind,
    /// |c|: number of latent axes.
    pub latent_dim: usize,
    /// Square scene images, H = W.
    pub image_size: usize,
    /// Trajectory length T.
    pub horizon: usize,
    /// Joints K; trajectories carry 2K channels.
    pub joint_count: usize,
    /// Dimension of the image embedding i.
    pub image_embed_dim: usize,
    /// Dimension of the trajectory embedding tau.
    pub traj_embed_dim: usize,
    pub gumbel_temp_start: f64,
    pub gumbel_temp_end: f64,
    /// Fixed decoder output scale; the likelihood reduces to MSE.
    pub decoder_sigma: f64,
    pub posterior_logvar_min: f64,
    pub posterior_logvar_max: f64,
}

impl ModelConfig {
    pub fn new(scenario: Scenario, variant: VariantKind) -> Self {
        Self {
            scenario,
            variant,
            latent_dim: 8,
            image_size: 64,
            horizon: 240,
            joint_count: 7,
            image_embed_dim: 4,
            traj_embed_dim: 32,
            gumbel_temp_start: 1.0,
            gumbel_temp_end: 0.5,
            decoder_sigma: 1.0,
            posterior_logvar_min: -8.0,
            posterior_logvar_max: 4.0,
        }
    }

    pub fn schema(&self) -> LabelSchema {
        LabelSchema::for_scenario(self.scenario)
    }

    pub fn group_count(&self) -> usize {
        self.schema().group_count()
    }

    /// Input channel count 2K (positions stacked over efforts).
    pub fn channels(&self) -> usize {
        2 * self.joint_count
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.group_count() > self.latent_dim {
            return Err(ModelError::Config(format!(
                "{} label groups cannot align onto {} latent axes",
                self.group_count(),
                self.latent_dim
            )));
        }
        if self.image_size % 32 != 0 {
            return Err(ModelError::Config(format!(
                "image size {} must be divisible by 32 (five stride-2 convolutions)",
                self.image_size
            )));
        }
        if self.gumbel_temp_start < self.gumbel_temp_end || self.gumbel_temp_end <= 0.0 {
            return Err(ModelError::Config(
                "gumbel temperature schedule must be positive and non-increasing".into(),
            ));
        }
        Ok(())
    }

    /// Dimension of the decoder-facing latent code. Continuous variants use
    /// one coordinate per axis; the relaxed-categorical variant widens each
    /// aligned axis to its group's cardinality.
    pub fn code_dim(&self) -> usize {
        match self.variant {
            VariantKind::Vae | VariantKind::Aae => self.latent_dim,
            VariantKind::Gs => {
                let schema = self.schema();
                let aligned: usize = schema.groups.iter().map(|g| g.labels.len()).sum();
                aligned + (self.latent_dim - schema.group_count())
            }
        }
    }

    /// (offset, len) of latent axis `j` within the code vector.
    pub fn axis_slice(&self, j: usize) -> Result<(usize, usize), ModelError> {
        if j >= self.latent_dim {
            return Err(ModelError::Config(format!(
                "latent axis {j} out of range for |c| = {}",
                self.latent_dim
            )));
        }
        match self.variant {
            VariantKind::Vae | VariantKind::Aae => Ok((j, 1)),
            VariantKind::Gs => {
                let schema = self.schema();
                let g = schema.group_count();
                if j < g {
                    let offset = schema.groups[..j].iter().map(|gr| gr.labels.len()).sum();
                    Ok((offset, schema.groups[j].labels.len()))
                } else {
                    let aligned: usize = schema.groups.iter().map(|gr| gr.labels.len()).sum();
                    Ok((aligned + (j - g), 1))
                }
            }
        }
    }

    /// Label-head input width for group `j`.
    pub fn head_input_dim(&self, j: usize) -> Result<usize, ModelError> {
        Ok(self.axis_slice(j)?.1)
    }

    /// Linear Gumbel-Softmax temperature schedule over training; monotone
    /// non-increasing in the epoch.
    pub fn temperature(&self, epoch: usize, total_epochs: usize) -> f64 {
        if total_epochs <= 1 {
            return self.gumbel_temp_end;
        }
        let u = (epoch as f64 / (total_epochs - 1) as f64).clamp(0.0, 1.0);
        self.gumbel_temp_start + (self.gumbel_temp_end - self.gumbel_temp_start) * u
    }

    /// Spatial side of the image-encoder feature map after the conv stack.
    pub fn conv_out_side(&self) -> usize {
        self.image_size / 32
    }

    /// Flattened feature dimension in front of the image encoder's FC stack.
    pub fn image_flat_dim(&self) -> usize {
        64 * self.conv_out_side() * self.conv_out_side()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gs_code_layout_widens_aligned_axes() {
        let cfg = ModelConfig::new(Scenario::Dab, VariantKind::Gs);
        // 5 binary groups -> 10 relaxed coords + 3 unaligned = 13
        assert_eq!(cfg.code_dim(), 13);
        assert_eq!(cfg.axis_slice(0).unwrap(), (0, 2));
        assert_eq!(cfg.axis_slice(4).unwrap(), (8, 2));
        assert_eq!(cfg.axis_slice(5).unwrap(), (10, 1));
        assert_eq!(cfg.axis_slice(7).unwrap(), (12, 1));
    }

    #[test]
    fn continuous_code_layout_is_the_identity() {
        let cfg = ModelConfig::new(Scenario::Dab, VariantKind::Vae);
        assert_eq!(cfg.code_dim(), 8);
        assert_eq!(cfg.axis_slice(3).unwrap(), (3, 1));
        assert!(cfg.axis_slice(8).is_err());
    }

    #[test]
    fn temperature_schedule_is_monotone_non_increasing() {
        let cfg = ModelConfig::new(Scenario::Dab, VariantKind::Gs);
        let temps: Vec<f64> = (0..100).map(|e| cfg.temperature(e, 100)).collect();
        assert!((temps[0] - 1.0).abs() < 1e-12);
        assert!((temps[99] - 0.5).abs() < 1e-12);
        assert!(temps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn pour_config_validates() {
        let cfg = ModelConfig::new(Scenario::Pour, VariantKind::Vae);
        cfg.validate().unwrap();
        assert_eq!(cfg.group_count(), 3);
        let gs = ModelConfig::new(Scenario::Pour, VariantKind::Gs);
        assert_eq!(gs.code_dim(), 11);
    }
}
