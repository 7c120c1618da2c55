//! Interchangeable latent-prior strategies behind one trait, resolved by
//! name at run time.
//!
//! Each strategy owns three things: how a latent code is sampled from the
//! amortised posterior inside a graph, which divergence ties the posterior to
//! its prior, and how prior draws look at generation time.

use demogen_autodiff::{NodeId, Real, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::config::{ModelConfig, VariantKind};
use crate::model::networks::{discriminator_logit, NetBuilder, PosteriorNodes};
use crate::model::ModelError;

/// Externally supplied noise for one latent draw, so runs replay exactly.
#[derive(Clone, Debug)]
pub struct LatentNoise<T> {
    /// Standard-normal vector of `latent_dim`.
    pub eps: Tensor<T>,
    /// Gumbel noise per label group (used by the gs variant).
    pub gumbel: Vec<Tensor<T>>,
}

impl<T: Real> LatentNoise<T> {
    /// Draw the full noise bundle. The layout is variant-independent so runs
    /// that differ only in the variant consume identical streams.
    pub fn draw(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let eps: Vec<T> = (0..cfg.latent_dim)
            .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let schema = cfg.schema();
        let gumbel = schema
            .groups
            .iter()
            .map(|g| {
                let data: Vec<T> = (0..g.labels.len()).map(|_| T::from_f64(gumbel(rng))).collect();
                Tensor::new(vec![g.labels.len()], data).expect("shape")
            })
            .collect();
        Self {
            eps: Tensor::new(vec![cfg.latent_dim], eps).expect("shape"),
            gumbel,
        }
    }

    /// Zero noise: latent samples collapse to the posterior mode.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let schema = cfg.schema();
        Self {
            eps: Tensor::zeros(vec![cfg.latent_dim]),
            gumbel: schema
                .groups
                .iter()
                .map(|g| Tensor::zeros(vec![g.labels.len()]))
                .collect(),
        }
    }
}

/// -log(-log u), u uniform in (0, 1).
pub fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    -(-u.ln()).ln()
}

/// A latent-prior strategy: graph-side sampling and regularization plus
/// host-side prior draws.
pub trait LatentVariant<T: Real>: Send + Sync {
    fn kind(&self) -> VariantKind;

    /// Sample a decoder-facing code from the posterior inside the graph.
    fn sample_code(
        &self,
        nb: &mut NetBuilder<T>,
        cfg: &ModelConfig,
        post: &PosteriorNodes,
        noise: &LatentNoise<T>,
        temperature: f64,
    ) -> Result<NodeId, ModelError>;

    /// Scalar node tying the posterior to the prior: analytic KL for vae/gs,
    /// the non-saturating generator term against the discriminator for aae.
    fn divergence(
        &self,
        nb: &mut NetBuilder<T>,
        cfg: &ModelConfig,
        post: &PosteriorNodes,
        code: NodeId,
    ) -> Result<NodeId, ModelError>;

    /// Full prior draw in code coordinates.
    fn prior_code(&self, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<f64>;

    /// Prior draw for latent axis `j` in code coordinates (the compositional
    /// fallback for unspecified or unaligned axes).
    fn prior_axis(&self, cfg: &ModelConfig, axis: usize, rng: &mut ChaCha8Rng) -> Vec<f64>;

    /// Deterministic posterior-mode code from posterior statistics, used to
    /// anchor traversals.
    fn mean_code(&self, cfg: &ModelConfig, mu: &[f64], group_logits: &[Vec<f64>]) -> Vec<f64>;
}

/// Resolve a strategy by enum; every strategy is a stateless singleton.
pub fn resolve<T: Real>(kind: VariantKind) -> &'static dyn LatentVariant<T> {
    match kind {
        VariantKind::Vae => &VaeVariant,
        VariantKind::Aae => &AaeVariant,
        VariantKind::Gs => &GsVariant,
    }
}

/// Resolve a strategy by its registry name (`vae`, `aae`, `gs`).
pub fn resolve_name<T: Real>(name: &str) -> Result<&'static dyn LatentVariant<T>, ModelError> {
    Ok(resolve(name.parse::<VariantKind>()?))
}

pub fn variant_names() -> &'static [&'static str] {
    &["vae", "aae", "gs"]
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / s).collect()
}

/// Gaussian posterior, standard-normal prior, analytic KL.
pub struct VaeVariant;

impl<T: Real> LatentVariant<T> for VaeVariant {
    fn kind(&self) -> VariantKind {
        VariantKind::Vae
    }

    fn sample_code(
        &self,
        nb: &mut NetBuilder<T>,
        _cfg: &ModelConfig,
        post: &PosteriorNodes,
        noise: &LatentNoise<T>,
        _temperature: f64,
    ) -> Result<NodeId, ModelError> {
        let eps = nb.graph.input(noise.eps.clone())?;
        Ok(nb.graph.reparameterize(post.mu, post.log_var, eps)?)
    }

    fn divergence(
        &self,
        nb: &mut NetBuilder<T>,
        _cfg: &ModelConfig,
        post: &PosteriorNodes,
        _code: NodeId,
    ) -> Result<NodeId, ModelError> {
        Ok(nb.graph.kl_gaussian_std(post.mu, post.log_var)?)
    }

    fn prior_code(&self, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..cfg.latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn prior_axis(&self, _cfg: &ModelConfig, _axis: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.sample::<f64, _>(StandardNormal)]
    }

    fn mean_code(&self, _cfg: &ModelConfig, mu: &[f64], _group_logits: &[Vec<f64>]) -> Vec<f64> {
        mu.to_vec()
    }
}

/// Gaussian posterior pushed toward a uniform prior by a discriminator.
pub struct AaeVariant;

impl<T: Real> LatentVariant<T> for AaeVariant {
    fn kind(&self) -> VariantKind {
        VariantKind::Aae
    }

    fn sample_code(
        &self,
        nb: &mut NetBuilder<T>,
        _cfg: &ModelConfig,
        post: &PosteriorNodes,
        noise: &LatentNoise<T>,
        _temperature: f64,
    ) -> Result<NodeId, ModelError> {
        let eps = nb.graph.input(noise.eps.clone())?;
        Ok(nb.graph.reparameterize(post.mu, post.log_var, eps)?)
    }

    fn divergence(
        &self,
        nb: &mut NetBuilder<T>,
        cfg: &ModelConfig,
        _post: &PosteriorNodes,
        code: NodeId,
    ) -> Result<NodeId, ModelError> {
        // Non-saturating generator objective: make the discriminator read
        // posterior samples as prior samples.
        let logit = discriminator_logit(nb, cfg, code)?;
        Ok(nb.graph.bce_with_logits(logit, true)?)
    }

    fn prior_code(&self, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..cfg.latent_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn prior_axis(&self, _cfg: &ModelConfig, _axis: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.gen_range(-1.0..1.0)]
    }

    fn mean_code(&self, _cfg: &ModelConfig, mu: &[f64], _group_logits: &[Vec<f64>]) -> Vec<f64> {
        mu.to_vec()
    }
}

/// Relaxed-categorical aligned axes with Gaussian unaligned axes.
pub struct GsVariant;

impl GsVariant {
    fn unaligned_range(cfg: &ModelConfig) -> (usize, usize) {
        let g = cfg.group_count();
        (g, cfg.latent_dim - g)
    }
}

impl<T: Real> LatentVariant<T> for GsVariant {
    fn kind(&self) -> VariantKind {
        VariantKind::Gs
    }

    fn sample_code(
        &self,
        nb: &mut NetBuilder<T>,
        cfg: &ModelConfig,
        post: &PosteriorNodes,
        noise: &LatentNoise<T>,
        temperature: f64,
    ) -> Result<NodeId, ModelError> {
        let mut parts = Vec::new();
        for (j, logits) in post.group_logits.iter().enumerate() {
            let g_noise = nb.graph.input(noise.gumbel[j].clone())?;
            parts.push(nb.graph.gumbel_softmax(*logits, g_noise, temperature)?);
        }
        let (start, len) = Self::unaligned_range(cfg);
        let mu_u = nb.graph.slice(post.mu, start, len)?;
        let lv_u = nb.graph.slice(post.log_var, start, len)?;
        let eps_tail: Vec<T> = noise.eps.data()[start..start + len].to_vec();
        let eps = nb.graph.input(Tensor::new(vec![len], eps_tail)?)?;
        parts.push(nb.graph.reparameterize(mu_u, lv_u, eps)?);
        Ok(nb.graph.concat(&parts)?)
    }

    fn divergence(
        &self,
        nb: &mut NetBuilder<T>,
        cfg: &ModelConfig,
        post: &PosteriorNodes,
        _code: NodeId,
    ) -> Result<NodeId, ModelError> {
        let mut terms = Vec::new();
        for logits in &post.group_logits {
            terms.push(nb.graph.kl_categorical_uniform(*logits)?);
        }
        let (start, len) = Self::unaligned_range(cfg);
        let mu_u = nb.graph.slice(post.mu, start, len)?;
        let lv_u = nb.graph.slice(post.log_var, start, len)?;
        terms.push(nb.graph.kl_gaussian_std(mu_u, lv_u)?);
        Ok(nb.graph.add_all(&terms)?)
    }

    fn prior_code(&self, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let schema = cfg.schema();
        let mut code = Vec::with_capacity(cfg.code_dim());
        for g in &schema.groups {
            let relaxed: Vec<f64> = (0..g.labels.len())
                .map(|_| gumbel(rng) / cfg.gumbel_temp_end)
                .collect();
            code.extend(softmax(&relaxed));
        }
        let (_, len) = Self::unaligned_range(cfg);
        code.extend((0..len).map(|_| rng.sample::<f64, _>(StandardNormal)));
        code
    }

    fn prior_axis(&self, cfg: &ModelConfig, axis: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let g = cfg.group_count();
        if axis < g {
            let m = cfg.schema().groups[axis].labels.len();
            let relaxed: Vec<f64> = (0..m).map(|_| gumbel(rng) / cfg.gumbel_temp_end).collect();
            softmax(&relaxed)
        } else {
            vec![rng.sample::<f64, _>(StandardNormal)]
        }
    }

    fn mean_code(&self, cfg: &ModelConfig, mu: &[f64], group_logits: &[Vec<f64>]) -> Vec<f64> {
        let mut code = Vec::with_capacity(cfg.code_dim());
        for logits in group_logits {
            code.extend(softmax(logits));
        }
        let (start, len) = Self::unaligned_range(cfg);
        code.extend_from_slice(&mu[start..start + len]);
        code
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Scenario;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn registry_resolves_every_name() {
        for &name in variant_names() {
            let v: &dyn LatentVariant<f32> = resolve_name(name).unwrap();
            assert_eq!(v.kind().name(), name);
        }
        assert!(resolve_name::<f32>("vaq").is_err());
    }

    #[test]
    fn gs_prior_axis_lives_on_the_simplex_for_aligned_axes() {
        let cfg = ModelConfig::new(Scenario::Dab, VariantKind::Gs);
        let v: &dyn LatentVariant<f32> = resolve(VariantKind::Gs);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let aligned = v.prior_axis(&cfg, 2, &mut rng);
        assert_eq!(aligned.len(), 2);
        assert!((aligned.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let unaligned = v.prior_axis(&cfg, 6, &mut rng);
        assert_eq!(unaligned.len(), 1);
    }

    #[test]
    fn aae_prior_is_bounded() {
        let cfg = ModelConfig::new(Scenario::Dab, VariantKind::Aae);
        let v: &dyn LatentVariant<f64> = resolve(VariantKind::Aae);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert!(v
                .prior_code(&cfg, &mut rng)
                .iter()
                .all(|x| (-1.0..1.0).contains(x)));
        }
    }
}
