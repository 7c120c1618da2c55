//! The conditional generative model: encoders, amortised posterior, latent
//! variant strategies, temporal decoder and label heads.

pub mod config;
pub mod networks;
pub mod params;
pub mod variants;

use demogen_autodiff::{AdError, Graph, NodeId, Tensor};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::config::{ModelConfig, VariantKind};
use crate::model::networks::{
    decode, discriminator_logit, encode_image, encode_trajectory, infer_posterior, label_logits,
    NetBuilder,
};
use crate::model::params::ParamStore;
use crate::model::variants::{resolve, LatentNoise, LatentVariant};
use crate::synthworld::DemoRecord;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Label(#[from] crate::labels::LabelError),
}

/// Posterior statistics and conditioning context for one record.
#[derive(Clone, Debug)]
pub struct PosteriorStats {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub group_logits: Vec<Vec<f64>>,
    pub image_embed: Vec<f64>,
}

/// A configured model: parameters plus the architecture they parameterize.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn init(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let params = ParamStore::init(&config, rng)?;
        Ok(Self { config, params })
    }

    pub fn variant<T: demogen_autodiff::Real>(&self) -> &'static dyn LatentVariant<T> {
        resolve(self.config.variant)
    }

    fn check_image(&self, image: &Tensor<f32>) -> Result<(), ModelError> {
        let want = [3, self.config.image_size, self.config.image_size];
        if image.shape() != want {
            return Err(ModelError::Config(format!(
                "image shape {:?} does not match config {want:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Image embedding i as plain values.
    pub fn embed_image(&self, image: &Tensor<f32>) -> Result<Vec<f64>, ModelError> {
        self.check_image(image)?;
        let mut g = Graph::<f32>::new();
        let mut nb = NetBuilder::new(&mut g, &self.params);
        let img = nb.graph.input(image.clone())?;
        let i = encode_image(&mut nb, &self.config, img)?;
        Ok(g.value(i)?.to_f64_vec())
    }

    /// Posterior parameters (and the image embedding) for one record.
    pub fn posterior_stats(&self, record: &DemoRecord) -> Result<PosteriorStats, ModelError> {
        self.check_image(&record.image)?;
        let mut g = Graph::<f32>::new();
        let mut nb = NetBuilder::new(&mut g, &self.params);
        let img = nb.graph.input(record.image.clone())?;
        let x = nb.graph.input(record.stacked_channels())?;
        let i = encode_image(&mut nb, &self.config, img)?;
        let tau = encode_trajectory(&mut nb, &self.config, x)?;
        let post = infer_posterior(&mut nb, &self.config, i, tau)?;
        let group_logits = post
            .group_logits
            .iter()
            .map(|&n| Ok(g.value(n)?.to_f64_vec()))
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(PosteriorStats {
            mu: g.value(post.mu)?.to_f64_vec(),
            log_var: g.value(post.log_var)?.to_f64_vec(),
            group_logits,
            image_embed: g.value(i)?.to_f64_vec(),
        })
    }

    /// One stochastic posterior code draw (code coordinates) for a record,
    /// using the variant's terminal temperature.
    pub fn posterior_code_sample(
        &self,
        record: &DemoRecord,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_image(&record.image)?;
        let mut g = Graph::<f32>::new();
        let mut nb = NetBuilder::new(&mut g, &self.params);
        let img = nb.graph.input(record.image.clone())?;
        let x = nb.graph.input(record.stacked_channels())?;
        let i = encode_image(&mut nb, &self.config, img)?;
        let tau = encode_trajectory(&mut nb, &self.config, x)?;
        let post = infer_posterior(&mut nb, &self.config, i, tau)?;
        let noise = LatentNoise::<f32>::draw(&self.config, rng);
        let variant = self.variant::<f32>();
        let code = variant.sample_code(
            &mut nb,
            &self.config,
            &post,
            &noise,
            self.config.gumbel_temp_end,
        )?;
        Ok(g.value(code)?.to_f64_vec())
    }

    /// Posterior-mode code of a record (traversal anchor).
    pub fn posterior_mean_code(&self, record: &DemoRecord) -> Result<Vec<f64>, ModelError> {
        let stats = self.posterior_stats(record)?;
        Ok(self
            .variant::<f32>()
            .mean_code(&self.config, &stats.mu, &stats.group_logits))
    }

    /// Reusable decoder over a fixed scene: build the graph once, replay it
    /// per code.
    pub fn decoder_session(&self, image: &Tensor<f32>) -> Result<DecoderSession, ModelError> {
        let embed = self.embed_image(image)?;
        self.decoder_session_from_embed(&embed)
    }

    pub fn decoder_session_from_embed(&self, embed: &[f64]) -> Result<DecoderSession, ModelError> {
        if embed.len() != self.config.image_embed_dim {
            return Err(ModelError::Config(format!(
                "image embedding has {} dims, expected {}",
                embed.len(),
                self.config.image_embed_dim
            )));
        }
        let code_dim = self.config.code_dim();
        let mut graph = Graph::<f32>::new();
        let mut nb = NetBuilder::new(&mut graph, &self.params);
        let code_leaf = nb.graph.input(Tensor::zeros(vec![code_dim]))?;
        let i = nb
            .graph
            .input(Tensor::from_f64_slice(vec![embed.len()], embed)?)?;
        let nodes = decode(&mut nb, &self.config, code_leaf, i)?;
        Ok(DecoderSession {
            graph,
            code_leaf,
            tile: nodes.tile,
            out: nodes.out,
            code_dim,
        })
    }

    /// Per-group label probabilities read from a code's aligned axes.
    pub fn predict_label_probs(&self, code: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut g = Graph::<f32>::new();
        let mut nb = NetBuilder::new(&mut g, &self.params);
        let c = nb
            .graph
            .input(Tensor::from_f64_slice(vec![code.len()], code)?)?;
        let mut prob_nodes = Vec::new();
        for j in 0..self.config.group_count() {
            let logits = label_logits(&mut nb, &self.config, c, j)?;
            prob_nodes.push(nb.graph.softmax(logits)?);
        }
        prob_nodes
            .into_iter()
            .map(|p| Ok(g.value(p)?.to_f64_vec()))
            .collect()
    }

    /// Probability that a code came from the prior (adversarial variant only).
    pub fn discriminate(&self, code: &[f64]) -> Result<f64, ModelError> {
        if self.config.variant != VariantKind::Aae {
            return Err(ModelError::Config(format!(
                "discriminator undefined for variant '{}'",
                self.config.variant.name()
            )));
        }
        let mut g = Graph::<f32>::new();
        let mut nb = NetBuilder::new(&mut g, &self.params);
        let c = nb
            .graph
            .input(Tensor::from_f64_slice(vec![code.len()], code)?)?;
        let logit = discriminator_logit(&mut nb, &self.config, c)?;
        let p = nb.graph.sigmoid(logit)?;
        Ok(g.scalar(p)? as f64)
    }
}

/// Decoder graph bound to one scene embedding; decoding replays the tape
/// with a new code leaf.
pub struct DecoderSession {
    graph: Graph<f32>,
    code_leaf: NodeId,
    tile: NodeId,
    out: NodeId,
    code_dim: usize,
}

impl DecoderSession {
    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn decode(&mut self, code: &[f64]) -> Result<Tensor<f32>, ModelError> {
        if code.len() != self.code_dim {
            return Err(ModelError::Config(format!(
                "code has {} dims, decoder expects {}",
                code.len(),
                self.code_dim
            )));
        }
        self.graph
            .set_leaf(self.code_leaf, Tensor::from_f64_slice(vec![code.len()], code)?)?;
        self.graph.replay_forward()?;
        Ok(self.graph.value(self.out)?.clone())
    }

    /// The tiled `[code; i; t]` planes currently feeding the decoder.
    pub fn input_planes(&self) -> Result<&Tensor<f32>, ModelError> {
        Ok(self.graph.value(self.tile)?)
    }
}
