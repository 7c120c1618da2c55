//! The weighted training objective: divergence + reconstruction + masked
//! label cross-entropy, assembled per record so independent graphs can run
//! in parallel and their gradients sum to the batch gradient.

use demogen_autodiff::{Graph, NodeId, Real};
use serde::{Deserialize, Serialize};

use crate::model::networks::{
    decode, encode_image, encode_trajectory, infer_posterior, label_logits, NetBuilder,
    PosteriorNodes,
};
use crate::model::variants::LatentNoise;
use crate::model::Model;
use crate::rng::SeedTree;
use crate::synthworld::DemoRecord;
use crate::training::TrainError;

/// Term coefficients. `gamma = 0` switches weak supervision off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            gamma: 10.0,
        }
    }
}

impl LossWeights {
    pub fn weak(use_labels: bool) -> Self {
        let mut w = Self::default();
        if !use_labels {
            w.gamma = 0.0;
        }
        w
    }

    pub fn is_weak(&self) -> bool {
        self.gamma > 0.0
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(TrainError::Config(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Batch-level loss values (term means; total applies the weights).
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub mse: f64,
    pub kl: f64,
    pub sce: f64,
}

/// Per-record scale factors pre-folded into the record total so that summing
/// record totals over a batch yields the batch loss.
#[derive(Clone, Copy, Debug)]
pub struct RecordScales {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl RecordScales {
    /// MSE and divergence average over the batch; cross-entropy averages over
    /// the labels present in the batch.
    pub fn for_batch(weights: &LossWeights, batch_size: usize, labels_in_batch: usize) -> Self {
        let b = batch_size.max(1) as f64;
        Self {
            alpha: weights.alpha / b,
            beta: weights.beta / b,
            gamma: if labels_in_batch > 0 {
                weights.gamma / labels_in_batch as f64
            } else {
                0.0
            },
        }
    }
}

/// Nodes of one record's loss subgraph.
pub struct RecordLoss {
    pub total: NodeId,
    pub mse: NodeId,
    pub divergence: NodeId,
    pub sce: Option<NodeId>,
    pub posterior: PosteriorNodes,
    pub code: NodeId,
    pub decoded: NodeId,
    /// (parameter index, leaf node) pairs the graph used.
    pub used_params: Vec<(usize, NodeId)>,
}

/// Build one record's full forward pass and weighted loss.
///
/// Records without a label (or a zero label weight) contribute no
/// cross-entropy subgraph at all, so label heads receive no gradient from
/// them.
pub fn build_record_loss<T: Real>(
    graph: &mut Graph<T>,
    model: &Model,
    record: &DemoRecord,
    noise: &LatentNoise<T>,
    temperature: f64,
    scales: &RecordScales,
) -> Result<RecordLoss, TrainError> {
    let cfg = &model.config;
    let mut nb = NetBuilder::new(graph, &model.params);
    let image = nb.graph.input(record.image.cast::<T>())?;
    let x = nb.graph.input(record.stacked_channels().cast::<T>())?;

    let i = encode_image(&mut nb, cfg, image)?;
    let tau = encode_trajectory(&mut nb, cfg, x)?;
    let posterior = infer_posterior(&mut nb, cfg, i, tau)?;
    let variant = model.variant::<T>();
    let code = variant.sample_code(&mut nb, cfg, &posterior, noise, temperature)?;
    let decoded = decode(&mut nb, cfg, code, i)?.out;

    let mse = nb.graph.mse(decoded, x)?;
    let divergence = variant.divergence(&mut nb, cfg, &posterior, code)?;

    let sce = match record.label {
        Some(label) if scales.gamma > 0.0 => {
            model.config.schema().validate(label).map_err(|e| {
                TrainError::Config(format!("record label invalid for schema: {e}"))
            })?;
            let logits = label_logits(&mut nb, cfg, code, label.group)?;
            Some(nb.graph.softmax_cross_entropy(logits, label.label)?)
        }
        _ => None,
    };

    let mse_s = nb.graph.scale(mse, scales.alpha)?;
    let div_s = nb.graph.scale(divergence, scales.beta)?;
    let mut total = nb.graph.add(mse_s, div_s)?;
    if let Some(sce_node) = sce {
        let sce_s = nb.graph.scale(sce_node, scales.gamma)?;
        total = nb.graph.add(total, sce_s)?;
    }

    let used_params = nb.used_params().to_vec();
    Ok(RecordLoss {
        total,
        mse,
        divergence,
        sce,
        posterior,
        code,
        decoded,
        used_params,
    })
}

/// Evaluate the batch loss without touching parameters:
/// `total = beta*KL + alpha*MSE + gamma*SCE` with MSE/KL averaged over the
/// batch and SCE averaged over present labels.
pub fn loss_eval(
    model: &Model,
    batch: &[&DemoRecord],
    weights: &LossWeights,
    temperature: f64,
    seed: u64,
) -> Result<LossTerms, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("loss_eval on an empty batch".into()));
    }
    weights.validate()?;
    let tree = SeedTree::new(seed);
    let labels = batch.iter().filter(|r| r.label.is_some()).count();
    let scales = RecordScales::for_batch(weights, batch.len(), labels);
    let mut sums = LossTerms::default();
    let mut sce_count = 0usize;
    for (slot, record) in batch.iter().enumerate() {
        let mut noise_rng = tree.stream("loss-eval", &[slot as u64]);
        let noise = LatentNoise::<f32>::draw(&model.config, &mut noise_rng);
        let mut graph = Graph::<f32>::new();
        let nodes = build_record_loss(&mut graph, model, record, &noise, temperature, &scales)?;
        sums.mse += graph.scalar(nodes.mse)? as f64;
        sums.kl += graph.scalar(nodes.divergence)? as f64;
        if let Some(sce) = nodes.sce {
            sums.sce += graph.scalar(sce)? as f64;
            sce_count += 1;
        }
    }
    let b = batch.len() as f64;
    let mse = sums.mse / b;
    let kl = sums.kl / b;
    let sce = if sce_count > 0 {
        sums.sce / sce_count as f64
    } else {
        0.0
    };
    Ok(LossTerms {
        total: weights.beta * kl + weights.alpha * mse + weights.gamma * sce,
        mse,
        kl,
        sce,
    })
}
