//! Graph builders for the fixed architectures: encoders, posterior MLP,
//! temporal-convolution decoder, label heads and the adversarial
//! discriminator. Generic over the element type so the finite-difference
//! checker can rebuild everything in f64.

use demogen_autodiff::{Graph, NodeId, Real};

use crate::model::config::ModelConfig;
use crate::model::params::{ParamStore, DECODER_BLOCKS, DECODER_KERNEL, IMAGE_CHANNELS, TRAJ_CONVS};
use crate::model::ModelError;

/// Couples a graph with the parameter store, inserting each parameter as a
/// leaf at most once and remembering which entries the graph uses.
pub struct NetBuilder<'a, T: Real> {
    pub graph: &'a mut Graph<T>,
    store: &'a ParamStore,
    leaf_for: Vec<Option<NodeId>>,
    used: Vec<(usize, NodeId)>,
}

impl<'a, T: Real> NetBuilder<'a, T> {
    pub fn new(graph: &'a mut Graph<T>, store: &'a ParamStore) -> Self {
        let n = store.len();
        Self {
            graph,
            store,
            leaf_for: vec![None; n],
            used: Vec::new(),
        }
    }

    /// Leaf node for a named parameter (memoized).
    pub fn param(&mut self, name: &str) -> Result<NodeId, ModelError> {
        let idx = self.store.lookup(name)?;
        if let Some(id) = self.leaf_for[idx] {
            return Ok(id);
        }
        let id = self.graph.param(self.store.entry(idx).value.cast::<T>())?;
        self.leaf_for[idx] = Some(id);
        self.used.push((idx, id));
        Ok(id)
    }

    /// (store index, leaf) pairs in first-use order.
    pub fn used_params(&self) -> &[(usize, NodeId)] {
        &self.used
    }

    fn dense(&mut self, x: NodeId, name: &str) -> Result<NodeId, ModelError> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        Ok(self.graph.dense(x, w, b)?)
    }

    fn conv1d(
        &mut self,
        x: NodeId,
        name: &str,
        dilation: usize,
        padding: usize,
    ) -> Result<NodeId, ModelError> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        Ok(self.graph.conv1d(x, w, b, dilation, padding)?)
    }

    fn conv2d(&mut self, x: NodeId, name: &str, stride: usize, padding: usize) -> Result<NodeId, ModelError> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        Ok(self.graph.conv2d(x, w, b, stride, padding)?)
    }
}

/// Image embedding i: five stride-2 convolutions with ReLU, flatten, FC with
/// ReLU, linear FC to `image_embed_dim`.
pub fn encode_image<T: Real>(
    nb: &mut NetBuilder<T>,
    cfg: &ModelConfig,
    image: NodeId,
) -> Result<NodeId, ModelError> {
    let mut x = image;
    for l in 0..IMAGE_CHANNELS.len() - 1 {
        x = nb.conv2d(x, &format!("img_enc.conv{l}"), 2, 1)?;
        x = nb.graph.relu(x)?;
    }
    let flat = nb.graph.reshape(x, vec![cfg.image_flat_dim()])?;
    let h = nb.dense(flat, "img_enc.fc0")?;
    let h = nb.graph.relu(h)?;
    nb.dense(h, "img_enc.fc1")
}

/// Trajectory embedding tau: three length-preserving 1-D convolutions with
/// ReLU, global mean pool over time, FC with ReLU, linear FC.
pub fn encode_trajectory<T: Real>(
    nb: &mut NetBuilder<T>,
    _cfg: &ModelConfig,
    x: NodeId,
) -> Result<NodeId, ModelError> {
    let mut h = x;
    for (l, (_k, p)) in TRAJ_CONVS.iter().enumerate() {
        h = nb.conv1d(h, &format!("traj_enc.conv{l}"), 1, *p)?;
        h = nb.graph.relu(h)?;
    }
    let pooled = nb.graph.mean_pool_last(h)?;
    let h = nb.dense(pooled, "traj_enc.fc0")?;
    let h = nb.graph.relu(h)?;
    nb.dense(h, "traj_enc.fc1")
}

/// Amortised posterior parameters.
pub struct PosteriorNodes {
    pub mu: NodeId,
    pub log_var: NodeId,
    /// Per-group relaxed-categorical logits (gs variant only).
    pub group_logits: Vec<NodeId>,
}

/// Posterior MLP over [i; tau]: two hidden layers, a linear (mu, log sigma)
/// head with the log-variance clamped, and per-group logit heads for gs.
pub fn infer_posterior<T: Real>(
    nb: &mut NetBuilder<T>,
    cfg: &ModelConfig,
    image_embed: NodeId,
    traj_embed: NodeId,
) -> Result<PosteriorNodes, ModelError> {
    let joined = nb.graph.concat(&[image_embed, traj_embed])?;
    let h = nb.dense(joined, "posterior.fc0")?;
    let h = nb.graph.relu(h)?;
    let h = nb.dense(h, "posterior.fc1")?;
    let h = nb.graph.relu(h)?;
    let out = nb.dense(h, "posterior.out")?;
    let mu = nb.graph.slice(out, 0, cfg.latent_dim)?;
    let raw_lv = nb.graph.slice(out, cfg.latent_dim, cfg.latent_dim)?;
    let log_var = nb
        .graph
        .clamp(raw_lv, cfg.posterior_logvar_min, cfg.posterior_logvar_max)?;
    let mut group_logits = Vec::new();
    if cfg.variant == crate::model::config::VariantKind::Gs {
        for j in 0..cfg.group_count() {
            group_logits.push(nb.dense(h, &format!("posterior.group{j}"))?);
        }
    }
    Ok(PosteriorNodes {
        mu,
        log_var,
        group_logits,
    })
}

/// One temporal block: two dilated convolutions with an inner ReLU and a
/// residual connection (1x1 convolution when channel counts differ).
fn temporal_block<T: Real>(
    nb: &mut NetBuilder<T>,
    name: &str,
    x: NodeId,
    in_ch: usize,
    out_ch: usize,
    dilation: usize,
) -> Result<NodeId, ModelError> {
    let pad = dilation * (DECODER_KERNEL - 1) / 2;
    let h = nb.conv1d(x, &format!("{name}.conv0"), dilation, pad)?;
    let h = nb.graph.relu(h)?;
    let h = nb.conv1d(h, &format!("{name}.conv1"), dilation, pad)?;
    let skip = if in_ch == out_ch {
        x
    } else {
        nb.conv1d(x, &format!("{name}.skip"), 1, 0)?
    };
    Ok(nb.graph.add(h, skip)?)
}

/// Decoder nodes: the tiled `[code; i; t]` input and the output mean.
pub struct DecodeNodes {
    pub tile: NodeId,
    pub out: NodeId,
}

/// Decoder mean: tile [code; i] across the horizon, append the time channel,
/// run the dilation-1/2/4 temporal blocks. Output is linear.
pub fn decode<T: Real>(
    nb: &mut NetBuilder<T>,
    cfg: &ModelConfig,
    code: NodeId,
    image_embed: NodeId,
) -> Result<DecodeNodes, ModelError> {
    let h = nb.graph.concat(&[code, image_embed])?;
    let tile = nb.graph.tile_with_time(h, cfg.horizon)?;
    let mut x = tile;
    let mut cin = cfg.code_dim() + cfg.image_embed_dim + 1;
    for (bidx, (cout, dil)) in DECODER_BLOCKS.iter().enumerate() {
        x = temporal_block(nb, &format!("decoder.block{bidx}"), x, cin, *cout, *dil)?;
        cin = *cout;
    }
    Ok(DecodeNodes { tile, out: x })
}

/// Logits of group `j`'s label head, read from that group's own axis only.
pub fn label_logits<T: Real>(
    nb: &mut NetBuilder<T>,
    cfg: &ModelConfig,
    code: NodeId,
    group: usize,
) -> Result<NodeId, ModelError> {
    let (start, len) = cfg.axis_slice(group)?;
    let axis = nb.graph.slice(code, start, len)?;
    nb.dense(axis, &format!("head.group{group}"))
}

/// Discriminator logit for the adversarial variant.
pub fn discriminator_logit<T: Real>(
    nb: &mut NetBuilder<T>,
    _cfg: &ModelConfig,
    code: NodeId,
) -> Result<NodeId, ModelError> {
    let h = nb.dense(code, "disc.fc0")?;
    let h = nb.graph.relu(h)?;
    let h = nb.dense(h, "disc.fc1")?;
    let h = nb.graph.relu(h)?;
    nb.dense(h, "disc.fc2")
}
