//! Self-check of the objective against its evidence-bound decomposition.
//!
//! With unit weights and the divergence/likelihood terms expressed in
//! log-density units, the loss must equal the negative of
//! `E_q log p(x|i,c) + E_q log p(y|c) - KL(q || p)` term by term (single
//! latent sample on both routes). The graph route uses the training kernels;
//! the reference route recomputes each term in closed form from raw values.

use demogen_autodiff::Graph;

use crate::model::config::VariantKind;
use crate::model::variants::LatentNoise;
use crate::model::Model;
use crate::rng::SeedTree;
use crate::synthworld::DemoRecord;
use crate::training::loss::{build_record_loss, RecordScales};
use crate::training::TrainError;

pub const VLB_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default)]
pub struct VlbRecordReport {
    /// Graph-route terms in log-density units.
    pub kl_graph: f64,
    pub recon_nll_graph: f64,
    pub sce_graph: f64,
    /// Closed-form reference terms.
    pub kl_direct: f64,
    pub recon_nll_direct: f64,
    pub sce_direct: f64,
    pub max_term_gap: f64,
    /// |loss - (-VLB)| for this record.
    pub total_gap: f64,
}

#[derive(Clone, Debug, Default)]
pub struct VlbReport {
    pub records: Vec<VlbRecordReport>,
    pub max_gap: f64,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v - lse).collect()
}

/// Term-by-term comparison over a batch; Gaussian-prior variant only.
pub fn vlb_decomposition_check(
    model: &Model,
    batch: &[&DemoRecord],
    seed: u64,
) -> Result<VlbReport, TrainError> {
    if model.config.variant != VariantKind::Vae {
        return Err(TrainError::Config(
            "decomposition check applies to the Gaussian-prior variant".into(),
        ));
    }
    let tree = SeedTree::new(seed);
    let mut report = VlbReport::default();
    for (slot, record) in batch.iter().enumerate() {
        let mut noise_rng = tree.stream("vlb", &[slot as u64]);
        let noise = LatentNoise::<f64>::draw(&model.config, &mut noise_rng);
        let mut graph = Graph::<f64>::new();
        // Unit weights; keep per-record terms unscaled.
        let scales = RecordScales {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        };
        let nodes = build_record_loss(
            &mut graph,
            model,
            record,
            &noise,
            model.config.gumbel_temp_end,
            &scales,
        )?;

        let x = record.stacked_channels().to_f64_vec();
        let decoded = graph.value(nodes.decoded)?.to_f64_vec();
        let dims = x.len() as f64;
        let sigma2 = model.config.decoder_sigma * model.config.decoder_sigma;

        // Graph route: read the kernels' outputs and convert the MSE (a mean)
        // into the Gaussian log density it stands for.
        let kl_graph = graph.scalar(nodes.divergence)?;
        let mse_graph = graph.scalar(nodes.mse)?;
        let recon_nll_graph = 0.5 * dims * mse_graph / sigma2
            + 0.5 * dims * (std::f64::consts::TAU * sigma2).ln();
        let sce_graph = nodes
            .sce
            .map(|n| graph.scalar(n))
            .transpose()?
            .unwrap_or(0.0);

        // Reference route: closed forms over raw values.
        let mu = graph.value(nodes.posterior.mu)?.to_f64_vec();
        let lv = graph.value(nodes.posterior.log_var)?.to_f64_vec();
        let kl_direct = 0.5
            * mu.iter()
                .zip(&lv)
                .map(|(&m, &l)| m * m + l.exp() - l - 1.0)
                .sum::<f64>();
        let sse: f64 = x.iter().zip(&decoded).map(|(a, b)| (a - b) * (a - b)).sum();
        let recon_nll_direct =
            0.5 * sse / sigma2 + 0.5 * dims * (std::f64::consts::TAU * sigma2).ln();
        let sce_direct = match record.label {
            Some(label) => {
                let code = graph.value(nodes.code)?.to_f64_vec();
                let probs_logits = head_logits(model, &code, label.group)?;
                -log_softmax(&probs_logits)[label.label]
            }
            None => 0.0,
        };

        let loss_total = kl_graph + recon_nll_graph + sce_graph;
        let neg_vlb = kl_direct + recon_nll_direct + sce_direct;
        let rec = VlbRecordReport {
            kl_graph,
            recon_nll_graph,
            sce_graph,
            kl_direct,
            recon_nll_direct,
            sce_direct,
            max_term_gap: (kl_graph - kl_direct)
                .abs()
                .max((recon_nll_graph - recon_nll_direct).abs())
                .max((sce_graph - sce_direct).abs()),
            total_gap: (loss_total - neg_vlb).abs(),
        };
        report.max_gap = report.max_gap.max(rec.max_term_gap).max(rec.total_gap);
        report.records.push(rec);
    }
    Ok(report)
}

/// Raw head logits for one group, computed outside the training graph.
fn head_logits(model: &Model, code: &[f64], group: usize) -> Result<Vec<f64>, TrainError> {
    let (start, len) = model.config.axis_slice(group)?;
    let axis = &code[start..start + len];
    let w = &model
        .params
        .entry(model.params.lookup(&format!("head.group{group}.w"))?)
        .value;
    let b = &model
        .params
        .entry(model.params.lookup(&format!("head.group{group}.b"))?)
        .value;
    let classes = b.len();
    let logits = (0..classes)
        .map(|o| {
            b.data()[o] as f64
                + (0..len)
                    .map(|i| w.data()[o * len + i] as f64 * axis[i])
                    .sum::<f64>()
        })
        .collect();
    Ok(logits)
}
