//! Mini-batch training loop: seeded shuffling, per-record graphs evaluated in
//! parallel with order-preserving gradient accumulation, Adam updates, and an
//! interleaved discriminator step for the adversarial variant.

use std::collections::BTreeSet;
use std::time::Instant;

use demogen_autodiff::{AdamState, Graph, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::config::{ModelConfig, VariantKind};
use crate::model::networks::{discriminator_logit, NetBuilder};
use crate::model::params::ParamGroup;
use crate::model::variants::LatentNoise;
use crate::model::Model;
use crate::rng::SeedTree;
use crate::synthworld::dataset::Dataset;
use crate::synthworld::DemoRecord;
use crate::training::checkpoint::Checkpoint;
use crate::training::loss::{build_record_loss, LossTerms, LossWeights, RecordScales};
use crate::training::TrainError;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            weights: LossWeights::default(),
            seed: 0,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train: LossTerms,
    pub validation: LossTerms,
    pub wall_secs: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    /// Record indices whose gradients reached the optimizer (split audit).
    pub gradient_record_indices: BTreeSet<usize>,
}

struct RecordPass {
    mse: f64,
    divergence: f64,
    sce: Option<f64>,
    grads: Vec<(usize, Tensor<f32>)>,
}

/// Forward+backward for one record; returns term values and parameter grads.
fn record_pass(
    model: &Model,
    record: &DemoRecord,
    noise: &LatentNoise<f32>,
    temperature: f64,
    scales: &RecordScales,
) -> Result<RecordPass, TrainError> {
    let mut graph = Graph::<f32>::new();
    let nodes = build_record_loss(&mut graph, model, record, noise, temperature, scales)?;
    let mse = graph.scalar(nodes.mse)? as f64;
    let divergence = graph.scalar(nodes.divergence)? as f64;
    let sce = nodes
        .sce
        .map(|n| graph.scalar(n).map(|v| v as f64))
        .transpose()?;
    graph.backward(nodes.total).map_err(|e| TrainError::Numeric {
        detail: format!("{e}; terms mse={mse:.4} div={divergence:.4} sce={sce:?}"),
        epoch: 0,
        batch: 0,
    })?;
    let grads = nodes
        .used_params
        .iter()
        .map(|&(idx, leaf)| Ok((idx, graph.grad(leaf)?.clone())))
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(RecordPass {
        mse,
        divergence,
        sce,
        grads,
    })
}

/// One discriminator update: prior codes labelled real, detached posterior
/// codes labelled fake.
fn discriminator_step(
    model: &mut Model,
    adam: &mut AdamState<f32>,
    disc_indices: &[usize],
    records: &[&DemoRecord],
    tree: &SeedTree,
    epoch: usize,
    batch: usize,
) -> Result<(), TrainError> {
    let cfg = model.config.clone();
    let posterior_codes: Vec<Vec<f64>> = records
        .iter()
        .enumerate()
        .map(|(slot, r)| {
            let mut rng = tree.stream("disc-posterior", &[epoch as u64, batch as u64, slot as u64]);
            model.posterior_code_sample(r, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let prior_codes: Vec<Vec<f64>> = (0..records.len())
        .map(|slot| {
            let mut rng = tree.stream("disc-prior", &[epoch as u64, batch as u64, slot as u64]);
            model.variant::<f32>().prior_code(&cfg, &mut rng)
        })
        .collect();

    let mut graph = Graph::<f32>::new();
    let (loss, used) = {
        let mut nb = NetBuilder::new(&mut graph, &model.params);
        let mut terms = Vec::new();
        for (codes, target_one) in [(&prior_codes, true), (&posterior_codes, false)] {
            for code in codes.iter() {
                let c = nb
                    .graph
                    .input(Tensor::from_f64_slice(vec![code.len()], code)?)?;
                let logit = discriminator_logit(&mut nb, &cfg, c)?;
                terms.push(nb.graph.bce_with_logits(logit, target_one)?);
            }
        }
        let sum = nb.graph.add_all(&terms)?;
        let loss = nb.graph.scale(sum, 1.0 / terms.len() as f64)?;
        (loss, nb.used_params().to_vec())
    };
    graph.backward(loss).map_err(|e| TrainError::Numeric {
        detail: format!("discriminator step: {e}"),
        epoch,
        batch,
    })?;

    let mut by_index: std::collections::BTreeMap<usize, Tensor<f32>> = Default::default();
    for (idx, leaf) in used {
        by_index.insert(idx, graph.grad(leaf)?.clone());
    }
    apply_adam(model, adam, disc_indices, &by_index)
}

/// Ordered gradient application: indices are the optimizer's domain; missing
/// entries contribute zero.
fn apply_adam(
    model: &mut Model,
    adam: &mut AdamState<f32>,
    indices: &[usize],
    grads: &std::collections::BTreeMap<usize, Tensor<f32>>,
) -> Result<(), TrainError> {
    let zero_shapes: Vec<Tensor<f32>> = indices
        .iter()
        .map(|&i| Tensor::zeros(model.params.entry(i).value.shape().to_vec()))
        .collect();
    let grad_list: Vec<&Tensor<f32>> = indices
        .iter()
        .zip(&zero_shapes)
        .map(|(&i, zero)| grads.get(&i).unwrap_or(zero))
        .collect();
    let index_set: BTreeSet<usize> = indices.iter().copied().collect();
    let mut param_refs: Vec<&mut Tensor<f32>> = model
        .params
        .entries_mut()
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| index_set.contains(i))
        .map(|(_, e)| &mut e.value)
        .collect();
    adam.step_refs(&mut param_refs, &grad_list)?;
    Ok(())
}

fn check_dataset(cfg: &ModelConfig, dataset: &Dataset) -> Result<(), TrainError> {
    let m = &dataset.manifest;
    if m.scenario != cfg.scenario
        || m.joint_count != cfg.joint_count
        || m.horizon != cfg.horizon
        || m.height != cfg.image_size
        || m.width != cfg.image_size
    {
        return Err(TrainError::Config(format!(
            "dataset (scenario {:?}, K={}, T={}, {}x{}) does not match the model config",
            m.scenario, m.joint_count, m.horizon, m.height, m.width
        )));
    }
    Ok(())
}

/// Evaluate mean loss terms over records without touching parameters.
fn forward_terms(
    model: &Model,
    records: &[&DemoRecord],
    weights: &LossWeights,
    temperature: f64,
    tree: &SeedTree,
    tag_epoch: usize,
) -> Result<LossTerms, TrainError> {
    if records.is_empty() {
        return Ok(LossTerms::default());
    }
    let labels = records.iter().filter(|r| r.label.is_some()).count();
    let scales = RecordScales::for_batch(weights, records.len(), labels);
    let noises: Vec<LatentNoise<f32>> = (0..records.len())
        .map(|slot| {
            let mut rng = tree.stream("val-noise", &[tag_epoch as u64, slot as u64]);
            LatentNoise::draw(&model.config, &mut rng)
        })
        .collect();
    let passes: Vec<(f64, f64, Option<f64>)> = records
        .par_iter()
        .zip(noises.par_iter())
        .map(|(record, noise)| {
            let mut graph = Graph::<f32>::new();
            let nodes = build_record_loss(&mut graph, model, record, noise, temperature, &scales)?;
            Ok((
                graph.scalar(nodes.mse)? as f64,
                graph.scalar(nodes.divergence)? as f64,
                nodes
                    .sce
                    .map(|n| graph.scalar(n).map(|v| v as f64))
                    .transpose()?,
            ))
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(reduce_terms(&passes, weights))
}

fn reduce_terms(passes: &[(f64, f64, Option<f64>)], weights: &LossWeights) -> LossTerms {
    let n = passes.len().max(1) as f64;
    let mse = passes.iter().map(|p| p.0).sum::<f64>() / n;
    let kl = passes.iter().map(|p| p.1).sum::<f64>() / n;
    let sce_vals: Vec<f64> = passes.iter().filter_map(|p| p.2).collect();
    let sce = if sce_vals.is_empty() {
        0.0
    } else {
        sce_vals.iter().sum::<f64>() / sce_vals.len() as f64
    };
    LossTerms {
        total: weights.beta * kl + weights.alpha * mse + weights.gamma * sce,
        mse,
        kl,
        sce,
    }
}

/// Train a fresh model on the dataset's training split.
pub fn train(
    dataset: &Dataset,
    model_config: ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    train_config.weights.validate()?;
    check_dataset(&model_config, dataset)?;
    let tree = SeedTree::new(train_config.seed).child("train");
    let mut init_rng = tree.stream("init", &[]);
    let mut model = Model::init(model_config.clone(), &mut init_rng)?;

    let model_indices = model.params.model_indices();
    let model_shapes: Vec<&[usize]> = model_indices
        .iter()
        .map(|&i| model.params.entry(i).value.shape())
        .collect();
    let mut model_adam = AdamState::<f32>::new(
        &model_shapes,
        train_config.learning_rate,
        train_config.adam_beta1,
        train_config.adam_beta2,
        train_config.adam_epsilon,
    );
    let disc_indices = model.params.group_indices(ParamGroup::Discriminator);
    let mut disc_adam = (model_config.variant == VariantKind::Aae).then(|| {
        let shapes: Vec<&[usize]> = disc_indices
            .iter()
            .map(|&i| model.params.entry(i).value.shape())
            .collect();
        AdamState::<f32>::new(
            &shapes,
            train_config.learning_rate,
            train_config.adam_beta1,
            train_config.adam_beta2,
            train_config.adam_epsilon,
        )
    });

    let train_indices = dataset.train_indices();
    let val_records: Vec<&DemoRecord> = dataset
        .validation_indices()
        .into_iter()
        .map(|i| &dataset.records[i])
        .collect();
    let mut audit: BTreeSet<usize> = BTreeSet::new();
    let mut metrics = Vec::with_capacity(train_config.epochs);

    for epoch in 0..train_config.epochs {
        let t0 = Instant::now();
        let temperature = model_config.temperature(epoch, train_config.epochs);
        let mut order = train_indices.clone();
        shuffle(&mut order, &tree, epoch);

        let mut epoch_passes: Vec<(f64, f64, Option<f64>)> = Vec::with_capacity(order.len());
        for (batch_no, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let records: Vec<&DemoRecord> = chunk.iter().map(|&i| &dataset.records[i]).collect();

            if let Some(disc) = disc_adam.as_mut() {
                discriminator_step(
                    &mut model, disc, &disc_indices, &records, &tree, epoch, batch_no,
                )?;
            }

            let labels = records.iter().filter(|r| r.label.is_some()).count();
            let scales = RecordScales::for_batch(&train_config.weights, records.len(), labels);
            let noises: Vec<LatentNoise<f32>> = (0..records.len())
                .map(|slot| {
                    let mut rng = tree.stream(
                        "noise",
                        &[epoch as u64, batch_no as u64, slot as u64],
                    );
                    LatentNoise::draw(&model_config, &mut rng)
                })
                .collect();

            let passes: Vec<RecordPass> = records
                .par_iter()
                .zip(noises.par_iter())
                .map(|(record, noise)| record_pass(&model, record, noise, temperature, &scales))
                .collect::<Result<_, TrainError>>()
                .map_err(|e| e.with_location(epoch, batch_no))?;

            let mut grad_sums: std::collections::BTreeMap<usize, Tensor<f32>> = Default::default();
            for pass in &passes {
                for (idx, g) in &pass.grads {
                    match grad_sums.get_mut(idx) {
                        Some(acc) => acc.add_assign(g)?,
                        None => {
                            grad_sums.insert(*idx, g.clone());
                        }
                    }
                }
                epoch_passes.push((pass.mse, pass.divergence, pass.sce));
            }
            audit.extend(chunk.iter().copied());
            apply_adam(&mut model, &mut model_adam, &model_indices, &grad_sums)?;
        }

        let train_terms = reduce_terms(&epoch_passes, &train_config.weights);
        let validation = forward_terms(
            &model,
            &val_records,
            &train_config.weights,
            temperature,
            &tree,
            epoch,
        )?;
        let m = EpochMetrics {
            epoch,
            train: train_terms,
            validation,
            wall_secs: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&m);
        metrics.push(m);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            loss_weights: train_config.weights,
            epoch: train_config.epochs,
            seed: train_config.seed,
            model_adam: Some(model_adam),
            disc_adam,
        },
        metrics,
        gradient_record_indices: audit,
    })
}

/// Fisher-Yates with a per-epoch stream.
fn shuffle(order: &mut [usize], tree: &SeedTree, epoch: usize) {
    use rand::Rng;
    let mut rng = tree.stream("shuffle", &[epoch as u64]);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}
