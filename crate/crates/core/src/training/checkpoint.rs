//! Checkpoint persistence: `manifest.json` (config plus named tensor list)
//! and `params.bin` (concatenated little-endian f32 in manifest order).
//! Round-trips are bit-exact; version or shape mismatches reject the load.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use demogen_autodiff::{AdamState, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::config::ModelConfig;
use crate::model::params::{ParamEntry, ParamGroup, ParamStore};
use crate::model::Model;
use crate::training::loss::LossWeights;
use crate::training::TrainError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamMeta {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    /// Parameter names the moment buffers refer to, in order.
    pub over: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub loss_weights: LossWeights,
    pub epoch: usize,
    pub seed: u64,
    pub model_adam: Option<AdamMeta>,
    pub disc_adam: Option<AdamMeta>,
    /// Parameters, then optimizer moment tensors, in `params.bin` order.
    pub tensors: Vec<TensorMeta>,
}

/// All learned state: parameters, configuration, optimizer accumulators.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub loss_weights: LossWeights,
    pub epoch: usize,
    pub seed: u64,
    pub model_adam: Option<AdamState<f32>>,
    pub disc_adam: Option<AdamState<f32>>,
}

fn adam_meta(state: &AdamState<f32>, over: &[usize], store: &ParamStore) -> AdamMeta {
    AdamMeta {
        learning_rate: state.learning_rate as f64,
        beta1: state.beta1 as f64,
        beta2: state.beta2 as f64,
        epsilon: state.epsilon as f64,
        step: state.step,
        over: over.iter().map(|&i| store.entry(i).name.clone()).collect(),
    }
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir)?;
        let store = &self.model.params;
        let mut tensors: Vec<TensorMeta> = store
            .entries()
            .iter()
            .map(|e| TensorMeta {
                name: e.name.clone(),
                group: e.group,
                shape: e.value.shape().to_vec(),
            })
            .collect();
        let mut blobs: Vec<&Tensor<f32>> = store.entries().iter().map(|e| &e.value).collect();

        // moment tensors appended after parameters
        let model_adam_meta = self
            .model_adam
            .as_ref()
            .map(|a| adam_meta(a, &store.model_indices(), store));
        let disc_adam_meta = self
            .disc_adam
            .as_ref()
            .map(|a| adam_meta(a, &store.group_indices(ParamGroup::Discriminator), store));
        for (prefix, adam) in [("opt.model", &self.model_adam), ("opt.disc", &self.disc_adam)] {
            if let Some(a) = adam {
                for (kind, list) in [("m", &a.m), ("v", &a.v)] {
                    for (i, t) in list.iter().enumerate() {
                        tensors.push(TensorMeta {
                            name: format!("{prefix}.{kind}.{i}"),
                            group: ParamGroup::Theta,
                            shape: t.shape().to_vec(),
                        });
                        blobs.push(t);
                    }
                }
            }
        }

        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            loss_weights: self.loss_weights,
            epoch: self.epoch,
            seed: self.seed,
            model_adam: model_adam_meta,
            disc_adam: disc_adam_meta,
            tensors,
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).map_err(|e| TrainError::Format(e.to_string()))?,
        )?;
        let mut w = BufWriter::new(fs::File::create(dir.join("params.bin"))?);
        for t in blobs {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint, TrainError> {
        let manifest: CheckpointManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
                .map_err(|e| TrainError::Format(format!("manifest: {e}")))?;
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(TrainError::Format(format!(
                "checkpoint format version {} unsupported (expected {CHECKPOINT_VERSION})",
                manifest.format_version
            )));
        }

        // The architecture implied by the config fixes the expected tensor
        // list; a manifest that disagrees is corrupt.
        let mut probe_rng = ChaCha8Rng::seed_from_u64(0);
        let reference = ParamStore::init(&manifest.config, &mut probe_rng)
            .map_err(|e| TrainError::Format(format!("config does not build: {e}")))?;
        if manifest.tensors.len() < reference.len() {
            return Err(TrainError::Format(format!(
                "manifest lists {} tensors, architecture has {} parameters",
                manifest.tensors.len(),
                reference.len()
            )));
        }
        for (meta, expect) in manifest.tensors.iter().zip(reference.entries()) {
            if meta.name != expect.name || meta.shape != expect.value.shape() {
                return Err(TrainError::Format(format!(
                    "tensor '{}' {:?} does not match the architecture's '{}' {:?}",
                    meta.name,
                    meta.shape,
                    expect.name,
                    expect.value.shape()
                )));
            }
        }

        let mut r = BufReader::new(fs::File::open(dir.join("params.bin"))?);
        let mut tensors: Vec<Tensor<f32>> = Vec::with_capacity(manifest.tensors.len());
        for meta in &manifest.tensors {
            let n: usize = meta.shape.iter().product();
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)
                .map_err(|e| TrainError::Format(format!("params.bin truncated: {e}")))?;
            let data: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(
                Tensor::new(meta.shape.clone(), data)
                    .map_err(|e| TrainError::Format(e.to_string()))?,
            );
        }
        let mut trailing = Vec::new();
        r.read_to_end(&mut trailing)?;
        if !trailing.is_empty() {
            return Err(TrainError::Format(format!(
                "params.bin has {} trailing bytes",
                trailing.len()
            )));
        }

        let n_params = reference.len();
        let entries: Vec<ParamEntry> = manifest.tensors[..n_params]
            .iter()
            .zip(tensors[..n_params].iter())
            .map(|(meta, value)| ParamEntry {
                name: meta.name.clone(),
                group: meta.group,
                value: value.clone(),
            })
            .collect();
        let params = ParamStore::from_entries(entries);

        let mut cursor = n_params;
        let mut restore_adam = |meta: &Option<AdamMeta>| -> Result<Option<AdamState<f32>>, TrainError> {
            let Some(meta) = meta else { return Ok(None) };
            let count = meta.over.len();
            if cursor + 2 * count > tensors.len() {
                return Err(TrainError::Format(
                    "optimizer moment tensors missing from checkpoint".into(),
                ));
            }
            let m = tensors[cursor..cursor + count].to_vec();
            let v = tensors[cursor + count..cursor + 2 * count].to_vec();
            cursor += 2 * count;
            let mut state = AdamState::new(
                &m.iter().map(|t| t.shape()).collect::<Vec<_>>(),
                meta.learning_rate,
                meta.beta1,
                meta.beta2,
                meta.epsilon,
            );
            state.step = meta.step;
            state.m = m;
            state.v = v;
            Ok(Some(state))
        };
        let model_adam = restore_adam(&manifest.model_adam)?;
        let disc_adam = restore_adam(&manifest.disc_adam)?;
        if cursor != tensors.len() {
            return Err(TrainError::Format(format!(
                "{} unexpected extra tensors in checkpoint",
                tensors.len() - cursor
            )));
        }

        Ok(Checkpoint {
            model: Model {
                config: manifest.config,
                params,
            },
            loss_weights: manifest.loss_weights,
            epoch: manifest.epoch,
            seed: manifest.seed,
            model_adam,
            disc_adam,
        })
    }
}
