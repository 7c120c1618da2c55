//! Dataset assembly and on-disk format.
//!
//! A dataset directory holds `manifest.json` plus `records.bin`, a dense
//! little-endian f32 stream: per record the image (3*H*W), positions (K*T),
//! efforts (K*T), then two little-endian i32s holding the label group and
//! label index (-1/-1 when unlabelled).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use demogen_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::evaluation::heuristics::{self, HeuristicConfig};
use crate::labels::{LabelSchema, Scenario, WeakLabel};
use crate::rng::SeedTree;
use crate::synthworld::demo::{self, AugmentMode};
use crate::synthworld::scene::sample_scene;
use crate::synthworld::{DemoRecord, SynthError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scenario: Scenario,
    pub joint_count: usize,
    pub horizon: usize,
    pub height: usize,
    pub width: usize,
    pub schema: LabelSchema,
    pub record_count: usize,
    /// Sorted indices of the validation split.
    pub validation_indices: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<DemoRecord>,
}

impl Dataset {
    pub fn train_indices(&self) -> Vec<usize> {
        let val: std::collections::BTreeSet<usize> = self
            .manifest
            .validation_indices
            .iter()
            .map(|&i| i as usize)
            .collect();
        (0..self.records.len()).filter(|i| !val.contains(i)).collect()
    }

    pub fn validation_indices(&self) -> Vec<usize> {
        self.manifest
            .validation_indices
            .iter()
            .map(|&i| i as usize)
            .collect()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic 90-10 split: order records by an index hash, take the first
/// tenth as validation.
pub fn validation_split(record_count: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..record_count as u32).collect();
    order.sort_by_key(|&i| (splitmix(0xda7a_5e7 ^ u64::from(i)), i));
    let mut val: Vec<u32> = order[..record_count / 10].to_vec();
    val.sort_unstable();
    val
}

/// Generate a balanced weakly-labelled dataset: `n_base` synthesised demos
/// (label group round-robin, label alternating within each group), each
/// expanded with `aug_factor - 1` augmented copies. Augmented copies are
/// re-drawn (bounded retries) until the heuristics still reproduce the
/// record's label, so classifier/ground-truth agreement holds over the whole
/// dataset.
pub fn build_dataset(
    scenario: Scenario,
    n_base: usize,
    aug_factor: usize,
    image_size: usize,
    seed: u64,
) -> Result<Dataset, SynthError> {
    let schema = LabelSchema::for_scenario(scenario);
    if n_base < 2 * schema.label_count() {
        return Err(SynthError::Input(format!(
            "n_base {} below two demos per label ({})",
            n_base,
            2 * schema.label_count()
        )));
    }
    if aug_factor == 0 {
        return Err(SynthError::Input("aug_factor must be at least 1".into()));
    }
    let tree = SeedTree::new(seed).child("dataset");
    let cfg = HeuristicConfig::default();
    let groups = schema.group_count();

    let mut records = Vec::with_capacity(n_base * aug_factor);
    for i in 0..n_base {
        let group = i % groups;
        let label = WeakLabel {
            group,
            label: (i / groups) % schema.group_size(group)?,
        };
        let base = synth_labelled(scenario, image_size, label, &tree, i as u64)?;
        debug_assert!(agrees(&base, &cfg));
        let mut copies = Vec::with_capacity(aug_factor - 1);
        for j in 1..aug_factor {
            let mode = if j % 2 == 1 {
                AugmentMode::SlideLeft
            } else {
                AugmentMode::Noise
            };
            let mut chosen = None;
            for attempt in 0..8u64 {
                let mut rng = tree.stream("augment", &[i as u64, j as u64, attempt]);
                let candidate = demo::augment(&base, mode, &mut rng);
                if agrees(&candidate, &cfg) {
                    chosen = Some(candidate);
                    break;
                }
            }
            copies.push(chosen.unwrap_or_else(|| base.clone()));
        }
        records.push(base);
        records.append(&mut copies);
    }

    let first = &records[0];
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        scenario,
        joint_count: first.joint_count(),
        horizon: first.horizon(),
        height: first.image.shape()[1],
        width: first.image.shape()[2],
        schema,
        record_count: records.len(),
        validation_indices: validation_split(records.len()),
    };
    Ok(Dataset { manifest, records })
}

/// Synthesise one labelled demo, retrying scene/params draws until the
/// heuristics agree (pour scenes can place the distractor cup on the path).
fn synth_labelled(
    scenario: Scenario,
    image_size: usize,
    label: WeakLabel,
    tree: &SeedTree,
    idx: u64,
) -> Result<DemoRecord, SynthError> {
    let cfg = HeuristicConfig::default();
    let mut last_err = None;
    for attempt in 0..16u64 {
        let mut rng = tree.stream("demo", &[idx, attempt]);
        let scene = sample_scene(scenario, image_size, &mut rng);
        let result = match scenario {
            Scenario::Dab => demo::sample_dab_params(&scene, label, &mut rng)
                .and_then(|p| demo::synth_dab_demo(&scene, &p, Some(label))),
            Scenario::Pour => {
                let p = demo::sample_pour_params(label, &mut rng);
                demo::synth_pour_demo(&scene, &p, Some(label))
            }
        };
        match result {
            Ok(rec) if agrees(&rec, &cfg) => return Ok(rec),
            Ok(_) => last_err = Some(SynthError::Input("heuristic disagreement".into())),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| SynthError::Input("demo synthesis failed".into())))
}

/// Does the heuristic classification of the record's labelled group match
/// its label?
pub fn agrees(record: &DemoRecord, cfg: &HeuristicConfig) -> bool {
    let Some(label) = record.label else {
        return true;
    };
    let Some(scene) = record.scene.as_ref() else {
        return true;
    };
    heuristics::classify_group(
        scene.scenario,
        label.group,
        &record.positions,
        &record.efforts,
        &record.image,
        cfg,
    )
    .map(|got| got == label.label)
    .unwrap_or(false)
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        let manifest_json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| SynthError::Format(e.to_string()))?;
        fs::write(dir.join("manifest.json"), manifest_json)?;

        let mut w = BufWriter::new(fs::File::create(dir.join("records.bin"))?);
        for rec in &self.records {
            for t in [&rec.image, &rec.positions, &rec.efforts] {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            let (g, l) = rec
                .label
                .map(|l| (l.group as i32, l.label as i32))
                .unwrap_or((-1, -1));
            w.write_all(&g.to_le_bytes())?;
            w.write_all(&l.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset, SynthError> {
        let manifest: DatasetManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
                .map_err(|e| SynthError::Format(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(SynthError::Format(format!(
                "dataset format version {} unsupported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let (h, w, k, t) = (
            manifest.height,
            manifest.width,
            manifest.joint_count,
            manifest.horizon,
        );
        let mut r = BufReader::new(fs::File::open(dir.join("records.bin"))?);
        let mut records = Vec::with_capacity(manifest.record_count);
        let read_f32s = |r: &mut BufReader<fs::File>, n: usize| -> Result<Vec<f32>, SynthError> {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)
                .map_err(|e| SynthError::Format(format!("records.bin truncated: {e}")))?;
            Ok(buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect())
        };
        for _ in 0..manifest.record_count {
            let image = Tensor::new(vec![3, h, w], read_f32s(&mut r, 3 * h * w)?)
                .map_err(|e| SynthError::Format(e.to_string()))?;
            let positions = Tensor::new(vec![k, t], read_f32s(&mut r, k * t)?)
                .map_err(|e| SynthError::Format(e.to_string()))?;
            let efforts = Tensor::new(vec![k, t], read_f32s(&mut r, k * t)?)
                .map_err(|e| SynthError::Format(e.to_string()))?;
            let mut ints = [0u8; 8];
            r.read_exact(&mut ints)
                .map_err(|e| SynthError::Format(format!("records.bin truncated: {e}")))?;
            let g = i32::from_le_bytes([ints[0], ints[1], ints[2], ints[3]]);
            let l = i32::from_le_bytes([ints[4], ints[5], ints[6], ints[7]]);
            let label = (g >= 0 && l >= 0).then(|| WeakLabel {
                group: g as usize,
                label: l as usize,
            });
            if let Some(lbl) = label {
                manifest.schema.validate(lbl)?;
            }
            records.push(DemoRecord {
                image,
                positions,
                efforts,
                label,
                scene: None,
                params: None,
            });
        }
        let mut trailing = Vec::new();
        r.read_to_end(&mut trailing)?;
        if !trailing.is_empty() {
            return Err(SynthError::Format(format!(
                "records.bin has {} trailing bytes",
                trailing.len()
            )));
        }
        Ok(Dataset { manifest, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_exact_and_deterministic() {
        let a = validation_split(1000);
        let b = validation_split(1000);
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn small_dataset_counts_and_single_labels() {
        let ds = build_dataset(Scenario::Dab, 20, 3, 32, 5).unwrap();
        assert_eq!(ds.records.len(), 60);
        assert_eq!(ds.manifest.record_count, 60);
        assert_eq!(ds.manifest.validation_indices.len(), 6);
        assert!(ds.records.iter().all(|r| r.label.is_some()));
    }

    #[test]
    fn rejects_too_small_base_count() {
        assert!(build_dataset(Scenario::Dab, 10, 2, 32, 5).is_err());
    }
}
