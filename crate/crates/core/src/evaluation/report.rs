//! Machine-readable evaluation results.

use serde::{Deserialize, Serialize};

use crate::labels::Scenario;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelAccuracy {
    pub group: String,
    pub label: String,
    /// Mean and standard deviation of per-scene accuracy.
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub per_scene_accuracy: Vec<f64>,
    pub samples_per_scene: usize,
    pub misclassified: usize,
    /// Euclidean pixel distance / image width, over misclassified samples of
    /// spatial labels; absent when nothing was misclassified or the label is
    /// not spatial.
    pub mae: Option<f64>,
    pub mae_u: Option<f64>,
    pub mae_v: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComboResult {
    pub labels: Vec<String>,
    pub label_indices: Vec<usize>,
    /// Per-axis sampling provenance ("label:<group>=<index>" or "prior").
    pub plan: Vec<String>,
    pub accuracy: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompositionalReport {
    pub combos: Vec<ComboResult>,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Normalised per-joint variation across scenes, averaged over time and
    /// latent samples.
    pub per_joint: Vec<f64>,
    /// Mean over joints.
    pub mean_variation: f64,
    pub scenes: usize,
    pub latent_samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub variant: String,
    pub weak: bool,
    pub seed: u64,
    pub scene_count: usize,
    pub single_label: Option<Vec<LabelAccuracy>>,
    pub compositional: Option<CompositionalReport>,
    pub sensitivity: Option<SensitivityReport>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
