//! Single-label conditioning accuracy: sample with the fitted label
//! Gaussians, grade with the threshold heuristics.

use demogen_autodiff::Tensor;
use rayon::prelude::*;

use crate::conditioning::sample::sample_single_label;
use crate::conditioning::table::LabelGaussianTable;
use crate::evaluation::heuristics::{classify_group, classify_spatial, HeuristicConfig};
use crate::evaluation::report::{mean_std, LabelAccuracy};
use crate::evaluation::{split_channels, EvalError};
use crate::labels::{dab, Scenario, WeakLabel};
use crate::model::Model;
use crate::rng::SeedTree;
use crate::synthworld::scene::{render_scene, SceneSpec};

/// Score already-generated trajectories against one target label.
/// Returns (correct, per-sample spatial distances of misclassified samples).
pub fn score_label(
    scenario: Scenario,
    label: WeakLabel,
    trajectories: &[Tensor<f32>],
    image: &Tensor<f32>,
    joint_count: usize,
    cfg: &HeuristicConfig,
) -> Result<(usize, Vec<(f64, f64, f64)>), EvalError> {
    let mut correct = 0;
    let mut miss_dist = Vec::new();
    let spatial = scenario == Scenario::Dab && (label.group == dab::SIDE || label.group == dab::DEPTH);
    for traj in trajectories {
        let (positions, efforts) = split_channels(traj, joint_count)?;
        let got = classify_group(scenario, label.group, &positions, &efforts, image, cfg)?;
        if got == label.label {
            correct += 1;
        } else if spatial {
            let s = classify_spatial(&positions, image, cfg)?;
            miss_dist.push((s.distance, s.abs_err.0, s.abs_err.1));
        }
    }
    Ok((correct, miss_dist))
}

/// For every label in the schema: condition on it over each test scene,
/// classify the samples, report accuracy mean/std across scenes and the MAE
/// of misclassified spatial samples.
pub fn eval_single_label(
    model: &Model,
    table: &LabelGaussianTable,
    scenes: &[SceneSpec],
    samples_per_label: usize,
    seed: u64,
    cfg: &HeuristicConfig,
) -> Result<Vec<LabelAccuracy>, EvalError> {
    if scenes.is_empty() {
        return Err(EvalError::Config("no test scenes supplied".into()));
    }
    let schema = model.config.schema();
    let tree = SeedTree::new(seed).child("eval-single");
    let mut out = Vec::new();
    for label in schema.all_labels() {
        let per_scene: Vec<(usize, Vec<(f64, f64, f64)>)> = scenes
            .par_iter()
            .enumerate()
            .map(|(s_idx, scene)| {
                let image = render_scene(scene, tree.derive("render", &[s_idx as u64]))?;
                let gen = sample_single_label(
                    model,
                    table,
                    &image,
                    label,
                    samples_per_label,
                    tree.derive(
                        "draw-seed",
                        &[label.group as u64, label.label as u64, s_idx as u64],
                    ),
                )?;
                score_label(
                    model.config.scenario,
                    label,
                    &gen.trajectories,
                    &image,
                    model.config.joint_count,
                    cfg,
                )
            })
            .collect::<Result<_, EvalError>>()?;

        let accs: Vec<f64> = per_scene
            .iter()
            .map(|(c, _)| *c as f64 / samples_per_label as f64)
            .collect();
        let (accuracy_mean, accuracy_std) = mean_std(&accs);
        let misses: Vec<(f64, f64, f64)> =
            per_scene.into_iter().flat_map(|(_, m)| m).collect();
        let mae = (!misses.is_empty()).then(|| {
            misses.iter().map(|m| m.0).sum::<f64>() / misses.len() as f64
        });
        let mae_u = (!misses.is_empty()).then(|| {
            misses.iter().map(|m| m.1).sum::<f64>() / misses.len() as f64
        });
        let mae_v = (!misses.is_empty()).then(|| {
            misses.iter().map(|m| m.2).sum::<f64>() / misses.len() as f64
        });
        out.push(LabelAccuracy {
            group: schema.group_name(label.group).to_string(),
            label: schema.label_name(label),
            accuracy_mean,
            accuracy_std,
            per_scene_accuracy: accs,
            samples_per_scene: samples_per_label,
            misclassified: misses.len(),
            mae,
            mae_u,
            mae_v,
        });
    }
    Ok(out)
}
