//! Scene-sensitivity analysis: fix latent codes, vary the scene, and measure
//! how much the generated joint-angle channels move.

use crate::evaluation::report::SensitivityReport;
use crate::evaluation::{split_channels, EvalError};
use crate::model::Model;
use crate::rng::SeedTree;
use crate::synthworld::dataset::Dataset;
use crate::synthworld::scene::{render_scene, SceneSpec};

/// Per-joint (max - min) of the position channels over a dataset; the
/// normalisation denominator for sensitivity.
pub fn position_channel_ranges(dataset: &Dataset) -> Vec<f64> {
    let k = dataset.manifest.joint_count;
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for rec in &dataset.records {
        let t = rec.horizon();
        for j in 0..k {
            for &v in &rec.positions.data()[j * t..(j + 1) * t] {
                lo[j] = lo[j].min(v as f64);
                hi[j] = hi[j].max(v as f64);
            }
        }
    }
    lo.iter()
        .zip(&hi)
        .map(|(&l, &h)| (h - l).max(1e-6))
        .collect()
}

/// For each fixed latent code and joint: the standard deviation of the
/// generated position channel across scenes, normalised by the joint's data
/// range, averaged over time, then over codes; reported per joint and
/// averaged over joints.
pub fn sensitivity(
    model: &Model,
    codes: &[Vec<f64>],
    scenes: &[SceneSpec],
    channel_ranges: &[f64],
    seed: u64,
) -> Result<SensitivityReport, EvalError> {
    if scenes.len() < 2 {
        return Err(EvalError::Config(
            "sensitivity needs at least two scenes".into(),
        ));
    }
    if codes.is_empty() {
        return Err(EvalError::Config(
            "sensitivity needs at least one latent sample".into(),
        ));
    }
    let k = model.config.joint_count;
    if channel_ranges.len() != k {
        return Err(EvalError::Config(format!(
            "{} channel ranges for {k} joints",
            channel_ranges.len()
        )));
    }
    let tree = SeedTree::new(seed).child("sensitivity");
    let t_len = model.config.horizon;

    // decoded[scene][code] -> positions. Pixel noise is a function of the
    // scene content, so identical specs condition identically.
    let mut decoded = Vec::with_capacity(scenes.len());
    for scene in scenes.iter() {
        let image = render_scene(scene, tree.derive("render", &[scene.content_seed()]))?;
        let mut session = model.decoder_session(&image)?;
        let mut per_code = Vec::with_capacity(codes.len());
        for code in codes {
            let traj = session.decode(code)?;
            per_code.push(split_channels(&traj, k)?.0);
        }
        decoded.push(per_code);
    }

    let n_scenes = scenes.len() as f64;
    let mut per_joint = vec![0.0f64; k];
    for j in 0..k {
        let mut acc = 0.0;
        for (c_idx, _) in codes.iter().enumerate() {
            for t in 0..t_len {
                let vals: Vec<f64> = decoded
                    .iter()
                    .map(|scene| scene[c_idx].data()[j * t_len + t] as f64)
                    .collect();
                let mean = vals.iter().sum::<f64>() / n_scenes;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_scenes;
                acc += var.sqrt() / channel_ranges[j];
            }
        }
        per_joint[j] = acc / (codes.len() * t_len) as f64;
    }
    let mean_variation = per_joint.iter().sum::<f64>() / k as f64;
    Ok(SensitivityReport {
        per_joint,
        mean_variation,
        scenes: scenes.len(),
        latent_samples: codes.len(),
    })
}
