//! Evaluation protocol: heuristic scoring, accuracy/MAE reports, latent
//! traversals, sensitivity analysis and plot emission.

pub mod compositional;
pub mod heuristics;
pub mod interpolate;
pub mod plots;
pub mod report;
pub mod sensitivity;
pub mod single_label;

use demogen_autodiff::Tensor;
use thiserror::Error;

use crate::labels::Scenario;
use crate::rng::SeedTree;
use crate::synthworld::scene::{sample_scene, SceneSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Synth(#[from] crate::synthworld::SynthError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Cond(#[from] crate::conditioning::CondError),
    #[error(transparent)]
    Ad(#[from] demogen_autodiff::AdError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Split a generated `[2K, T]` trajectory into positions and efforts.
pub fn split_channels(traj: &Tensor<f32>, joint_count: usize) -> Result<(Tensor<f32>, Tensor<f32>), EvalError> {
    let shape = traj.shape();
    if shape.len() != 2 || shape[0] != 2 * joint_count {
        return Err(EvalError::Config(format!(
            "trajectory shape {shape:?} does not stack 2x{joint_count} channels"
        )));
    }
    let t = shape[1];
    let positions = Tensor::new(
        vec![joint_count, t],
        traj.data()[..joint_count * t].to_vec(),
    )
    .map_err(demogen_autodiff::AdError::from)?;
    let efforts = Tensor::new(
        vec![joint_count, t],
        traj.data()[joint_count * t..].to_vec(),
    )
    .map_err(demogen_autodiff::AdError::from)?;
    Ok((positions, efforts))
}

/// Held-out test scenes: drawn from a stream the dataset generator never
/// touches, so they are unseen regardless of the dataset seed.
pub fn test_scenes(scenario: Scenario, count: usize, image_size: usize, seed: u64) -> Vec<SceneSpec> {
    let tree = SeedTree::new(seed).child("test-scenes");
    (0..count)
        .map(|i| {
            let mut rng = tree.stream("scene", &[i as u64]);
            sample_scene(scenario, image_size, &mut rng)
        })
        .collect()
}
