//! Deterministic synthetic capture rig: scenes, a surrogate arm, demo
//! synthesis, augmentation and dataset serialization.

pub mod arm;
pub mod dataset;
pub mod demo;
pub mod scene;

use demogen_autodiff::Tensor;
use thiserror::Error;

use crate::labels::WeakLabel;
use crate::synthworld::demo::DemoParams;
use crate::synthworld::scene::SceneSpec;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("input error: {0}")]
    Input(String),
    #[error("unreachable target: {0}")]
    Unreachable(String),
    #[error("detection error: {0}")]
    Detection(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Label(#[from] crate::labels::LabelError),
}

/// One demonstration: rendered scene, joint positions and efforts over the
/// horizon, at most one weak label. `scene` and `params` hold the generating
/// ground truth; they are kept out of serialized datasets and exist only for
/// oracles.
#[derive(Clone, Debug)]
pub struct DemoRecord {
    /// `[3, H, W]` in [0, 1].
    pub image: Tensor<f32>,
    /// `[K, T]` normalised to [-1, 1] (up to augmentation noise).
    pub positions: Tensor<f32>,
    /// `[K, T]` normalised likewise.
    pub efforts: Tensor<f32>,
    pub label: Option<WeakLabel>,
    pub scene: Option<SceneSpec>,
    pub params: Option<DemoParams>,
}

impl DemoRecord {
    pub fn joint_count(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn horizon(&self) -> usize {
        self.positions.shape()[1]
    }

    /// Model input: positions stacked over efforts, `[2K, T]`.
    pub fn stacked_channels(&self) -> Tensor<f32> {
        let k = self.joint_count();
        let t = self.horizon();
        let mut data = Vec::with_capacity(2 * k * t);
        data.extend_from_slice(self.positions.data());
        data.extend_from_slice(self.efforts.data());
        Tensor::new(vec![2 * k, t], data).expect("shape")
    }
}
