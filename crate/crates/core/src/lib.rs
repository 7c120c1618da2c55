//! Modelling weakly-labelled multi-modal robot demonstrations at desk scale.
//!
//! The crate is organised around a pipeline:
//!
//! 1. [`synthworld`] renders scenes and synthesises joint-position / joint-effort
//!    demonstrations with controlled ground-truth factors and one weak label each.
//! 2. [`model`] defines the conditional generative model: image and trajectory
//!    encoders, an amortised posterior, interchangeable latent-prior strategies
//!    (`vae`, `aae`, `gs`) selected by name, a temporal-convolution decoder and
//!    per-axis label heads.
//! 3. [`training`] optimises the weighted loss and persists checkpoints.
//! 4. [`conditioning`] fits per-label Gaussians over the latent space and
//!    generates trajectories from single-label or compositional specifications.
//! 5. [`evaluation`] scores generated trajectories with threshold heuristics and
//!    produces reports, traversals and sensitivity statistics.

pub mod conditioning;
pub mod evaluation;
pub mod labels;
pub mod model;
pub mod rng;
pub mod selftest;
pub mod synthworld;
pub mod training;
