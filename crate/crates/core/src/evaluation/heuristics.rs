//! Threshold classifiers that map trajectories back to labels.
//!
//! These are the scoring side of the artifact: the synthetic generator must
//! agree with them on every labelled record, and evaluation uses them to
//! grade model samples.

use demogen_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::labels::{dab, pour};
use crate::synthworld::arm;
use crate::synthworld::scene::{self, LandmarkColor};
use crate::synthworld::SynthError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeuristicConfig {
    /// Soft presses keep channel-1 efforts below this.
    pub effort_threshold: f64,
    /// ... and channel-2 efforts above this.
    pub roll_threshold: f64,
    /// Width of the near-maximum band used for press length.
    pub plateau_band: f64,
    /// Step count separating short from long presses.
    pub plateau_steps: usize,
    /// Step count separating fast from slow rises.
    pub rise_steps: usize,
    /// Effort rows carrying the press signal.
    pub effort_channels: (usize, usize),
    /// Polarity of the band-count rule: `true` reads "more banded steps
    /// means long". Configurable because the opposite reading exists.
    pub long_when_band_exceeds: bool,
    /// Normalised wrist-roll magnitude separating full from partial tilts.
    pub tilt_threshold: f64,
    /// Spatial displacement over which the pour approach heading is measured.
    pub approach_anchor_distance: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            effort_threshold: 0.5,
            roll_threshold: -0.5,
            plateau_band: 0.2,
            plateau_steps: 50,
            rise_steps: 80,
            effort_channels: (1, 2),
            long_when_band_exceeds: true,
            tilt_threshold: 0.325,
            approach_anchor_distance: 0.15,
        }
    }
}

/// Effort-group labels plus the measured statistics behind them.
#[derive(Clone, Copy, Debug)]
pub struct EffortClassification {
    pub effort: usize,
    pub length: usize,
    pub speed: usize,
    pub ch1_max: f64,
    pub ch2_min: f64,
    pub band_counts: (usize, usize),
    pub times_to_max: (usize, usize),
}

fn row<'a>(t: &'a Tensor<f32>, r: usize) -> &'a [f32] {
    let cols = t.shape()[1];
    &t.data()[r * cols..(r + 1) * cols]
}

/// Steps whose |value| sits within `band` of the channel's |max|.
fn band_count(ch: &[f32], band: f64) -> usize {
    let max_abs = ch.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    ch.iter()
        .filter(|&&v| (v as f64).abs() >= max_abs - band)
        .count()
}

/// First step attaining the channel's |max|.
fn time_to_max(ch: &[f32]) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut at = 0;
    for (t, &v) in ch.iter().enumerate() {
        let a = (v as f64).abs();
        if a > best {
            best = a;
            at = t;
        }
    }
    at
}

/// Classify the three effort-derived groups from a `[K, T]` effort tensor.
pub fn classify_effort(efforts: &Tensor<f32>, cfg: &HeuristicConfig) -> EffortClassification {
    let ch1 = row(efforts, cfg.effort_channels.0);
    let ch2 = row(efforts, cfg.effort_channels.1);

    let ch1_max = ch1.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let ch2_min = ch2.iter().fold(f64::INFINITY, |m, &v| m.min(v as f64));
    let soft = ch1_max < cfg.effort_threshold && ch2_min > cfg.roll_threshold;

    let counts = (band_count(ch1, cfg.plateau_band), band_count(ch2, cfg.plateau_band));
    let band_exceeds = counts.0 > cfg.plateau_steps || counts.1 > cfg.plateau_steps;
    let long = band_exceeds == cfg.long_when_band_exceeds;

    let times = (time_to_max(ch1), time_to_max(ch2));
    let slow = times.0 > cfg.rise_steps && times.1 > cfg.rise_steps;

    EffortClassification {
        effort: if soft { dab::SOFT } else { dab::HARD },
        length: if long { dab::LONG } else { dab::SHORT },
        speed: if slow { dab::SLOW } else { dab::FAST },
        ch1_max,
        ch2_min,
        band_counts: counts,
        times_to_max: times,
    }
}

/// Spatial classification of a dab relative to the scene landmark.
#[derive(Clone, Copy, Debug)]
pub struct SpatialClassification {
    pub side: usize,
    pub depth: usize,
    /// Continuous dab pixel (u, v).
    pub dab_px: (f64, f64),
    /// Landmark center of mass (u, v).
    pub landmark_px: (f64, f64),
    /// |du|/W and |dv|/W.
    pub abs_err: (f64, f64),
    /// Euclidean pixel distance divided by image width.
    pub distance: f64,
}

/// The dab point is the end-effector pose at the lowest-z step, projected
/// through the scene camera. Ties break toward `right` / `behind`.
pub fn classify_spatial(
    positions: &Tensor<f32>,
    image: &Tensor<f32>,
    cfg: &HeuristicConfig,
) -> Result<SpatialClassification, SynthError> {
    let _ = cfg;
    let landmark_px = scene::detect_landmark(image, LandmarkColor::Red)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);

    // Lowest z = highest q2 channel value; first occurrence.
    let t_dab = time_to_max(row(positions, 2));
    let q0 = arm::denormalize_angle(row(positions, 0)[t_dab] as f64);
    let q1 = arm::denormalize_angle(row(positions, 1)[t_dab] as f64);
    let dab_px = scene::project(arm::fk_planar(q0, q1), w, h);

    let du = dab_px.0 - landmark_px.0;
    let dv = dab_px.1 - landmark_px.1;
    Ok(SpatialClassification {
        side: if du < 0.0 { dab::LEFT } else { dab::RIGHT },
        depth: if dv > 0.0 { dab::FRONT } else { dab::BEHIND },
        dab_px,
        landmark_px,
        abs_err: (du.abs() / w as f64, dv.abs() / w as f64),
        distance: (du * du + dv * dv).sqrt() / w as f64,
    })
}

/// Pour classification: target cup, approach heading and tilt amount.
#[derive(Clone, Copy, Debug)]
pub struct PourClassification {
    pub cup: usize,
    pub approach: usize,
    pub tilt: usize,
    pub max_tilt: f64,
    pub pour_step: usize,
}

/// The pour moment is the first step reaching half the wrist roll's |max|;
/// the cup is whichever landmark the end effector is closest to there, and
/// the heading is measured from the last point at least
/// `approach_anchor_distance` away.
pub fn classify_pour(
    positions: &Tensor<f32>,
    image: &Tensor<f32>,
    cfg: &HeuristicConfig,
) -> Result<PourClassification, SynthError> {
    let red_px = scene::detect_landmark(image, LandmarkColor::Red)?;
    let blue_px = scene::detect_landmark(image, LandmarkColor::Blue)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);

    let ch3 = row(positions, 3);
    let max_tilt = ch3.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let pour_step = ch3
        .iter()
        .position(|&v| (v as f64).abs() >= 0.5 * max_tilt && max_tilt > 0.0)
        .unwrap_or_else(|| time_to_max(ch3));

    let pose = |t: usize| {
        let q0 = arm::denormalize_angle(row(positions, 0)[t] as f64);
        let q1 = arm::denormalize_angle(row(positions, 1)[t] as f64);
        arm::fk_planar(q0, q1)
    };
    let at_pour = pose(pour_step);
    let at_pour_px = scene::project(at_pour, w, h);
    let d_red = (at_pour_px.0 - red_px.0).hypot(at_pour_px.1 - red_px.1);
    let d_blue = (at_pour_px.0 - blue_px.0).hypot(at_pour_px.1 - blue_px.1);

    // Walk back until the end effector was anchor-distance away.
    let mut anchor = pose(0);
    for t in (0..pour_step).rev() {
        let p = pose(t);
        if (p.0 - at_pour.0).hypot(p.1 - at_pour.1) >= cfg.approach_anchor_distance {
            anchor = p;
            break;
        }
    }
    let heading = (at_pour.0 - anchor.0, at_pour.1 - anchor.1);

    Ok(PourClassification {
        cup: if d_red <= d_blue { pour::RED } else { pour::BLUE },
        approach: if heading.1.abs() >= heading.0.abs() {
            pour::BEHIND
        } else {
            pour::SIDEWAYS
        },
        tilt: if max_tilt >= cfg.tilt_threshold {
            pour::FULLY
        } else {
            pour::PARTIALLY
        },
        max_tilt,
        pour_step,
    })
}

/// Label assigned by the heuristics for an arbitrary (group, scenario) pair.
pub fn classify_group(
    scenario: crate::labels::Scenario,
    group: usize,
    positions: &Tensor<f32>,
    efforts: &Tensor<f32>,
    image: &Tensor<f32>,
    cfg: &HeuristicConfig,
) -> Result<usize, SynthError> {
    match scenario {
        crate::labels::Scenario::Dab => match group {
            dab::SIDE => Ok(classify_spatial(positions, image, cfg)?.side),
            dab::DEPTH => Ok(classify_spatial(positions, image, cfg)?.depth),
            dab::EFFORT => Ok(classify_effort(efforts, cfg).effort),
            dab::LENGTH => Ok(classify_effort(efforts, cfg).length),
            dab::SPEED => Ok(classify_effort(efforts, cfg).speed),
            other => Err(SynthError::Input(format!("dab has no group {other}"))),
        },
        crate::labels::Scenario::Pour => {
            let c = classify_pour(positions, image, cfg)?;
            match group {
                pour::CUP => Ok(c.cup),
                pour::APPROACH => Ok(c.approach),
                pour::TILT => Ok(c.tilt),
                other => Err(SynthError::Input(format!("pour has no group {other}"))),
            }
        }
    }
}
