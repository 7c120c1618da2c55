//! Scene specification, orthographic rendering and landmark detection.

use demogen_autodiff::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labels::Scenario;
use crate::synthworld::SynthError;

/// Distance landmarks must keep from the table edges.
pub const EDGE_MARGIN: f64 = 0.15;
/// Minimum separation between the two pour cups.
pub const PAIR_SEPARATION: f64 = 0.3;
/// Landmark diameter in table units.
pub const LANDMARK_DIAMETER: f64 = 0.08;
/// Base intensity of the table surface.
const BACKGROUND_GRAY: f32 = 0.8;
/// Uniform per-pixel noise amplitude on the background.
const PIXEL_NOISE: f32 = 0.02;
/// Landmarks are sampled inside this window so labelled dab offsets fit.
const SAMPLE_LO: f64 = 0.2;
const SAMPLE_HI: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkColor {
    Red,
    Blue,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub color: LandmarkColor,
    pub position: (f64, f64),
}

/// Scene geometry: dab scenes carry one red cube, pour scenes a red and a
/// blue cup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scenario: Scenario,
    pub landmarks: Vec<Landmark>,
    pub height: usize,
    pub width: usize,
}

impl SceneSpec {
    pub fn dab(cube: (f64, f64), size: usize) -> Self {
        Self {
            scenario: Scenario::Dab,
            landmarks: vec![Landmark {
                color: LandmarkColor::Red,
                position: cube,
            }],
            height: size,
            width: size,
        }
    }

    pub fn pour(red: (f64, f64), blue: (f64, f64), size: usize) -> Self {
        Self {
            scenario: Scenario::Pour,
            landmarks: vec![
                Landmark {
                    color: LandmarkColor::Red,
                    position: red,
                },
                Landmark {
                    color: LandmarkColor::Blue,
                    position: blue,
                },
            ],
            height: size,
            width: size,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for lm in &self.landmarks {
            let (x, y) = lm.position;
            if !(EDGE_MARGIN..=1.0 - EDGE_MARGIN).contains(&x)
                || !(EDGE_MARGIN..=1.0 - EDGE_MARGIN).contains(&y)
            {
                return Err(SynthError::Input(format!(
                    "landmark at ({x:.3}, {y:.3}) violates the {EDGE_MARGIN} edge margin"
                )));
            }
        }
        match self.scenario {
            Scenario::Dab => {
                if self.landmarks.len() != 1 || self.landmarks[0].color != LandmarkColor::Red {
                    return Err(SynthError::Input("dab scene wants one red cube".into()));
                }
            }
            Scenario::Pour => {
                if self.landmarks.len() != 2
                    || self.landmarks[0].color != LandmarkColor::Red
                    || self.landmarks[1].color != LandmarkColor::Blue
                {
                    return Err(SynthError::Input(
                        "pour scene wants a red cup then a blue cup".into(),
                    ));
                }
                let a = self.landmarks[0].position;
                let b = self.landmarks[1].position;
                let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                if d < PAIR_SEPARATION {
                    return Err(SynthError::Input(format!(
                        "cups {d:.3} apart, need at least {PAIR_SEPARATION}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn landmark(&self, color: LandmarkColor) -> Option<(f64, f64)> {
        self.landmarks
            .iter()
            .find(|l| l.color == color)
            .map(|l| l.position)
    }

    /// Seed derived from the scene content: identical specs render
    /// identically, distinct specs get independent pixel noise.
    pub fn content_seed(&self) -> u64 {
        let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        eat(self.height as u64);
        eat(self.width as u64);
        for lm in &self.landmarks {
            eat(lm.color as u64);
            eat(lm.position.0.to_bits());
            eat(lm.position.1.to_bits());
        }
        h
    }
}

/// Draw a fresh scene: landmark positions uniform in the sampling window,
/// pour cups resampled until separated.
pub fn sample_scene(scenario: Scenario, size: usize, rng: &mut ChaCha8Rng) -> SceneSpec {
    let draw = |rng: &mut ChaCha8Rng| {
        (
            rng.gen_range(SAMPLE_LO..SAMPLE_HI),
            rng.gen_range(SAMPLE_LO..SAMPLE_HI),
        )
    };
    match scenario {
        Scenario::Dab => SceneSpec::dab(draw(rng), size),
        Scenario::Pour => loop {
            let red = draw(rng);
            let blue = draw(rng);
            let d = ((red.0 - blue.0).powi(2) + (red.1 - blue.1).powi(2)).sqrt();
            if d >= PAIR_SEPARATION + 0.02 {
                return SceneSpec::pour(red, blue, size);
            }
        },
    }
}

/// Orthographic projection into continuous image coordinates. `v` is flipped
/// so "front" (small y) lands at larger v.
pub fn project(point: (f64, f64), width: usize, height: usize) -> (f64, f64) {
    (point.0 * width as f64, (1.0 - point.1) * height as f64)
}

/// Render to a `[3, H, W]` image in [0, 1]: noisy gray background, dab cube
/// as a filled axis-aligned square, pour cups as filled discs.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<Tensor<f32>, SynthError> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0f32; 3 * h * w];
    for px in 0..h * w {
        let noise: f32 = rng.gen_range(-PIXEL_NOISE..=PIXEL_NOISE);
        let v = (BACKGROUND_GRAY + noise).clamp(0.0, 1.0);
        data[px] = v;
        data[h * w + px] = v;
        data[2 * h * w + px] = v;
    }

    let radius = 0.5 * LANDMARK_DIAMETER * w as f64;
    for lm in &spec.landmarks {
        let (uf, vf) = project(lm.position, w, h);
        let (cu, cv) = (uf.round(), vf.round());
        let rgb: [f32; 3] = match lm.color {
            LandmarkColor::Red => [1.0, 0.0, 0.0],
            LandmarkColor::Blue => [0.0, 0.0, 1.0],
        };
        let square = spec.scenario == Scenario::Dab;
        let lo_y = ((cv - radius).floor().max(0.0)) as usize;
        let hi_y = ((cv + radius).ceil().min(h as f64 - 1.0)) as usize;
        let lo_x = ((cu - radius).floor().max(0.0)) as usize;
        let hi_x = ((cu + radius).ceil().min(w as f64 - 1.0)) as usize;
        for py in lo_y..=hi_y {
            for px in lo_x..=hi_x {
                let du = px as f64 - cu;
                let dv = py as f64 - cv;
                let inside = if square {
                    du.abs().max(dv.abs()) <= radius
                } else {
                    du * du + dv * dv <= radius * radius
                };
                if inside {
                    let idx = py * w + px;
                    data[idx] = rgb[0];
                    data[h * w + idx] = rgb[1];
                    data[2 * h * w + idx] = rgb[2];
                }
            }
        }
    }
    Ok(Tensor::new(vec![3, h, w], data).expect("consistent shape"))
}

/// Center of mass (u, v) of pixels dominated by the given color channel.
/// A pixel matches when the target channel exceeds 0.5 and is at least 1.5x
/// each other channel.
pub fn detect_landmark(image: &Tensor<f32>, color: LandmarkColor) -> Result<(f64, f64), SynthError> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(SynthError::Input(format!(
            "expected [3, H, W] image, got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let target = match color {
        LandmarkColor::Red => 0,
        LandmarkColor::Blue => 2,
    };
    let data = image.data();
    let mut sum_u = 0.0f64;
    let mut sum_v = 0.0f64;
    let mut count = 0usize;
    for py in 0..h {
        for px in 0..w {
            let idx = py * w + px;
            let c = data[target * plane + idx];
            if c <= 0.5 {
                continue;
            }
            let dominated = (0..3).all(|o| o == target || c > 1.5 * data[o * plane + idx]);
            if dominated {
                sum_u += px as f64;
                sum_v += py as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(SynthError::Detection(format!(
            "no {color:?}-dominated pixels found"
        )));
    }
    Ok((sum_u / count as f64, sum_v / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_renders_centered_and_detector_round_trips() {
        let spec = SceneSpec::dab((0.5, 0.5), 64);
        let img = render_scene(&spec, 3).unwrap();
        let (u, v) = detect_landmark(&img, LandmarkColor::Red).unwrap();
        assert!((u - 32.0).abs() <= 1.0, "u = {u}");
        assert!((v - 32.0).abs() <= 1.0, "v = {v}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = SceneSpec::dab((0.31, 0.62), 64);
        let a = render_scene(&spec, 17).unwrap();
        let b = render_scene(&spec, 17).unwrap();
        assert_eq!(a.data(), b.data());
        let c = render_scene(&spec, 18).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn all_gray_image_fails_detection() {
        let img = Tensor::new(vec![3, 8, 8], vec![0.8; 192]).unwrap();
        assert!(matches!(
            detect_landmark(&img, LandmarkColor::Red),
            Err(SynthError::Detection(_))
        ));
    }

    #[test]
    fn out_of_margin_landmark_is_rejected() {
        let spec = SceneSpec::dab((0.05, 0.5), 64);
        assert!(render_scene(&spec, 0).is_err());
    }

    #[test]
    fn pour_landmarks_stay_separated_in_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let spec = sample_scene(Scenario::Pour, 64, &mut rng);
            let img = render_scene(&spec, 9).unwrap();
            let r = detect_landmark(&img, LandmarkColor::Red).unwrap();
            let b = detect_landmark(&img, LandmarkColor::Blue).unwrap();
            let d = ((r.0 - b.0).powi(2) + (r.1 - b.1).powi(2)).sqrt();
            assert!(d >= 0.3 * 64.0, "cups {d:.1}px apart");
        }
    }
}
