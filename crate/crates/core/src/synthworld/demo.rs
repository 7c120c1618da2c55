//! Trajectory synthesis with controlled ground-truth factors.
//!
//! Every factor is sampled from ranges that keep a safety margin from the
//! classification thresholds (0.05 in normalised effort, 5+ time steps,
//! 0.15 table units of spatial offset), so the threshold heuristics
//! reproduce the assigned label exactly on clean records and almost always
//! on augmented ones.

use demogen_autodiff::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::labels::{dab, pour, WeakLabel};
use crate::synthworld::arm;
use crate::synthworld::scene::{render_scene, SceneSpec};
use crate::synthworld::{DemoRecord, SynthError};

/// Fixed trajectory length.
pub const HORIZON: usize = 240;
/// Height of the sharp final segment of an effort rise/fall.
const SNAP: f64 = 0.22;
const RISE_SNAP_STEPS: usize = 6;
const FALL_SNAP_STEPS: usize = 4;
const FALL_DECAY_STEPS: usize = 8;
/// Steps for the press to lift back off.
const RELEASE_STEPS: usize = 12;
/// All motion must finish this many steps before the horizon so left slides
/// never clip it.
const TAIL_RESERVE: usize = 21;
/// Amplitude caps for nuisance channels.
const POSITION_NUISANCE: f64 = 0.1;
const EFFORT_NUISANCE: f64 = 0.05;
/// Distance of the pour staging point from the target cup.
const STAGING_OFFSET: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct DabParams {
    pub dab_point: (f64, f64),
    /// Peak normalised effort m.
    pub effort_magnitude: f64,
    /// Steps from motion start to first maximal effort.
    pub rise_steps: usize,
    /// Steps the maximal effort is held.
    pub plateau_steps: usize,
    /// Idle steps before the motion starts.
    pub start_offset: usize,
    pub nuisance_seed: u64,
    pub render_seed: u64,
    /// Label implied by the factors for every group, generator bookkeeping.
    pub implied: [usize; 5],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PourParams {
    /// 0 = red cup, 1 = blue cup.
    pub target_cup: usize,
    /// 0 = behind (+y), 1 = sideways (+x).
    pub approach: usize,
    /// Tilt fraction f of a quarter turn.
    pub tilt_fraction: f64,
    pub start_offset: usize,
    pub approach_steps: usize,
    pub final_steps: usize,
    pub tilt_steps: usize,
    pub nuisance_seed: u64,
    pub render_seed: u64,
    pub implied: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub enum DemoParams {
    Dab(DabParams),
    Pour(PourParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentMode {
    Noise,
    SlideLeft,
}

fn ease(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Smooth bounded noise: a few random cosines rescaled to a random amplitude
/// below `cap`.
fn spline(rng: &mut ChaCha8Rng, cap: f64, len: usize) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.2..1.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let amp = cap * rng.gen_range(0.3..1.0);
    let raw: Vec<f64> = (0..len)
        .map(|t| {
            comps
                .iter()
                .map(|(a, f, p)| a * (std::f64::consts::TAU * f * t as f64 / len as f64 + p).cos())
                .sum()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    raw.iter().map(|v| v * amp / peak).collect()
}

/// Press effort profile: a mostly-linear rise whose final `SNAP` of height
/// arrives in a short burst, a plateau, and a snap-then-decay fall. The snap
/// keeps the near-maximum band short so press length is governed by the
/// plateau alone.
fn effort_profile(tau: isize, rise: usize, plateau: usize, m: f64) -> f64 {
    if tau < 0 {
        return 0.0;
    }
    let tau = tau as usize;
    let linear = rise - RISE_SNAP_STEPS;
    if tau < linear {
        (m - SNAP) * tau as f64 / linear as f64
    } else if tau < rise {
        (m - SNAP) + SNAP * (tau - linear) as f64 / RISE_SNAP_STEPS as f64
    } else if tau < rise + plateau {
        m
    } else if tau < rise + plateau + FALL_SNAP_STEPS {
        m - SNAP * (tau - rise - plateau + 1) as f64 / FALL_SNAP_STEPS as f64
    } else if tau < rise + plateau + FALL_SNAP_STEPS + FALL_DECAY_STEPS {
        (m - SNAP) * (1.0 - (tau - rise - plateau - FALL_SNAP_STEPS + 1) as f64 / FALL_DECAY_STEPS as f64)
    } else {
        0.0
    }
}

/// Sample factor ranges consistent with one weak label, leaving margins.
pub fn sample_dab_params(
    scene: &SceneSpec,
    label: WeakLabel,
    rng: &mut ChaCha8Rng,
) -> Result<DabParams, SynthError> {
    let lm = scene.landmarks[0].position;
    let start_offset = rng.gen_range(10..=15);

    let pick = |rng: &mut ChaCha8Rng, group: usize| -> usize {
        if label.group == group {
            label.label
        } else {
            rng.gen_range(0..2)
        }
    };

    let side = pick(rng, dab::SIDE);
    let depth = pick(rng, dab::DEPTH);
    let effort = pick(rng, dab::EFFORT);
    let length = pick(rng, dab::LENGTH);
    let speed = pick(rng, dab::SPEED);

    let offset = |rng: &mut ChaCha8Rng, room: f64| -> f64 {
        let hi = room.min(0.30).max(0.1501);
        rng.gen_range(0.15..hi)
    };
    // left dab = smaller x; front dab = smaller y (larger v after flip).
    let dx = if side == dab::LEFT {
        -offset(rng, lm.0 - 0.05)
    } else {
        offset(rng, 0.95 - lm.0)
    };
    let dy = if depth == dab::FRONT {
        -offset(rng, lm.1 - 0.05)
    } else {
        offset(rng, 0.95 - lm.1)
    };

    let effort_magnitude = if effort == dab::SOFT {
        rng.gen_range(0.32..0.45)
    } else {
        rng.gen_range(0.55..0.95)
    };
    let rise_steps = if speed == dab::FAST {
        rng.gen_range(25..=60)
    } else {
        rng.gen_range((106 - start_offset).max(96)..=125)
    };
    let budget = HORIZON - TAIL_RESERVE - start_offset - rise_steps - FALL_SNAP_STEPS - FALL_DECAY_STEPS;
    let plateau_steps = if length == dab::SHORT {
        rng.gen_range(6..=32)
    } else {
        rng.gen_range(48..=budget.min(130))
    };

    Ok(DabParams {
        dab_point: (lm.0 + dx, lm.1 + dy),
        effort_magnitude,
        rise_steps,
        plateau_steps,
        start_offset,
        nuisance_seed: rng.gen(),
        render_seed: rng.gen(),
        implied: [side, depth, effort, length, speed],
    })
}

/// Build the full dab record: smooth reach + press positions, press-shaped
/// efforts on channels 1/2, nuisance elsewhere.
pub fn synth_dab_demo(
    scene: &SceneSpec,
    params: &DabParams,
    label: Option<WeakLabel>,
) -> Result<DemoRecord, SynthError> {
    let t_len = HORIZON;
    let k = arm::JOINT_COUNT;
    let (s0, r, p, m) = (
        params.start_offset,
        params.rise_steps,
        params.plateau_steps,
        params.effort_magnitude,
    );
    if r <= RISE_SNAP_STEPS || m <= SNAP {
        return Err(SynthError::Input(format!(
            "rise {r} / magnitude {m} too small for the press profile"
        )));
    }
    if s0 + r + p + FALL_SNAP_STEPS + FALL_DECAY_STEPS > t_len - TAIL_RESERVE {
        return Err(SynthError::Input("press does not fit the horizon".into()));
    }

    let rest = arm::ik(arm::REST_POINT)?;
    let target = arm::ik(params.dab_point)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.nuisance_seed);

    let mut positions = vec![0.0f32; k * t_len];
    let mut efforts = vec![0.0f32; k * t_len];

    for t in 0..t_len {
        let u = ease((t as f64 - s0 as f64) / r as f64);
        let q0 = rest.0 + (target.0 - rest.0) * u;
        let q1 = rest.1 + (target.1 - rest.1) * u;
        let press_end = s0 + r + p;
        let q2 = if t < press_end {
            u
        } else {
            1.0 - ease((t - press_end) as f64 / RELEASE_STEPS as f64)
        };
        positions[t] = arm::normalize_angle(q0) as f32;
        positions[t_len + t] = arm::normalize_angle(q1) as f32;
        positions[2 * t_len + t] = q2 as f32;

        let e = effort_profile(t as isize - s0 as isize, r, p, m);
        efforts[t_len + t] = e as f32;
        efforts[2 * t_len + t] = -e as f32;
    }
    for j in 3..k {
        let s = spline(&mut rng, POSITION_NUISANCE, t_len);
        for t in 0..t_len {
            positions[j * t_len + t] = s[t] as f32;
        }
    }
    for j in [0usize, 3, 4, 5, 6] {
        let s = spline(&mut rng, EFFORT_NUISANCE, t_len);
        for t in 0..t_len {
            efforts[j * t_len + t] = s[t] as f32;
        }
    }

    Ok(DemoRecord {
        image: render_scene(scene, params.render_seed)?,
        positions: Tensor::new(vec![k, t_len], positions).expect("shape"),
        efforts: Tensor::new(vec![k, t_len], efforts).expect("shape"),
        label,
        scene: Some(scene.clone()),
        params: Some(DemoParams::Dab(params.clone())),
    })
}

pub fn sample_pour_params(label: WeakLabel, rng: &mut ChaCha8Rng) -> PourParams {
    let pick = |rng: &mut ChaCha8Rng, group: usize| -> usize {
        if label.group == group {
            label.label
        } else {
            rng.gen_range(0..2)
        }
    };
    let target_cup = pick(rng, pour::CUP);
    let approach = pick(rng, pour::APPROACH);
    let tilt = pick(rng, pour::TILT);
    let tilt_fraction = if tilt == pour::FULLY {
        rng.gen_range(0.8..1.0)
    } else {
        rng.gen_range(0.3..0.5)
    };
    PourParams {
        target_cup,
        approach,
        tilt_fraction,
        start_offset: rng.gen_range(10..=15),
        approach_steps: rng.gen_range(40..=65),
        final_steps: rng.gen_range(40..=65),
        tilt_steps: rng.gen_range(30..=50),
        nuisance_seed: rng.gen(),
        render_seed: rng.gen(),
        implied: [target_cup, approach, tilt],
    }
}

/// Pour record: reach to a staging point offset from the target cup, slide in
/// along the approach axis, then tilt the wrist. Efforts carry no signal.
pub fn synth_pour_demo(
    scene: &SceneSpec,
    params: &PourParams,
    label: Option<WeakLabel>,
) -> Result<DemoRecord, SynthError> {
    let t_len = HORIZON;
    let k = arm::JOINT_COUNT;
    let cup = scene.landmarks[params.target_cup].position;
    let staging = if params.approach == pour::BEHIND {
        (cup.0, cup.1 - STAGING_OFFSET)
    } else {
        (cup.0 - STAGING_OFFSET, cup.1)
    };
    let (s0, s1, s2, s3) = (
        params.start_offset,
        params.approach_steps,
        params.final_steps,
        params.tilt_steps,
    );
    if s0 + s1 + s2 + s3 > t_len - TAIL_RESERVE {
        return Err(SynthError::Input("pour does not fit the horizon".into()));
    }

    let rest = arm::ik(arm::REST_POINT)?;
    let stage_q = arm::ik(staging)?;
    let cup_q = arm::ik(cup)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.nuisance_seed);

    let mut positions = vec![0.0f32; k * t_len];
    let mut efforts = vec![0.0f32; k * t_len];
    let arrive = s0 + s1 + s2;
    for t in 0..t_len {
        let (q0, q1) = if t < s0 {
            rest
        } else if t < s0 + s1 {
            let u = ease((t - s0) as f64 / s1 as f64);
            (
                rest.0 + (stage_q.0 - rest.0) * u,
                rest.1 + (stage_q.1 - rest.1) * u,
            )
        } else if t < arrive {
            let u = ease((t - s0 - s1) as f64 / s2 as f64);
            (
                stage_q.0 + (cup_q.0 - stage_q.0) * u,
                stage_q.1 + (cup_q.1 - stage_q.1) * u,
            )
        } else {
            cup_q
        };
        positions[t] = arm::normalize_angle(q0) as f32;
        positions[t_len + t] = arm::normalize_angle(q1) as f32;
        // stays at hover height
        positions[2 * t_len + t] = 0.0;
        let tilt = if t < arrive {
            0.0
        } else {
            params.tilt_fraction * std::f64::consts::FRAC_PI_2 * ease((t - arrive) as f64 / s3 as f64)
        };
        positions[3 * t_len + t] = arm::normalize_angle(tilt) as f32;
    }
    for j in 4..k {
        let s = spline(&mut rng, POSITION_NUISANCE, t_len);
        for t in 0..t_len {
            positions[j * t_len + t] = s[t] as f32;
        }
    }
    for j in 0..k {
        let s = spline(&mut rng, EFFORT_NUISANCE, t_len);
        for t in 0..t_len {
            efforts[j * t_len + t] = s[t] as f32;
        }
    }

    Ok(DemoRecord {
        image: render_scene(scene, params.render_seed)?,
        positions: Tensor::new(vec![k, t_len], positions).expect("shape"),
        efforts: Tensor::new(vec![k, t_len], efforts).expect("shape"),
        label,
        scene: Some(scene.clone()),
        params: Some(DemoParams::Pour(params.clone())),
    })
}

/// Augment a record: Gaussian noise (sigma 0.01, clipped at 4 sigma) on all
/// trajectory channels, or a left slide of 1..=20 steps padded with each
/// channel's last value. Image, label and length are preserved.
pub fn augment(record: &DemoRecord, mode: AugmentMode, rng: &mut ChaCha8Rng) -> DemoRecord {
    let mut out = record.clone();
    match mode {
        AugmentMode::Noise => {
            let mut perturb = |t: &mut Tensor<f32>| {
                for v in t.data_mut() {
                    let n: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.01;
                    *v = (*v + n.clamp(-0.04, 0.04) as f32).clamp(-1.05, 1.05);
                }
            };
            perturb(&mut out.positions);
            perturb(&mut out.efforts);
        }
        AugmentMode::SlideLeft => {
            let amount = rng.gen_range(1..=20usize);
            slide_left(&mut out, amount);
        }
    }
    out
}

/// Shift every channel left by `amount` steps, padding the tail with each
/// channel's last value.
pub fn slide_left(record: &mut DemoRecord, amount: usize) {
    let slide = |t: &mut Tensor<f32>| {
        let cols = t.shape()[1];
        let amount = amount.min(cols - 1);
        for row in t.data_mut().chunks_exact_mut(cols) {
            row.copy_within(amount.., 0);
            let last = row[cols - amount - 1];
            row[cols - amount..].fill(last);
        }
    };
    slide(&mut record.positions);
    slide(&mut record.efforts);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::heuristics::{self, HeuristicConfig};
    use crate::labels::Scenario;
    use crate::synthworld::scene::sample_scene;
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn worked_example_classifies_as_soft_short_fast_left() {
        let scene = SceneSpec::dab((0.55, 0.5), 64);
        let params = DabParams {
            dab_point: (0.35, 0.5),
            effort_magnitude: 0.4,
            rise_steps: 40,
            plateau_steps: 30,
            start_offset: 12,
            nuisance_seed: 5,
            render_seed: 6,
            implied: [dab::LEFT, dab::FRONT, dab::SOFT, dab::SHORT, dab::FAST],
        };
        let rec = synth_dab_demo(&scene, &params, None).unwrap();
        let cfg = HeuristicConfig::default();
        let e = heuristics::classify_effort(&rec.efforts, &cfg);
        assert_eq!(e.effort, dab::SOFT);
        assert_eq!(e.length, dab::SHORT);
        assert_eq!(e.speed, dab::FAST);
        let s = heuristics::classify_spatial(&rec.positions, &rec.image, &cfg).unwrap();
        assert_eq!(s.side, dab::LEFT);
    }

    #[test]
    fn hard_press_exceeds_threshold() {
        let scene = SceneSpec::dab((0.5, 0.5), 64);
        let mut params = sample_dab_params(
            &scene,
            WeakLabel { group: dab::EFFORT, label: dab::HARD },
            &mut rng(3),
        )
        .unwrap();
        params.effort_magnitude = 0.9;
        let rec = synth_dab_demo(&scene, &params, None).unwrap();
        let e = heuristics::classify_effort(&rec.efforts, &HeuristicConfig::default());
        assert!(e.ch1_max > 0.5);
        assert_eq!(e.effort, dab::HARD);
    }

    #[test]
    fn long_plateau_is_long() {
        let scene = SceneSpec::dab((0.5, 0.5), 64);
        let mut params = sample_dab_params(
            &scene,
            WeakLabel { group: dab::LENGTH, label: dab::LONG },
            &mut rng(4),
        )
        .unwrap();
        params.plateau_steps = 100;
        params.rise_steps = 40;
        let rec = synth_dab_demo(&scene, &params, None).unwrap();
        let e = heuristics::classify_effort(&rec.efforts, &HeuristicConfig::default());
        assert!(e.band_counts.0 > 50);
        assert_eq!(e.length, dab::LONG);
    }

    #[test]
    fn pour_reaches_target_cup_with_full_tilt() {
        let mut r = rng(11);
        let scene = sample_scene(Scenario::Pour, 64, &mut r);
        let params = PourParams {
            target_cup: pour::BLUE,
            approach: pour::BEHIND,
            tilt_fraction: 0.9,
            start_offset: 12,
            approach_steps: 50,
            final_steps: 50,
            tilt_steps: 40,
            nuisance_seed: 1,
            render_seed: 2,
            implied: [pour::BLUE, pour::BEHIND, pour::FULLY],
        };
        let rec = synth_pour_demo(&scene, &params, None).unwrap();

        // projected trace passes within a cup radius of the blue cup
        let blue = scene.landmarks[1].position;
        let t_len = rec.positions.shape()[1];
        let min_d = (0..t_len)
            .map(|t| {
                let q0 = arm::denormalize_angle(rec.positions.data()[t] as f64);
                let q1 = arm::denormalize_angle(rec.positions.data()[t_len + t] as f64);
                let p = arm::fk_planar(q0, q1);
                (p.0 - blue.0).hypot(p.1 - blue.1)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(min_d < 0.04, "closest approach {min_d}");

        let c = heuristics::classify_pour(&rec.positions, &rec.image, &HeuristicConfig::default()).unwrap();
        assert_eq!(c.cup, pour::BLUE);
        assert_eq!(c.approach, pour::BEHIND);
        assert!(c.max_tilt >= 0.8 * 0.5, "tilt {}", c.max_tilt);
        assert_eq!(c.tilt, pour::FULLY);

        // efforts stay low
        assert!(rec.efforts.data().iter().all(|v| v.abs() <= 0.07));
    }

    #[test]
    fn behind_and_sideways_headings_differ_by_a_quarter_turn() {
        let mut r = rng(21);
        let scene = sample_scene(Scenario::Pour, 64, &mut r);
        let mk = |approach: usize| {
            let params = PourParams {
                target_cup: pour::RED,
                approach,
                tilt_fraction: 0.9,
                start_offset: 10,
                approach_steps: 50,
                final_steps: 50,
                tilt_steps: 40,
                nuisance_seed: 3,
                render_seed: 4,
                implied: [pour::RED, approach, pour::FULLY],
            };
            synth_pour_demo(&scene, &params, None).unwrap()
        };
        let cfg = HeuristicConfig::default();
        let b = heuristics::classify_pour(&mk(pour::BEHIND).positions, &mk(pour::BEHIND).image, &cfg).unwrap();
        let s = heuristics::classify_pour(&mk(pour::SIDEWAYS).positions, &mk(pour::SIDEWAYS).image, &cfg).unwrap();
        assert_eq!(b.approach, pour::BEHIND);
        assert_eq!(s.approach, pour::SIDEWAYS);
    }

    #[test]
    fn slide_shifts_and_pads_with_last_value() {
        let scene = SceneSpec::dab((0.5, 0.5), 64);
        let params = sample_dab_params(
            &scene,
            WeakLabel { group: dab::SIDE, label: dab::LEFT },
            &mut rng(7),
        )
        .unwrap();
        let rec = synth_dab_demo(&scene, &params, None).unwrap();
        let mut slid = rec.clone();
        slide_left(&mut slid, 5);
        let t_len = rec.positions.shape()[1];
        for row in 0..rec.positions.shape()[0] {
            for t in 0..t_len - 5 {
                assert_eq!(
                    slid.positions.data()[row * t_len + t],
                    rec.positions.data()[row * t_len + t + 5]
                );
            }
            for t in t_len - 5..t_len {
                assert_eq!(
                    slid.positions.data()[row * t_len + t],
                    rec.positions.data()[row * t_len + t_len - 1]
                );
            }
        }
        assert_eq!(slid.positions.shape(), rec.positions.shape());
    }

    #[test]
    fn base_channels_stay_normalised_and_noise_stays_bounded() {
        let scene = SceneSpec::dab((0.4, 0.6), 64);
        let params = sample_dab_params(
            &scene,
            WeakLabel { group: dab::SPEED, label: dab::SLOW },
            &mut rng(9),
        )
        .unwrap();
        let rec = synth_dab_demo(&scene, &params, None).unwrap();
        let in_unit = |t: &Tensor<f32>| t.data().iter().all(|v| (-1.0..=1.0).contains(v));
        assert!(in_unit(&rec.positions) && in_unit(&rec.efforts));

        let noised = augment(&rec, AugmentMode::Noise, &mut rng(10));
        let in_bounds = |t: &Tensor<f32>| t.data().iter().all(|v| (-1.05..=1.05).contains(v));
        assert!(in_bounds(&noised.positions) && in_bounds(&noised.efforts));
    }
}
