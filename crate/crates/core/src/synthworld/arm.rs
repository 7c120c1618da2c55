//! Surrogate 7-joint arm over the unit table.
//!
//! Joints q0/q1 form a planar two-link chain from a base behind the table,
//! q2 maps linearly to height, q3 is a wrist roll used for tilting, and
//! q4..q6 are nuisance joints that never affect the end-effector pose.
//!
//! Normalised position channels store `q/PI` for the angular joints and the
//! raw `q2` (already in [0, 1]) for the vertical joint.

use crate::synthworld::SynthError;

pub const BASE: (f64, f64) = (0.5, -0.25);
pub const LINK_1: f64 = 0.8;
pub const LINK_2: f64 = 0.8;
pub const JOINT_COUNT: usize = 7;
pub const HOVER_HEIGHT: f64 = 0.25;
/// Rest tabletop point the arm returns to between motions.
pub const REST_POINT: (f64, f64) = (0.5, 0.75);

/// End-effector pose; q3..q6 have no effect.
pub fn fk(q: &[f64]) -> (f64, f64, f64) {
    let x = BASE.0 + LINK_1 * q[0].cos() + LINK_2 * (q[0] + q[1]).cos();
    let y = BASE.1 + LINK_1 * q[0].sin() + LINK_2 * (q[0] + q[1]).sin();
    let z = HOVER_HEIGHT * (1.0 - q[2]);
    (x, y, z)
}

/// Planar pose of the two-link chain alone.
pub fn fk_planar(q0: f64, q1: f64) -> (f64, f64) {
    let (x, y, _) = fk(&[q0, q1, 0.0, 0.0, 0.0, 0.0, 0.0]);
    (x, y)
}

/// Closed-form inverse kinematics on the elbow-up branch (q1 in [0, pi]).
pub fn ik(target: (f64, f64)) -> Result<(f64, f64), SynthError> {
    let dx = target.0 - BASE.0;
    let dy = target.1 - BASE.1;
    let r2 = dx * dx + dy * dy;
    let r = r2.sqrt();
    if r < 1e-6 {
        return Err(SynthError::Unreachable(format!(
            "target {target:?} coincides with the arm base (singular)"
        )));
    }
    let max_reach = LINK_1 + LINK_2;
    if r > max_reach + 1e-12 {
        return Err(SynthError::Unreachable(format!(
            "target {target:?} at distance {r:.4} exceeds reach {max_reach}"
        )));
    }
    let cos_q1 = ((r2 - LINK_1 * LINK_1 - LINK_2 * LINK_2) / (2.0 * LINK_1 * LINK_2)).clamp(-1.0, 1.0);
    let q1 = cos_q1.acos();
    let q0 = dy.atan2(dx) - (LINK_2 * q1.sin()).atan2(LINK_1 + LINK_2 * cos_q1);
    Ok((wrap_angle(q0), q1))
}

/// Wrap into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Angular channels are stored as q/PI; q2 is stored raw.
pub fn normalize_angle(q: f64) -> f64 {
    q / std::f64::consts::PI
}

pub fn denormalize_angle(c: f64) -> f64 {
    c * std::f64::consts::PI
}

/// Height of the end effector from a normalised q2 channel value.
pub fn height_from_channel(c2: f64) -> f64 {
    HOVER_HEIGHT * (1.0 - c2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn fk_hand_computed_pose() {
        // q0 = pi/2, q1 = 0, q2 = 1 -> (0.5, 1.35, 0)
        let (x, y, z) = fk(&[std::f64::consts::FRAC_PI_2, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((x - 0.5).abs() < 1e-12);
        assert!((y - 1.35).abs() < 1e-12);
        assert!(z.abs() < 1e-12);
    }

    #[test]
    fn hover_height_at_zero_press() {
        let (_, _, z) = fk(&[0.3, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(z, HOVER_HEIGHT);
    }

    #[test]
    fn pose_ignores_nuisance_joints() {
        let a = fk(&[0.3, 0.9, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let b = fk(&[0.3, 0.9, 0.5, 1.0, -0.7, 0.2, 0.4]);
        assert_eq!(a, b);
    }

    #[test]
    fn ik_round_trip_over_the_table() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let p = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let (q0, q1) = ik(p).unwrap();
            let (x, y) = fk_planar(q0, q1);
            assert!((x - p.0).abs() <= 1e-9 && (y - p.1).abs() <= 1e-9, "{p:?}");
            assert!((0.0..=std::f64::consts::PI).contains(&q1));
        }
    }

    #[test]
    fn straight_arm_at_max_reach() {
        let target = (BASE.0 + LINK_1 + LINK_2, BASE.1);
        let (_, q1) = ik(target).unwrap();
        assert!(q1.abs() < 1e-6);
    }

    #[test]
    fn base_target_is_singular() {
        assert!(ik(BASE).is_err());
    }
}
