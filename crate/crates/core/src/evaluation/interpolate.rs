//! Latent traversals: sweep one axis, decode, and trace the end effector
//! through the kinematics and camera.

use demogen_autodiff::Tensor;

use crate::evaluation::{split_channels, EvalError};
use crate::model::config::VariantKind;
use crate::model::Model;
use crate::synthworld::arm;
use crate::synthworld::scene::project;

#[derive(Clone, Debug)]
pub struct TraversalStep {
    /// Swept axis value.
    pub value: f64,
    /// Decoded `[2K, T]` trajectory.
    pub trajectory: Tensor<f32>,
    /// End-effector positions (x, y, z) over time.
    pub ee_trace: Vec<(f64, f64, f64)>,
    /// Projected (u, v) trace.
    pub ee_trace_px: Vec<(f64, f64)>,
}

/// End-effector trace of a `[2K, T]` trajectory.
pub fn ee_trace(
    trajectory: &Tensor<f32>,
    joint_count: usize,
    width: usize,
    height: usize,
) -> Result<(Vec<(f64, f64, f64)>, Vec<(f64, f64)>), EvalError> {
    let (positions, _) = split_channels(trajectory, joint_count)?;
    let t_len = positions.shape()[1];
    let mut table = Vec::with_capacity(t_len);
    let mut px = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let q0 = arm::denormalize_angle(positions.data()[t] as f64);
        let q1 = arm::denormalize_angle(positions.data()[t_len + t] as f64);
        let q2 = positions.data()[2 * t_len + t] as f64;
        let (x, y) = arm::fk_planar(q0, q1);
        table.push((x, y, arm::height_from_channel(q2)));
        px.push(project((x, y), width, height));
    }
    Ok((table, px))
}

/// Set latent axis `axis` of `code` to the sweep value. Continuous axes take
/// the value directly; relaxed-categorical axes move linearly between the
/// one-hot corners of their simplex as the value crosses the range.
pub fn set_axis(model: &Model, code: &mut [f64], axis: usize, value: f64, range: (f64, f64)) -> Result<(), EvalError> {
    let cfg = &model.config;
    let (start, len) = cfg.axis_slice(axis)?;
    if cfg.variant == VariantKind::Gs && len > 1 {
        let span = (range.1 - range.0).abs().max(1e-9);
        let p = ((value - range.0) / span).clamp(0.0, 1.0);
        for slot in code[start..start + len].iter_mut() {
            *slot = 0.0;
        }
        code[start] = 1.0 - p;
        code[start + len - 1] = p;
    } else {
        code[start] = value;
    }
    Ok(())
}

/// Linear sweep of one latent axis over `[a, b]` with every other axis held
/// at the anchor code.
pub fn interpolate_axis(
    model: &Model,
    image: &Tensor<f32>,
    axis: usize,
    range: (f64, f64),
    steps: usize,
    anchor: &[f64],
) -> Result<Vec<TraversalStep>, EvalError> {
    if steps == 0 {
        return Err(EvalError::Config("traversal needs at least one step".into()));
    }
    if anchor.len() != model.config.code_dim() {
        return Err(EvalError::Config(format!(
            "anchor code has {} dims, expected {}",
            anchor.len(),
            model.config.code_dim()
        )));
    }
    let (h, w) = (model.config.image_size, model.config.image_size);
    let mut session = model.decoder_session(image)?;
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps {
        let value = if steps == 1 {
            range.0
        } else {
            range.0 + (range.1 - range.0) * i as f64 / (steps - 1) as f64
        };
        let mut code = anchor.to_vec();
        set_axis(model, &mut code, axis, value, range)?;
        let trajectory = session.decode(&code)?;
        let (table, px) = ee_trace(&trajectory, model.config.joint_count, w, h)?;
        out.push(TraversalStep {
            value,
            trajectory,
            ee_trace: table,
            ee_trace_px: px,
        });
    }
    Ok(out)
}

/// Spearman rank correlation, mean ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    num / (dx * dy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite"));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_detects_monotone_and_ties() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [2.0, 9.0, 11.0, 15.0, 30.0];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&xs, &up) - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &down) + 1.0).abs() < 1e-12);
        let flat = [1.0; 5];
        assert_eq!(spearman(&xs, &flat), 0.0);
    }
}
