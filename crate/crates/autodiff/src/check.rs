//! Central-difference gradient checking against the reverse-mode sweep.
//!
//! Runs on `Graph<f64>` so both routes are evaluated in 64-bit; callers that
//! train in f32 rebuild the same graph at f64 (model builders are generic).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{AdError, AdResult, Graph, NodeId, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Compare reverse-mode gradients of `loss` w.r.t. the given leaves against
/// central finite differences with step `h` (default 1e-3).
///
/// Relative error per coordinate is
/// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`; at most `max_coords_per_leaf`
/// randomly chosen coordinates are probed per leaf. The graph is left with its
/// original values replayed.
pub fn finite_diff_check<R: Rng>(
    graph: &mut Graph<f64>,
    loss: NodeId,
    leaves: &[NodeId],
    h: f64,
    max_coords_per_leaf: usize,
    rng: &mut R,
) -> AdResult<GradCheckReport> {
    let base_loss = graph.scalar(loss)?;
    if !base_loss.is_finite() {
        return Err(AdError::NonFinite("loss is not finite".into()));
    }

    graph.reset_grads();
    graph.backward(loss)?;
    let ad_grads: Vec<Tensor<f64>> = leaves
        .iter()
        .map(|&id| graph.grad(id).cloned())
        .collect::<AdResult<_>>()?;

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (&leaf, ad) in leaves.iter().zip(&ad_grads) {
        let original = graph.value(leaf)?.clone();
        let n = original.len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_coords_per_leaf {
            coords.shuffle(rng);
            coords.truncate(max_coords_per_leaf);
        }
        for &c in &coords {
            let mut plus = original.clone();
            plus.data_mut()[c] += h;
            graph.set_leaf(leaf, plus)?;
            graph.replay_forward()?;
            let up = graph.scalar(loss)?;

            let mut minus = original.clone();
            minus.data_mut()[c] -= h;
            graph.set_leaf(leaf, minus)?;
            graph.replay_forward()?;
            let down = graph.scalar(loss)?;

            if !up.is_finite() || !down.is_finite() {
                return Err(AdError::NonFinite(
                    "perturbed loss is not finite".into(),
                ));
            }
            let fd = (up - down) / (2.0 * h);
            let g = ad.data()[c];
            let rel = (g - fd).abs() / 1e-8f64.max(g.abs() + fd.abs());
            max_rel = max_rel.max(rel);
            checked += 1;
        }
        graph.set_leaf(leaf, original)?;
    }
    graph.replay_forward()?;
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        coords_checked: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_is_near_exact() {
        // loss = sum(p^2) at p = [1, 2]: central differences are exact for
        // quadratics up to rounding.
        let mut g = Graph::<f64>::new();
        let p = g
            .param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let sq = g.mul(p, p).unwrap();
        let loss = g.sum_all(sq).unwrap();
        let mut rng = rand::thread_rng();
        let report = finite_diff_check(&mut g, loss, &[p], 1e-3, 16, &mut rng).unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
        assert_eq!(report.coords_checked, 2);
    }

    #[test]
    fn constant_loss_checks_out_at_zero() {
        let mut g = Graph::<f64>::new();
        let p = g
            .param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let c = g.input(Tensor::scalar(3.0)).unwrap();
        let loss = g.mean_all(c).unwrap();
        let mut rng = rand::thread_rng();
        let report = finite_diff_check(&mut g, loss, &[p], 1e-3, 16, &mut rng).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }
}
