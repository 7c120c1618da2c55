//! Tape-based reverse-mode automatic differentiation for the small, fixed
//! convolutional architectures used by this workspace.
//!
//! A [`Graph`] records operations eagerly (define-by-run). Values are computed
//! on insertion; [`Graph::backward`] performs one reverse sweep in
//! anti-topological order and stores gradients on every node that needs them.
//! The same graph can be replayed after leaf values change, which is what the
//! finite-difference checker in [`check`] uses to re-evaluate losses in f64.
//!
//! Training runs in f32; everything is generic over [`Real`] so the checker
//! can rebuild identical graphs in f64.

mod adam;
mod error;
mod graph;
mod kernels;
mod real;
mod tensor;

pub mod check;

pub use adam::AdamState;
pub use error::AdError;
pub use graph::{Graph, NodeId, Op};
pub use real::Real;
pub use tensor::Tensor;

pub type AdResult<V> = Result<V, AdError>;

/// Output length of a (possibly strided, possibly dilated) convolution.
///
/// `floor((n + 2p - d(k-1) - 1) / s) + 1`; `None` when the result would be
/// non-positive.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
    let span = dilation.checked_mul(kernel.checked_sub(1)?)?;
    let padded = n + 2 * padding;
    if padded <= span {
        return None;
    }
    Some((padded - span - 1) / stride + 1)
}

#[cfg(test)]
mod conv_len_tests {
    use super::conv_out_len;

    #[test]
    fn matches_hand_cases() {
        // 1x4x4 input, k=3, p=1, s=2 -> 2x2
        assert_eq!(conv_out_len(4, 3, 2, 1, 1), Some(2));
        // length-preserving temporal block: T=240, k=5, d=4, p=8
        assert_eq!(conv_out_len(240, 5, 1, 8, 4), Some(240));
        // degenerate: kernel span exceeds padded input
        assert_eq!(conv_out_len(2, 5, 1, 0, 1), None);
    }
}
