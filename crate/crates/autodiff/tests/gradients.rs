//! Per-op oracle values plus property-based finite-difference checks.

use demogen_autodiff::check::finite_diff_check;
use demogen_autodiff::{conv_out_len, Graph, NodeId, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t64(shape: Vec<usize>, v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force dilated 1-D cross-correlation over an explicitly padded signal.
/// Independent oracle for the conv1d kernel.
fn conv1d_direct(x: &[f64], k: &[f64], dilation: usize, padding: usize) -> Vec<f64> {
    let padded: Vec<f64> = std::iter::repeat(0.0)
        .take(padding)
        .chain(x.iter().copied())
        .chain(std::iter::repeat(0.0).take(padding))
        .collect();
    let span = dilation * (k.len() - 1);
    let mut out = Vec::new();
    let mut i = 0;
    while i + span < padded.len() {
        out.push((0..k.len()).map(|j| k[j] * padded[i + j * dilation]).sum());
        i += 1;
    }
    out
}

#[test]
fn dense_identity_and_affine_cases() {
    let mut g = Graph::<f64>::new();
    let x = g.input(t64(vec![2], &[1.0, 2.0])).unwrap();
    let w = g.input(t64(vec![2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
    let b = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    let y = g.dense(x, w, b).unwrap();
    assert_eq!(g.value(y).unwrap().data(), &[1.0, 2.0]);

    // 2*1 + 3*1 - 5 = 0
    let x = g.input(t64(vec![2], &[1.0, 1.0])).unwrap();
    let w = g.input(t64(vec![1, 2], &[2.0, 3.0])).unwrap();
    let b = g.input(t64(vec![1], &[-5.0])).unwrap();
    let y = g.dense(x, w, b).unwrap();
    assert_eq!(g.value(y).unwrap().data(), &[0.0]);
}

#[test]
fn dense_bias_gradient_of_sum_is_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t64(vec![2], &[0.3, -0.4])).unwrap();
    let w = g.param(t64(vec![3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6])).unwrap();
    let b = g.param(t64(vec![3], &[0.0, 0.1, 0.2])).unwrap();
    let y = g.dense(x, w, b).unwrap();
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(b).unwrap().data(), &[1.0, 1.0, 1.0]);
    // gradient flows to all three arguments
    assert!(g.grad(x).unwrap().data().iter().any(|&v| v != 0.0));
    assert!(g.grad(w).unwrap().data().iter().any(|&v| v != 0.0));
}

#[test]
fn conv2d_delta_kernel_is_identity() {
    let mut g = Graph::<f64>::new();
    let img: Vec<f64> = (1..=9).map(|v| v as f64).collect();
    let x = g.input(t64(vec![1, 3, 3], &img)).unwrap();
    let k = g.input(t64(vec![1, 1, 1, 1], &[1.0])).unwrap();
    let b = g.input(t64(vec![1], &[0.0])).unwrap();
    let y = g.conv2d(x, k, b, 1, 0).unwrap();
    assert_eq!(g.value(y).unwrap().data(), img.as_slice());
}

#[test]
fn conv2d_ones_kernel_counts_overlaps() {
    // 4x4 ones, 3x3 ones kernel, stride 1, pad 1: each output counts the
    // in-bounds taps, so corners see 4 and interior cells see 9.
    let mut g = Graph::<f64>::new();
    let x = g.input(t64(vec![1, 4, 4], &[1.0; 16])).unwrap();
    let k = g.input(t64(vec![1, 1, 3, 3], &[1.0; 9])).unwrap();
    let b = g.input(t64(vec![1], &[0.0])).unwrap();
    let y = g.conv2d(x, k, b, 1, 1).unwrap();
    let out = g.value(y).unwrap();
    assert_eq!(out.shape(), &[1, 4, 4]);
    assert_eq!(out.data()[0], 4.0); // corner
    assert_eq!(out.data()[5], 9.0); // interior
}

#[test]
fn conv2d_strided_output_shape() {
    let mut g = Graph::<f64>::new();
    let x = g.input(t64(vec![1, 4, 4], &[0.5; 16])).unwrap();
    let k = g.input(t64(vec![1, 1, 3, 3], &[0.1; 9])).unwrap();
    let b = g.input(t64(vec![1], &[0.0])).unwrap();
    let y = g.conv2d(x, k, b, 2, 1).unwrap();
    assert_eq!(g.value(y).unwrap().shape(), &[1, 2, 2]);
}

#[test]
fn conv1d_point_kernel_is_identity() {
    let mut g = Graph::<f64>::new();
    let x = g.input(t64(vec![1, 3], &[1.0, 2.0, 3.0])).unwrap();
    let k = g.input(t64(vec![1, 1, 1], &[1.0])).unwrap();
    let b = g.input(t64(vec![1], &[0.0])).unwrap();
    let y = g.conv1d(x, k, b, 1, 0).unwrap();
    assert_eq!(g.value(y).unwrap().data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn conv1d_dilated_matches_direct_evaluation() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let k = [1.0, 1.0];
    let expect = conv1d_direct(&x, &k, 2, 1);
    assert_eq!(expect, vec![2.0, 4.0, 6.0, 3.0]);
    assert_eq!(expect.len(), conv_out_len(4, 2, 1, 1, 2).unwrap());

    let mut g = Graph::<f64>::new();
    let xn = g.input(t64(vec![1, 4], &x)).unwrap();
    let kn = g.input(t64(vec![1, 1, 2], &k)).unwrap();
    let bn = g.input(t64(vec![1], &[0.0])).unwrap();
    let y = g.conv1d(xn, kn, bn, 2, 1).unwrap();
    assert_eq!(g.value(y).unwrap().data(), expect.as_slice());
}

#[test]
fn conv1d_length_preserving_temporal_config() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(vec![1, 240])).unwrap();
    let k = g.input(Tensor::<f64>::new(vec![1, 1, 5], vec![0.2; 5]).unwrap()).unwrap();
    let b = g.input(t64(vec![1], &[0.0])).unwrap();
    let y = g.conv1d(x, k, b, 4, 8).unwrap();
    assert_eq!(g.value(y).unwrap().shape(), &[1, 240]);
}

#[test]
fn softmax_and_cross_entropy_closed_forms() {
    let mut g = Graph::<f64>::new();
    let z = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    let s = g.softmax(z).unwrap();
    assert_eq!(g.value(s).unwrap().data(), &[0.5, 0.5]);

    let z = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    let ce = g.softmax_cross_entropy(z, 0).unwrap();
    assert!((g.scalar(ce).unwrap() - 2.0f64.ln()).abs() < 1e-12);

    let r = g.input(t64(vec![2], &[-1.0, 2.0])).unwrap();
    let y = g.relu(r).unwrap();
    assert_eq!(g.value(y).unwrap().data(), &[0.0, 2.0]);
}

#[test]
fn cross_entropy_rejects_out_of_range_target() {
    let mut g = Graph::<f64>::new();
    let z = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    assert!(g.softmax_cross_entropy(z, 2).is_err());
}

#[test]
fn reparameterize_closed_forms() {
    let mut g = Graph::<f64>::new();
    let mu = g.input(t64(vec![2], &[0.7, -0.3])).unwrap();
    let lv = g.input(t64(vec![2], &[0.2, -0.5])).unwrap();
    let zero = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    let c = g.reparameterize(mu, lv, zero).unwrap();
    assert_eq!(g.value(c).unwrap().data(), g.value(mu).unwrap().data());

    let mu0 = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    let lv0 = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    let e = g.input(t64(vec![2], &[1.3, -0.4])).unwrap();
    let c = g.reparameterize(mu0, lv0, e).unwrap();
    assert_eq!(g.value(c).unwrap().data(), &[1.3, -0.4]);

    // mu=1, log_var=ln 4, eps=0.5 -> 1 + 2*0.5 = 2
    let mu1 = g.input(t64(vec![1], &[1.0])).unwrap();
    let lv4 = g.input(t64(vec![1], &[4.0f64.ln()])).unwrap();
    let e5 = g.input(t64(vec![1], &[0.5])).unwrap();
    let c = g.reparameterize(mu1, lv4, e5).unwrap();
    assert!((g.scalar(c).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn gumbel_softmax_symmetry_and_low_temperature_sharpness() {
    let mut g = Graph::<f64>::new();
    let z = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    let n = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    let y = g.gumbel_softmax(z, n, 0.7).unwrap();
    assert_eq!(g.value(y).unwrap().data(), &[0.5, 0.5]);

    // logits [3,0], tau=0.1: softmax(30, 0) puts > 0.999 on the first class
    let z = g.input(t64(vec![2], &[3.0, 0.0])).unwrap();
    let n = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    let y = g.gumbel_softmax(z, n, 0.1).unwrap();
    let out = g.value(y).unwrap().data().to_vec();
    assert!(out[0] > 0.999);
    assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let z = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    let n = g.input(t64(vec![2], &[0.0, 0.0])).unwrap();
    assert!(g.gumbel_softmax(z, n, 0.0).is_err());
}

#[test]
fn kl_gaussian_closed_forms() {
    let mut g = Graph::<f64>::new();
    let mu = g.input(t64(vec![3], &[0.0; 3])).unwrap();
    let lv = g.input(t64(vec![3], &[0.0; 3])).unwrap();
    let kl = g.kl_gaussian_std(mu, lv).unwrap();
    assert_eq!(g.scalar(kl).unwrap(), 0.0);

    let mu = g.input(t64(vec![1], &[1.0])).unwrap();
    let lv = g.input(t64(vec![1], &[0.0])).unwrap();
    let kl = g.kl_gaussian_std(mu, lv).unwrap();
    assert!((g.scalar(kl).unwrap() - 0.5).abs() < 1e-12);

    // mu=0, log_var=ln 4 -> 0.5*(4 - ln 4 - 1)
    let mu = g.input(t64(vec![1], &[0.0])).unwrap();
    let lv = g.input(t64(vec![1], &[4.0f64.ln()])).unwrap();
    let kl = g.kl_gaussian_std(mu, lv).unwrap();
    let expect = 0.5 * (4.0 - 4.0f64.ln() - 1.0);
    assert!((g.scalar(kl).unwrap() - expect).abs() < 1e-12);
    assert!((expect - 0.8069).abs() < 1e-4);
}

/// Build a composite graph touching one op under test and return
/// (loss, parameter leaves).
fn fd_case(g: &mut Graph<f64>, case: usize, values: &[f64]) -> (NodeId, Vec<NodeId>) {
    let v = |i: usize| values[i % values.len()] as f64;
    match case {
        0 => {
            // dense
            let x = g.param(t64(vec![3], &[v(0), v(1), v(2)])).unwrap();
            let w = g
                .param(t64(vec![2, 3], &[v(3), v(4), v(5), v(6), v(7), v(8)]))
                .unwrap();
            let b = g.param(t64(vec![2], &[v(9), v(10)])).unwrap();
            let y = g.dense(x, w, b).unwrap();
            let r = g.relu(y).unwrap();
            let sq = g.mul(r, r).unwrap();
            (g.mean_all(sq).unwrap(), vec![x, w, b])
        }
        1 => {
            // conv1d with dilation
            let x = g
                .param(t64(vec![2, 6], &(0..12).map(|i| v(i)).collect::<Vec<_>>()))
                .unwrap();
            let k = g
                .param(t64(vec![2, 2, 3], &(0..12).map(|i| v(i + 3)).collect::<Vec<_>>()))
                .unwrap();
            let b = g.param(t64(vec![2], &[v(1), v(2)])).unwrap();
            let y = g.conv1d(x, k, b, 2, 2).unwrap();
            let sq = g.mul(y, y).unwrap();
            (g.mean_all(sq).unwrap(), vec![x, k, b])
        }
        2 => {
            // conv2d with stride
            let x = g
                .param(t64(vec![1, 5, 5], &(0..25).map(|i| v(i)).collect::<Vec<_>>()))
                .unwrap();
            let k = g
                .param(t64(vec![2, 1, 3, 3], &(0..18).map(|i| v(i + 7)).collect::<Vec<_>>()))
                .unwrap();
            let b = g.param(t64(vec![2], &[v(3), v(4)])).unwrap();
            let y = g.conv2d(x, k, b, 2, 1).unwrap();
            let sq = g.mul(y, y).unwrap();
            (g.mean_all(sq).unwrap(), vec![x, k, b])
        }
        3 => {
            // reparameterize + KL
            let mu = g.param(t64(vec![4], &[v(0), v(1), v(2), v(3)])).unwrap();
            let lv = g
                .param(t64(vec![4], &[v(4) * 0.1, v(5) * 0.1, v(6) * 0.1, v(7) * 0.1]))
                .unwrap();
            let eps = g.input(t64(vec![4], &[0.3, -0.6, 0.9, 0.1])).unwrap();
            let c = g.reparameterize(mu, lv, eps).unwrap();
            let sq = g.mul(c, c).unwrap();
            let m = g.mean_all(sq).unwrap();
            let kl = g.kl_gaussian_std(mu, lv).unwrap();
            let kls = g.scale(kl, 0.1).unwrap();
            (g.add(m, kls).unwrap(), vec![mu, lv])
        }
        4 => {
            // gumbel-softmax + categorical KL + cross entropy
            let z = g.param(t64(vec![3], &[v(0), v(1), v(2)])).unwrap();
            let n = g.input(t64(vec![3], &[0.2, -0.1, 0.4])).unwrap();
            let y = g.gumbel_softmax(z, n, 0.8).unwrap();
            let s = g.sum_all(y).unwrap();
            let kl = g.kl_categorical_uniform(z).unwrap();
            let ce = g.softmax_cross_entropy(z, 1).unwrap();
            let a = g.add(s, kl).unwrap();
            (g.add(a, ce).unwrap(), vec![z])
        }
        _ => {
            // structural ops: concat/slice/tile/mean-pool/clamp/sigmoid/bce
            let a = g.param(t64(vec![2], &[v(0), v(1)])).unwrap();
            let b = g.param(t64(vec![3], &[v(2), v(3), v(4)])).unwrap();
            let cat = g.concat(&[a, b]).unwrap();
            let sl = g.slice(cat, 1, 3).unwrap();
            let tiled = g.tile_with_time(sl, 7).unwrap();
            let pooled = g.mean_pool_last(tiled).unwrap();
            let cl = g.clamp(pooled, -0.75, 0.75).unwrap();
            let sg = g.sigmoid(cl).unwrap();
            let s1 = g.sum_all(sg).unwrap();
            let bce = g.bce_with_logits(cat, true).unwrap();
            (g.add(s1, bce).unwrap(), vec![a, b])
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Reverse-mode gradients match central differences within 1e-4 relative
    /// error on random small instances of every operation (64-bit mode).
    #[test]
    fn prop_reverse_mode_matches_finite_differences(
        case in 0usize..6,
        values in prop::collection::vec(-1.5f64..1.5, 12),
        seed in 0u64..1_000,
    ) {
        let mut g = Graph::<f64>::new();
        let (loss, params) = fd_case(&mut g, case, &values);
        let mut r = rng(seed);
        let report = finite_diff_check(&mut g, loss, &params, 1e-3, 8, &mut r).unwrap();
        prop_assert!(report.max_rel_err < 1e-4,
            "case {} rel err {}", case, report.max_rel_err);
    }

    /// Shape formula holds for every convolution configuration exercised.
    #[test]
    fn prop_conv_shape_formula(
        t in 3usize..40,
        k in 1usize..6,
        p in 0usize..4,
        d in 1usize..4,
    ) {
        prop_assume!(t + 2 * p > d * (k - 1));
        let expect = (t + 2 * p - d * (k - 1) - 1) / 1 + 1;
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(vec![1, t])).unwrap();
        let kk = g.input(Tensor::<f64>::new(vec![1, 1, k], vec![0.3; k]).unwrap()).unwrap();
        let b = g.input(Tensor::zeros(vec![1])).unwrap();
        let y = g.conv1d(x, kk, b, d, p).unwrap();
        prop_assert_eq!(g.value(y).unwrap().shape(), &[1, expect]);
    }

    /// Softmax output sums to 1 +- 1e-6 and is strictly positive.
    #[test]
    fn prop_softmax_simplex(values in prop::collection::vec(-30.0f64..30.0, 2..9)) {
        let mut g = Graph::<f64>::new();
        let n = values.len();
        let z = g.input(Tensor::new(vec![n], values).unwrap()).unwrap();
        let s = g.softmax(z).unwrap();
        let out = g.value(s).unwrap().data().to_vec();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(out.iter().all(|&v| v > 0.0));
    }

    /// KL against the standard normal is non-negative, zero only at (0, 0).
    #[test]
    fn prop_kl_gaussian_nonnegative(
        mu in prop::collection::vec(-3.0f64..3.0, 4),
        lv in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let at_prior = mu.iter().all(|&m| m == 0.0) && lv.iter().all(|&l| l == 0.0);
        let mut g = Graph::<f64>::new();
        let m = g.input(Tensor::new(vec![4], mu).unwrap()).unwrap();
        let l = g.input(Tensor::new(vec![4], lv).unwrap()).unwrap();
        let kl = g.kl_gaussian_std(m, l).unwrap();
        let v = g.scalar(kl).unwrap();
        prop_assert!(v >= 0.0);
        if !at_prior {
            prop_assert!(v > 0.0);
        }
    }

    /// Gumbel-softmax outputs lie on the simplex for any positive temperature.
    #[test]
    fn prop_gumbel_simplex(
        logits in prop::collection::vec(-5.0f64..5.0, 2..6),
        noise in prop::collection::vec(-2.0f64..4.0, 2..6),
        tau in 0.05f64..2.0,
    ) {
        prop_assume!(logits.len() == noise.len());
        let n = logits.len();
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::new(vec![n], logits).unwrap()).unwrap();
        let nn = g.input(Tensor::new(vec![n], noise).unwrap()).unwrap();
        let y = g.gumbel_softmax(z, nn, tau).unwrap();
        let out = g.value(y).unwrap().data().to_vec();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|&v| v >= 0.0));
    }
}
