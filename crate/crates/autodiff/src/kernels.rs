//! Forward and backward kernels. `eval` is the single source of truth for
//! forward semantics: graph construction and tape replay both go through it.

use crate::graph::Op;
use crate::{conv_out_len, AdError, AdResult, Real, Tensor};

pub(crate) fn eval<T: Real>(op: &Op, inputs: &[&Tensor<T>]) -> AdResult<Tensor<T>> {
    match op {
        Op::Leaf => Err(AdError::Tape("leaf nodes are not evaluated".into())),
        Op::Dense => dense_fwd(args3(inputs)?),
        Op::Conv1d { dilation, padding } => conv1d_fwd(args3(inputs)?, *dilation, *padding),
        Op::Conv2d { stride, padding } => conv2d_fwd(args3(inputs)?, *stride, *padding),
        Op::Relu => map1(inputs, |v| if v > T::zero() { v } else { T::zero() }),
        Op::Sigmoid => map1(inputs, sigmoid),
        Op::Softmax => softmax_fwd(args1(inputs)?),
        Op::SoftmaxCrossEntropy { target } => sce_fwd(args1(inputs)?, *target),
        Op::Reparameterize => reparam_fwd(args3(inputs)?),
        Op::GumbelSoftmax { temperature } => gumbel_fwd(args2(inputs)?, *temperature),
        Op::KlGaussianStd => kl_gauss_fwd(args2(inputs)?),
        Op::KlCategoricalUniform => kl_cat_fwd(args1(inputs)?),
        Op::BceWithLogits { target_one } => bce_fwd(args1(inputs)?, *target_one),
        Op::Concat => concat_fwd(inputs),
        Op::Slice { start, len } => slice_fwd(args1(inputs)?, *start, *len),
        Op::TileWithTime { steps } => tile_fwd(args1(inputs)?, *steps),
        Op::MeanPoolLast => mean_pool_fwd(args1(inputs)?),
        Op::Reshape { shape } => reshape_fwd(args1(inputs)?, shape),
        Op::Add => zip2(inputs, |a, b| a + b),
        Op::Sub => zip2(inputs, |a, b| a - b),
        Op::Mul => zip2(inputs, |a, b| a * b),
        Op::Scale { factor } => {
            let f = T::from_f64(*factor);
            map1(inputs, |v| v * f)
        }
        Op::MeanAll => {
            let x = args1(inputs)?;
            let n = T::from_usize(x.len());
            Ok(Tensor::scalar(x.data().iter().copied().sum::<T>() / n))
        }
        Op::SumAll => {
            let x = args1(inputs)?;
            Ok(Tensor::scalar(x.data().iter().copied().sum::<T>()))
        }
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
            map1(inputs, |v| v.max(lo).min(hi))
        }
    }
}

/// Gradient contributions of `op` to each input; `None` where the input does
/// not need a gradient.
pub(crate) fn backprop<T: Real>(
    op: &Op,
    inputs: &[&Tensor<T>],
    output: &Tensor<T>,
    out_grad: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    match op {
        Op::Leaf => Ok(vec![]),
        Op::Dense => dense_bwd(args3(inputs)?, out_grad, needs),
        Op::Conv1d { dilation, padding } => {
            conv1d_bwd(args3(inputs)?, out_grad, needs, *dilation, *padding)
        }
        Op::Conv2d { stride, padding } => {
            conv2d_bwd(args3(inputs)?, out_grad, needs, *stride, *padding)
        }
        Op::Relu => Ok(vec![needs[0].then(|| {
            zip_tensors(output, out_grad, |y, g| if y > T::zero() { g } else { T::zero() })
        })]),
        Op::Sigmoid => Ok(vec![needs[0]
            .then(|| zip_tensors(output, out_grad, |y, g| g * y * (T::one() - y)))]),
        Op::Softmax => softmax_bwd(output, out_grad, needs),
        Op::SoftmaxCrossEntropy { target } => sce_bwd(args1(inputs)?, *target, out_grad, needs),
        Op::Reparameterize => reparam_bwd(args3(inputs)?, out_grad, needs),
        Op::GumbelSoftmax { temperature } => gumbel_bwd(output, out_grad, needs, *temperature),
        Op::KlGaussianStd => kl_gauss_bwd(args2(inputs)?, out_grad, needs),
        Op::KlCategoricalUniform => kl_cat_bwd(args1(inputs)?, output, out_grad, needs),
        Op::BceWithLogits { target_one } => bce_bwd(args1(inputs)?, *target_one, out_grad, needs),
        Op::Concat => concat_bwd(inputs, out_grad, needs),
        Op::Slice { start, len } => slice_bwd(args1(inputs)?, *start, *len, out_grad, needs),
        Op::TileWithTime { steps } => tile_bwd(args1(inputs)?, *steps, out_grad, needs),
        Op::MeanPoolLast => mean_pool_bwd(args1(inputs)?, out_grad, needs),
        Op::Reshape { .. } => {
            let x = args1(inputs)?;
            Ok(vec![needs[0].then(|| {
                Tensor::new(x.shape().to_vec(), out_grad.data().to_vec()).expect("same count")
            })])
        }
        Op::Add => Ok(vec![
            needs[0].then(|| out_grad.clone()),
            needs[1].then(|| out_grad.clone()),
        ]),
        Op::Sub => Ok(vec![
            needs[0].then(|| out_grad.clone()),
            needs[1].then(|| map_tensor(out_grad, |g| -g)),
        ]),
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            Ok(vec![
                needs[0].then(|| zip_tensors(b, out_grad, |b, g| b * g)),
                needs[1].then(|| zip_tensors(a, out_grad, |a, g| a * g)),
            ])
        }
        Op::Scale { factor } => {
            let f = T::from_f64(*factor);
            Ok(vec![needs[0].then(|| map_tensor(out_grad, |g| g * f))])
        }
        Op::MeanAll => {
            let x = args1(inputs)?;
            let g = out_grad.item()? / T::from_usize(x.len());
            Ok(vec![needs[0].then(|| full_like(x, g))])
        }
        Op::SumAll => {
            let x = args1(inputs)?;
            let g = out_grad.item()?;
            Ok(vec![needs[0].then(|| full_like(x, g))])
        }
        Op::Clamp { lo, hi } => {
            let x = args1(inputs)?;
            let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
            let mut g = out_grad.clone();
            for (g, &v) in g.data_mut().iter_mut().zip(x.data()) {
                if v <= lo || v >= hi {
                    *g = T::zero();
                }
            }
            Ok(vec![opt(needs[0], g)])
        }
    }
}

// Helpers -------------------------------------------------------------------

fn opt<T>(needed: bool, value: Tensor<T>) -> Option<Tensor<T>> {
    needed.then_some(value)
}

fn args1<'a, T>(inputs: &[&'a Tensor<T>]) -> AdResult<&'a Tensor<T>> {
    if inputs.len() != 1 {
        return Err(AdError::Config(format!("expected 1 input, got {}", inputs.len())));
    }
    Ok(inputs[0])
}

fn args2<'a, T>(inputs: &[&'a Tensor<T>]) -> AdResult<(&'a Tensor<T>, &'a Tensor<T>)> {
    if inputs.len() != 2 {
        return Err(AdError::Config(format!("expected 2 inputs, got {}", inputs.len())));
    }
    Ok((inputs[0], inputs[1]))
}

fn args3<'a, T>(inputs: &[&'a Tensor<T>]) -> AdResult<(&'a Tensor<T>, &'a Tensor<T>, &'a Tensor<T>)> {
    if inputs.len() != 3 {
        return Err(AdError::Config(format!("expected 3 inputs, got {}", inputs.len())));
    }
    Ok((inputs[0], inputs[1], inputs[2]))
}

fn map1<T: Real>(inputs: &[&Tensor<T>], f: impl Fn(T) -> T) -> AdResult<Tensor<T>> {
    Ok(map_tensor(args1(inputs)?, f))
}

fn map_tensor<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn zip2<T: Real>(inputs: &[&Tensor<T>], f: impl Fn(T, T) -> T) -> AdResult<Tensor<T>> {
    let (a, b) = args2(inputs)?;
    if a.shape() != b.shape() {
        return Err(AdError::Config(format!(
            "elementwise shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(zip_tensors(a, b, f))
}

fn zip_tensors<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn full_like<T: Real>(x: &Tensor<T>, v: T) -> Tensor<T> {
    Tensor::new(x.shape().to_vec(), vec![v; x.len()]).expect("same shape")
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Multi-accumulator dot product; the lane split keeps a fixed summation
/// order (deterministic) while letting the loop vectorize.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    let (a_main, a_tail) = a.split_at(chunks * LANES);
    let (b_main, b_tail) = b.split_at(chunks * LANES);
    for (ac, bc) in a_main.chunks_exact(LANES).zip(b_main.chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] = acc[l] + ac[l] * bc[l];
        }
    }
    let mut s = T::zero();
    for l in 0..LANES {
        s = s + acc[l];
    }
    for (&x, &y) in a_tail.iter().zip(b_tail) {
        s = s + x * y;
    }
    s
}

/// Lane-split slice sum, same determinism note as [`dot`].
fn slice_sum<T: Real>(a: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    let (main, tail) = a.split_at(chunks * LANES);
    for c in main.chunks_exact(LANES) {
        for l in 0..LANES {
            acc[l] = acc[l] + c[l];
        }
    }
    let mut s = T::zero();
    for l in 0..LANES {
        s = s + acc[l];
    }
    for &x in tail {
        s = s + x;
    }
    s
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

// Dense ----------------------------------------------------------------------

type Triple<'a, T> = (&'a Tensor<T>, &'a Tensor<T>, &'a Tensor<T>);

fn dense_shapes<T>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> AdResult<(usize, usize)> {
    let (n_in, ws, bs) = (x.shape(), w.shape(), b.shape());
    if n_in.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != n_in[0] || ws[0] != bs[0] {
        return Err(AdError::Config(format!(
            "dense shapes incompatible: x{n_in:?} w{ws:?} b{bs:?}"
        )));
    }
    Ok((ws[1], ws[0]))
}

fn dense_fwd<T: Real>((x, w, b): Triple<T>) -> AdResult<Tensor<T>> {
    let (n_in, n_out) = dense_shapes(x, w, b)?;
    let mut out = b.data().to_vec();
    for (o, row) in out.iter_mut().zip(w.data().chunks_exact(n_in)) {
        *o = *o + dot(row, x.data());
    }
    Tensor::new(vec![n_out], out)
}

fn dense_bwd<T: Real>(
    (x, w, b): Triple<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    let (n_in, n_out) = dense_shapes(x, w, b)?;
    let gd = g.data();
    let dx = needs[0].then(|| {
        let mut dx = vec![T::zero(); n_in];
        for (row, &go) in w.data().chunks_exact(n_in).zip(gd) {
            axpy(go, row, &mut dx);
        }
        Tensor::new(vec![n_in], dx).expect("shape")
    });
    let dw = needs[1].then(|| {
        let mut dw = vec![T::zero(); n_out * n_in];
        for (row, &go) in dw.chunks_exact_mut(n_in).zip(gd) {
            axpy(go, x.data(), row);
        }
        Tensor::new(vec![n_out, n_in], dw).expect("shape")
    });
    let db = needs[2].then(|| g.clone());
    Ok(vec![dx, dw, db])
}

// Conv1d ----------------------------------------------------------------------

struct Conv1dDims {
    c_in: usize,
    c_out: usize,
    k: usize,
    t_in: usize,
    t_out: usize,
}

fn conv1d_dims<T>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    dilation: usize,
    padding: usize,
) -> AdResult<Conv1dDims> {
    let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
    if xs.len() != 2 || ws.len() != 3 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
        return Err(AdError::Config(format!(
            "conv1d shapes incompatible: x{xs:?} k{ws:?} b{bs:?}"
        )));
    }
    if dilation == 0 {
        return Err(AdError::Config("conv1d dilation must be positive".into()));
    }
    let t_out = conv_out_len(xs[1], ws[2], 1, padding, dilation).ok_or_else(|| {
        AdError::Config(format!(
            "conv1d produces non-positive length (t={}, k={}, p={padding}, d={dilation})",
            xs[1], ws[2]
        ))
    })?;
    Ok(Conv1dDims {
        c_in: xs[0],
        c_out: ws[0],
        k: ws[2],
        t_in: xs[1],
        t_out,
    })
}

/// Valid output range for one kernel tap: `x` index is `t + j*d - p`.
fn tap_range(offset: isize, t_in: usize, t_out: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi_signed = t_in as isize - offset;
    let hi = hi_signed.clamp(0, t_out as isize) as usize;
    (lo.min(hi), hi)
}

fn conv1d_fwd<T: Real>((x, w, b): Triple<T>, dilation: usize, padding: usize) -> AdResult<Tensor<T>> {
    let d = conv1d_dims(x, w, b, dilation, padding)?;
    let mut out = vec![T::zero(); d.c_out * d.t_out];
    for co in 0..d.c_out {
        let orow = &mut out[co * d.t_out..(co + 1) * d.t_out];
        orow.fill(b.data()[co]);
        for ci in 0..d.c_in {
            let xrow = &x.data()[ci * d.t_in..(ci + 1) * d.t_in];
            let taps = &w.data()[(co * d.c_in + ci) * d.k..(co * d.c_in + ci + 1) * d.k];
            for (j, &wj) in taps.iter().enumerate() {
                let offset = (j * dilation) as isize - padding as isize;
                let (lo, hi) = tap_range(offset, d.t_in, d.t_out);
                if lo >= hi {
                    continue;
                }
                let xlo = (lo as isize + offset) as usize;
                axpy(wj, &xrow[xlo..xlo + (hi - lo)], &mut orow[lo..hi]);
            }
        }
    }
    Tensor::new(vec![d.c_out, d.t_out], out)
}

fn conv1d_bwd<T: Real>(
    (x, w, b): Triple<T>,
    g: &Tensor<T>,
    needs: &[bool],
    dilation: usize,
    padding: usize,
) -> AdResult<Vec<Option<Tensor<T>>>> {
    let d = conv1d_dims(x, w, b, dilation, padding)?;
    let gd = g.data();
    let mut dx = needs[0].then(|| vec![T::zero(); d.c_in * d.t_in]);
    let mut dw = needs[1].then(|| vec![T::zero(); d.c_out * d.c_in * d.k]);
    for co in 0..d.c_out {
        let grow = &gd[co * d.t_out..(co + 1) * d.t_out];
        for ci in 0..d.c_in {
            let xrow = &x.data()[ci * d.t_in..(ci + 1) * d.t_in];
            let taps = &w.data()[(co * d.c_in + ci) * d.k..(co * d.c_in + ci + 1) * d.k];
            for j in 0..d.k {
                let offset = (j * dilation) as isize - padding as isize;
                let (lo, hi) = tap_range(offset, d.t_in, d.t_out);
                if lo >= hi {
                    continue;
                }
                let xlo = (lo as isize + offset) as usize;
                let xlen = hi - lo;
                if let Some(dx) = dx.as_mut() {
                    let drow = &mut dx[ci * d.t_in..(ci + 1) * d.t_in];
                    axpy(taps[j], &grow[lo..hi], &mut drow[xlo..xlo + xlen]);
                }
                if let Some(dw) = dw.as_mut() {
                    dw[(co * d.c_in + ci) * d.k + j] =
                        dw[(co * d.c_in + ci) * d.k + j] + dot(&grow[lo..hi], &xrow[xlo..xlo + xlen]);
                }
            }
        }
    }
    let db = needs[2].then(|| {
        let data = gd
            .chunks_exact(d.t_out)
            .map(|row| row.iter().copied().sum::<T>())
            .collect();
        Tensor::new(vec![d.c_out], data).expect("shape")
    });
    Ok(vec![
        dx.map(|v| Tensor::new(vec![d.c_in, d.t_in], v).expect("shape")),
        dw.map(|v| Tensor::new(vec![d.c_out, d.c_in, d.k], v).expect("shape")),
        db,
    ])
}

// Conv2d ----------------------------------------------------------------------

struct Conv2dDims {
    c_in: usize,
    c_out: usize,
    k: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
}

fn conv2d_dims<T>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> AdResult<Conv2dDims> {
    let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
    if xs.len() != 3 || ws.len() != 4 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] || ws[2] != ws[3]
    {
        return Err(AdError::Config(format!(
            "conv2d shapes incompatible: x{xs:?} k{ws:?} b{bs:?}"
        )));
    }
    if stride == 0 {
        return Err(AdError::Config("conv2d stride must be positive".into()));
    }
    let h_out = conv_out_len(xs[1], ws[2], stride, padding, 1);
    let w_out = conv_out_len(xs[2], ws[3], stride, padding, 1);
    match (h_out, w_out) {
        (Some(h_out), Some(w_out)) => Ok(Conv2dDims {
            c_in: xs[0],
            c_out: ws[0],
            k: ws[2],
            h_in: xs[1],
            w_in: xs[2],
            h_out,
            w_out,
        }),
        _ => Err(AdError::Config(format!(
            "conv2d produces non-positive size (h={} w={} k={} s={stride} p={padding})",
            xs[1], xs[2], ws[2]
        ))),
    }
}

/// Gather the receptive-field patch of every output pixel into a row-major
/// matrix `[h_out*w_out, c_in*k*k]`; out-of-bounds taps stay zero. The
/// convolutions then become long contiguous dot products.
fn im2col<T: Real>(x: &[T], d: &Conv2dDims, stride: usize, padding: usize) -> Vec<T> {
    let patch = d.c_in * d.k * d.k;
    let plane_in = d.h_in * d.w_in;
    let mut cols = vec![T::zero(); d.h_out * d.w_out * patch];
    for oy in 0..d.h_out {
        for ox in 0..d.w_out {
            let row = &mut cols[(oy * d.w_out + ox) * patch..(oy * d.w_out + ox + 1) * patch];
            for ci in 0..d.c_in {
                let xplane = &x[ci * plane_in..(ci + 1) * plane_in];
                for ky in 0..d.k {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= d.h_in as isize {
                        continue;
                    }
                    let xrow = &xplane[iy as usize * d.w_in..(iy as usize + 1) * d.w_in];
                    let dst = &mut row[(ci * d.k + ky) * d.k..(ci * d.k + ky + 1) * d.k];
                    for kx in 0..d.k {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && (ix as usize) < d.w_in {
                            dst[kx] = xrow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add patch rows back onto the input plane (adjoint of [`im2col`]).
fn col2im<T: Real>(cols: &[T], d: &Conv2dDims, stride: usize, padding: usize, dx: &mut [T]) {
    let patch = d.c_in * d.k * d.k;
    let plane_in = d.h_in * d.w_in;
    for oy in 0..d.h_out {
        for ox in 0..d.w_out {
            let row = &cols[(oy * d.w_out + ox) * patch..(oy * d.w_out + ox + 1) * patch];
            for ci in 0..d.c_in {
                for ky in 0..d.k {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= d.h_in as isize {
                        continue;
                    }
                    let src = &row[(ci * d.k + ky) * d.k..(ci * d.k + ky + 1) * d.k];
                    for kx in 0..d.k {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && (ix as usize) < d.w_in {
                            let di = ci * plane_in + iy as usize * d.w_in + ix as usize;
                            dx[di] = dx[di] + src[kx];
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_fwd<T: Real>((x, w, b): Triple<T>, stride: usize, padding: usize) -> AdResult<Tensor<T>> {
    let d = conv2d_dims(x, w, b, stride, padding)?;
    let patch = d.c_in * d.k * d.k;
    let pixels = d.h_out * d.w_out;
    let cols = im2col(x.data(), &d, stride, padding);
    let mut out = vec![T::zero(); d.c_out * pixels];
    for (p, col_row) in cols.chunks_exact(patch).enumerate() {
        for co in 0..d.c_out {
            let wrow = &w.data()[co * patch..(co + 1) * patch];
            out[co * pixels + p] = b.data()[co] + dot(wrow, col_row);
        }
    }
    Tensor::new(vec![d.c_out, d.h_out, d.w_out], out)
}

fn conv2d_bwd<T: Real>(
    (x, w, b): Triple<T>,
    g: &Tensor<T>,
    needs: &[bool],
    stride: usize,
    padding: usize,
) -> AdResult<Vec<Option<Tensor<T>>>> {
    let d = conv2d_dims(x, w, b, stride, padding)?;
    let patch = d.c_in * d.k * d.k;
    let pixels = d.h_out * d.w_out;
    let gd = g.data();
    let cols = (needs[0] || needs[1]).then(|| im2col(x.data(), &d, stride, padding));

    let dw = match (needs[1], &cols) {
        (true, Some(cols)) => {
            let mut dw = vec![T::zero(); d.c_out * patch];
            for co in 0..d.c_out {
                let grow = &gd[co * pixels..(co + 1) * pixels];
                let wgrad = &mut dw[co * patch..(co + 1) * patch];
                for (p, col_row) in cols.chunks_exact(patch).enumerate() {
                    axpy(grow[p], col_row, wgrad);
                }
            }
            Some(Tensor::new(vec![d.c_out, d.c_in, d.k, d.k], dw).expect("shape"))
        }
        _ => None,
    };

    let dx = if needs[0] {
        let mut dcols = vec![T::zero(); pixels * patch];
        for co in 0..d.c_out {
            let grow = &gd[co * pixels..(co + 1) * pixels];
            let wrow = &w.data()[co * patch..(co + 1) * patch];
            for (p, dcol_row) in dcols.chunks_exact_mut(patch).enumerate() {
                axpy(grow[p], wrow, dcol_row);
            }
        }
        let mut dx = vec![T::zero(); d.c_in * d.h_in * d.w_in];
        col2im(&dcols, &d, stride, padding, &mut dx);
        Some(Tensor::new(vec![d.c_in, d.h_in, d.w_in], dx).expect("shape"))
    } else {
        None
    };

    let db = needs[2].then(|| {
        let data = gd.chunks_exact(pixels).map(|p| slice_sum(p)).collect();
        Tensor::new(vec![d.c_out], data).expect("shape")
    });
    Ok(vec![dx, dw, db])
}

// Softmax family --------------------------------------------------------------

fn last_axis_rows<T>(x: &Tensor<T>) -> (usize, usize) {
    let shape = x.shape();
    let m = *shape.last().expect("non-empty shape");
    (x.len() / m, m)
}

fn softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn softmax_fwd<T: Real>(x: &Tensor<T>) -> AdResult<Tensor<T>> {
    let (rows, m) = last_axis_rows(x);
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        softmax_row(&x.data()[r * m..(r + 1) * m], &mut out[r * m..(r + 1) * m]);
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn softmax_bwd<T: Real>(
    y: &Tensor<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    if !needs[0] {
        return Ok(vec![None]);
    }
    let (rows, m) = last_axis_rows(y);
    let mut dx = vec![T::zero(); y.len()];
    for r in 0..rows {
        let yrow = &y.data()[r * m..(r + 1) * m];
        let grow = &g.data()[r * m..(r + 1) * m];
        let inner = dot(yrow, grow);
        for ((d, &yv), &gv) in dx[r * m..(r + 1) * m].iter_mut().zip(yrow).zip(grow) {
            *d = yv * (gv - inner);
        }
    }
    Ok(vec![Some(Tensor::new(y.shape().to_vec(), dx)?)])
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

fn sce_fwd<T: Real>(logits: &Tensor<T>, target: usize) -> AdResult<Tensor<T>> {
    if logits.shape().len() != 1 {
        return Err(AdError::Config("cross-entropy expects 1-D logits".into()));
    }
    if target >= logits.len() {
        return Err(AdError::Input(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(Tensor::scalar(log_sum_exp(logits.data()) - logits.data()[target]))
}

fn sce_bwd<T: Real>(
    logits: &Tensor<T>,
    target: usize,
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    if !needs[0] {
        return Ok(vec![None]);
    }
    let gs = g.item()?;
    let mut dx = vec![T::zero(); logits.len()];
    softmax_row(logits.data(), &mut dx);
    dx[target] = dx[target] - T::one();
    dx.iter_mut().for_each(|v| *v = *v * gs);
    Ok(vec![Some(Tensor::new(vec![logits.len()], dx)?)])
}

// Stochastic reparameterizations ------------------------------------------------

fn reparam_fwd<T: Real>((mu, lv, eps): Triple<T>) -> AdResult<Tensor<T>> {
    if mu.shape() != lv.shape() || mu.shape() != eps.shape() {
        return Err(AdError::Config(format!(
            "reparameterize shape mismatch: mu{:?} log_var{:?} eps{:?}",
            mu.shape(),
            lv.shape(),
            eps.shape()
        )));
    }
    let half = T::from_f64(0.5);
    let data = mu
        .data()
        .iter()
        .zip(lv.data())
        .zip(eps.data())
        .map(|((&m, &l), &e)| m + (half * l).exp() * e)
        .collect();
    Tensor::new(mu.shape().to_vec(), data)
}

fn reparam_bwd<T: Real>(
    (mu, lv, eps): Triple<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    let half = T::from_f64(0.5);
    let dmu = needs[0].then(|| g.clone());
    let dlv = needs[1].then(|| {
        let data = lv
            .data()
            .iter()
            .zip(eps.data())
            .zip(g.data())
            .map(|((&l, &e), &gv)| gv * e * half * (half * l).exp())
            .collect();
        Tensor::new(mu.shape().to_vec(), data).expect("shape")
    });
    let deps = needs[2].then(|| {
        let data = lv
            .data()
            .iter()
            .zip(g.data())
            .map(|(&l, &gv)| gv * (half * l).exp())
            .collect();
        Tensor::new(mu.shape().to_vec(), data).expect("shape")
    });
    Ok(vec![dmu, dlv, deps])
}

fn gumbel_fwd<T: Real>((logits, noise): (&Tensor<T>, &Tensor<T>), temperature: f64) -> AdResult<Tensor<T>> {
    if temperature <= 0.0 {
        return Err(AdError::Config(format!(
            "gumbel-softmax temperature must be positive, got {temperature}"
        )));
    }
    if logits.shape() != noise.shape() {
        return Err(AdError::Config(format!(
            "gumbel-softmax shape mismatch: logits{:?} noise{:?}",
            logits.shape(),
            noise.shape()
        )));
    }
    let tau = T::from_f64(temperature);
    let scaled: Vec<T> = logits
        .data()
        .iter()
        .zip(noise.data())
        .map(|(&z, &n)| (z + n) / tau)
        .collect();
    let mut out = vec![T::zero(); scaled.len()];
    softmax_row(&scaled, &mut out);
    Tensor::new(logits.shape().to_vec(), out)
}

fn gumbel_bwd<T: Real>(
    y: &Tensor<T>,
    g: &Tensor<T>,
    needs: &[bool],
    temperature: f64,
) -> AdResult<Vec<Option<Tensor<T>>>> {
    let inv_tau = T::from_f64(1.0 / temperature);
    let inner = dot(y.data(), g.data());
    let make = || {
        let data = y
            .data()
            .iter()
            .zip(g.data())
            .map(|(&yv, &gv)| inv_tau * yv * (gv - inner))
            .collect();
        Tensor::new(y.shape().to_vec(), data).expect("shape")
    };
    Ok(vec![needs[0].then(make), needs[1].then(make)])
}

// Divergences -------------------------------------------------------------------

fn kl_gauss_fwd<T: Real>((mu, lv): (&Tensor<T>, &Tensor<T>)) -> AdResult<Tensor<T>> {
    if mu.shape() != lv.shape() {
        return Err(AdError::Config(format!(
            "kl shape mismatch: mu{:?} log_var{:?}",
            mu.shape(),
            lv.shape()
        )));
    }
    let half = T::from_f64(0.5);
    let sum: T = mu
        .data()
        .iter()
        .zip(lv.data())
        .map(|(&m, &l)| m * m + l.exp() - l - T::one())
        .sum();
    Ok(Tensor::scalar(half * sum))
}

fn kl_gauss_bwd<T: Real>(
    (mu, lv): (&Tensor<T>, &Tensor<T>),
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    let gs = g.item()?;
    let half = T::from_f64(0.5);
    let dmu = needs[0].then(|| map_tensor(mu, |m| gs * m));
    let dlv = needs[1].then(|| map_tensor(lv, |l| gs * half * (l.exp() - T::one())));
    Ok(vec![dmu, dlv])
}

fn kl_cat_fwd<T: Real>(logits: &Tensor<T>) -> AdResult<Tensor<T>> {
    if logits.shape().len() != 1 {
        return Err(AdError::Config("categorical KL expects 1-D logits".into()));
    }
    let lse = log_sum_exp(logits.data());
    let ln_m = T::from_usize(logits.len()).ln();
    // sum_i pi_i * (log pi_i + log m)
    let kl: T = logits
        .data()
        .iter()
        .map(|&z| {
            let lp = z - lse;
            lp.exp() * (lp + ln_m)
        })
        .sum();
    Ok(Tensor::scalar(kl))
}

fn kl_cat_bwd<T: Real>(
    logits: &Tensor<T>,
    out: &Tensor<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    if !needs[0] {
        return Ok(vec![None]);
    }
    let gs = g.item()?;
    let kl = out.item()?;
    let lse = log_sum_exp(logits.data());
    let ln_m = T::from_usize(logits.len()).ln();
    let data = logits
        .data()
        .iter()
        .map(|&z| {
            let lp = z - lse;
            gs * lp.exp() * (lp + ln_m - kl)
        })
        .collect();
    Ok(vec![Some(Tensor::new(vec![logits.len()], data)?)])
}

fn bce_fwd<T: Real>(z: &Tensor<T>, target_one: bool) -> AdResult<Tensor<T>> {
    let y = if target_one { T::one() } else { T::zero() };
    let n = T::from_usize(z.len());
    // max(z,0) - z*y + ln(1 + exp(-|z|))
    let sum: T = z
        .data()
        .iter()
        .map(|&v| v.max(T::zero()) - v * y + (T::one() + (-v.abs()).exp()).ln())
        .sum();
    Ok(Tensor::scalar(sum / n))
}

fn bce_bwd<T: Real>(
    z: &Tensor<T>,
    target_one: bool,
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    if !needs[0] {
        return Ok(vec![None]);
    }
    let gs = g.item()? / T::from_usize(z.len());
    let y = if target_one { T::one() } else { T::zero() };
    Ok(vec![Some(map_tensor(z, |v| gs * (sigmoid(v) - y)))])
}

// Structural ops ------------------------------------------------------------------

fn concat_fwd<T: Real>(inputs: &[&Tensor<T>]) -> AdResult<Tensor<T>> {
    if inputs.is_empty() {
        return Err(AdError::Config("concat of zero tensors".into()));
    }
    let mut data = Vec::new();
    for t in inputs {
        if t.shape().len() != 1 {
            return Err(AdError::Config("concat expects 1-D tensors".into()));
        }
        data.extend_from_slice(t.data());
    }
    let n = data.len();
    Tensor::new(vec![n], data)
}

fn concat_bwd<T: Real>(
    inputs: &[&Tensor<T>],
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut offset = 0;
    for (t, &need) in inputs.iter().zip(needs) {
        let n = t.len();
        out.push(opt(
            need,
            Tensor::new(vec![n], g.data()[offset..offset + n].to_vec())?,
        ));
        offset += n;
    }
    Ok(out)
}

fn slice_fwd<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> AdResult<Tensor<T>> {
    if x.shape().len() != 1 || start + len > x.len() || len == 0 {
        return Err(AdError::Config(format!(
            "slice [{start},{len}) invalid for 1-D tensor of {} elements",
            x.len()
        )));
    }
    Tensor::new(vec![len], x.data()[start..start + len].to_vec())
}

fn slice_bwd<T: Real>(
    x: &Tensor<T>,
    start: usize,
    len: usize,
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    if !needs[0] {
        return Ok(vec![None]);
    }
    let mut dx = vec![T::zero(); x.len()];
    dx[start..start + len].copy_from_slice(g.data());
    Ok(vec![Some(Tensor::new(vec![x.len()], dx)?)])
}

fn tile_fwd<T: Real>(x: &Tensor<T>, steps: usize) -> AdResult<Tensor<T>> {
    if x.shape().len() != 1 || steps == 0 {
        return Err(AdError::Config(
            "tile-with-time expects a 1-D vector and positive steps".into(),
        ));
    }
    let d = x.len();
    let mut data = vec![T::zero(); (d + 1) * steps];
    for (row, &v) in data.chunks_exact_mut(steps).zip(x.data()) {
        row.fill(v);
    }
    let steps_t = T::from_usize(steps);
    for (i, slot) in data[d * steps..].iter_mut().enumerate() {
        *slot = T::from_usize(i + 1) / steps_t;
    }
    Tensor::new(vec![d + 1, steps], data)
}

fn tile_bwd<T: Real>(
    x: &Tensor<T>,
    steps: usize,
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    if !needs[0] {
        return Ok(vec![None]);
    }
    let d = x.len();
    let data = g.data()[..d * steps]
        .chunks_exact(steps)
        .map(|row| row.iter().copied().sum::<T>())
        .collect();
    Ok(vec![Some(Tensor::new(vec![d], data)?)])
}

fn mean_pool_fwd<T: Real>(x: &Tensor<T>) -> AdResult<Tensor<T>> {
    if x.shape().len() != 2 {
        return Err(AdError::Config("mean-pool expects a 2-D tensor".into()));
    }
    let t = x.shape()[1];
    let inv = T::one() / T::from_usize(t);
    let data = x
        .data()
        .chunks_exact(t)
        .map(|row| row.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![x.shape()[0]], data)
}

fn mean_pool_bwd<T: Real>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> AdResult<Vec<Option<Tensor<T>>>> {
    if !needs[0] {
        return Ok(vec![None]);
    }
    let t = x.shape()[1];
    let inv = T::one() / T::from_usize(t);
    let mut dx = vec![T::zero(); x.len()];
    for (row, &gv) in dx.chunks_exact_mut(t).zip(g.data()) {
        row.fill(gv * inv);
    }
    Ok(vec![Some(Tensor::new(x.shape().to_vec(), dx)?)])
}

fn reshape_fwd<T: Real>(x: &Tensor<T>, shape: &[usize]) -> AdResult<Tensor<T>> {
    let n: usize = shape.iter().product();
    if n != x.len() {
        return Err(AdError::Config(format!(
            "reshape {:?} -> {:?} changes element count",
            x.shape(),
            shape
        )));
    }
    Tensor::new(shape.to_vec(), x.data().to_vec())
}
