//! Layer primitives: 2-D convolution, 2x2 max pooling, ReLU, dense, and
//! softmax cross-entropy, each with a hand-written backward pass.
//!
//! Convolution is cross-correlation (no kernel flip) with zero padding, the
//! usual deep-learning convention. Every kernel accumulates in a fixed order
//! so identical inputs give bit-identical outputs regardless of thread count.

use crate::tensor::{Tensor, TensorError};

/// Trainable convolution filter bank.
#[derive(Clone, Debug)]
pub struct ConvParams {
    /// [filters][in_channels][k][k]
    pub weights: Tensor,
    /// [filters]
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self, TensorError> {
        let ws = weights.shape();
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv weights must be [F][C][K][K], got {ws:?}"
            )));
        }
        if bias.shape() != [ws[0]] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv bias must be [{}], got {:?}",
                ws[0],
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(TensorError::ShapeMismatch("stride must be >= 1".into()));
        }
        Ok(ConvParams { weights, bias, stride, padding })
    }

    pub fn filters(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }
}

/// Dense (fully connected) layer parameters.
#[derive(Clone, Debug)]
pub struct DenseParams {
    /// [out][in]
    pub weights: Tensor,
    /// [out]
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self, TensorError> {
        let ws = weights.shape();
        if ws.len() != 2 {
            return Err(TensorError::ShapeMismatch(format!(
                "dense weights must be [out][in], got {ws:?}"
            )));
        }
        if bias.shape() != [ws[0]] {
            return Err(TensorError::ShapeMismatch(format!(
                "dense bias must be [{}], got {:?}",
                ws[0],
                bias.shape()
            )));
        }
        Ok(DenseParams { weights, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// Gradients from a convolution backward pass, shape-congruent with
/// (input, weights, bias).
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub grad_x: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

/// Gradients from a dense backward pass.
#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub grad_x: Tensor,
    pub grad_w: Tensor,
    pub grad_b: Tensor,
}

/// Window-local argmax positions recorded by a pooling forward pass.
/// Values are 0..=3 in row-major window order.
#[derive(Clone, Debug)]
pub struct PoolMap {
    channels: usize,
    out_h: usize,
    out_w: usize,
    idx: Vec<u8>,
}

impl PoolMap {
    pub fn out_shape(&self) -> [usize; 3] {
        [self.channels, self.out_h, self.out_w]
    }

    pub fn index_at(&self, c: usize, i: usize, j: usize) -> u8 {
        self.idx[(c * self.out_h + i) * self.out_w + j]
    }
}

/// Softmax probabilities, cross-entropy loss, and the loss gradient with
/// respect to the logits.
#[derive(Clone, Debug)]
pub struct SoftmaxOutput {
    pub probs: Tensor,
    pub loss: f64,
    pub grad_logits: Tensor,
}

fn dims3(x: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    match x.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(TensorError::ShapeMismatch(format!("expected [C][H][W], got {s:?}"))),
    }
}

// Valid output-column range [lo, hi) for kernel column v:
// j is valid iff 0 <= j*s - p + v <= w-1.
fn col_range(w: usize, out_w: usize, s: usize, p: usize, v: usize) -> (usize, usize) {
    let lo = if p > v { (p - v).div_ceil(s) } else { 0 };
    let hi_num = w as isize - 1 + p as isize - v as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = hi_num as usize / s + 1;
    (lo.min(out_w), hi.min(out_w))
}

fn conv_out_side(n: usize, k: usize, s: usize, p: usize) -> Result<usize, TensorError> {
    let span = n + 2 * p;
    if span < k {
        return Err(TensorError::ShapeMismatch(format!(
            "kernel {k} larger than padded input {span}"
        )));
    }
    if (span - k) % s != 0 {
        return Err(TensorError::ShapeMismatch(format!(
            "({n} + 2*{p} - {k}) not divisible by stride {s}"
        )));
    }
    Ok((span - k) / s + 1)
}

// y[i] += a * x[i]
#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = xi.mul_add(a, *yi);
    }
}

// Dot product with eight interleaved accumulators. The lane split keeps the
// summation order fixed while letting the loop vectorize.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n8 = (a.len() / 8) * 8;
    let mut acc = [0.0f64; 8];
    for (ca, cb) in a[..n8].chunks_exact(8).zip(b[..n8].chunks_exact(8)) {
        for l in 0..8 {
            acc[l] = ca[l].mul_add(cb[l], acc[l]);
        }
    }
    let mut s = a[n8..]
        .iter()
        .zip(&b[n8..])
        .fold(0.0, |s, (x, y)| x.mul_add(*y, s));
    for v in acc {
        s += v;
    }
    s
}

// Lane-split sum, same ordering scheme as `dot`.
#[inline]
fn sum(a: &[f64]) -> f64 {
    let n8 = (a.len() / 8) * 8;
    let mut acc = [0.0f64; 8];
    for ca in a[..n8].chunks_exact(8) {
        for l in 0..8 {
            acc[l] += ca[l];
        }
    }
    let mut s: f64 = a[n8..].iter().sum();
    for v in acc {
        s += v;
    }
    s
}

// Zero-padded copy of a [C][H][W] tensor, pad pixels on each spatial side.
fn pad_channels(x: &[f64], c_in: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    if pad == 0 {
        return x.to_vec();
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0; c_in * ph * pw];
    for c in 0..c_in {
        for i in 0..h {
            let src = c * h * w + i * w;
            let dst = c * ph * pw + (i + pad) * pw + pad;
            padded[dst..dst + w].copy_from_slice(&x[src..src + w]);
        }
    }
    padded
}

// Patch matrix for stride-1 convolution: one row of length L = C·K·K per
// output pixel, in [c][u][v] order. Filters stored [F][C][K][K] are then a
// plain [F][L] matrix, so forward is row-by-row dot products.
fn im2row(
    xpad: &[f64],
    c_in: usize,
    ph: usize,
    pw: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let l = c_in * k * k;
    let mut rows = vec![0.0; out_h * out_w * l];
    for i in 0..out_h {
        for j in 0..out_w {
            let base = (i * out_w + j) * l;
            let mut col = 0;
            for c in 0..c_in {
                for u in 0..k {
                    let src = c * ph * pw + (i + u) * pw + j;
                    rows[base + col..base + col + k].copy_from_slice(&xpad[src..src + k]);
                    col += k;
                }
            }
        }
    }
    rows
}

// Minimum patch length before the patch-matrix path beats plain row
// accumulation.
const IM2ROW_MIN_PATCH: usize = 32;
// Filters processed per pass over the patch matrix.
const FILTER_BLOCK: usize = 8;

// Copies the unpadded center of a padded [C][ph][pw] buffer into a
// [C][h][w] destination.
#[allow(clippy::too_many_arguments)]
fn copy_center(src: &[f64], dst: &mut [f64], c_in: usize, h: usize, w: usize, ph: usize, pw: usize, pad: usize) {
    for c in 0..c_in {
        for i in 0..h {
            let s = c * ph * pw + (i + pad) * pw + pad;
            let d = c * h * w + i * w;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
}

/// 2-D convolution of x [C][H][W] with p, producing [F][H'][W'] where
/// H' = (H + 2·padding − K)/stride + 1.
pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor, TensorError> {
    let (c_in, h, w) = dims3(x)?;
    if c_in != p.in_channels() {
        return Err(TensorError::ShapeMismatch(format!(
            "input has {} channels, filters expect {}",
            c_in,
            p.in_channels()
        )));
    }
    let k = p.kernel();
    let (s, pad) = (p.stride, p.padding);
    let out_h = conv_out_side(h, k, s, pad)?;
    let out_w = conv_out_side(w, k, s, pad)?;
    let f_out = p.filters();

    let mut out = Tensor::zeros(vec![f_out, out_h, out_w]);
    let wdata = p.weights.data();
    let odata = out.data_mut();

    if s == 1 {
        // Stride-1 hot path: pad once, then either dot against a patch
        // matrix (deep layers, long patches) or accumulate full-width rows
        // (shallow layers, long rows). Both keep every inner loop a
        // contiguous fused multiply-add.
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let xpad = pad_channels(x.data(), c_in, h, w, pad);
        let l = c_in * k * k;
        let hw = out_h * out_w;
        if l >= IM2ROW_MIN_PATCH {
            let rows = im2row(&xpad, c_in, ph, pw, k, out_h, out_w);
            // OUT[f][ij] = Σ_l W[f][l]·R[ij][l] + bias[f]; bias is prefilled
            // and kept via beta = 1.
            for f in 0..f_out {
                odata[f * hw..(f + 1) * hw].fill(p.bias.data()[f]);
            }
            debug_assert_eq!(wdata.len(), f_out * l);
            debug_assert_eq!(rows.len(), hw * l);
            // Safety: W is a dense [f_out][l] matrix, R a dense [hw][l]
            // matrix read with transposed strides, and C a dense
            // [f_out][hw] matrix; all strides stay inside those buffers.
            unsafe {
                matrixmultiply::dgemm(
                    f_out,
                    l,
                    hw,
                    1.0,
                    wdata.as_ptr(),
                    l as isize,
                    1,
                    rows.as_ptr(),
                    1,
                    l as isize,
                    1.0,
                    odata.as_mut_ptr(),
                    hw as isize,
                    1,
                );
            }
        } else {
            for f in 0..f_out {
                let ochan = &mut odata[f * hw..(f + 1) * hw];
                ochan.fill(p.bias.data()[f]);
                for c in 0..c_in {
                    let xchan = &xpad[c * ph * pw..(c + 1) * ph * pw];
                    let wbase = (f * c_in + c) * k * k;
                    for (i, orow) in ochan.chunks_exact_mut(out_w).enumerate() {
                        for u in 0..k {
                            let xrow = &xchan[(i + u) * pw..(i + u) * pw + pw];
                            for v in 0..k {
                                axpy(orow, wdata[wbase + u * k + v], &xrow[v..v + out_w]);
                            }
                        }
                    }
                }
            }
        }
        return Ok(out);
    }

    // General strided path.
    let xdata = x.data();
    for f in 0..f_out {
        let ochan = &mut odata[f * out_h * out_w..(f + 1) * out_h * out_w];
        ochan.fill(p.bias.data()[f]);
        for c in 0..c_in {
            let xchan = &xdata[c * h * w..(c + 1) * h * w];
            for u in 0..k {
                for v in 0..k {
                    let wv = wdata[((f * c_in + c) * k + u) * k + v];
                    let (j_lo, j_hi) = col_range(w, out_w, s, pad, v);
                    if j_lo >= j_hi {
                        continue;
                    }
                    for i in 0..out_h {
                        let r = (i * s + u) as isize - pad as isize;
                        if r < 0 || r >= h as isize {
                            continue;
                        }
                        let xoff = r as usize * w + j_lo * s + v - pad;
                        let orow = &mut ochan[i * out_w + j_lo..i * out_w + j_hi];
                        for (jj, o) in orow.iter_mut().enumerate() {
                            *o = xchan[xoff + jj * s].mul_add(wv, *o);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of `conv2d_forward`: gradients with respect to the input,
/// the weights, and the bias. Set `need_grad_x` false for the first layer to
/// skip the input-gradient pass.
pub fn conv2d_backward(
    x: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
    need_grad_x: bool,
) -> Result<ConvGrads, TensorError> {
    let (c_in, h, w) = dims3(x)?;
    if c_in != p.in_channels() {
        return Err(TensorError::ShapeMismatch(format!(
            "input has {} channels, filters expect {}",
            c_in,
            p.in_channels()
        )));
    }
    let k = p.kernel();
    let (s, pad) = (p.stride, p.padding);
    let out_h = conv_out_side(h, k, s, pad)?;
    let out_w = conv_out_side(w, k, s, pad)?;
    if grad_out.shape() != [p.filters(), out_h, out_w] {
        return Err(TensorError::ShapeMismatch(format!(
            "grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            [p.filters(), out_h, out_w]
        )));
    }

    let mut grad_x = Tensor::zeros(vec![c_in, h, w]);
    let mut grad_w = Tensor::zeros(p.weights.shape().to_vec());
    let mut grad_b = Tensor::zeros(vec![p.filters()]);
    let xdata = x.data();
    let wdata = p.weights.data();
    let godata = grad_out.data();
    let f_out = p.filters();

    for f in 0..f_out {
        grad_b.data_mut()[f] = sum(&godata[f * out_h * out_w..(f + 1) * out_h * out_w]);
    }

    if s == 1 {
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let xpad = pad_channels(xdata, c_in, h, w, pad);
        let l = c_in * k * k;
        let hw = out_h * out_w;
        let gw = grad_w.data_mut();

        if l >= IM2ROW_MIN_PATCH {
            let rows = im2row(&xpad, c_in, ph, pw, k, out_h, out_w);
            // GW[f][l] = Σ_ij GO[f][ij]·R[ij][l]
            debug_assert_eq!(gw.len(), f_out * l);
            // Safety: GO is dense [f_out][hw], R dense [hw][l], GW dense
            // [f_out][l]; strides stay inside those buffers.
            unsafe {
                matrixmultiply::dgemm(
                    f_out,
                    hw,
                    l,
                    1.0,
                    godata.as_ptr(),
                    hw as isize,
                    1,
                    rows.as_ptr(),
                    l as isize,
                    1,
                    0.0,
                    gw.as_mut_ptr(),
                    l as isize,
                    1,
                );
            }
            if need_grad_x {
                // per-pixel patch gradients GCOL[ij][l] = Σ_f GO[f][ij]·W[f][l]
                // (GO read with transposed strides), then one scatter pass
                // back into the padded input layout
                let mut gcol = vec![0.0; hw * l];
                // Safety: same dense buffers as above; GOᵀ is expressed by
                // swapping GO's strides.
                unsafe {
                    matrixmultiply::dgemm(
                        hw,
                        f_out,
                        l,
                        1.0,
                        godata.as_ptr(),
                        1,
                        hw as isize,
                        wdata.as_ptr(),
                        l as isize,
                        1,
                        0.0,
                        gcol.as_mut_ptr(),
                        l as isize,
                        1,
                    );
                }
                let mut gxpad = vec![0.0; c_in * ph * pw];
                for i in 0..out_h {
                    for j in 0..out_w {
                        let patch = &gcol[(i * out_w + j) * l..(i * out_w + j) * l + l];
                        let mut col = 0;
                        for c in 0..c_in {
                            for u in 0..k {
                                let dst = c * ph * pw + (i + u) * pw + j;
                                for v in 0..k {
                                    gxpad[dst + v] += patch[col + v];
                                }
                                col += k;
                            }
                        }
                    }
                }
                copy_center(&gxpad, grad_x.data_mut(), c_in, h, w, ph, pw, pad);
            }
            return Ok(ConvGrads { grad_x, grad_w, grad_b });
        }

        // shallow-layer path: full-width row dots and axpys
        for f in 0..f_out {
            let gochan = &godata[f * hw..(f + 1) * hw];
            for c in 0..c_in {
                let xchan = &xpad[c * ph * pw..(c + 1) * ph * pw];
                let wbase = (f * c_in + c) * k * k;
                for u in 0..k {
                    for (i, gorow) in gochan.chunks_exact(out_w).enumerate() {
                        let xrow = &xchan[(i + u) * pw..(i + u) * pw + pw];
                        for v in 0..k {
                            gw[wbase + u * k + v] += dot(gorow, &xrow[v..v + out_w]);
                        }
                    }
                }
            }
        }
        if need_grad_x {
            let mut gxpad = vec![0.0; c_in * ph * pw];
            for c in 0..c_in {
                let gxchan = &mut gxpad[c * ph * pw..(c + 1) * ph * pw];
                for f in 0..f_out {
                    let gochan = &godata[f * hw..(f + 1) * hw];
                    let wbase = (f * c_in + c) * k * k;
                    for (i, gorow) in gochan.chunks_exact(out_w).enumerate() {
                        for u in 0..k {
                            let gxrow = &mut gxchan[(i + u) * pw..(i + u) * pw + pw];
                            for v in 0..k {
                                axpy(&mut gxrow[v..v + out_w], wdata[wbase + u * k + v], gorow);
                            }
                        }
                    }
                }
            }
            copy_center(&gxpad, grad_x.data_mut(), c_in, h, w, ph, pw, pad);
        }
        return Ok(ConvGrads { grad_x, grad_w, grad_b });
    }

    // General strided path.
    for f in 0..f_out {
        let gochan = &godata[f * out_h * out_w..(f + 1) * out_h * out_w];
        for c in 0..c_in {
            let xchan = &xdata[c * h * w..(c + 1) * h * w];
            let gxchan = &mut grad_x.data_mut()[c * h * w..(c + 1) * h * w];
            for u in 0..k {
                for v in 0..k {
                    let widx = ((f * c_in + c) * k + u) * k + v;
                    let (j_lo, j_hi) = col_range(w, out_w, s, pad, v);
                    if j_lo >= j_hi {
                        continue;
                    }
                    let wv = wdata[widx];
                    let mut gw = grad_w.data()[widx];
                    for i in 0..out_h {
                        let r = (i * s + u) as isize - pad as isize;
                        if r < 0 || r >= h as isize {
                            continue;
                        }
                        let xoff = r as usize * w + j_lo * s + v - pad;
                        let gorow = &gochan[i * out_w + j_lo..i * out_w + j_hi];
                        for (jj, &g) in gorow.iter().enumerate() {
                            gw = xchan[xoff + jj * s].mul_add(g, gw);
                            if need_grad_x {
                                gxchan[xoff + jj * s] = g.mul_add(wv, gxchan[xoff + jj * s]);
                            }
                        }
                    }
                    grad_w.data_mut()[widx] = gw;
                }
            }
        }
    }
    Ok(ConvGrads { grad_x, grad_w, grad_b })
}

/// 2x2 max pooling with stride 2. Ties break to the first maximal element in
/// window-local row-major order. Requires even H and W.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, PoolMap), TensorError> {
    let (c_in, h, w) = dims3(x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::OddDimension { height: h, width: w });
    }
    let (out_h, out_w) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![c_in, out_h, out_w]);
    let mut idx = vec![0u8; c_in * out_h * out_w];
    let xdata = x.data();
    let odata = out.data_mut();

    for c in 0..c_in {
        let xchan = &xdata[c * h * w..(c + 1) * h * w];
        for i in 0..out_h {
            let top = 2 * i * w;
            let bot = top + w;
            for j in 0..out_w {
                let cand = [
                    xchan[top + 2 * j],
                    xchan[top + 2 * j + 1],
                    xchan[bot + 2 * j],
                    xchan[bot + 2 * j + 1],
                ];
                let mut best = 0usize;
                for (pos, &v) in cand.iter().enumerate().skip(1) {
                    if v > cand[best] {
                        best = pos;
                    }
                }
                let o = (c * out_h + i) * out_w + j;
                odata[o] = cand[best];
                idx[o] = best as u8;
            }
        }
    }
    Ok((
        out,
        PoolMap { channels: c_in, out_h, out_w, idx },
    ))
}

/// Scatter of grad_out back through the recorded argmax positions; exactly
/// one entry per 2x2 window receives a value.
pub fn maxpool2x2_backward(map: &PoolMap, grad_out: &Tensor) -> Result<Tensor, TensorError> {
    if grad_out.shape() != map.out_shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "grad_out shape {:?}, pool map expects {:?}",
            grad_out.shape(),
            map.out_shape()
        )));
    }
    let (c_in, out_h, out_w) = (map.channels, map.out_h, map.out_w);
    let (h, w) = (out_h * 2, out_w * 2);
    let mut grad_x = Tensor::zeros(vec![c_in, h, w]);
    let gx = grad_x.data_mut();
    let go = grad_out.data();

    for c in 0..c_in {
        for i in 0..out_h {
            for j in 0..out_w {
                let o = (c * out_h + i) * out_w + j;
                let pos = map.idx[o] as usize;
                let (di, dj) = (pos / 2, pos % 2);
                gx[(c * h + 2 * i + di) * w + 2 * j + dj] = go[o];
            }
        }
    }
    Ok(grad_x)
}

/// Elementwise max(0, x).
pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape().to_vec(), |i| x.data()[i].max(0.0))
}

/// ReLU backward: passes grad_out where x > 0, zero elsewhere (subgradient 0
/// at exactly 0).
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor, TensorError> {
    if x.shape() != grad_out.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "x shape {:?} vs grad_out shape {:?}",
            x.shape(),
            grad_out.shape()
        )));
    }
    Ok(Tensor::from_fn(x.shape().to_vec(), |i| {
        if x.data()[i] > 0.0 {
            grad_out.data()[i]
        } else {
            0.0
        }
    }))
}

/// y = W·x + b for x [in], W [out][in], b [out].
pub fn dense_forward(x: &Tensor, p: &DenseParams) -> Result<Tensor, TensorError> {
    let (n_out, n_in) = (p.out_dim(), p.in_dim());
    if x.shape() != [n_in] {
        return Err(TensorError::ShapeMismatch(format!(
            "dense input must be [{n_in}], got {:?}",
            x.shape()
        )));
    }
    let mut y = Tensor::zeros(vec![n_out]);
    for o in 0..n_out {
        let wrow = &p.weights.data()[o * n_in..(o + 1) * n_in];
        y.data_mut()[o] = dot(wrow, x.data()) + p.bias.data()[o];
    }
    Ok(y)
}

/// Dense backward: grad_W = grad_out ⊗ x, grad_b = grad_out,
/// grad_x = Wᵀ·grad_out.
pub fn dense_backward(x: &Tensor, p: &DenseParams, grad_out: &Tensor) -> Result<DenseGrads, TensorError> {
    let (n_out, n_in) = (p.out_dim(), p.in_dim());
    if x.shape() != [n_in] {
        return Err(TensorError::ShapeMismatch(format!(
            "dense input must be [{n_in}], got {:?}",
            x.shape()
        )));
    }
    if grad_out.shape() != [n_out] {
        return Err(TensorError::ShapeMismatch(format!(
            "grad_out must be [{n_out}], got {:?}",
            grad_out.shape()
        )));
    }
    let mut grad_w = Tensor::zeros(vec![n_out, n_in]);
    let mut grad_x = Tensor::zeros(vec![n_in]);
    for o in 0..n_out {
        let g = grad_out.data()[o];
        let wrow = &p.weights.data()[o * n_in..(o + 1) * n_in];
        let gwrow = &mut grad_w.data_mut()[o * n_in..(o + 1) * n_in];
        for (gw, &xi) in gwrow.iter_mut().zip(x.data()) {
            *gw = g * xi;
        }
        axpy(grad_x.data_mut(), g, wrow);
    }
    Ok(DenseGrads { grad_x, grad_w, grad_b: grad_out.clone() })
}

/// Numerically stable softmax + cross-entropy against an integer target.
/// Returns probabilities, the loss −ln p[target], and grad = p − onehot.
pub fn softmax_cross_entropy(logits: &Tensor, target: usize) -> Result<SoftmaxOutput, TensorError> {
    let classes = logits.numel();
    if logits.shape().len() != 1 {
        return Err(TensorError::ShapeMismatch(format!(
            "logits must be 1-D, got {:?}",
            logits.shape()
        )));
    }
    if target >= classes {
        return Err(TensorError::TargetOutOfRange { target, classes });
    }
    let m = logits.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut exps: Vec<f64> = logits.data().iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    for e in exps.iter_mut() {
        *e /= total;
    }
    let loss = total.ln() - (logits.data()[target] - m);
    let mut grad = exps.clone();
    grad[target] -= 1.0;
    Ok(SoftmaxOutput {
        probs: Tensor::new(vec![classes], exps)?,
        loss,
        grad_logits: Tensor::new(vec![classes], grad)?,
    })
}
