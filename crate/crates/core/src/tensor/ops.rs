//! Forward kernels and their hand-written adjoints.
//!
//! Every function here is pure: inputs are borrowed, outputs are fresh
//! tensors. The tape in [`super::Graph`] strings them together.

use super::{Result, Tensor, TensorError};

/// Log argument floor for cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// `c = alpha * op(a) * op(b) + beta * c` with row-major storage.
///
/// `op(a)` is `m x k`, `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice length asserts above cover every index the strides
    // can reach for the given m, k, n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl Conv3dGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        bias: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        const OP: &str = "conv3d";
        if input.len() != 5 {
            return Err(TensorError::dim(OP, format!("input must be [N,C,T,H,W], got {input:?}")));
        }
        if kernel.len() != 5 {
            return Err(TensorError::dim(
                OP,
                format!("kernel must be [C_out,C_in,kT,kH,kW], got {kernel:?}"),
            ));
        }
        if input[1] != kernel[1] {
            return Err(TensorError::dim(
                OP,
                format!("channel axis: input has {} channels, kernel expects {}", input[1], kernel[1]),
            ));
        }
        if bias != [kernel[0]] {
            return Err(TensorError::dim(
                OP,
                format!("bias must be [{}], got {bias:?}", kernel[0]),
            ));
        }
        const AXES: [&str; 3] = ["T", "H", "W"];
        let mut output = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(TensorError::dim(OP, format!("stride on axis {} is zero", AXES[a])));
            }
            let padded = input[2 + a] + 2 * padding[a];
            if kernel[2 + a] > padded {
                return Err(TensorError::dim(
                    OP,
                    format!(
                        "axis {}: kernel {} exceeds padded input {}",
                        AXES[a],
                        kernel[2 + a],
                        padded
                    ),
                ));
            }
            output[a] = (padded - kernel[2 + a]) / stride[a] + 1;
        }
        Ok(Conv3dGeometry {
            batch: input[0],
            in_channels: input[1],
            out_channels: kernel[0],
            input: [input[2], input[3], input[4]],
            kernel: [kernel[2], kernel[3], kernel[4]],
            stride,
            padding,
            output,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn out_len(&self) -> usize {
        self.output.iter().product()
    }

    fn in_len(&self) -> usize {
        self.in_channels * self.input.iter().product::<usize>()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.out_channels,
            self.output[0],
            self.output[1],
            self.output[2],
        ]
    }

    /// Unfolds one sample into a `[patch_len, out_len]` column matrix.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let [t_in, h_in, w_in] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding;
        let [to, ho, wo] = self.output;
        let l = self.out_len();
        let mut row = 0;
        for ci in 0..self.in_channels {
            let xc = &x[ci * t_in * h_in * w_in..(ci + 1) * t_in * h_in * w_in];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let (lo, hi) = valid_span(wo, sw, dw, pw, w_in);
                        let dst = &mut col[row * l..(row + 1) * l];
                        let mut j = 0;
                        for ot in 0..to {
                            let it = (ot * st + dt) as isize - pt as isize;
                            for oh in 0..ho {
                                let ih = (oh * sh + dh) as isize - ph as isize;
                                let inside = it >= 0
                                    && (it as usize) < t_in
                                    && ih >= 0
                                    && (ih as usize) < h_in;
                                if !inside {
                                    dst[j..j + wo].fill(0.0);
                                    j += wo;
                                    continue;
                                }
                                let base = (it as usize * h_in + ih as usize) * w_in;
                                let out = &mut dst[j..j + wo];
                                out[..lo].fill(0.0);
                                out[hi..].fill(0.0);
                                if sw == 1 {
                                    let start = base + lo + dw - pw;
                                    out[lo..hi].copy_from_slice(&xc[start..start + hi - lo]);
                                } else {
                                    for ow in lo..hi {
                                        out[ow] = xc[base + ow * sw + dw - pw];
                                    }
                                }
                                j += wo;
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters-adds columns back into `dx`.
    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let [t_in, h_in, w_in] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding;
        let [to, ho, wo] = self.output;
        let l = self.out_len();
        let mut row = 0;
        for ci in 0..self.in_channels {
            let xc = &mut dx[ci * t_in * h_in * w_in..(ci + 1) * t_in * h_in * w_in];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let (lo, hi) = valid_span(wo, sw, dw, pw, w_in);
                        let src = &col[row * l..(row + 1) * l];
                        let mut j = 0;
                        for ot in 0..to {
                            let it = (ot * st + dt) as isize - pt as isize;
                            for oh in 0..ho {
                                let ih = (oh * sh + dh) as isize - ph as isize;
                                if it < 0 || it as usize >= t_in || ih < 0 || ih as usize >= h_in {
                                    j += wo;
                                    continue;
                                }
                                let base = (it as usize * h_in + ih as usize) * w_in;
                                let src = &src[j..j + wo];
                                if sw == 1 {
                                    let start = base + lo + dw - pw;
                                    for (d, v) in xc[start..start + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                        *d += v;
                                    }
                                } else {
                                    for ow in lo..hi {
                                        xc[base + ow * sw + dw - pw] += src[ow];
                                    }
                                }
                                j += wo;
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// Output positions `[lo, hi)` along one axis whose input index
/// `o * stride + k - pad` falls inside `0..len`.
fn valid_span(out: usize, stride: usize, k: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride).min(out);
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// 3-D convolution with zero padding.
pub fn conv3d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Tensor> {
    let g = Conv3dGeometry::new(input.shape(), kernel.shape(), bias.shape(), stride, padding)?;
    let (p, l) = (g.patch_len(), g.out_len());
    let mut out = vec![0.0; g.batch * g.out_channels * l];
    let mut col = vec![0.0; p * l];
    for n in 0..g.batch {
        g.im2col(&input.data()[n * g.in_len()..(n + 1) * g.in_len()], &mut col);
        let y = &mut out[n * g.out_channels * l..(n + 1) * g.out_channels * l];
        for (co, chunk) in y.chunks_mut(l).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        gemm(g.out_channels, p, l, kernel.data(), false, &col, false, y, 1.0);
    }
    Tensor::new(&g.output_shape(), out)
}

/// Gradients of [`conv3d`] with respect to input, kernel and bias.
///
/// `need_input` skips the input gradient (first layer of a network).
pub fn conv3d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: [usize; 3],
    padding: [usize; 3],
    grad_out: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let bias_shape = [kernel.shape()[0]];
    let g = Conv3dGeometry::new(input.shape(), kernel.shape(), &bias_shape, stride, padding)?;
    if grad_out.shape() != g.output_shape().as_slice() {
        return Err(TensorError::dim(
            "conv3d_backward",
            format!("grad shape {:?} != output shape {:?}", grad_out.shape(), g.output_shape()),
        ));
    }
    let (p, l, co) = (g.patch_len(), g.out_len(), g.out_channels);
    let mut dk = vec![0.0; co * p];
    let mut db = vec![0.0; co];
    let mut dx = if need_input { vec![0.0; input.len()] } else { Vec::new() };
    let mut col = vec![0.0; p * l];
    let mut dcol = if need_input { vec![0.0; p * l] } else { Vec::new() };
    for n in 0..g.batch {
        let dy = &grad_out.data()[n * co * l..(n + 1) * co * l];
        for (c, chunk) in dy.chunks(l).enumerate() {
            db[c] += chunk.iter().sum::<f64>();
        }
        g.im2col(&input.data()[n * g.in_len()..(n + 1) * g.in_len()], &mut col);
        gemm(co, l, p, dy, false, &col, true, &mut dk, 1.0);
        if need_input {
            gemm(p, co, l, kernel.data(), true, dy, false, &mut dcol, 0.0);
            g.col2im(&dcol, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
    let dx = if need_input {
        Some(Tensor::new(input.shape(), dx)?)
    } else {
        None
    };
    Ok((
        dx,
        Tensor::new(kernel.shape(), dk)?,
        Tensor::new(&bias_shape, db)?,
    ))
}

/// Non-overlapping max pooling over (T, H, W).
///
/// Returns the pooled tensor and, for every output element, the flat input
/// index it was taken from. Ties resolve to the lowest flat index.
pub fn maxpool3d(input: &Tensor, window: [usize; 3]) -> Result<(Tensor, Vec<usize>)> {
    const OP: &str = "maxpool3d";
    input.expect_rank(OP, 5)?;
    let s = input.shape();
    const AXES: [&str; 3] = ["T", "H", "W"];
    for a in 0..3 {
        if window[a] == 0 || !s[2 + a].is_multiple_of(window[a]) {
            return Err(TensorError::dim(
                OP,
                format!("axis {}: window {} does not divide {}", AXES[a], window[a], s[2 + a]),
            ));
        }
    }
    let (nc, t, h, w) = (s[0] * s[1], s[2], s[3], s[4]);
    let [pt, ph, pw] = window;
    let (to, ho, wo) = (t / pt, h / ph, w / pw);
    let x = input.data();
    let mut out = Vec::with_capacity(nc * to * ho * wo);
    let mut idx = Vec::with_capacity(nc * to * ho * wo);
    for c in 0..nc {
        let base = c * t * h * w;
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for dt in 0..pt {
                        for dh in 0..ph {
                            let row = base + ((ot * pt + dt) * h + oh * ph + dh) * w + ow * pw;
                            for dw in 0..pw {
                                let v = x[row + dw];
                                if best == usize::MAX || v > best_v {
                                    best = row + dw;
                                    best_v = v;
                                }
                            }
                        }
                    }
                    out.push(best_v);
                    idx.push(best);
                }
            }
        }
    }
    Ok((Tensor::new(&[s[0], s[1], to, ho, wo], out)?, idx))
}

pub fn maxpool3d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    dx
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `x[N,D] . w[D,K]`.
pub fn matmul(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    const OP: &str = "matmul";
    x.expect_rank(OP, 2)?;
    w.expect_rank(OP, 2)?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let (d2, k) = (w.shape()[0], w.shape()[1]);
    if d != d2 {
        return Err(TensorError::dim(
            OP,
            format!("inner axes differ: x is [{n},{d}], w is [{d2},{k}]"),
        ));
    }
    let mut out = vec![0.0; n * k];
    gemm(n, d, k, x.data(), false, w.data(), false, &mut out, 0.0);
    Tensor::new(&[n, k], out)
}

/// `x[N,D] . w[D,K] + b[K]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut y = matmul(x, w).map_err(|e| match e {
        TensorError::Dimension { detail, .. } => TensorError::dim("affine", detail),
        other => other,
    })?;
    let k = y.shape()[1];
    if b.shape() != [k] {
        return Err(TensorError::dim(
            "affine",
            format!("bias must be [{k}], got {:?}", b.shape()),
        ));
    }
    for row in y.data_mut().chunks_mut(k) {
        for (v, bb) in row.iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
    Ok(y)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank("softmax", 2)?;
    let k = logits.shape()[1];
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(logits.shape(), out)
}

pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Tensor {
    let k = probs.shape()[1];
    let mut dx = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks(k).zip(grad_out.data().chunks(k)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        dx.extend(p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)));
    }
    Tensor {
        shape: probs.shape().to_vec(),
        data: dx,
    }
}

fn check_labels(op: &'static str, probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    probs.expect_rank(op, 2)?;
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != n {
        return Err(TensorError::dim(
            op,
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::Index {
            op,
            index: bad,
            bound: k,
        });
    }
    Ok((n, k))
}

/// Mean negative log-likelihood of `labels` under row distributions `probs`.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, k) = check_labels("cross_entropy", probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs.data()[i * k + l].max(LOG_CLAMP).ln())
        .sum();
    Ok(total / n as f64)
}

pub fn cross_entropy_backward(probs: &Tensor, labels: &[usize], grad: f64) -> Result<Tensor> {
    let (n, k) = check_labels("cross_entropy", probs, labels)?;
    let mut dx = Tensor::zeros(probs.shape());
    for (i, &l) in labels.iter().enumerate() {
        let p = probs.data()[i * k + l];
        // clamped region has zero slope
        if p > LOG_CLAMP {
            dx.data_mut()[i * k + l] = -grad / (n as f64 * p);
        }
    }
    Ok(dx)
}

/// LSTM weights with gates packed as `[input | forget | cell | output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `[D, 4H]`
    pub w_input: Tensor,
    /// `[H, 4H]`
    pub w_hidden: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[0]
    }

    pub(crate) fn check(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<()> {
        const OP: &str = "lstm_step";
        x.expect_rank(OP, 2)?;
        h.expect_rank(OP, 2)?;
        c.expect_rank(OP, 2)?;
        self.w_input.expect_rank(OP, 2)?;
        self.w_hidden.expect_rank(OP, 2)?;
        let hd = self.w_hidden.shape()[0];
        let (n, d) = (x.shape()[0], x.shape()[1]);
        if self.w_hidden.shape() != [hd, 4 * hd] {
            return Err(TensorError::dim(
                OP,
                format!("w_hidden must be [H,4H], got {:?}", self.w_hidden.shape()),
            ));
        }
        if self.w_input.shape() != [d, 4 * hd] {
            return Err(TensorError::dim(
                OP,
                format!("w_input must be [{d},{}], got {:?}", 4 * hd, self.w_input.shape()),
            ));
        }
        if self.bias.shape() != [4 * hd] {
            return Err(TensorError::dim(
                OP,
                format!("bias must be [{}], got {:?}", 4 * hd, self.bias.shape()),
            ));
        }
        if h.shape() != [n, hd] || c.shape() != [n, hd] {
            return Err(TensorError::dim(
                OP,
                format!(
                    "state must be [{n},{hd}], got h {:?} c {:?}",
                    h.shape(),
                    c.shape()
                ),
            ));
        }
        Ok(())
    }
}

/// One LSTM step over a batch: returns `(h', c')`.
pub fn lstm_step(x: &Tensor, h: &Tensor, c: &Tensor, w: &LstmWeights) -> Result<(Tensor, Tensor)> {
    w.check(x, h, c)?;
    let hd = w.hidden();
    let mut z = affine(x, &w.w_input, &w.bias)?;
    let zh = matmul(h, &w.w_hidden)?;
    z.add_assign(&zh);
    let n = x.shape()[0];
    let mut h_new = vec![0.0; n * hd];
    let mut c_new = vec![0.0; n * hd];
    for r in 0..n {
        let zr = &z.data()[r * 4 * hd..(r + 1) * 4 * hd];
        for j in 0..hd {
            let i = sigmoid(zr[j]);
            let f = sigmoid(zr[hd + j]);
            let g = zr[2 * hd + j].tanh();
            let o = sigmoid(zr[3 * hd + j]);
            let cn = f * c.data()[r * hd + j] + i * g;
            c_new[r * hd + j] = cn;
            h_new[r * hd + j] = o * cn.tanh();
        }
    }
    Ok((Tensor::new(&[n, hd], h_new)?, Tensor::new(&[n, hd], c_new)?))
}
