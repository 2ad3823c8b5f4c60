//! Forward and backward kernels for the layers used by the models.
//!
//! Every function here is pure: inputs are borrowed, outputs are fresh
//! tensors. The tape in [`crate::tape`] strings them together.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Real, Tensor};

fn dims2<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
    }
}

fn dims4<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::shape(
            op,
            format!("expected a 4-d tensor, got {s:?}"),
        )),
    }
}

/// Matrix product `[M×K]·[K×N] → [M×N]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("[{m}×{k}] · [{k2}×{n}]")));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(
        MatRef::new(a.data(), m, k),
        MatRef::new(b.data(), k, n),
        T::zero(),
        &mut out,
    );
    Tensor::new(vec![m, n], out)
}

/// Gradients of `a·b` given the upstream gradient: `(g·bᵀ, aᵀ·g)`.
pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((matmul_grad_lhs(b, grad)?, matmul_grad_rhs(a, grad)?))
}

pub(crate) fn matmul_grad_lhs<T: Real>(b: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, n) = dims2("matmul backward", b)?;
    let (m, n2) = dims2("matmul backward", grad)?;
    if n != n2 {
        return Err(Error::shape("matmul backward", "upstream gradient width"));
    }
    let mut ga = vec![T::zero(); m * k];
    gemm(
        MatRef::new(grad.data(), m, n),
        MatRef::t(b.data(), k, n),
        T::zero(),
        &mut ga,
    );
    Tensor::new(vec![m, k], ga)
}

pub(crate) fn matmul_grad_rhs<T: Real>(a: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2("matmul backward", a)?;
    let (m2, n) = dims2("matmul backward", grad)?;
    if m != m2 {
        return Err(Error::shape("matmul backward", "upstream gradient height"));
    }
    let mut gb = vec![T::zero(); k * n];
    gemm(
        MatRef::t(a.data(), m, k),
        MatRef::new(grad.data(), m, n),
        T::zero(),
        &mut gb,
    );
    Tensor::new(vec![k, n], gb)
}

/// Adds `bias[N]` to every row of `x[B×N]`.
pub fn add_bias<T: Real>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = dims2("add_bias", x)?;
    if bias.shape() != [n] {
        return Err(Error::shape(
            "add_bias",
            format!("bias {:?} for width {n}", bias.shape()),
        ));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
    Ok(out)
}

/// Column sums of a `[B×N]` gradient.
pub(crate) fn sum_rows<T: Real>(grad: &Tensor<T>) -> Tensor<T> {
    let n = grad.shape()[1];
    let mut out = vec![T::zero(); n];
    for row in grad.data().chunks_exact(n) {
        for (o, &g) in out.iter_mut().zip(row) {
            *o = *o + g;
        }
    }
    Tensor::new(vec![n], out).expect("positive width")
}

/// Unfolds one `C×H×W` image into a `(C·9) × (H·W)` patch matrix for a 3×3
/// kernel with zero padding 1.
fn im2col<T: Real>(src: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &src[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..][..w];
                    out[..x0].fill(T::zero());
                    out[x1..].fill(T::zero());
                    let sx0 = (x0 as isize + dx) as usize;
                    out[x0..x1].copy_from_slice(&src_row[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im_add<T: Real>(cols: &[T], c: usize, h: usize, w: usize, dst: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dst[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w + x0..y * w + x1];
                    let sx0 = (x0 as isize + dx) as usize;
                    let target = &mut plane[sy as usize * w + sx0..][..x1 - x0];
                    for (t, &g) in target.iter_mut().zip(src) {
                        *t = *t + g;
                    }
                }
            }
        }
    }
}

fn check_conv<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<([usize; 4], usize)> {
    let dims = dims4("conv2d", input)?;
    let [f, kc, kh, kw] = dims4("conv2d", kernels)?;
    if (kh, kw) != (3, 3) {
        return Err(Error::shape(
            "conv2d",
            format!("kernels must be 3×3, got {kh}×{kw}"),
        ));
    }
    if kc != dims[1] {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, kernels expect {kc}", dims[1]),
        ));
    }
    if bias.shape() != [f] {
        return Err(Error::shape(
            "conv2d",
            format!("bias {:?} for {f} filters", bias.shape()),
        ));
    }
    Ok((dims, f))
}

/// 3×3 cross-correlation, stride 1, zero padding 1, plus per-filter bias.
/// `[B×C×H×W] → [B×F×H×W]`.
pub fn conv2d_same<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let ([b, c, h, w], f) = check_conv(input, kernels, bias)?;
    let (chw, hw, k9) = (c * h * w, h * w, c * 9);
    let mut cols = vec![T::zero(); k9 * hw];
    let mut out = vec![T::zero(); b * f * hw];
    for (img, dst) in input
        .data()
        .chunks_exact(chw)
        .zip(out.chunks_exact_mut(f * hw))
    {
        im2col(img, c, h, w, &mut cols);
        for (plane, &bv) in dst.chunks_exact_mut(hw).zip(bias.data()) {
            plane.fill(bv);
        }
        gemm(
            MatRef::new(kernels.data(), f, k9),
            MatRef::new(&cols, k9, hw),
            T::one(),
            dst,
        );
    }
    Tensor::new(vec![b, f, h, w], out)
}

/// `(input, kernels, bias)` gradients of a convolution.
pub type ConvGrads<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

/// Gradients of [`conv2d_same`]. The input gradient is skipped when
/// `want_input` is false.
pub fn conv2d_same_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad: &Tensor<T>,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let [b, c, h, w] = dims4("conv2d backward", input)?;
    let f = kernels.shape()[0];
    if grad.shape() != [b, f, h, w] {
        return Err(Error::shape(
            "conv2d backward",
            format!("upstream {:?}", grad.shape()),
        ));
    }
    let (chw, hw, k9) = (c * h * w, h * w, c * 9);
    let mut cols = vec![T::zero(); k9 * hw];
    let mut gcols = vec![T::zero(); k9 * hw];
    let mut gk = vec![T::zero(); f * k9];
    let mut gb = vec![T::zero(); f];
    let mut gin = want_input.then(|| vec![T::zero(); b * chw]);
    for (i, (img, g)) in input
        .data()
        .chunks_exact(chw)
        .zip(grad.data().chunks_exact(f * hw))
        .enumerate()
    {
        im2col(img, c, h, w, &mut cols);
        gemm(
            MatRef::new(g, f, hw),
            MatRef::t(&cols, k9, hw),
            T::one(),
            &mut gk,
        );
        for (acc, plane) in gb.iter_mut().zip(g.chunks_exact(hw)) {
            *acc = *acc + plane.iter().copied().sum();
        }
        if let Some(gin) = gin.as_mut() {
            gemm(
                MatRef::t(kernels.data(), f, k9),
                MatRef::new(g, f, hw),
                T::zero(),
                &mut gcols,
            );
            col2im_add(&gcols, c, h, w, &mut gin[i * chw..(i + 1) * chw]);
        }
    }
    let gin = gin.map(|d| Tensor::new(vec![b, c, h, w], d)).transpose()?;
    Ok((
        gin,
        Tensor::new(kernels.shape().to_vec(), gk)?,
        Tensor::new(vec![f], gb)?,
    ))
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, for every
/// output element, the flat input index it was taken from (the first maximal
/// element in row-major window order).
pub fn maxpool2d<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, f, h, w] = dims4("maxpool2d", input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2d",
            format!("spatial dims {h}×{w} must be even"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(b * f * oh * ow);
    let mut argmax = Vec::with_capacity(b * f * oh * ow);
    for plane in 0..b * f {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![b, f, oh, ow], out)?, argmax))
}

pub fn maxpool2d_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad.len() != argmax.len() {
        return Err(Error::shape("maxpool2d backward", "upstream gradient size"));
    }
    let mut out = Tensor::zeros(input_shape);
    let dst = out.data_mut();
    for (&i, &g) in argmax.iter().zip(grad.data()) {
        dst[i] = dst[i] + g;
    }
    Ok(out)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape as input")
}

/// Multiplies every unit along axis 1 by its scale factor. For `[B×N]` this
/// scales nodes; for `[B×F×H×W]` whole feature maps.
pub fn scale_units<T: Real>(x: &Tensor<T>, scale: &[T]) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() < 2 || shape[1] != scale.len() {
        return Err(Error::shape(
            "mask",
            format!("{} mask entries for activations {shape:?}", scale.len()),
        ));
    }
    let inner: usize = shape[2..].iter().product();
    let mut out = x.clone();
    for sample in out.data_mut().chunks_exact_mut(scale.len() * inner) {
        for (unit, &s) in sample.chunks_exact_mut(inner).zip(scale) {
            if s == T::zero() {
                unit.fill(T::zero());
            } else if s != T::one() {
                unit.iter_mut().for_each(|v| *v = *v * s);
            }
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the batch, plus the softmax probabilities.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (b, c) = dims2("softmax_xent", logits)?;
    if labels.len() != b {
        return Err(Error::shape(
            "softmax_xent",
            format!("{} labels for batch {b}", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let mut probs = vec![T::zero(); b * c];
    let mut total = 0.0f64;
    for ((row, out), &label) in logits
        .data()
        .chunks_exact(c)
        .zip(probs.chunks_exact_mut(c))
        .zip(labels)
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - max).exp();
            z = z + *o;
        }
        for o in out.iter_mut() {
            *o = *o / z;
        }
        total += (z.ln() - (row[label] - max)).as_f64();
    }
    Ok((T::of(total / b as f64), Tensor::new(vec![b, c], probs)?))
}

/// Gradient of the mean cross-entropy w.r.t. the logits, scaled by the
/// upstream gradient of the loss.
pub fn softmax_xent_backward<T: Real>(
    probs: &Tensor<T>,
    labels: &[usize],
    upstream: T,
) -> Tensor<T> {
    let (b, c) = (probs.shape()[0], probs.shape()[1]);
    let scale = upstream / T::of(b as f64);
    let mut g = probs.clone();
    for (row, &label) in g.data_mut().chunks_exact_mut(c).zip(labels) {
        row[label] = row[label] - T::one();
        row.iter_mut().for_each(|v| *v = *v * scale);
    }
    g
}
