//! Forward and backward kernels over NHWC tensors.
//!
//! These are plain functions; [`crate::backend::Tape`] records them for
//! reverse-mode differentiation.

use serde::{Deserialize, Serialize};

use super::tensor::{matmul, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

/// Interpolation used by [`upsample`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel centers: output pixel `o` samples input coordinate `(o + 0.5) / f - 0.5`,
    /// clamped to the image.
    Bilinear,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let [n, h, w, c] = x.dims4()?;
        let [o, ci, kh, kw] = match weight.shape() {
            &[o, ci, kh, kw] => [o, ci, kh, kw],
            s => {
                return Err(Error::shape(
                    "conv2d",
                    format!("weight must be (out, in, kh, kw), got {s:?}"),
                ))
            }
        };
        if ci != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels but kernel expects {ci}"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("{kh}x{kw} kernel does not fit {h}x{w} input with padding {pad}"),
            ));
        }
        Ok(ConvGeom {
            n,
            h,
            w,
            c,
            o,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn pixels(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `(O, C, KH, KW)` -> `(O, KH, KW, C)` so a patch row lines up with NHWC memory.
fn weight_to_patch_order<T: Scalar>(weight: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); weight.len()];
    for o in 0..g.o {
        for c in 0..g.c {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    out[((o * g.kh + ky) * g.kw + kx) * g.c + c] = weight[((o * g.c + c) * g.kh + ky) * g.kw + kx];
                }
            }
        }
    }
    out
}

fn weight_from_patch_order<T: Scalar>(patch: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); patch.len()];
    for o in 0..g.o {
        for c in 0..g.c {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    out[((o * g.c + c) * g.kh + ky) * g.kw + kx] = patch[((o * g.kh + ky) * g.kw + kx) * g.c + c];
                }
            }
        }
    }
    out
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let k = g.patch();
    let mut cols = vec![T::zero(); g.pixels() * k];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((n * g.oh + oy) * g.ow + ox) * k;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((n * g.h + iy as usize) * g.w + ix as usize) * g.c;
                        let dst = row + (ky * g.kw + kx) * g.c;
                        cols[dst..dst + g.c].copy_from_slice(&x[src..src + g.c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let k = g.patch();
    let mut x = vec![T::zero(); g.n * g.h * g.w * g.c];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((n * g.oh + oy) * g.ow + ox) * k;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((n * g.h + iy as usize) * g.w + ix as usize) * g.c;
                        let src = row + (ky * g.kw + kx) * g.c;
                        for (d, &s) in x[dst..dst + g.c].iter_mut().zip(&cols[src..src + g.c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// 2-D convolution of an NHWC map with an `(out, in, kh, kw)` kernel.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != g.o {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} entries for {} outputs", b.len(), g.o),
            ));
        }
    }
    let wp = weight_to_patch_order(weight.data(), &g);
    let k = g.patch();
    let p = g.pixels();
    let mut out = match bias {
        Some(b) => {
            let mut v = Vec::with_capacity(p * g.o);
            for _ in 0..p {
                v.extend_from_slice(b.data());
            }
            v
        }
        None => vec![T::zero(); p * g.o],
    };
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    if g.is_pointwise() {
        matmul(MatRef::rm(x.data(), p, k), MatRef::rm(&wp, g.o, k).t(), beta, &mut out);
    } else {
        let cols = im2col(x.data(), &g);
        matmul(MatRef::rm(&cols, p, k), MatRef::rm(&wp, g.o, k).t(), beta, &mut out);
    }
    Tensor::new(vec![g.n, g.oh, g.ow, g.o], out)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dweight: Tensor<T>,
    pub dbias: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x, weight, stride, pad)?;
    let k = g.patch();
    let p = g.pixels();
    let wp = weight_to_patch_order(weight.data(), &g);
    let dy_m = MatRef::rm(dy.data(), p, g.o);

    let cols_owned;
    let cols: &[T] = if g.is_pointwise() {
        x.data()
    } else {
        cols_owned = im2col(x.data(), &g);
        &cols_owned
    };
    let mut dwp = vec![T::zero(); g.o * k];
    matmul(dy_m.t(), MatRef::rm(cols, p, k), T::zero(), &mut dwp);

    let mut dcols = vec![T::zero(); p * k];
    matmul(dy_m, MatRef::rm(&wp, g.o, k), T::zero(), &mut dcols);
    let dx = if g.is_pointwise() { dcols } else { col2im(&dcols, &g) };

    let dbias = has_bias.then(|| {
        let mut db = vec![T::zero(); g.o];
        for row in dy.data().chunks_exact(g.o) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        Tensor::new(vec![g.o], db).expect("bias shape")
    });
    Ok(ConvGrads {
        dx: Tensor::new(x.shape().to_vec(), dx)?,
        dweight: Tensor::new(weight.shape().to_vec(), weight_from_patch_order(&dwp, &g))?,
        dbias,
    })
}

/// Max-pool with a `factor x factor` window and stride `factor`.
///
/// Returns the pooled map and, per output element, the flat index of the
/// winning input element (first maximum in raster order).
pub fn max_pool<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, h, w, c] = x.dims4()?;
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "downsample",
            format!("{h}x{w} is not divisible by factor {factor}"),
        ));
    }
    let (oh, ow) = (h / factor, w / factor);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            let i = ((b * h + oy * factor + dy) * w + ox * factor + dx) * c + ch;
                            if xd[i] > best || (dy == 0 && dx == 0) {
                                best = xd[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, oh, ow, c], out)?, arg))
}

pub(crate) fn max_pool_backward<T: Scalar>(x_shape: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(x_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    dx
}

/// Per-axis bilinear taps: `(i0, i1, frac)` for every output coordinate.
fn bilinear_taps(input: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..input * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample<T: Scalar>(x: &Tensor<T>, factor: usize, mode: UpsampleMode) -> Result<Tensor<T>> {
    let [n, h, w, c] = x.dims4()?;
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let xd = x.data();
    let mut out = vec![T::zero(); n * oh * ow * c];
    match mode {
        UpsampleMode::Nearest => {
            for b in 0..n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let src = ((b * h + oy / factor) * w + ox / factor) * c;
                        let dst = ((b * oh + oy) * ow + ox) * c;
                        out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ty = bilinear_taps(h, factor);
            let tx = bilinear_taps(w, factor);
            for b in 0..n {
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = T::lit(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = T::lit(fx);
                        let w00 = (T::one() - fy) * (T::one() - fx);
                        let w01 = (T::one() - fy) * fx;
                        let w10 = fy * (T::one() - fx);
                        let w11 = fy * fx;
                        let i00 = ((b * h + y0) * w + x0) * c;
                        let i01 = ((b * h + y0) * w + x1) * c;
                        let i10 = ((b * h + y1) * w + x0) * c;
                        let i11 = ((b * h + y1) * w + x1) * c;
                        let dst = ((b * oh + oy) * ow + ox) * c;
                        for ch in 0..c {
                            out[dst + ch] =
                                w00 * xd[i00 + ch] + w01 * xd[i01 + ch] + w10 * xd[i10 + ch] + w11 * xd[i11 + ch];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, oh, ow, c], out)
}

pub(crate) fn upsample_backward<T: Scalar>(
    x_shape: &[usize],
    factor: usize,
    mode: UpsampleMode,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (n, h, w, c) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let g = dy.data();
    let mut dx = vec![T::zero(); n * h * w * c];
    match mode {
        UpsampleMode::Nearest => {
            for b in 0..n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let dst = ((b * h + oy / factor) * w + ox / factor) * c;
                        let src = ((b * oh + oy) * ow + ox) * c;
                        for ch in 0..c {
                            dx[dst + ch] += g[src + ch];
                        }
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ty = bilinear_taps(h, factor);
            let tx = bilinear_taps(w, factor);
            for b in 0..n {
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = T::lit(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = T::lit(fx);
                        let w00 = (T::one() - fy) * (T::one() - fx);
                        let w01 = (T::one() - fy) * fx;
                        let w10 = fy * (T::one() - fx);
                        let w11 = fy * fx;
                        let src = ((b * oh + oy) * ow + ox) * c;
                        for ch in 0..c {
                            let v = g[src + ch];
                            dx[((b * h + y0) * w + x0) * c + ch] += w00 * v;
                            dx[((b * h + y0) * w + x1) * c + ch] += w01 * v;
                            dx[((b * h + y1) * w + x0) * c + ch] += w10 * v;
                            dx[((b * h + y1) * w + x1) * c + ch] += w11 * v;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(x_shape.to_vec(), dx).expect("upsample grad shape")
}

/// Logistic function clamped to the open interval `(0, 1)` so saturated inputs
/// never round to exactly 0 or 1.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let below_one = T::one() - T::epsilon() / T::lit(2.0);
    s.max(T::min_positive_value()).min(below_one)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Concatenate feature maps along the channel axis.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or(Error::Empty("concat"))?;
    let [n, h, w, _] = first.dims4()?;
    let mut total = 0;
    for x in xs {
        let [n2, h2, w2, c] = x.dims4()?;
        if (n2, h2, w2) != (n, h, w) {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?}", first.shape(), x.shape()),
            ));
        }
        total += c;
    }
    let mut out = Vec::with_capacity(n * h * w * total);
    for p in 0..n * h * w {
        for x in xs {
            let c = x.channels();
            out.extend_from_slice(&x.data()[p * c..(p + 1) * c]);
        }
    }
    Tensor::new(vec![n, h, w, total], out)
}

/// Split a channel-concatenated gradient back into its parts.
pub(crate) fn split_channels<T: Scalar>(dy: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let total: usize = widths.iter().sum();
    let pixels = dy.len() / total;
    let prefix = &dy.shape()[..3];
    let mut parts: Vec<Vec<T>> = widths.iter().map(|&c| Vec::with_capacity(pixels * c)).collect();
    for p in 0..pixels {
        let mut off = p * total;
        for (part, &c) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&dy.data()[off..off + c]);
            off += c;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(d, &c)| Tensor::new(vec![prefix[0], prefix[1], prefix[2], c], d).expect("split shape"))
        .collect()
}

/// Mean over channels, `(n, h, w, c) -> (n, h, w, 1)`.
pub fn channel_mean<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, c] = x.dims4()?;
    let inv = T::one() / T::from_usize(c).unwrap();
    let data = x
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![n, h, w, 1], data)
}

/// Max over channels with the winning channel per pixel.
pub fn channel_max<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, h, w, c] = x.dims4()?;
    let mut out = Vec::with_capacity(n * h * w);
    let mut arg = Vec::with_capacity(n * h * w);
    for px in x.data().chunks_exact(c) {
        let (mut bi, mut bv) = (0, px[0]);
        for (i, &v) in px.iter().enumerate().skip(1) {
            if v > bv {
                bi = i;
                bv = v;
            }
        }
        out.push(bv);
        arg.push(bi);
    }
    Ok((Tensor::new(vec![n, h, w, 1], out)?, arg))
}

/// `x * a` where `a` is `(n, h, w, 1)` broadcast across the channels of `x`.
pub fn mul_spatial<T: Scalar>(x: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, c] = x.dims4()?;
    if a.shape() != [n, h, w, 1] {
        return Err(Error::shape(
            "spatial gate",
            format!("gate {:?} does not broadcast over {:?}", a.shape(), x.shape()),
        ));
    }
    let mut out = Vec::with_capacity(x.len());
    for (px, &g) in x.data().chunks_exact(c).zip(a.data()) {
        out.extend(px.iter().map(|&v| v * g));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Normalized activations cached by batch norm for its backward pass.
#[derive(Clone, Debug)]
pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
}

pub const BN_EPS: f64 = 1e-5;

fn bn_check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let c = x.dims4()?[3];
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batch_norm",
            format!("{c} channels but affine params have {} / {}", gamma.len(), beta.len()),
        ));
    }
    Ok(c)
}

/// Per-channel statistics over batch and space; returns `(mean, biased variance)`.
pub fn channel_stats<T: Scalar>(x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let c = x.dims4()?[3];
    let m = T::from_usize(x.len() / c).unwrap();
    let mut mean = vec![T::zero(); c];
    for px in x.data().chunks_exact(c) {
        for (s, &v) in mean.iter_mut().zip(px) {
            *s += v;
        }
    }
    mean.iter_mut().for_each(|s| *s = *s / m);
    let mut var = vec![T::zero(); c];
    for px in x.data().chunks_exact(c) {
        for ((s, &v), &mu) in var.iter_mut().zip(px).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|s| *s = *s / m);
    Ok((mean, var))
}

pub(crate) fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    training: bool,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let c = bn_check(x, gamma, beta)?;
    let eps = T::lit(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for px in x.data().chunks_exact(c) {
        for ch in 0..c {
            let h = (px[ch] - mean[ch]) * inv_std[ch];
            xhat.push(h);
            y.push(gamma.data()[ch] * h + beta.data()[ch]);
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), y)?,
        BnCache {
            xhat,
            inv_std,
            training,
        },
    ))
}

pub(crate) fn batch_norm_backward<T: Scalar>(
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.len();
    let m = T::from_usize(dy.len() / c).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (g, h) in dy.data().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            dgamma[ch] += g[ch] * h[ch];
            dbeta[ch] += g[ch];
        }
    }
    let mut dx = Vec::with_capacity(dy.len());
    for (g, h) in dy.data().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            let gi = gamma.data()[ch] * cache.inv_std[ch];
            let v = if cache.training {
                gi * (g[ch] - (dbeta[ch] + h[ch] * dgamma[ch]) / m)
            } else {
                gi * g[ch]
            };
            dx.push(v);
        }
    }
    (
        Tensor::new(dy.shape().to_vec(), dx).expect("bn dx"),
        Tensor::new(vec![c], dgamma).expect("bn dgamma"),
        Tensor::new(vec![c], dbeta).expect("bn dbeta"),
    )
}

/// Cached softmax probabilities for the cross-entropy backward pass.
#[derive(Clone, Debug)]
pub(crate) struct CeCache<T> {
    pub probs: Vec<T>,
    pub labels: Vec<u8>,
    pub weights: Vec<T>,
    pub ignore: u8,
    pub count: usize,
}

/// Mean over non-ignored pixels of `weight[label] * -log softmax(logits)[label]`.
///
/// Returns 0 when every pixel is ignored.
pub fn weighted_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
    class_weights: &[T],
    ignore_index: u8,
) -> Result<T> {
    Ok(cross_entropy_forward(logits, labels, class_weights, ignore_index)?.0)
}

pub(crate) fn cross_entropy_forward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
    class_weights: &[T],
    ignore_index: u8,
) -> Result<(T, CeCache<T>)> {
    let [n, h, w, k] = logits.dims4()?;
    if labels.len() != n * h * w {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for {}x{}x{} logits", labels.len(), n, h, w),
        ));
    }
    if class_weights.len() != k {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} class weights for {k} classes", class_weights.len()),
        ));
    }
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = T::zero();
    let mut count = 0usize;
    for (row, &l) in logits.data().chunks_exact(k).zip(labels) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
        let log_z = z.ln() + mx;
        probs.extend(row.iter().map(|&v| (v - log_z).exp()));
        if l == ignore_index {
            continue;
        }
        if l as usize >= k {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_classes: k,
            });
        }
        total += class_weights[l as usize] * (log_z - row[l as usize]);
        count += 1;
    }
    let loss = if count == 0 {
        T::zero()
    } else {
        total / T::from_usize(count).unwrap()
    };
    Ok((
        loss,
        CeCache {
            probs,
            labels: labels.to_vec(),
            weights: class_weights.to_vec(),
            ignore: ignore_index,
            count,
        },
    ))
}

pub(crate) fn cross_entropy_backward<T: Scalar>(shape: &[usize], cache: &CeCache<T>, g: T) -> Tensor<T> {
    let k = shape[3];
    let mut d = vec![T::zero(); cache.probs.len()];
    if cache.count > 0 {
        let scale = g / T::from_usize(cache.count).unwrap();
        for (i, &l) in cache.labels.iter().enumerate() {
            if l == cache.ignore {
                continue;
            }
            let wl = cache.weights[l as usize] * scale;
            for j in 0..k {
                let onehot = if j == l as usize { T::one() } else { T::zero() };
                d[i * k + j] = wl * (cache.probs[i * k + j] - onehot);
            }
        }
    }
    Tensor::new(shape.to_vec(), d).expect("ce grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(h: usize, w: usize, c: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![1, h, w, c], data).unwrap()
    }

    #[test]
    fn identity_pointwise_kernel_is_exact_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3, 4], |i| (i as f64 * 0.37).sin());
        let w = Tensor::from_fn(&[4, 4, 1, 1], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let y = conv2d(&x, &w, Some(&Tensor::zeros(&[4])), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = Tensor::<f32>::from_fn(&[1, 5, 5, 2], |i| i as f32);
        let w = Tensor::zeros(&[3, 2, 3, 3]);
        let y = conv2d(&x, &w, Some(&Tensor::zeros(&[3])), 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[1, 5, 5, 3]);
    }

    #[test]
    fn ones_kernel_center_sums_neighbourhood() {
        let x = fm(3, 3, 1, vec![1.0; 9]);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        // nested-sum oracle
        let mut want = 0.0;
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                let (yy, xx) = (1 + dy, 1 + dx);
                if (0..3).contains(&yy) && (0..3).contains(&xx) {
                    want += 1.0;
                }
            }
        }
        assert_eq!(want, 9.0);
        assert_eq!(y.at4(0, 1, 1, 0), want);
        assert_eq!(y.at4(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_zero_stride() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4, 3]);
        let w = Tensor::zeros(&[2, 2, 1, 1]);
        let err = conv2d(&x, &w, None, 1, 0).unwrap_err();
        assert!(err.to_string().contains("3 channels"), "{err}");
        let w = Tensor::zeros(&[2, 3, 1, 1]);
        assert!(conv2d(&x, &w, None, 0, 0).is_err());
    }

    #[test]
    fn strided_conv_extents() {
        let x = Tensor::<f32>::zeros(&[2, 16, 12, 3]);
        let w = Tensor::zeros(&[5, 3, 3, 3]);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 8, 6, 5]);
    }

    #[test]
    fn conv_is_linear_in_weights() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 4, 2], |i| ((i * 7 % 11) as f64) - 5.0);
        let w1 = Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f64 * 0.1).cos());
        let w2 = Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f64 * 0.3).sin());
        let (a, b) = (0.7, -1.3);
        let combo = w1.scale(a).add(&w2.scale(b)).unwrap();
        let lhs = conv2d(&x, &combo, None, 1, 1).unwrap();
        let rhs = conv2d(&x, &w1, None, 1, 1)
            .unwrap()
            .scale(a)
            .add(&conv2d(&x, &w2, None, 1, 1).unwrap().scale(b))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn max_pool_cases() {
        let x = fm(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let (y, _) = max_pool(&x, 2).unwrap();
        // exhaustive window oracle
        let want = x.data().iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(y.data(), &[want]);
        assert_eq!(want, 4.0);

        let c = Tensor::<f64>::full(&[1, 4, 4, 3], 2.5);
        let (y, _) = max_pool(&c, 2).unwrap();
        assert_eq!(y, Tensor::full(&[1, 2, 2, 3], 2.5));
        assert_eq!(max_pool(&c, 1).unwrap().0, c);
        assert!(max_pool(&Tensor::<f64>::zeros(&[1, 3, 4, 1]), 2).is_err());
    }

    #[test]
    fn nearest_upsample_duplicates_columns() {
        let x = fm(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]);
        let y = upsample(&x, 2, UpsampleMode::Nearest).unwrap();
        // index-arithmetic oracle: out[r][c] = in[r / 2][c / 2]
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(y.at4(0, r, c, 0), x.at4(0, r / 2, c / 2, 0));
            }
        }
        let v = fm(1, 1, 1, vec![3.5]);
        assert_eq!(
            upsample(&v, 4, UpsampleMode::Nearest).unwrap(),
            Tensor::full(&[1, 4, 4, 1], 3.5)
        );
    }

    #[test]
    fn upsample_factor_one_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 5, 2], |i| i as f64 * 0.5);
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            assert_eq!(upsample(&x, 1, mode).unwrap(), x);
        }
        assert!(upsample(&x, 0, UpsampleMode::Nearest).is_err());
    }

    #[test]
    fn bilinear_half_pixel_values() {
        let x = fm(1, 2, 1, vec![0.0, 1.0]);
        let y = upsample(&x, 2, UpsampleMode::Bilinear).unwrap();
        // sample positions -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped)
        assert_eq!(y.shape(), &[1, 2, 4, 1]);
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!(sigmoid_scalar(20.0f64) > 0.999999);
        let want = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((sigmoid_scalar(1.0f64) - want).abs() < 1e-15);
        assert!((want - 0.731059).abs() < 1e-6);
        for x in [-1000.0f32, -50.0, 50.0, 1000.0] {
            let s = sigmoid_scalar(x);
            assert!(s > 0.0 && s < 1.0, "{x} -> {s}");
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let logits = fm(1, 1, 2, vec![0.0, 0.0]);
        let l = weighted_cross_entropy(&logits, &[0], &[1.0, 1.0], 255).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        let logits = fm(1, 1, 3, vec![40.0, -40.0, -40.0]);
        let l = weighted_cross_entropy(&logits, &[0], &[1.0; 3], 255).unwrap();
        assert!(l < 1e-10);

        let logits = fm(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            weighted_cross_entropy(&logits, &[255, 255], &[1.0; 2], 255).unwrap(),
            0.0
        );

        let err = weighted_cross_entropy(&logits, &[0, 2], &[1.0; 2], 255).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, .. }));
    }

    #[test]
    fn unit_weights_match_plain_cross_entropy() {
        let logits = Tensor::<f64>::from_fn(&[1, 3, 3, 4], |i| ((i * 13 % 7) as f64) * 0.4 - 1.0);
        let labels: Vec<u8> = (0..9).map(|i| (i % 4) as u8).collect();
        let weighted = weighted_cross_entropy(&logits, &labels, &[1.0; 4], 255).unwrap();
        let plain: f64 = logits
            .data()
            .chunks_exact(4)
            .zip(&labels)
            .map(|(row, &l)| {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                -(row[l as usize].exp() / z).ln()
            })
            .sum::<f64>()
            / 9.0;
        assert!((weighted - plain).abs() < 1e-12);
    }

    #[test]
    fn concat_and_split_roundtrip() {
        let a = Tensor::<f64>::from_fn(&[1, 2, 2, 1], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[1, 2, 2, 3], |i| -(i as f64));
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 2, 2, 4]);
        let parts = split_channels(&c, &[1, 3]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        let bad = Tensor::<f64>::zeros(&[1, 3, 2, 1]);
        assert!(concat_channels(&[&a, &bad]).is_err());
    }
}
