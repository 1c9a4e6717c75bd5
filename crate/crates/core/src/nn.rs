//! Convolution, fully connected layers, pooling and softmax.
//!
//! Convolution is cross-correlation with zero padding. The production path
//! lowers each sample to an im2col matrix and multiplies; [`conv2d_naive`] is
//! the direct sliding-window reference kept for verification.

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Shape, Tensor};

/// Square-kernel convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(k: usize, stride: usize, padding: usize, groups: usize) -> Result<Self> {
        if k == 0 || stride == 0 || groups == 0 {
            return Err(Error::param(format!(
                "kernel size, stride and groups must be positive (k={k}, stride={stride}, groups={groups})"
            )));
        }
        Ok(ConvGeometry {
            k,
            stride,
            padding,
            groups,
        })
    }

    /// Stride 1, "same" padding, no grouping.
    pub fn same(k: usize) -> Self {
        ConvGeometry {
            k,
            stride: 1,
            padding: k / 2,
            groups: 1,
        }
    }

    pub fn output_extent(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.k {
            return Err(Error::shape(format!(
                "kernel {} larger than padded input {padded}",
                self.k
            )));
        }
        Ok((padded - self.k) / self.stride + 1)
    }

    pub fn check_channels(&self, c_in: usize, c_out: usize) -> Result<()> {
        if c_in % self.groups != 0 || c_out % self.groups != 0 {
            return Err(Error::shape(format!(
                "groups {} must divide c_in {c_in} and c_out {c_out}",
                self.groups
            )));
        }
        Ok(())
    }
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    cpf: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvDims {
    fn col_rows(&self, k: usize) -> usize {
        self.cpf * k * k
    }

    fn plane_out(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Validates `x: [b, c_in, h, w]` against a kernel of shape
/// `[c_out, c_in/groups, k, k]` (or `[b, c_out, c_in/groups, k, k]` when
/// `per_sample`).
fn conv_dims(x: &Tensor, w: &Tensor, geom: &ConvGeometry, per_sample: bool) -> Result<ConvDims> {
    let &[batch, c_in, h, wd] = x.dims() else {
        return Err(Error::shape(format!("conv2d input must be rank 4, got {}", x.shape())));
    };
    let kdims = if per_sample {
        match w.dims() {
            &[wb, o, c, kh, kw] if wb == batch => [o, c, kh, kw],
            _ => {
                return Err(Error::shape(format!(
                    "per-sample kernels must be [{batch}, c_out, c_in/groups, k, k], got {}",
                    w.shape()
                )))
            }
        }
    } else {
        match w.dims() {
            &[o, c, kh, kw] => [o, c, kh, kw],
            _ => {
                return Err(Error::shape(format!(
                    "conv2d kernel must be rank 4, got {}",
                    w.shape()
                )))
            }
        }
    };
    let [c_out, cpf, kh, kw] = kdims;
    if kh != geom.k || kw != geom.k {
        return Err(Error::shape(format!(
            "kernel spatial {kh}x{kw} does not match geometry k={}",
            geom.k
        )));
    }
    geom.check_channels(c_in, c_out)?;
    if cpf * geom.groups != c_in {
        return Err(Error::shape(format!(
            "kernel has {cpf} input channels per group, expected {}",
            c_in / geom.groups
        )));
    }
    let out_h = geom.output_extent(h)?;
    let out_w = geom.output_extent(wd)?;
    Ok(ConvDims {
        batch,
        c_in,
        h,
        w: wd,
        c_out,
        cpf,
        out_h,
        out_w,
    })
}

fn im2col(x: &[f64], d: &ConvDims, geom: &ConvGeometry, group: usize, cols: &mut [f64]) {
    let k = geom.k;
    let plane = d.plane_out();
    for c in 0..d.cpf {
        let chan = &x[(group * d.cpf + c) * d.h * d.w..][..d.h * d.w];
        for u in 0..k {
            for v in 0..k {
                let row = &mut cols[((c * k + u) * k + v) * plane..][..plane];
                for oy in 0..d.out_h {
                    let iy = (oy * geom.stride + u) as isize - geom.padding as isize;
                    for ox in 0..d.out_w {
                        let ix = (ox * geom.stride + v) as isize - geom.padding as isize;
                        row[oy * d.out_w + ox] =
                            if iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w {
                                chan[iy as usize * d.w + ix as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &ConvDims, geom: &ConvGeometry, group: usize, gx: &mut [f64]) {
    let k = geom.k;
    let plane = d.plane_out();
    for c in 0..d.cpf {
        let chan = &mut gx[(group * d.cpf + c) * d.h * d.w..][..d.h * d.w];
        for u in 0..k {
            for v in 0..k {
                let row = &cols[((c * k + u) * k + v) * plane..][..plane];
                for oy in 0..d.out_h {
                    let iy = (oy * geom.stride + u) as isize - geom.padding as isize;
                    if iy < 0 || iy as usize >= d.h {
                        continue;
                    }
                    for ox in 0..d.out_w {
                        let ix = (ox * geom.stride + v) as isize - geom.padding as isize;
                        if ix >= 0 && (ix as usize) < d.w {
                            chan[iy as usize * d.w + ix as usize] += row[oy * d.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &Tensor, w: &Tensor, geom: &ConvGeometry, per_sample: bool) -> Result<Tensor> {
    let d = conv_dims(x, w, geom, per_sample)?;
    let rows = d.col_rows(geom.k);
    let plane = d.plane_out();
    let opg = d.c_out / geom.groups;
    let kernel_len = d.c_out * rows;
    let mut out = vec![0.0; d.batch * d.c_out * plane];
    let mut cols = vec![0.0; rows * plane];
    for s in 0..d.batch {
        let xs = &x.data()[s * d.c_in * d.h * d.w..][..d.c_in * d.h * d.w];
        let ws = if per_sample {
            &w.data()[s * kernel_len..][..kernel_len]
        } else {
            w.data()
        };
        for g in 0..geom.groups {
            im2col(xs, &d, geom, g, &mut cols);
            let wg = &ws[g * opg * rows..][..opg * rows];
            let og = &mut out[(s * d.c_out + g * opg) * plane..][..opg * plane];
            matmul_into(wg, &cols, og, opg, rows, plane);
        }
    }
    Ok(Tensor::raw(&[d.batch, d.c_out, d.out_h, d.out_w], out))
}

/// Gradients of a convolution with respect to its input and kernel.
pub(crate) fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    geom: &ConvGeometry,
    per_sample: bool,
) -> Result<(Tensor, Tensor)> {
    let d = conv_dims(x, w, geom, per_sample)?;
    let rows = d.col_rows(geom.k);
    let plane = d.plane_out();
    let opg = d.c_out / geom.groups;
    let kernel_len = d.c_out * rows;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut cols = vec![0.0; rows * plane];
    let mut gcols = vec![0.0; rows * plane];
    let sample_in = d.c_in * d.h * d.w;
    for s in 0..d.batch {
        let xs = &x.data()[s * sample_in..][..sample_in];
        let woff = if per_sample { s * kernel_len } else { 0 };
        for g in 0..geom.groups {
            im2col(xs, &d, geom, g, &mut cols);
            let gy = &grad_out.data()[(s * d.c_out + g * opg) * plane..][..opg * plane];
            let wg = &w.data()[woff + g * opg * rows..][..opg * rows];
            // dW[o, r] += sum_p gy[o, p] * cols[r, p]
            let gwg = &mut gw[woff + g * opg * rows..][..opg * rows];
            for o in 0..opg {
                let gyo = &gy[o * plane..][..plane];
                for r in 0..rows {
                    let cr = &cols[r * plane..][..plane];
                    gwg[o * rows + r] += gyo.iter().zip(cr).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            // dcols[r, p] = sum_o W[o, r] * gy[o, p]
            gcols.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..opg {
                let gyo = &gy[o * plane..][..plane];
                for r in 0..rows {
                    let wv = wg[o * rows + r];
                    if wv == 0.0 {
                        continue;
                    }
                    let gr = &mut gcols[r * plane..][..plane];
                    for (a, &b) in gr.iter_mut().zip(gyo) {
                        *a += wv * b;
                    }
                }
            }
            col2im(&gcols, &d, geom, g, &mut gx[s * sample_in..][..sample_in]);
        }
    }
    Ok((
        Tensor::from_parts(x.shape().clone(), gx),
        Tensor::from_parts(w.shape().clone(), gw),
    ))
}

/// `x: [b, c_in, h, w]`, `w: [c_out, c_in/groups, k, k]` -> `[b, c_out, h', w']`.
pub fn conv2d(x: &Tensor, w: &Tensor, geom: &ConvGeometry) -> Result<Tensor> {
    conv_forward(x, w, geom, false)
}

/// Convolution where each sample has its own kernel:
/// `w: [b, c_out, c_in/groups, k, k]`.
pub fn conv2d_per_sample(x: &Tensor, w: &Tensor, geom: &ConvGeometry) -> Result<Tensor> {
    conv_forward(x, w, geom, true)
}

/// Direct sliding-window convolution. Slow; used as the reference oracle.
pub fn conv2d_naive(x: &Tensor, w: &Tensor, geom: &ConvGeometry) -> Result<Tensor> {
    let d = conv_dims(x, w, geom, false)?;
    let opg = d.c_out / geom.groups;
    let k = geom.k;
    let mut out = Tensor::zeros(&[d.batch, d.c_out, d.out_h, d.out_w])?;
    for b in 0..d.batch {
        for o in 0..d.c_out {
            let g = o / opg;
            for oy in 0..d.out_h {
                for ox in 0..d.out_w {
                    let mut acc = 0.0;
                    for c in 0..d.cpf {
                        for u in 0..k {
                            for v in 0..k {
                                let iy = (oy * geom.stride + u) as isize - geom.padding as isize;
                                let ix = (ox * geom.stride + v) as isize - geom.padding as isize;
                                if iy < 0 || ix < 0 || iy as usize >= d.h || ix as usize >= d.w {
                                    continue;
                                }
                                acc += w.at(&[o, c, u, v])
                                    * x.at(&[b, g * d.cpf + c, iy as usize, ix as usize]);
                            }
                        }
                    }
                    let off = out.offset(&[b, o, oy, ox]);
                    out.data_mut()[off] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Bias-free dense layer: `x: [b, d_in]`, `w: [d_out, d_in]` -> `x · wᵀ`.
pub fn fully_connected(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (b, d_in) = x.as_matrix("fully_connected input")?;
    let (d_out, w_in) = w.as_matrix("fully_connected weight")?;
    if d_in != w_in {
        return Err(Error::shape(format!(
            "fully_connected: input width {d_in} vs weight width {w_in}"
        )));
    }
    let mut out = vec![0.0; b * d_out];
    for i in 0..b {
        let xi = &x.data()[i * d_in..][..d_in];
        for o in 0..d_out {
            let wo = &w.data()[o * d_in..][..d_in];
            out[i * d_out + o] = xi.iter().zip(wo).map(|(a, b)| a * b).sum();
        }
    }
    Ok(Tensor::raw(&[b, d_out], out))
}

/// Row-wise `softmax(z / T)` over `z: [b, d]`.
pub fn softmax_with_temperature(z: &Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::param(format!(
            "softmax temperature must be positive and finite, got {temperature}"
        )));
    }
    let (_, d) = z.as_matrix("softmax")?;
    let mut out = Vec::with_capacity(z.len());
    for row in z.data().chunks_exact(d) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = ((v - max) / temperature).exp();
            total += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= total);
    }
    Ok(Tensor::raw(z.dims(), out))
}

/// Non-overlapping-or-strided average pooling without padding.
pub fn avg_pool2d(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let &[b, c, h, w] = x.dims() else {
        return Err(Error::shape(format!("avg_pool2d expects rank 4, got {}", x.shape())));
    };
    let geom = ConvGeometry::new(k, stride, 0, 1)?;
    let (oh, ow) = (geom.output_extent(h)?, geom.output_extent(w)?);
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; b * c * oh * ow];
    for (plane, dst) in x.data().chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for u in 0..k {
                    for v in 0..k {
                        acc += plane[(oy * stride + u) * w + ox * stride + v];
                    }
                }
                dst[oy * ow + ox] = acc * inv;
            }
        }
    }
    Ok(Tensor::raw(&[b, c, oh, ow], out))
}

/// Standardises every sample over all of its non-batch elements:
/// `(x - mean) / sqrt(var + eps)`. No learned scale or shift.
pub fn sample_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    if x.rank() < 2 {
        return Err(Error::shape(format!("sample_norm expects a batch dimension, got {}", x.shape())));
    }
    if !(eps > 0.0) {
        return Err(Error::param(format!("sample_norm eps must be positive, got {eps}")));
    }
    let per = x.len() / x.dims()[0];
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(per) {
        let (mean, inv_std) = moments(row, eps);
        out.extend(row.iter().map(|v| (v - mean) * inv_std));
    }
    Ok(Tensor::raw(x.dims(), out))
}

/// `(mean, 1 / sqrt(var + eps))` of a slice.
pub(crate) fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub(crate) fn avg_pool2d_backward(
    input_shape: &Shape,
    grad_out: &Tensor,
    k: usize,
    stride: usize,
) -> Tensor {
    let &[_, _, h, w] = input_shape.dims() else {
        unreachable!("avg_pool2d input is rank 4")
    };
    let &[_, _, oh, ow] = grad_out.dims() else {
        unreachable!("avg_pool2d output is rank 4")
    };
    let inv = 1.0 / (k * k) as f64;
    let mut gx = vec![0.0; input_shape.numel()];
    for (dst, g) in gx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(oh * ow)) {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[oy * ow + ox] * inv;
                for u in 0..k {
                    for v in 0..k {
                        dst[(oy * stride + u) * w + ox * stride + v] += gv;
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape.clone(), gx)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let probs = log_softmax_rows(logits, labels)?;
    Ok(probs.0)
}

/// Returns `(mean loss, softmax probabilities)`.
pub(crate) fn log_softmax_rows(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, classes) = logits.as_matrix("cross_entropy logits")?;
    if labels.len() != b {
        return Err(Error::shape(format!("{} labels for batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::param(format!("label {bad} out of range for {classes} classes")));
    }
    let probs = softmax_with_temperature(logits, 1.0)?;
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    Ok((loss / b as f64, probs))
}
