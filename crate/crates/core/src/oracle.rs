//! Reference implementations written directly from the defining formulas,
//! with explicit loops and no shared code with the production layer beyond
//! the tensor container. Used by the test suites and by `odconv verify`.

use crate::error::{Error, Result};
use crate::nn::ConvGeometry;
use crate::odconv::{AttentionSet, KernelSet, ODConvConfig};
use crate::tensor::Tensor;

pub use crate::nn::conv2d_naive;

/// Triple-loop matrix product.
pub fn matmul_naive(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[m, k], &[k2, p]) = (a.dims(), b.dims()) else {
        return Err(Error::Shape("matmul_naive expects rank-2 operands".into()));
    };
    if k != k2 {
        return Err(Error::Shape("matmul_naive inner extents differ".into()));
    }
    let mut out = Tensor::zeros(&[m, p])?;
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a.at(&[i, t]) * b.at(&[t, j]);
            }
            out.data_mut()[i * p + j] = acc;
        }
    }
    Ok(out)
}

fn sample(x: &Tensor, b: usize) -> Result<Tensor> {
    let d = x.dims();
    let len: usize = d[1..].iter().product();
    let mut dims = d.to_vec();
    dims[0] = 1;
    Tensor::from_vec(&dims, x.data()[b * len..][..len].to_vec())
}

fn stack(samples: Vec<Tensor>) -> Result<Tensor> {
    let mut dims = samples[0].dims().to_vec();
    dims[0] = samples.len();
    let data = samples.into_iter().flat_map(|t| t.into_data()).collect();
    Tensor::from_vec(&dims, data)
}

/// Kernel-attention-only dynamic convolution:
/// `y_b = (Σ_i π_i(x_b) W_i) * x_b` with
/// `π(x) = softmax(W_kernel · relu(W_reduce · gap(x)) / T)`.
pub fn dynamic_conv_reference(
    x: &Tensor,
    kernels: &KernelSet,
    w_reduce: &Tensor,
    w_kernel: &Tensor,
    temperature: f64,
    geom: &ConvGeometry,
) -> Result<Tensor> {
    let &[batch, c_in, h, w] = x.dims() else {
        return Err(Error::Shape("reference expects rank-4 input".into()));
    };
    let n = kernels.n();
    let hidden = w_reduce.dims()[0];
    let mut outs = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut pooled = vec![0.0; c_in];
        for (c, p) in pooled.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += x.at(&[b, c, i, j]);
                }
            }
            *p = acc / (h * w) as f64;
        }
        let mut z = vec![0.0; hidden];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, p) in pooled.iter().enumerate() {
                acc += w_reduce.at(&[j, c]) * p;
            }
            *zj = if acc > 0.0 { acc } else { 0.0 };
        }
        let mut logits = vec![0.0; n];
        for (i, l) in logits.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate() {
                acc += w_kernel.at(&[i, j]) * zj;
            }
            *l = acc / temperature;
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = exps.iter().sum();

        let mut mixed = kernels.kernel(0)?.scale(0.0);
        for (i, e) in exps.iter().enumerate() {
            mixed.axpy(e / total, &kernels.kernel(i)?)?;
        }
        outs.push(conv2d_naive(&sample(x, b)?, &mixed, geom)?);
    }
    stack(outs)
}

/// Regular convolution with `W_1`, then every output channel of sample `b`
/// scaled by `alpha_f[b, 0, o]`.
pub fn scale_after_conv_reference(
    x: &Tensor,
    weight: &Tensor,
    alpha_f: &Tensor,
    geom: &ConvGeometry,
) -> Result<Tensor> {
    let mut y = conv2d_naive(x, weight, geom)?;
    let &[batch, c_out, oh, ow] = y.dims() else {
        unreachable!("conv output is rank 4")
    };
    let plane = oh * ow;
    for b in 0..batch {
        for o in 0..c_out {
            let a = alpha_f.data()[b * c_out + o];
            for v in &mut y.data_mut()[(b * c_out + o) * plane..][..plane] {
                *v *= a;
            }
        }
    }
    Ok(y)
}

/// Convolves each sample with every attended kernel separately and sums the
/// outputs weighted by `alpha_w`: `y_b = Σ_i α_w[b,i] · conv(x_b, α_f ⊙ α_c ⊙ α_s ⊙ W_i)`.
pub fn per_kernel_reference(
    x: &Tensor,
    kernels: &KernelSet,
    att: &AttentionSet,
    cfg: &ODConvConfig,
) -> Result<Tensor> {
    let batch = x.dims()[0];
    let (k, cpf, c_out, n) = (cfg.geom.k, cfg.c_in_per_filter(), cfg.c_out, cfg.n);
    let copies = if cfg.share_attentions { 1 } else { n };
    let mut outs = Vec::with_capacity(batch);
    for b in 0..batch {
        let xb = sample(x, b)?;
        let mut acc: Option<Tensor> = None;
        for i in 0..n {
            let m = if copies == 1 { 0 } else { i };
            let mut attended = kernels.kernel(i)?;
            for o in 0..c_out {
                for c in 0..cpf {
                    for u in 0..k {
                        for v in 0..k {
                            let a_s = att.alpha_s.data()[((b * copies + m) * k + u) * k + v];
                            let a_c = att.alpha_c.data()[(b * copies + m) * cpf + c];
                            let a_f = att.alpha_f.data()[(b * copies + m) * c_out + o];
                            let off = attended.offset(&[o, c, u, v]);
                            attended.data_mut()[off] *= a_s * a_c * a_f;
                        }
                    }
                }
            }
            let y = conv2d_naive(&xb, &attended, &cfg.geom)?.scale(att.alpha_w.data()[b * n + i]);
            acc = Some(match acc {
                None => y,
                Some(mut total) => {
                    total.axpy(1.0, &y)?;
                    total
                }
            });
        }
        outs.push(acc.expect("n >= 1"));
    }
    stack(outs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fast_matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::uniform(&[4, 5], -1.0, 1.0, &mut rng).unwrap();
        let b = Tensor::uniform(&[5, 6], -1.0, 1.0, &mut rng).unwrap();
        let diff = a.matmul(&b).unwrap().max_abs_diff(&matmul_naive(&a, &b).unwrap()).unwrap();
        assert!(diff <= 1e-12);
    }
}
