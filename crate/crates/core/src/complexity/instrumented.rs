//! A direct, loop-by-loop forward pass of the dynamic layer that counts the
//! multiply-accumulates it performs.

use crate::error::{Error, Result};
use crate::odconv::{AttentionSet, ODConvLayer};
use crate::tensor::Tensor;

/// Operation tally of one forward pass, summed over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCount {
    /// Additions of the global average pool.
    pub pool: u64,
    /// Multiply-accumulates of the reduction FC and the heads.
    pub attention: u64,
    /// Multiplications and accumulations forming the effective kernel.
    pub combine: u64,
    /// Multiply-accumulates of the convolution itself, padded taps included.
    pub conv: u64,
}

impl OpCount {
    pub fn total(&self) -> u64 {
        self.pool + self.attention + self.combine + self.conv
    }

    pub fn extra(&self) -> u64 {
        self.pool + self.attention + self.combine
    }
}

/// Runs `layer` on `x` and counts its operations. A single-kernel layer with
/// no attention skips the attention module and the combination entirely.
///
/// Attentions come from [`ODConvLayer::attention`]; only their cost is tallied
/// here, as one multiply-accumulate per FC weight and one addition per pooled
/// element. Shared attentions only.
pub fn instrumented_forward(layer: &ODConvLayer, x: &Tensor, temperature: f64) -> Result<(Tensor, OpCount)> {
    let cfg = &layer.cfg;
    if !cfg.share_attentions && cfg.n > 1 {
        return Err(Error::param("the instrumented path supports shared attentions only"));
    }
    let &[batch, c_in, h, w] = x.dims() else {
        return Err(Error::shape("instrumented forward expects [b, c, h, w]"));
    };
    let geom = cfg.geom;
    let (k, cpf, c_out, n) = (geom.k, cfg.c_in_per_filter(), cfg.c_out, cfg.n);
    let (oh, ow) = (geom.output_extent(h)?, geom.output_extent(w)?);
    let groups = geom.groups;
    let opg = c_out / groups;
    let mut count = OpCount::default();
    let dynamic = layer.attention.reduce.is_some() || n > 1;
    let att: Option<AttentionSet> = if dynamic { Some(layer.attention(x, temperature)?) } else { None };
    if let Some(reduce) = &layer.attention.reduce {
        let hid = reduce.dims()[0] as u64;
        let rows: u64 = layer.attention.slots()[1..].iter().flatten().map(|t| t.dims()[0] as u64).sum();
        count.pool = (batch * c_in * h * w) as u64;
        count.attention = batch as u64 * hid * (c_in as u64 + rows);
    }

    let kw = layer.kernels.weights().data();
    let per_kernel = c_out * cpf * k * k;
    let mut out = vec![0.0; batch * c_out * oh * ow];
    for b in 0..batch {
        let eff: Vec<f64> = match &att {
            None => kw[..per_kernel].to_vec(),
            Some(att) => {
                let s = &att.alpha_s.data()[b * k * k..][..k * k];
                let c = &att.alpha_c.data()[b * cpf..][..cpf];
                let f = &att.alpha_f.data()[b * c_out..][..c_out];
                let a = &att.alpha_w.data()[b * n..][..n];
                let mut sc = vec![0.0; cpf * k * k];
                for ci in 0..cpf {
                    for p in 0..k * k {
                        sc[ci * k * k + p] = c[ci] * s[p];
                        count.combine += 1;
                    }
                }
                let mut eff = vec![0.0; per_kernel];
                for o in 0..c_out {
                    for (j, &scj) in sc.iter().enumerate() {
                        let idx = o * cpf * k * k + j;
                        if n == 1 {
                            eff[idx] = kw[idx] * scj * f[o];
                            count.combine += 2;
                        } else {
                            let mut acc = 0.0;
                            for (i, &ai) in a.iter().enumerate() {
                                acc += ai * kw[i * per_kernel + idx] * scj;
                                count.combine += 2;
                            }
                            eff[idx] = acc * f[o];
                            count.combine += 1;
                        }
                    }
                }
                eff
            }
        };
        for o in 0..c_out {
            let g = o / opg;
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cpf {
                        let ch = g * cpf + ci;
                        for u in 0..k {
                            for v in 0..k {
                                let (yy, xx) = ((i * geom.stride + u) as isize, (j * geom.stride + v) as isize);
                                let (yy, xx) = (yy - geom.padding as isize, xx - geom.padding as isize);
                                let xv = if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                                    x.data()[((b * c_in + ch) * h + yy as usize) * w + xx as usize]
                                } else {
                                    0.0
                                };
                                acc += eff[((o * cpf + ci) * k + u) * k + v] * xv;
                                count.conv += 1;
                            }
                        }
                    }
                    out[((b * c_out + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[batch, c_out, oh, ow], out)?, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ConvGeometry;
    use crate::odconv::{AttentionFlags, ODConvConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn static_count_is_exact_and_output_matches() {
        let cfg = ODConvConfig::new(3, 5, ConvGeometry::new(3, 2, 1, 1).unwrap()).with_flags(AttentionFlags::NONE);
        let layer = ODConvLayer::init(cfg, 1).unwrap();
        let x = Tensor::uniform(&[1, 3, 7, 6], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (y, count) = instrumented_forward(&layer, &x, 1.0).unwrap();
        assert_eq!(count.extra(), 0);
        assert_eq!(count.conv, (4 * 3 * 9 * 3 * 5) as u64);
        assert!(y.max_abs_diff(&layer.forward(&x, 1.0).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn dynamic_output_matches_layer() {
        let cfg = ODConvConfig::new(4, 4, ConvGeometry::new(3, 1, 1, 2).unwrap()).with_kernels(3);
        let layer = ODConvLayer::init_random_heads(cfg, 2, 1.0).unwrap();
        let x = Tensor::uniform(&[2, 4, 5, 5], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (y, _) = instrumented_forward(&layer, &x, 2.0).unwrap();
        assert!(y.max_abs_diff(&layer.forward(&x, 2.0).unwrap()).unwrap() < 1e-12);
    }
}
