//! Multiplying the four attentions into the candidate kernels.
//!
//! For sample `b` the effective kernel is
//! `W_eff[o, c, u, v] = Σ_i α_w[b, i] · α_f[b, m(i), o] · α_c[b, m(i), c] · α_s[b, m(i), u, v] · W[i, o, c, u, v]`
//! where `m(i) = 0` when the spatial, channel and filter attentions are
//! shared across kernels and `m(i) = i` otherwise.

use crate::autodiff::Function;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Extents of one combination: `n` kernels of `[c_out, cpf, k, k]` and `copies`
/// attention sets (1 or `n`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CombineDims {
    pub n: usize,
    pub copies: usize,
    pub c_out: usize,
    pub cpf: usize,
    pub area: usize,
}

impl CombineDims {
    fn kernel_len(&self) -> usize {
        self.c_out * self.cpf * self.area
    }

    fn batch_of(&self, inputs: &[&Tensor]) -> Result<usize> {
        let [w, s, c, f, a] = inputs else {
            return Err(Error::Contract("combine_kernels takes five inputs".into()));
        };
        if w.len() != self.n * self.kernel_len() {
            return Err(Error::shape(format!("kernel set {} does not match {self:?}", w.shape())));
        }
        let b = a.dims()[0];
        let expect = [
            (s, self.copies * self.area, "spatial"),
            (c, self.copies * self.cpf, "in-channel"),
            (f, self.copies * self.c_out, "filter"),
            (a, self.n, "kernel"),
        ];
        for (t, per_sample, what) in expect {
            if t.dims()[0] != b || t.len() != b * per_sample {
                return Err(Error::shape(format!(
                    "{what} attention {} does not match batch {b} x {per_sample}",
                    t.shape()
                )));
            }
        }
        Ok(b)
    }
}

/// Effective kernel of one sample; `out` has `c_out * cpf * area` entries.
#[allow(clippy::too_many_arguments)]
pub(crate) fn combine_sample(
    dims: &CombineDims,
    weights: &[f64],
    alpha_s: &[f64],
    alpha_c: &[f64],
    alpha_f: &[f64],
    alpha_w: &[f64],
    out: &mut [f64],
) {
    let CombineDims {
        n,
        copies,
        c_out,
        cpf,
        area,
    } = *dims;
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let m = if copies == 1 { 0 } else { i };
        let aw = alpha_w[i];
        let s = &alpha_s[m * area..][..area];
        let c = &alpha_c[m * cpf..][..cpf];
        let f = &alpha_f[m * c_out..][..c_out];
        let wi = &weights[i * dims.kernel_len()..][..dims.kernel_len()];
        for o in 0..c_out {
            let fo = aw * f[o];
            for ci in 0..cpf {
                let fc = fo * c[ci];
                let base = (o * cpf + ci) * area;
                for p in 0..area {
                    out[base + p] += fc * s[p] * wi[base + p];
                }
            }
        }
    }
}

/// Tape operation `(W, α_s, α_c, α_f, α_w) -> W_eff [b, c_out, cpf, k, k]`.
#[derive(Clone, Copy, Debug)]
pub struct CombineKernels {
    pub dims: CombineDims,
    pub k: usize,
}

impl Function for CombineKernels {
    fn name(&self) -> &'static str {
        "combine_kernels"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let d = &self.dims;
        let b = d.batch_of(inputs)?;
        let klen = d.kernel_len();
        let mut out = vec![0.0; b * klen];
        for (s, dst) in out.chunks_exact_mut(klen).enumerate() {
            combine_sample(
                d,
                inputs[0].data(),
                &inputs[1].data()[s * d.copies * d.area..][..d.copies * d.area],
                &inputs[2].data()[s * d.copies * d.cpf..][..d.copies * d.cpf],
                &inputs[3].data()[s * d.copies * d.c_out..][..d.copies * d.c_out],
                &inputs[4].data()[s * d.n..][..d.n],
                dst,
            );
        }
        Ok(Tensor::raw(&[b, d.c_out, d.cpf, self.k, self.k], out))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let d = &self.dims;
        let b = d.batch_of(inputs)?;
        let [w, s_in, c_in, f_in, a_in] = inputs else {
            unreachable!("checked by batch_of")
        };
        let klen = d.kernel_len();
        let mut gw = vec![0.0; w.len()];
        let mut gs = vec![0.0; s_in.len()];
        let mut gc = vec![0.0; c_in.len()];
        let mut gf = vec![0.0; f_in.len()];
        let mut ga = vec![0.0; a_in.len()];
        for bi in 0..b {
            let g = &grad.data()[bi * klen..][..klen];
            for i in 0..d.n {
                let m = if d.copies == 1 { 0 } else { i };
                let soff = (bi * d.copies + m) * d.area;
                let coff = (bi * d.copies + m) * d.cpf;
                let foff = (bi * d.copies + m) * d.c_out;
                let aw = a_in.data()[bi * d.n + i];
                let wi = &w.data()[i * klen..][..klen];
                let mut acc_w = 0.0;
                for o in 0..d.c_out {
                    let af = f_in.data()[foff + o];
                    let mut acc_f = 0.0;
                    for ci in 0..d.cpf {
                        let ac = c_in.data()[coff + ci];
                        let base = (o * d.cpf + ci) * d.area;
                        let mut acc_c = 0.0;
                        for p in 0..d.area {
                            let as_ = s_in.data()[soff + p];
                            let gp = g[base + p];
                            let gwp = gp * wi[base + p];
                            // gwp * as_ * ac * af * aw is the full product; each
                            // factor's gradient omits itself.
                            gw[i * klen + base + p] += gp * aw * af * ac * as_;
                            gs[soff + p] += gwp * aw * af * ac;
                            acc_c += gwp * as_;
                        }
                        gc[coff + ci] += acc_c * aw * af;
                        acc_f += acc_c * ac;
                    }
                    gf[foff + o] += acc_f * aw;
                    acc_w += acc_f * af;
                }
                ga[bi * d.n + i] += acc_w;
            }
        }
        Ok(vec![
            Some(Tensor::from_parts(w.shape().clone(), gw)),
            Some(Tensor::from_parts(s_in.shape().clone(), gs)),
            Some(Tensor::from_parts(c_in.shape().clone(), gc)),
            Some(Tensor::from_parts(f_in.shape().clone(), gf)),
            Some(Tensor::from_parts(a_in.shape().clone(), ga)),
        ])
    }
}
