use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::combine::{combine_sample, CombineDims, CombineKernels};
use super::config::{ODConvConfig, SpatialActivation};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The `n` candidate kernels of a layer, `[n, c_out, c_in/groups, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSet {
    weights: Tensor,
}

impl KernelSet {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 5 {
            return Err(Error::shape(format!(
                "kernel set must be [n, c_out, c_in/groups, k, k], got {}",
                weights.shape()
            )));
        }
        weights.check_finite("kernel set")?;
        Ok(KernelSet { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    /// Kernel `i` as a regular `[c_out, c_in/groups, k, k]` convolution weight.
    pub fn kernel(&self, i: usize) -> Result<Tensor> {
        let d = self.weights.dims();
        if i >= d[0] {
            return Err(Error::shape(format!("kernel index {i} out of range for n={}", d[0])));
        }
        let len = d[1] * d[2] * d[3] * d[4];
        Tensor::from_vec(&d[1..], self.weights.data()[i * len..][..len].to_vec())
    }

    fn check(&self, cfg: &ODConvConfig) -> Result<()> {
        if self.weights.dims() != cfg.kernel_dims() {
            return Err(Error::shape(format!(
                "kernel set {} does not match config {:?}",
                self.weights.shape(),
                cfg.kernel_dims()
            )));
        }
        Ok(())
    }
}

/// Weights of the attention trunk and its heads. A head is `None` when it is
/// disabled or degenerate; its attention is then the constant 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `[hidden, c_in]`; absent when no head is present.
    pub reduce: Option<Tensor>,
    /// `[copies * k * k, hidden]`
    pub spatial: Option<Tensor>,
    /// `[copies * c_in/groups, hidden]`
    pub in_channel: Option<Tensor>,
    /// `[copies * c_out, hidden]`
    pub filter: Option<Tensor>,
    /// `[n, hidden]`
    pub kernel: Option<Tensor>,
}

impl AttentionParams {
    /// Expected shapes of `(reduce, spatial, in_channel, filter, kernel)`.
    pub fn expected_dims(cfg: &ODConvConfig) -> [Option<[usize; 2]>; 5] {
        let h = cfg.hidden_width();
        let m = cfg.head_copies();
        let spatial = cfg.has_spatial_head().then_some([m * cfg.kernel_area(), h]);
        let in_channel = cfg.has_in_channel_head().then_some([m * cfg.c_in_per_filter(), h]);
        let filter = cfg.has_filter_head().then_some([m * cfg.c_out, h]);
        let kernel = cfg.has_kernel_head().then_some([cfg.n, h]);
        let any = spatial.is_some() || in_channel.is_some() || filter.is_some() || kernel.is_some();
        let reduce = any.then_some([h, cfg.c_in]);
        [reduce, spatial, in_channel, filter, kernel]
    }

    pub fn slots(&self) -> [Option<&Tensor>; 5] {
        [
            self.reduce.as_ref(),
            self.spatial.as_ref(),
            self.in_channel.as_ref(),
            self.filter.as_ref(),
            self.kernel.as_ref(),
        ]
    }

    pub fn slots_mut(&mut self) -> [&mut Option<Tensor>; 5] {
        [
            &mut self.reduce,
            &mut self.spatial,
            &mut self.in_channel,
            &mut self.filter,
            &mut self.kernel,
        ]
    }

    pub const SLOT_NAMES: [&'static str; 5] = ["reduce", "spatial", "in_channel", "filter", "kernel"];

    pub fn check(&self, cfg: &ODConvConfig) -> Result<()> {
        for ((slot, want), name) in self
            .slots()
            .into_iter()
            .zip(Self::expected_dims(cfg))
            .zip(Self::SLOT_NAMES)
        {
            match (slot, want) {
                (None, None) => {}
                (Some(t), Some(w)) if t.dims() == w => {}
                (got, want) => {
                    return Err(Error::shape(format!(
                        "attention `{name}` weight {:?} does not match expected {want:?}",
                        got.map(|t| t.dims().to_vec())
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.slots().iter().flatten().map(|t| t.len()).sum()
    }
}

/// Per-sample attentions. With `m` attention copies (1 when shared, `n`
/// otherwise): `alpha_s: [b, m, k, k]`, `alpha_c: [b, m, c_in/groups]`,
/// `alpha_f: [b, m, c_out]`, `alpha_w: [b, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSet {
    pub alpha_s: Tensor,
    pub alpha_c: Tensor,
    pub alpha_f: Tensor,
    pub alpha_w: Tensor,
}

impl AttentionSet {
    pub fn batch(&self) -> usize {
        self.alpha_w.dims()[0]
    }
}

/// Tape handles for a layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars<'t> {
    pub kernels: Var<'t>,
    pub slots: [Option<Var<'t>>; 5],
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars<'t> {
    pub alpha_s: Var<'t>,
    pub alpha_c: Var<'t>,
    pub alpha_f: Var<'t>,
    pub alpha_w: Var<'t>,
}

/// Draws fresh parameters: kernels and the trunk uniformly with fan-in
/// scaling, every head matrix zero.
pub fn init_layer(cfg: &ODConvConfig, seed: u64) -> Result<(KernelSet, AttentionParams)> {
    init_with_heads(cfg, seed, None)
}

fn init_with_heads(
    cfg: &ODConvConfig,
    seed: u64,
    head_bound: Option<f64>,
) -> Result<(KernelSet, AttentionParams)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_in = (cfg.c_in_per_filter() * cfg.kernel_area()) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let kernels = KernelSet::new(Tensor::uniform(&cfg.kernel_dims(), -bound, bound, &mut rng)?)?;
    let dims = AttentionParams::expected_dims(cfg);
    let reduce = match dims[0] {
        Some(d) => {
            let b = (6.0 / cfg.c_in as f64).sqrt();
            Some(Tensor::uniform(&d, -b, b, &mut rng)?)
        }
        None => None,
    };
    let mut heads = Vec::with_capacity(4);
    for d in &dims[1..] {
        heads.push(match (d, head_bound) {
            (None, _) => None,
            (Some(d), None) => Some(Tensor::zeros(d)?),
            (Some(d), Some(b)) => Some(Tensor::uniform(d, -b, b, &mut rng)?),
        });
    }
    let mut heads = heads.into_iter();
    let params = AttentionParams {
        reduce,
        spatial: heads.next().flatten(),
        in_channel: heads.next().flatten(),
        filter: heads.next().flatten(),
        kernel: heads.next().flatten(),
    };
    Ok((kernels, params))
}

fn ones_var<'t>(tape: &'t Tape, dims: &[usize]) -> Result<Var<'t>> {
    Ok(tape.constant(Tensor::ones(dims)?))
}

/// Records the attention module on `tape`: GAP, reduction FC, ReLU, then the
/// four heads (sigmoid, or softmax for the spatial head if configured; the
/// kernel head uses a temperature softmax).
pub fn attention_on_tape<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    slots: &[Option<Var<'t>>; 5],
    cfg: &ODConvConfig,
    temperature: f64,
) -> Result<AttentionVars<'t>> {
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != cfg.c_in {
        return Err(Error::shape(format!(
            "odconv input must be [b, {}, h, w], got {dims:?}",
            cfg.c_in
        )));
    }
    let b = dims[0];
    let m = cfg.head_copies();
    let (k, area, cpf) = (cfg.geom.k, cfg.kernel_area(), cfg.c_in_per_filter());
    let [reduce, spatial, in_channel, filter, kernel] = *slots;
    let z = match reduce {
        Some(w) => Some(x.global_average_pool()?.fully_connected(w)?.relu()?),
        None => None,
    };
    let head = |w: Option<Var<'t>>| -> Result<Option<Var<'t>>> {
        match (w, z) {
            (Some(w), Some(z)) => Ok(Some(z.fully_connected(w)?)),
            (Some(_), None) => Err(Error::Contract("attention head without reduction trunk".into())),
            (None, _) => Ok(None),
        }
    };
    let alpha_s = match head(spatial)? {
        Some(logits) => match cfg.spatial_activation {
            SpatialActivation::Sigmoid => logits.sigmoid()?.reshape(&[b, m, k, k])?,
            SpatialActivation::Softmax => logits
                .reshape(&[b * m, area])?
                .softmax_t(1.0)?
                .reshape(&[b, m, k, k])?,
        },
        None => ones_var(tape, &[b, m, k, k])?,
    };
    let alpha_c = match head(in_channel)? {
        Some(logits) => logits.sigmoid()?.reshape(&[b, m, cpf])?,
        None => ones_var(tape, &[b, m, cpf])?,
    };
    let alpha_f = match head(filter)? {
        Some(logits) => logits.sigmoid()?.reshape(&[b, m, cfg.c_out])?,
        None => ones_var(tape, &[b, m, cfg.c_out])?,
    };
    let alpha_w = match head(kernel)? {
        Some(logits) => logits.softmax_t(temperature)?,
        None => ones_var(tape, &[b, cfg.n])?,
    };
    Ok(AttentionVars {
        alpha_s,
        alpha_c,
        alpha_f,
        alpha_w,
    })
}

fn combine_dims(cfg: &ODConvConfig) -> CombineDims {
    CombineDims {
        n: cfg.n,
        copies: cfg.head_copies(),
        c_out: cfg.c_out,
        cpf: cfg.c_in_per_filter(),
        area: cfg.kernel_area(),
    }
}

/// Records the full layer: attentions, kernel combination, per-sample convolution.
pub fn odconv_on_tape<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    vars: &LayerVars<'t>,
    cfg: &ODConvConfig,
    temperature: f64,
) -> Result<Var<'t>> {
    let att = attention_on_tape(tape, x, &vars.slots, cfg, temperature)?;
    let effective = tape.record(
        CombineKernels {
            dims: combine_dims(cfg),
            k: cfg.geom.k,
        },
        &[vars.kernels, att.alpha_s, att.alpha_c, att.alpha_f, att.alpha_w],
    )?;
    x.conv2d_per_sample(effective, cfg.geom)
}

fn constants<'t>(tape: &'t Tape, kernels: &KernelSet, params: &AttentionParams) -> LayerVars<'t> {
    let kernels = tape.constant(kernels.weights().clone());
    let slots = params.slots().map(|s| s.map(|t| tape.constant(t.clone())));
    LayerVars { kernels, slots }
}

/// Attentions for a batch, evaluated outside any training graph.
pub fn attention_forward(
    x: &Tensor,
    params: &AttentionParams,
    cfg: &ODConvConfig,
    temperature: f64,
) -> Result<AttentionSet> {
    params.check(cfg)?;
    let tape = Tape::new();
    let slots = params.slots().map(|s| s.map(|t| tape.constant(t.clone())));
    let xv = tape.constant(x.clone());
    let att = attention_on_tape(&tape, xv, &slots, cfg, temperature)?;
    Ok(AttentionSet {
        alpha_s: att.alpha_s.value().as_ref().clone(),
        alpha_c: att.alpha_c.value().as_ref().clone(),
        alpha_f: att.alpha_f.value().as_ref().clone(),
        alpha_w: att.alpha_w.value().as_ref().clone(),
    })
}

/// Effective `[c_out, c_in/groups, k, k]` kernel of sample `sample`.
pub fn combine_kernels(
    kernels: &KernelSet,
    att: &AttentionSet,
    sample: usize,
    cfg: &ODConvConfig,
) -> Result<Tensor> {
    kernels.check(cfg)?;
    let d = combine_dims(cfg);
    let b = att.batch();
    if sample >= b {
        return Err(Error::shape(format!("sample {sample} out of range for batch {b}")));
    }
    let per = [
        (&att.alpha_s, d.copies * d.area),
        (&att.alpha_c, d.copies * d.cpf),
        (&att.alpha_f, d.copies * d.c_out),
        (&att.alpha_w, d.n),
    ];
    for (t, len) in per {
        if t.len() != b * len {
            return Err(Error::shape(format!(
                "attention {} inconsistent with config (expected {len} per sample)",
                t.shape()
            )));
        }
    }
    let slice = |t: &Tensor, len: usize| t.data()[sample * len..][..len].to_vec();
    let mut out = vec![0.0; cfg.c_out * d.cpf * d.area];
    combine_sample(
        &d,
        kernels.weights().data(),
        &slice(&att.alpha_s, d.copies * d.area),
        &slice(&att.alpha_c, d.copies * d.cpf),
        &slice(&att.alpha_f, d.copies * d.c_out),
        &slice(&att.alpha_w, d.n),
        &mut out,
    );
    Tensor::from_vec(&cfg.kernel_dims()[1..], out)
}

/// `y_b = conv2d(x_b, combine_kernels(W, attention(x)_b))` for every sample.
pub fn odconv_forward(
    x: &Tensor,
    kernels: &KernelSet,
    params: &AttentionParams,
    cfg: &ODConvConfig,
    temperature: f64,
) -> Result<Tensor> {
    cfg.validate()?;
    kernels.check(cfg)?;
    params.check(cfg)?;
    let tape = Tape::new();
    let vars = constants(&tape, kernels, params);
    let xv = tape.constant(x.clone());
    let y = odconv_on_tape(&tape, xv, &vars, cfg, temperature)?;
    Ok(y.value().as_ref().clone())
}

/// A configured layer together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ODConvLayer {
    pub cfg: ODConvConfig,
    pub kernels: KernelSet,
    pub attention: AttentionParams,
}

impl ODConvLayer {
    pub fn init(cfg: ODConvConfig, seed: u64) -> Result<Self> {
        let (kernels, attention) = init_layer(&cfg, seed)?;
        Ok(ODConvLayer {
            cfg,
            kernels,
            attention,
        })
    }

    /// Like [`ODConvLayer::init`] but with head matrices drawn from
    /// `U[-bound, bound)` instead of zero, so every attention depends on the input.
    pub fn init_random_heads(cfg: ODConvConfig, seed: u64, bound: f64) -> Result<Self> {
        let (kernels, attention) = init_with_heads(&cfg, seed, Some(bound))?;
        Ok(ODConvLayer {
            cfg,
            kernels,
            attention,
        })
    }

    pub fn from_parts(cfg: ODConvConfig, kernels: KernelSet, attention: AttentionParams) -> Result<Self> {
        cfg.validate()?;
        kernels.check(&cfg)?;
        attention.check(&cfg)?;
        Ok(ODConvLayer {
            cfg,
            kernels,
            attention,
        })
    }

    pub fn forward(&self, x: &Tensor, temperature: f64) -> Result<Tensor> {
        odconv_forward(x, &self.kernels, &self.attention, &self.cfg, temperature)
    }

    pub fn attention(&self, x: &Tensor, temperature: f64) -> Result<AttentionSet> {
        attention_forward(x, &self.attention, &self.cfg, temperature)
    }

    /// Puts the parameters on `tape`, as leaves when `trainable`.
    pub fn register<'t>(&self, tape: &'t Tape, trainable: bool) -> LayerVars<'t> {
        if !trainable {
            return constants(tape, &self.kernels, &self.attention);
        }
        LayerVars {
            kernels: tape.leaf(self.kernels.weights().clone()),
            slots: self.attention.slots().map(|s| s.map(|t| tape.leaf(t.clone()))),
        }
    }

    pub fn forward_on_tape<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        vars: &LayerVars<'t>,
        temperature: f64,
    ) -> Result<Var<'t>> {
        odconv_on_tape(tape, x, vars, &self.cfg, temperature)
    }

    pub fn num_params(&self) -> usize {
        self.kernels.weights().len() + self.attention.num_params()
    }
}
