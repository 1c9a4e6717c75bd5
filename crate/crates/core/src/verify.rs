//! Property suite comparing the dynamic convolution layer against the
//! independent references in [`crate::oracle`].
//!
//! Every property draws its own random instances from a seeded generator and
//! reports the worst deviation seen together with the tolerance it was held to.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check_many, GradCheckReport};
use crate::error::{Error, Result};
use crate::nn::{self, ConvGeometry};
use crate::odconv::{
    combine_kernels, AttentionFlags, AttentionParams, AttentionSet, LayerVars,
    ODConvConfig, ODConvLayer, TemperatureSource,
};
use crate::oracle;
use crate::tensor::Tensor;

/// Deliberate defects used to confirm that the suite can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Pairs kernel `i` with the kernel attention of kernel `i + 1 (mod n)`
    /// when combining.
    CombineOrder,
}

#[derive(Clone, Debug)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed deviation (or 0/1 for boolean properties).
    pub worst: f64,
    pub tolerance: f64,
    pub instances: usize,
    pub detail: String,
}

impl PropertyOutcome {
    fn from_worst(name: &'static str, worst: f64, tolerance: f64, instances: usize) -> Self {
        PropertyOutcome {
            name,
            passed: worst <= tolerance,
            worst,
            tolerance,
            instances,
            detail: format!("max deviation {worst:.3e} (tolerance {tolerance:.0e})"),
        }
    }

    fn failed(name: &'static str, err: &Error) -> Self {
        PropertyOutcome {
            name,
            passed: false,
            worst: f64::INFINITY,
            tolerance: 0.0,
            instances: 0,
            detail: format!("error: {err}"),
        }
    }
}

/// Names accepted by [`run`]'s filter, in execution order.
pub const PROPERTIES: [&str; 9] = [
    "conv-oracle",
    "reduction",
    "eq1-equivalence",
    "se-variant",
    "linearity",
    "attention-contracts",
    "batch-independence",
    "sharing",
    "gradient",
];

/// A random small instance: layer geometry plus an input batch.
#[derive(Clone, Debug)]
pub struct Instance {
    pub cfg: ODConvConfig,
    pub x: Tensor,
}

/// Draws `b ≤ 2`, `c_in, c_out ≤ 4`, spatial extent up to 8 and a kernel size from `ks`.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    ks: &[usize],
    n: usize,
    flags: AttentionFlags,
    min_c_in: usize,
) -> Result<Instance> {
    let k = ks[rng.random_range(0..ks.len())];
    let c_in = rng.random_range(min_c_in..=4);
    let c_out = rng.random_range(1..=4);
    let stride = rng.random_range(1..=2);
    let padding = if rng.random_bool(0.5) { k / 2 } else { 0 };
    let h = rng.random_range(k.max(2)..=8);
    let w = rng.random_range(k.max(2)..=8);
    let b = rng.random_range(1..=2);
    let cfg = ODConvConfig::new(c_in, c_out, ConvGeometry::new(k, stride, padding, 1)?)
        .with_kernels(n)
        .with_flags(flags)
        .with_reduction(0.5)
        .with_hidden_floor(4);
    let x = Tensor::uniform(&[b, c_in, h, w], -1.0, 1.0, rng)?;
    Ok(Instance { cfg, x })
}

fn layer_for(inst: &Instance, rng: &mut ChaCha8Rng) -> Result<ODConvLayer> {
    ODConvLayer::init_random_heads(inst.cfg, rng.random(), 1.0)
}

/// Im2col convolution against the direct sliding-window loop.
pub fn check_conv_oracle(instances: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.random_range(1..=3);
        let groups = [1, 2][rng.random_range(0..2)];
        let c_in = groups * rng.random_range(1..=2);
        let c_out = groups * rng.random_range(1..=2);
        let geom = ConvGeometry::new(k, rng.random_range(1..=2), rng.random_range(0..=1), groups)?;
        let x = Tensor::uniform(&[rng.random_range(1..=2), c_in, 6, 5], -1.0, 1.0, &mut rng)?;
        let w = Tensor::uniform(&[c_out, c_in / groups, k, k], -1.0, 1.0, &mut rng)?;
        let fast = nn::conv2d(&x, &w, &geom)?;
        worst = worst.max(fast.max_abs_diff(&oracle::conv2d_naive(&x, &w, &geom)?)?);
    }
    Ok(PropertyOutcome::from_worst("conv-oracle", worst, 1e-10, instances))
}

/// All attentions disabled and `n = 1` reduces to a regular convolution.
pub fn check_reduction(instances: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &[1, 3], 1, AttentionFlags::NONE, 1)?;
        let layer = layer_for(&inst, &mut rng)?;
        let y = layer.forward(&inst.x, 1.0)?;
        let want = oracle::conv2d_naive(&inst.x, &layer.kernels.kernel(0)?, &inst.cfg.geom)?;
        worst = worst.max(y.max_abs_diff(&want)?);
    }
    Ok(PropertyOutcome::from_worst("reduction", worst, 1e-12, instances))
}

/// Kernel-attention-only layer against a direct implementation of kernel-mixture
/// dynamic convolution.
pub fn check_eq1_equivalence(instances: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let n = [2, 4][i % 2];
        let inst = random_instance(&mut rng, &[1, 3], n, AttentionFlags::KERNEL_ONLY, 1)?;
        let layer = layer_for(&inst, &mut rng)?;
        let t = [1.0, 5.0, 30.0][rng.random_range(0..3)];
        let y = layer.forward(&inst.x, t)?;
        let p = &layer.attention;
        let (Some(reduce), Some(head)) = (&p.reduce, &p.kernel) else {
            return Err(Error::Contract("kernel-only layer lacks its attention weights".into()));
        };
        let want = oracle::dynamic_conv_reference(&inst.x, &layer.kernels, reduce, head, t, &inst.cfg.geom)?;
        worst = worst.max(y.max_abs_diff(&want)?);
    }
    Ok(PropertyOutcome::from_worst("eq1-equivalence", worst, 1e-12, instances))
}

/// `n = 1` with only the filter attention equals convolution followed by a
/// per-output-channel gate.
pub fn check_se_variant(instances: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &[1, 3], 1, AttentionFlags::FILTER_ONLY, 1)?;
        let layer = layer_for(&inst, &mut rng)?;
        let y = layer.forward(&inst.x, 1.0)?;
        let att = layer.attention(&inst.x, 1.0)?;
        let want = oracle::scale_after_conv_reference(
            &inst.x,
            &layer.kernels.kernel(0)?,
            &att.alpha_f,
            &inst.cfg.geom,
        )?;
        worst = worst.max(y.max_abs_diff(&want)?);
    }
    Ok(PropertyOutcome::from_worst("se-variant", worst, 1e-10, instances))
}

fn rotate_kernel_attention(att: &AttentionSet) -> Result<AttentionSet> {
    let &[b, n] = att.alpha_w.dims() else {
        unreachable!("alpha_w is [b, n]")
    };
    let mut data = att.alpha_w.data().to_vec();
    for row in data.chunks_exact_mut(n) {
        row.rotate_left(1);
    }
    Ok(AttentionSet {
        alpha_w: Tensor::from_vec(&[b, n], data)?,
        ..att.clone()
    })
}

fn combine_then_convolve(layer: &ODConvLayer, x: &Tensor, t: f64, fault: Fault) -> Result<Tensor> {
    if fault == Fault::None {
        return layer.forward(x, t);
    }
    let att = rotate_kernel_attention(&layer.attention(x, t)?)?;
    let batch = x.dims()[0];
    let per = x.len() / batch;
    let mut out = Vec::new();
    let mut dims = Vec::new();
    for b in 0..batch {
        let mut xd = x.dims().to_vec();
        xd[0] = 1;
        let xb = Tensor::from_vec(&xd, x.data()[b * per..][..per].to_vec())?;
        let w = combine_kernels(&layer.kernels, &att, b, &layer.cfg)?;
        let y = nn::conv2d(&xb, &w, &layer.cfg.geom)?;
        dims = y.dims().to_vec();
        out.extend_from_slice(y.data());
    }
    dims[0] = batch;
    Tensor::from_vec(&dims, out)
}

/// Combining the attended kernels and convolving once equals convolving with
/// every attended kernel and summing the weighted outputs.
pub fn check_linearity(instances: usize, seed: u64, fault: Fault) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &[1, 3], 4, AttentionFlags::ALL, 1)?;
        let layer = layer_for(&inst, &mut rng)?;
        let y = combine_then_convolve(&layer, &inst.x, 1.0, fault)?;
        let att = layer.attention(&inst.x, 1.0)?;
        let want = oracle::per_kernel_reference(&inst.x, &layer.kernels, &att, &inst.cfg)?;
        worst = worst.max(y.max_abs_diff(&want)?);
    }
    Ok(PropertyOutcome::from_worst("linearity", worst, 1e-10, instances))
}

/// Range, normalisation and temperature contracts of the attentions over
/// `inputs` random inputs. Returns the number of violations as `worst`.
pub fn check_attention_contracts(inputs: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut first = String::new();
    let mut note = |msg: String| {
        if violations == 0 {
            first = msg;
        }
        violations += 1;
    };
    let layers: Vec<ODConvLayer> = (0..4)
        .map(|i| {
            let cfg = ODConvConfig::new(3 + i % 2, 4, ConvGeometry::same(3))
                .with_kernels(4)
                .with_reduction(0.5)
                .with_hidden_floor(4)
                .with_sharing(i < 2);
            ODConvLayer::init_random_heads(cfg, seed.wrapping_add(i as u64), 1.5)
        })
        .collect::<Result<_>>()?;
    for j in 0..inputs {
        let layer = &layers[j % layers.len()];
        let x = Tensor::uniform(&[1, layer.cfg.c_in, 5, 5], -2.0, 2.0, &mut rng)?;
        let att = layer.attention(&x, 1.0)?;
        for (name, t) in [("alpha_s", &att.alpha_s), ("alpha_c", &att.alpha_c), ("alpha_f", &att.alpha_f)] {
            if let Some(v) = t.data().iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
                note(format!("{name} value {v} outside (0, 1)"));
            }
        }
        let sum: f64 = att.alpha_w.data().iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            note(format!("alpha_w row sums to {sum}"));
        }
        let mut prev_max = f64::INFINITY;
        let mut argmax = None;
        for t in [1.0, 5.0, 30.0] {
            let row = layer.attention(&x, t)?.alpha_w.into_data();
            let (idx, max) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            if max > prev_max {
                note(format!("alpha_w max grew from {prev_max} to {max} at T={t}"));
            }
            if argmax.is_some_and(|a| a != idx) {
                note(format!("alpha_w argmax moved at T={t}"));
            }
            prev_max = max;
            argmax = Some(idx);
        }
    }
    let mut out = PropertyOutcome::from_worst("attention-contracts", violations as f64, 0.0, inputs);
    if violations > 0 {
        out.detail = format!("{violations} violations; first: {first}");
    } else {
        out.detail = format!("{inputs} inputs, no violations");
    }
    Ok(out)
}

/// Each sample's output in a batch is bitwise equal to processing it alone.
pub fn check_batch_independence(instances: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for _ in 0..instances {
        let mut inst = random_instance(&mut rng, &[1, 3], 4, AttentionFlags::ALL, 1)?;
        let mut dims = inst.x.dims().to_vec();
        dims[0] = 3;
        inst.x = Tensor::uniform(&dims, -1.0, 1.0, &mut rng)?;
        let layer = layer_for(&inst, &mut rng)?;
        let y = layer.forward(&inst.x, 5.0)?;
        let per_in = inst.x.len() / 3;
        let per_out = y.len() / 3;
        for b in 0..3 {
            dims[0] = 1;
            let xb = Tensor::from_vec(&dims, inst.x.data()[b * per_in..][..per_in].to_vec())?;
            let yb = layer.forward(&xb, 5.0)?;
            if yb.data() != &y.data()[b * per_out..][..per_out] {
                mismatches += 1;
            }
        }
    }
    Ok(PropertyOutcome::from_worst("batch-independence", mismatches as f64, 0.0, instances))
}

/// Expands shared spatial / channel / filter heads into per-kernel copies.
pub fn unshare(layer: &ODConvLayer) -> Result<ODConvLayer> {
    let n = layer.cfg.n;
    let repeat = |t: &Option<Tensor>| -> Result<Option<Tensor>> {
        t.as_ref()
            .map(|t| {
                let d = t.dims();
                let data: Vec<f64> = (0..n).flat_map(|_| t.data().iter().copied()).collect();
                Tensor::from_vec(&[d[0] * n, d[1]], data)
            })
            .transpose()
    };
    let p = &layer.attention;
    let attention = AttentionParams {
        reduce: p.reduce.clone(),
        spatial: repeat(&p.spatial)?,
        in_channel: repeat(&p.in_channel)?,
        filter: repeat(&p.filter)?,
        kernel: p.kernel.clone(),
    };
    ODConvLayer::from_parts(layer.cfg.with_sharing(false), layer.kernels.clone(), attention)
}

/// Unshared heads holding copies of the shared heads give identical outputs.
pub fn check_sharing(instances: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, &[3], 3, AttentionFlags::ALL, 2)?;
        let shared = layer_for(&inst, &mut rng)?;
        let unshared = unshare(&shared)?;
        let a = shared.forward(&inst.x, 2.0)?;
        let b = unshared.forward(&inst.x, 2.0)?;
        worst = worst.max(a.max_abs_diff(&b)?);
    }
    Ok(PropertyOutcome::from_worst("sharing", worst, 0.0, instances))
}

/// Smallest |pre-activation| of the attention trunk over the batch.
pub fn trunk_margin(layer: &ODConvLayer, x: &Tensor) -> Result<f64> {
    match &layer.attention.reduce {
        None => Ok(f64::INFINITY),
        Some(w) => {
            let pre = nn::fully_connected(&x.global_average_pool()?, w)?;
            Ok(pre.data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min))
        }
    }
}

/// Central-difference check of `sum(y²)` with respect to the input, the
/// kernels and every attention weight. Returns one report per parameter group.
pub fn layer_gradcheck(
    layer: &ODConvLayer,
    x: &Tensor,
    temperature: f64,
    h: f64,
) -> Result<Vec<(String, GradCheckReport)>> {
    let mut names = vec!["input".to_string(), "kernels".to_string()];
    let mut inputs = vec![x.clone(), layer.kernels.weights().clone()];
    let mut present = [false; 5];
    for (i, (slot, name)) in layer
        .attention
        .slots()
        .into_iter()
        .zip(AttentionParams::SLOT_NAMES)
        .enumerate()
    {
        if let Some(t) = slot {
            present[i] = true;
            names.push(format!("attention.{name}"));
            inputs.push(t.clone());
        }
    }
    let cfg = layer.cfg;
    let reports = finite_diff_check_many(
        |tape, vars| {
            let mut rest = vars[2..].iter();
            let slots = present.map(|p| if p { rest.next().copied() } else { None });
            let lv = LayerVars {
                kernels: vars[1],
                slots,
            };
            let y = crate::odconv::odconv_on_tape(tape, vars[0], &lv, &cfg, temperature)?;
            y.mul(y)?.sum()
        },
        &inputs,
        h,
    )?;
    Ok(names.into_iter().zip(reports).collect())
}

/// Finite-difference check of a full four-attention layer (`n = 4`, `k = 3`)
/// over `seeds` random instances; the worst relative error across all groups.
pub fn check_gradient(seeds: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut worst: f64 = 0.0;
    let mut where_ = String::new();
    for s in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
        let c_in = rng.random_range(2..=4);
        let c_out = rng.random_range(2..=4);
        let cfg = ODConvConfig::new(c_in, c_out, ConvGeometry::same(3))
            .with_kernels(4)
            .with_flags(AttentionFlags::ALL)
            .with_reduction(1.0)
            .with_hidden_floor(4)
            .with_temperature(TemperatureSource::Fixed(2.0));
        let layer = ODConvLayer::init_random_heads(cfg, rng.random(), 0.8)?;
        let b = rng.random_range(1..=2);
        let h = 1e-5;
        let mut x = Tensor::uniform(&[b, c_in, 5, 5], -1.0, 1.0, &mut rng)?;
        let mut tries = 0;
        while trunk_margin(&layer, &x)? < 10.0 * h {
            x = Tensor::uniform(&[b, c_in, 5, 5], -1.0, 1.0, &mut rng)?;
            tries += 1;
            if tries > 100 {
                return Err(Error::Numeric("could not draw an input away from ReLU kinks".into()));
            }
        }
        for (name, report) in layer_gradcheck(&layer, &x, 2.0, h)? {
            if report.max_rel_error > worst {
                worst = report.max_rel_error;
                where_ = format!("seed {s}, {name}");
            }
        }
    }
    let mut out = PropertyOutcome::from_worst("gradient", worst, 1e-4, seeds);
    out.detail = format!("{} (worst at {where_})", out.detail);
    Ok(out)
}

/// Runs every property whose name contains `filter` (all when `None`).
pub fn run(filter: Option<&str>, fault: Fault, seed: u64) -> Vec<PropertyOutcome> {
    PROPERTIES
        .iter()
        .filter(|name| filter.is_none_or(|f| name.contains(f)))
        .map(|&name| {
            let s = seed;
            let result = match name {
                "conv-oracle" => check_conv_oracle(20, s),
                "reduction" => check_reduction(20, s),
                "eq1-equivalence" => check_eq1_equivalence(20, s),
                "se-variant" => check_se_variant(20, s),
                "linearity" => check_linearity(20, s, fault),
                "attention-contracts" => check_attention_contracts(200, s),
                "batch-independence" => check_batch_independence(10, s),
                "sharing" => check_sharing(10, s),
                "gradient" => check_gradient(2, s),
                _ => unreachable!("PROPERTIES is exhaustive"),
            };
            result.unwrap_or_else(|e| PropertyOutcome::failed(name, &e))
        })
        .collect()
}
