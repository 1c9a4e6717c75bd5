use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::arch::{ArchSpec, Branch, ConvSpec, LayerKind};
use crate::error::{Error, Result};
use crate::nn::ConvGeometry;
use crate::odconv::{AttentionFlags, AttentionParams, ODConvConfig};

/// Which extra attention-module parameters are counted beyond the weight
/// matrices the layer itself stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Bookkeeping {
    /// One bias per head output.
    pub head_bias: bool,
    /// Scale and shift of a normalisation layer after the reduction FC.
    pub hidden_bn: bool,
}

impl Bookkeeping {
    /// Counts head biases and the hidden normalisation, as common reference
    /// implementations of the layer do.
    pub const REFERENCE: Bookkeeping = Bookkeeping {
        head_bias: true,
        hidden_bn: true,
    };
    /// Exactly the bias-free weights held by [`crate::odconv::ODConvLayer`].
    pub const LAYER: Bookkeeping = Bookkeeping {
        head_bias: false,
        hidden_bn: false,
    };
}

impl FromStr for Bookkeeping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Self::REFERENCE),
            "layer" => Ok(Self::LAYER),
            _ => Err(Error::param(format!("bookkeeping must be `reference` or `layer`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    Static,
    /// Sigmoid kernel routing straight from the pooled input.
    CondConv { n: usize },
    /// Softmax kernel attention through a `c_in/4 + 1` bottleneck.
    DyConv { n: usize },
    ODConv {
        n: usize,
        r: f64,
        hidden_floor: usize,
        flags: AttentionFlags,
        share: bool,
        bookkeeping: Bookkeeping,
    },
}

impl Variant {
    /// Four attentions, shared, reduction `r`, hidden floor 16, reference bookkeeping.
    pub fn odconv(n: usize, r: f64) -> Self {
        Variant::ODConv {
            n,
            r,
            hidden_floor: 16,
            flags: AttentionFlags::ALL,
            share: true,
            bookkeeping: Bookkeeping::REFERENCE,
        }
    }

    pub fn kernels(&self) -> usize {
        match *self {
            Variant::Static => 1,
            Variant::CondConv { n } | Variant::DyConv { n } | Variant::ODConv { n, .. } => n,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Static => write!(f, "static"),
            Variant::CondConv { n } => write!(f, "condconv({n}x)"),
            Variant::DyConv { n } => write!(f, "dyconv({n}x)"),
            Variant::ODConv { n, r, flags, share, .. } => {
                write!(f, "odconv({n}x, r={r}, {flags}")?;
                if !share {
                    write!(f, ", unshared")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Which convolutions a dynamic variant replaces. Shortcut-branch
/// convolutions are never replaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Placement {
    AllButFirst,
    All1x1,
    All3x3,
    LastBlocks(usize),
    /// The architecture's own `condconv_blocks` trailing blocks.
    CondConvStyle,
}

impl FromStr for Placement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-but-first" => Ok(Placement::AllButFirst),
            "all-1x1" => Ok(Placement::All1x1),
            "all-3x3" => Ok(Placement::All3x3),
            "condconv-style" => Ok(Placement::CondConvStyle),
            other => other
                .strip_prefix("last-")
                .and_then(|r| r.strip_suffix("-blocks"))
                .and_then(|n| n.parse().ok())
                .map(Placement::LastBlocks)
                .ok_or_else(|| {
                    Error::param(format!(
                        "placement must be all-but-first, all-1x1, all-3x3, last-N-blocks or condconv-style, got `{other}`"
                    ))
                }),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::AllButFirst => write!(f, "all-but-first"),
            Placement::All1x1 => write!(f, "all-1x1"),
            Placement::All3x3 => write!(f, "all-3x3"),
            Placement::LastBlocks(n) => write!(f, "last-{n}-blocks"),
            Placement::CondConvStyle => write!(f, "condconv-style"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCost {
    pub index: usize,
    pub line: usize,
    pub kind: &'static str,
    pub label: String,
    pub dynamic: bool,
    pub params: u64,
    pub madds: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub arch: String,
    pub variant: String,
    pub placement: String,
    pub params: u64,
    pub madds: u64,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn dynamic_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.dynamic).count()
    }
}

/// Indices (into `arch.layers`) of the convolutions `placement` converts.
pub fn converted_layers(arch: &ArchSpec, placement: Placement) -> Vec<usize> {
    let stem = arch.convs().next().map(|(i, _, _)| i);
    let first_block = |n: usize| arch.num_blocks.saturating_sub(n);
    arch.convs()
        .filter(|(i, l, s)| {
            l.branch == Branch::Main
                && Some(*i) != stem
                && match placement {
                    Placement::AllButFirst => true,
                    Placement::All1x1 => s.k == 1,
                    Placement::All3x3 => s.k == 3,
                    Placement::LastBlocks(n) => l.block.is_some_and(|b| b >= first_block(n)),
                    Placement::CondConvStyle => l.block.is_some_and(|b| b >= first_block(arch.condconv_blocks)),
                }
        })
        .map(|(i, _, _)| i)
        .collect()
}

fn odconv_config(s: &ConvSpec, variant: &Variant) -> Result<Option<(ODConvConfig, Bookkeeping)>> {
    let Variant::ODConv {
        n,
        r,
        hidden_floor,
        flags,
        share,
        bookkeeping,
    } = *variant
    else {
        return Ok(None);
    };
    let geom = ConvGeometry::new(s.k, s.stride, s.padding, s.groups)?;
    let cfg = ODConvConfig::new(s.c_in, s.c_out, geom)
        .with_kernels(n)
        .with_reduction(r)
        .with_hidden_floor(hidden_floor)
        .with_flags(flags)
        .with_sharing(share);
    cfg.validate()?;
    Ok(Some((cfg, bookkeeping)))
}

/// `(params, madds)` of one convolution under `variant`, `in_hw` being the
/// input spatial area and `out_hw` the output area.
pub fn conv_cost(s: &ConvSpec, variant: &Variant, in_hw: u64, out_hw: u64) -> Result<(u64, u64)> {
    let w = s.weight_count();
    let (c_in, c_out) = (s.c_in as u64, s.c_out as u64);
    let area = (s.k * s.k) as u64;
    let cpf = s.c_in_per_filter() as u64;
    let conv = out_hw * w;
    let gap = in_hw * c_in;
    Ok(match *variant {
        Variant::Static => (w, conv),
        Variant::CondConv { n } => {
            let n = n as u64;
            (n * w + c_in * n + n, conv + gap + c_in * n + n * w)
        }
        Variant::DyConv { n } => {
            let n = n as u64;
            let hid = c_in / 4 + 1;
            (n * w + c_in * hid + hid * n + n, conv + gap + c_in * hid + hid * n + n * w)
        }
        Variant::ODConv { .. } => {
            let (cfg, book) = odconv_config(s, variant)?.expect("odconv variant");
            let dims = AttentionParams::expected_dims(&cfg);
            let n = cfg.n as u64;
            let hid = cfg.hidden_width() as u64;
            let mut params = n * w;
            let mut madds = conv;
            if dims[0].is_some() {
                let head_rows: u64 = dims[1..].iter().flatten().map(|d| d[0] as u64).sum();
                params += hid * c_in + head_rows * hid;
                if book.head_bias {
                    params += head_rows;
                }
                if book.hidden_bn {
                    params += 2 * hid;
                }
                madds += gap + hid * (c_in + head_rows);
            }
            if dims[0].is_some() || n > 1 {
                madds += if n == 1 {
                    area * cpf * (1 + 2 * c_out)
                } else {
                    area * cpf * (1 + c_out + 2 * n * c_out)
                };
            }
            (params, madds)
        }
    })
}

/// Parameters and multiply-adds of `arch` with `variant` applied at `placement`.
/// Batch-norm layers contribute `2·c` parameters and no multiply-adds; pooling,
/// activations and residual additions contribute nothing.
pub fn analyze(arch: &ArchSpec, variant: &Variant, placement: Placement) -> Result<CostReport> {
    let converted = converted_layers(arch, placement);
    let mut layers = Vec::with_capacity(arch.layers.len());
    for (i, l) in arch.layers.iter().enumerate() {
        let dynamic = converted.contains(&i) && *variant != Variant::Static;
        let [_, ih, iw] = l.input;
        let [oc, oh, ow] = l.output;
        let (params, madds) = match &l.kind {
            LayerKind::Conv(s) => {
                let v = if dynamic { *variant } else { Variant::Static };
                conv_cost(s, &v, (ih * iw) as u64, (oh * ow) as u64)?
            }
            LayerKind::Fc { c_in, c_out, bias } => {
                let w = (c_in * c_out) as u64;
                (w + if *bias { *c_out as u64 } else { 0 }, w)
            }
            LayerKind::Bn => (2 * oc as u64, 0),
            _ => (0, 0),
        };
        layers.push(LayerCost {
            index: i,
            line: l.line,
            kind: l.kind.tag(),
            label: l.to_string(),
            dynamic,
            params,
            madds,
        });
    }
    Ok(CostReport {
        arch: arch.name.clone(),
        variant: variant.to_string(),
        placement: placement.to_string(),
        params: layers.iter().map(|l| l.params).sum(),
        madds: layers.iter().map(|l| l.madds).sum(),
        layers,
    })
}

pub fn count_params(arch: &ArchSpec, variant: &Variant, placement: Placement) -> Result<CostReport> {
    analyze(arch, variant, placement)
}

pub fn count_madds(arch: &ArchSpec, variant: &Variant, placement: Placement) -> Result<CostReport> {
    analyze(arch, variant, placement)
}

fn check_closed_form_args(dims: &[usize], r: f64) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::param("extents, channels, kernel size and n must be positive"));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::param(format!("reduction ratio must lie in (0, 1], got {r}")));
    }
    Ok(())
}

/// Extra multiply-adds of a single-kernel layer over regular convolution:
/// `hw·c_in + c_in·r·(2c_in + c_out + k²) + k²·c_in·(1 + 2c_out)`, rounded to nearest.
pub fn odconv_extra_madds_single(h: usize, w: usize, c_in: usize, c_out: usize, k: usize, r: f64) -> Result<u64> {
    check_closed_form_args(&[h, w, c_in, c_out, k], r)?;
    let (hw, ci, co, a) = ((h * w) as f64, c_in as f64, c_out as f64, (k * k) as f64);
    Ok((hw * ci + ci * r * (2.0 * ci + co + a) + a * ci * (1.0 + 2.0 * co)).round() as u64)
}

/// Extra multiply-adds of an `n`-kernel layer:
/// `hw·c_in + c_in·r·(2c_in + c_out + k² + n) + k²·c_in·(1 + c_out + 2n·c_out)`, rounded to nearest.
pub fn odconv_extra_madds_multi(
    h: usize,
    w: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    r: f64,
    n: usize,
) -> Result<u64> {
    check_closed_form_args(&[h, w, c_in, c_out, k, n], r)?;
    let (hw, ci, co, a, nf) = ((h * w) as f64, c_in as f64, c_out as f64, (k * k) as f64, n as f64);
    Ok((hw * ci + ci * r * (2.0 * ci + co + a + nf) + a * ci * (1.0 + co + 2.0 * nf * co)).round() as u64)
}

/// [`odconv_extra_madds_single`] for `n = 1`, [`odconv_extra_madds_multi`] otherwise.
pub fn odconv_extra_madds(h: usize, w: usize, c_in: usize, c_out: usize, k: usize, r: f64, n: usize) -> Result<u64> {
    if n == 1 {
        odconv_extra_madds_single(h, w, c_in, c_out, k, r)
    } else {
        odconv_extra_madds_multi(h, w, c_in, c_out, k, r, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_closed_forms() {
        assert_eq!(odconv_extra_madds(1, 1, 1, 1, 1, 1.0, 1).unwrap(), 8);
        assert_eq!(odconv_extra_madds(1, 1, 1, 1, 1, 1.0, 2).unwrap(), 13);
        assert!(odconv_extra_madds(0, 1, 1, 1, 1, 1.0, 1).is_err());
        assert!(odconv_extra_madds(1, 1, 1, 1, 1, 1.5, 1).is_err());
    }

    #[test]
    fn multi_at_one_kernel_differs_by_head_and_combine_terms() {
        for (c_in, c_out, k) in [(1, 1, 1), (8, 16, 3), (32, 64, 1)] {
            let a = odconv_extra_madds_multi(7, 7, c_in, c_out, k, 1.0, 1).unwrap() as i64;
            let b = odconv_extra_madds_single(7, 7, c_in, c_out, k, 1.0).unwrap() as i64;
            assert_eq!(a - b, (c_in + k * k * c_in * c_out) as i64);
        }
    }

    #[test]
    fn single_static_conv() {
        let s = ConvSpec {
            c_in: 16,
            c_out: 16,
            k: 3,
            stride: 1,
            padding: 1,
            groups: 1,
        };
        assert_eq!(conv_cost(&s, &Variant::Static, 64, 64).unwrap(), (2304, 2304 * 64));
        let unit = ConvSpec {
            c_in: 1,
            c_out: 1,
            k: 1,
            stride: 1,
            padding: 0,
            groups: 1,
        };
        assert_eq!(conv_cost(&unit, &Variant::Static, 1, 1).unwrap().1, 1);
    }

    #[test]
    fn placement_names_round_trip() {
        for p in ["all-but-first", "all-1x1", "all-3x3", "last-6-blocks", "condconv-style"] {
            assert_eq!(p.parse::<Placement>().unwrap().to_string(), p);
        }
        assert!("last-blocks".parse::<Placement>().is_err());
    }
}
