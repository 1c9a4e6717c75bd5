//! Line-oriented architecture descriptions. See `docs/formats.md` for the grammar.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn c_in_per_filter(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn weight_count(&self) -> u64 {
        (self.c_out * self.c_in_per_filter() * self.k * self.k) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv(ConvSpec),
    Fc { c_in: usize, c_out: usize, bias: bool },
    Bn,
    Pool { mode: PoolMode, k: usize, stride: usize, padding: usize, global: bool },
    Add,
    Activation { name: String },
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "conv",
            LayerKind::Fc { .. } => "fc",
            LayerKind::Bn => "bn",
            LayerKind::Pool { .. } => "pool",
            LayerKind::Add => "add",
            LayerKind::Activation { .. } => "activation",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    #[default]
    Main,
    Shortcut,
}

/// Activation extents `[c, h, w]`.
pub type Extent = [usize; 3];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerDescriptor {
    pub kind: LayerKind,
    pub branch: Branch,
    /// Index of the enclosing residual block, if any.
    pub block: Option<usize>,
    pub input: Extent,
    pub output: Extent,
    /// Source line, 1-based.
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchSpec {
    pub name: String,
    pub input: Extent,
    /// Number of trailing blocks converted under the `condconv-style` placement.
    pub condconv_blocks: usize,
    pub num_blocks: usize,
    pub layers: Vec<LayerDescriptor>,
}

/// Bundled architectures, by name.
pub const ZOO: [(&str, &str); 6] = [
    ("resnet18", include_str!("../../zoo/resnet18.arch")),
    ("resnet50", include_str!("../../zoo/resnet50.arch")),
    ("resnet101", include_str!("../../zoo/resnet101.arch")),
    ("mobilenetv2-1.0", include_str!("../../zoo/mobilenetv2-1.0.arch")),
    ("mobilenetv2-0.75", include_str!("../../zoo/mobilenetv2-0.75.arch")),
    ("mobilenetv2-0.5", include_str!("../../zoo/mobilenetv2-0.5.arch")),
];

fn spec_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Spec { line, msg: msg.into() }
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
    flags: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, words: &[&'a str]) -> Self {
        let mut pairs = Vec::new();
        let mut flags = Vec::new();
        for w in words {
            match w.split_once('=') {
                Some((k, v)) => pairs.push((k, v)),
                None => flags.push(*w),
            }
        }
        Fields { line, pairs, flags }
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        let i = self.pairs.iter().position(|(k, _)| *k == key)?;
        Some(self.pairs.remove(i).1)
    }

    fn num(&mut self, key: &str, default: Option<usize>) -> Result<usize> {
        match (self.take(key), default) {
            (Some(v), _) => v
                .parse()
                .map_err(|_| spec_err(self.line, format!("`{key}` expects an integer, got `{v}`"))),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(spec_err(self.line, format!("missing `{key}=`"))),
        }
    }

    fn flag(&mut self, name: &str) -> bool {
        match self.flags.iter().position(|f| *f == name) {
            Some(i) => {
                self.flags.remove(i);
                true
            }
            None => false,
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((k, _)) = self.pairs.first() {
            return Err(spec_err(self.line, format!("unknown key `{k}`")));
        }
        if let Some(f) = self.flags.first() {
            return Err(spec_err(self.line, format!("unknown flag `{f}`")));
        }
        Ok(())
    }
}

fn out_extent(line: usize, input: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || k == 0 || padded < k {
        return Err(spec_err(line, format!("window {k} / stride {stride} does not fit extent {input}")));
    }
    Ok((padded - k) / stride + 1)
}

struct Builder {
    layers: Vec<LayerDescriptor>,
    main: Extent,
    block: Option<(usize, Extent, Option<Extent>)>,
    blocks: usize,
}

impl Builder {
    fn push(&mut self, line: usize, kind: LayerKind, branch: Branch) -> Result<()> {
        let block = self.block.map(|b| b.0);
        let input = match branch {
            Branch::Main => self.main,
            Branch::Shortcut => match self.block {
                None => return Err(spec_err(line, "`branch=shortcut` outside a block")),
                Some((_, start, sc)) => sc.unwrap_or(start),
            },
        };
        let [c, h, w] = input;
        let output = match &kind {
            LayerKind::Conv(s) => {
                if s.c_in != c {
                    return Err(spec_err(line, format!("conv expects c_in={} but receives {c} channels", s.c_in)));
                }
                if s.groups == 0 || s.c_in % s.groups != 0 || s.c_out % s.groups != 0 {
                    return Err(spec_err(line, format!("groups={} must divide c_in and c_out", s.groups)));
                }
                [
                    s.c_out,
                    out_extent(line, h, s.k, s.stride, s.padding)?,
                    out_extent(line, w, s.k, s.stride, s.padding)?,
                ]
            }
            LayerKind::Fc { c_in, c_out, .. } => {
                if *c_in != c * h * w {
                    return Err(spec_err(line, format!("fc expects {c_in} inputs but receives {}", c * h * w)));
                }
                [*c_out, 1, 1]
            }
            LayerKind::Pool { global: true, .. } => [c, 1, 1],
            LayerKind::Pool { k, stride, padding, .. } => [
                c,
                out_extent(line, h, *k, *stride, *padding)?,
                out_extent(line, w, *k, *stride, *padding)?,
            ],
            LayerKind::Add => {
                let Some((_, start, sc)) = self.block else {
                    return Err(spec_err(line, "`add` outside a block"));
                };
                let other = sc.unwrap_or(start);
                if other != input {
                    return Err(spec_err(
                        line,
                        format!("residual add of {input:?} and shortcut {other:?}"),
                    ));
                }
                input
            }
            LayerKind::Bn | LayerKind::Activation { .. } => input,
        };
        match branch {
            Branch::Main => self.main = output,
            Branch::Shortcut => {
                if let Some(b) = self.block.as_mut() {
                    b.2 = Some(output);
                }
            }
        }
        self.layers.push(LayerDescriptor {
            kind,
            branch,
            block,
            input,
            output,
            line,
        });
        Ok(())
    }
}

fn parse_layer(line: usize, head: &str, rest: &[&str]) -> Result<Option<(LayerKind, Branch)>> {
    let mut f = Fields::parse(line, rest);
    let branch = match f.take("branch") {
        None | Some("main") => Branch::Main,
        Some("shortcut") => Branch::Shortcut,
        Some(other) => return Err(spec_err(line, format!("unknown branch `{other}`"))),
    };
    let kind = match head {
        "conv" => LayerKind::Conv(ConvSpec {
            c_in: f.num("c_in", None)?,
            c_out: f.num("c_out", None)?,
            k: f.num("k", None)?,
            stride: f.num("stride", Some(1))?,
            padding: f.num("padding", Some(0))?,
            groups: f.num("groups", Some(1))?,
        }),
        "fc" => LayerKind::Fc {
            c_in: f.num("c_in", None)?,
            c_out: f.num("c_out", None)?,
            bias: f.flag("bias"),
        },
        "bn" => LayerKind::Bn,
        "add" => LayerKind::Add,
        "gap" => LayerKind::Pool {
            mode: PoolMode::Avg,
            k: 0,
            stride: 0,
            padding: 0,
            global: true,
        },
        "pool" => {
            let mode = match f.take("mode") {
                Some("max") => PoolMode::Max,
                Some("avg") => PoolMode::Avg,
                other => return Err(spec_err(line, format!("pool mode must be max or avg, got {other:?}"))),
            };
            let k = f.num("k", None)?;
            LayerKind::Pool {
                mode,
                k,
                stride: f.num("stride", Some(k))?,
                padding: f.num("padding", Some(0))?,
                global: false,
            }
        }
        "activation" => {
            let name = match f.flags.first() {
                Some(n) => n.to_string(),
                None => return Err(spec_err(line, "activation needs a name")),
            };
            f.flags.remove(0);
            LayerKind::Activation { name }
        }
        _ => return Ok(None),
    };
    f.finish()?;
    Ok(Some((kind, branch)))
}

impl ArchSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut input = None;
        let mut condconv_blocks = 0;
        let mut b = Builder {
            layers: Vec::new(),
            main: [0; 3],
            block: None,
            blocks: 0,
        };
        // (repeat count, first source line, body lines) of the open block.
        let mut open: Option<(usize, usize, Vec<(usize, String)>)> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            match words[0] {
                "name" if open.is_none() => {
                    name = Some(words[1..].join(" "));
                }
                "input" if open.is_none() => {
                    let dims: Vec<usize> = words[1..]
                        .iter()
                        .map(|w| w.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| spec_err(line, "input expects three integers"))?;
                    let [c, h, w] = dims[..] else {
                        return Err(spec_err(line, "input expects `input C H W`"));
                    };
                    if c == 0 || h == 0 || w == 0 || !b.layers.is_empty() {
                        return Err(spec_err(line, "input must be positive and precede every layer"));
                    }
                    input = Some([c, h, w]);
                    b.main = [c, h, w];
                }
                "condconv_blocks" if open.is_none() => {
                    condconv_blocks = words
                        .get(1)
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| spec_err(line, "condconv_blocks expects an integer"))?;
                }
                "block" => {
                    if open.is_some() {
                        return Err(spec_err(line, "blocks do not nest"));
                    }
                    let mut f = Fields::parse(line, &words[1..]);
                    let repeat = f.num("repeat", Some(1))?;
                    f.finish()?;
                    if repeat == 0 {
                        return Err(spec_err(line, "repeat must be at least 1"));
                    }
                    open = Some((repeat, line, Vec::new()));
                }
                "end" => {
                    let Some((repeat, _, body)) = open.take() else {
                        return Err(spec_err(line, "`end` without `block`"));
                    };
                    for _ in 0..repeat {
                        b.block = Some((b.blocks, b.main, None));
                        for (l, text) in &body {
                            let words: Vec<&str> = text.split_whitespace().collect();
                            let (kind, branch) = parse_layer(*l, words[0], &words[1..])?
                                .ok_or_else(|| spec_err(*l, format!("unknown layer `{}`", words[0])))?;
                            b.push(*l, kind, branch)?;
                        }
                        b.block = None;
                        b.blocks += 1;
                    }
                }
                head => {
                    if input.is_none() {
                        return Err(spec_err(line, "`input C H W` must precede the first layer"));
                    }
                    match &mut open {
                        Some((_, _, body)) => {
                            parse_layer(line, head, &words[1..])?
                                .ok_or_else(|| spec_err(line, format!("unknown layer `{head}`")))?;
                            body.push((line, content.to_string()));
                        }
                        None => {
                            let (kind, branch) = parse_layer(line, head, &words[1..])?
                                .ok_or_else(|| spec_err(line, format!("unknown directive `{head}`")))?;
                            b.push(line, kind, branch)?;
                        }
                    }
                }
            }
        }
        if let Some((_, l, _)) = open {
            return Err(spec_err(l, "block is never closed"));
        }
        let input = input.ok_or_else(|| spec_err(0, "missing `input C H W`"))?;
        if b.layers.is_empty() {
            return Err(spec_err(0, "architecture has no layers"));
        }
        Ok(ArchSpec {
            name: name.unwrap_or_else(|| "unnamed".into()),
            input,
            condconv_blocks,
            num_blocks: b.blocks,
            layers: b.layers,
        })
    }

    pub fn zoo(name: &str) -> Result<Self> {
        let (_, text) = ZOO
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::param(format!("unknown architecture `{name}` (known: {})", zoo_names())))?;
        Self::parse(text)
    }

    /// A zoo name or a path to an architecture file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if ZOO.iter().any(|(n, _)| *n == name_or_path) {
            return Self::zoo(name_or_path);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::parse(&std::fs::read_to_string(path)?);
        }
        Self::zoo(name_or_path)
    }

    pub fn convs(&self) -> impl Iterator<Item = (usize, &LayerDescriptor, &ConvSpec)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| match &l.kind {
            LayerKind::Conv(s) => Some((i, l, s)),
            _ => None,
        })
    }
}

fn zoo_names() -> String {
    ZOO.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for LayerDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            LayerKind::Conv(s) => write!(
                f,
                "conv{k}x{k} {}->{} s{}{}",
                s.c_in,
                s.c_out,
                s.stride,
                if s.groups > 1 { format!(" g{}", s.groups) } else { String::new() },
                k = s.k
            )?,
            LayerKind::Fc { c_in, c_out, .. } => write!(f, "fc {c_in}->{c_out}")?,
            other => write!(f, "{}", other.tag())?,
        }
        if self.branch == Branch::Shortcut {
            write!(f, " (shortcut)")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoo_files_parse_and_chain() {
        for (name, _) in ZOO {
            let a = ArchSpec::zoo(name).unwrap();
            assert_eq!(a.name, name);
            assert_eq!(a.layers.last().unwrap().output, [1000, 1, 1]);
        }
        assert_eq!(ArchSpec::zoo("resnet18").unwrap().num_blocks, 8);
        assert_eq!(ArchSpec::zoo("mobilenetv2-1.0").unwrap().num_blocks, 17);
    }

    #[test]
    fn repeat_expands_blocks() {
        let a = ArchSpec::parse(
            "input 4 8 8\nblock repeat=3\n conv c_in=4 c_out=4 k=3 padding=1\n add\nend\n",
        )
        .unwrap();
        assert_eq!(a.num_blocks, 3);
        assert_eq!(a.layers.len(), 6);
        assert_eq!(a.layers[4].block, Some(2));
    }

    #[test]
    fn chaining_errors_carry_line_numbers() {
        let err = ArchSpec::parse("input 3 8 8\nconv c_in=3 c_out=4 k=3\nconv c_in=5 c_out=4 k=1\n").unwrap_err();
        assert!(matches!(err, Error::Spec { line: 3, .. }), "{err}");
        let err = ArchSpec::parse("input 3 8 8\nblock\nconv c_in=3 c_out=4 k=1\nadd\nend\n").unwrap_err();
        assert!(matches!(err, Error::Spec { line: 4, .. }), "{err}");
        let err = ArchSpec::parse("input 3 8 8\nconv c_in=3 c_out=4 k=1 dilation=2\n").unwrap_err();
        assert!(matches!(err, Error::Spec { line: 2, .. }), "{err}");
        assert!(ArchSpec::parse("input 3 8 8\nblock\n").is_err());
        assert!(ArchSpec::parse("conv c_in=3 c_out=4 k=1\n").is_err());
    }
}
