use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::ConvGeometry;

/// Which of the four kernel-space attentions are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AttentionFlags {
    pub spatial: bool,
    pub in_channel: bool,
    pub filter: bool,
    pub kernel: bool,
}

impl AttentionFlags {
    pub const ALL: AttentionFlags = AttentionFlags {
        spatial: true,
        in_channel: true,
        filter: true,
        kernel: true,
    };

    pub const NONE: AttentionFlags = AttentionFlags {
        spatial: false,
        in_channel: false,
        filter: false,
        kernel: false,
    };

    pub const KERNEL_ONLY: AttentionFlags = AttentionFlags {
        kernel: true,
        ..AttentionFlags::NONE
    };

    pub const FILTER_ONLY: AttentionFlags = AttentionFlags {
        filter: true,
        ..AttentionFlags::NONE
    };

    pub fn any(&self) -> bool {
        self.spatial || self.in_channel || self.filter || self.kernel
    }
}

impl Default for AttentionFlags {
    fn default() -> Self {
        AttentionFlags::ALL
    }
}

/// Parses `all`, `none`, or any subset of the letters `s`, `c`, `f`, `w`
/// (spatial, input channel, filter, kernel), e.g. `scf`.
impl FromStr for AttentionFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => return Ok(AttentionFlags::ALL),
            "none" | "" => return Ok(AttentionFlags::NONE),
            _ => {}
        }
        let mut flags = AttentionFlags::NONE;
        for ch in s.trim().chars() {
            let slot = match ch {
                's' => &mut flags.spatial,
                'c' => &mut flags.in_channel,
                'f' => &mut flags.filter,
                'w' => &mut flags.kernel,
                ',' => continue,
                other => {
                    return Err(Error::param(format!(
                        "unknown attention flag `{other}` (expected letters from `scfw`, `all` or `none`)"
                    )))
                }
            };
            *slot = true;
        }
        Ok(flags)
    }
}

impl fmt::Display for AttentionFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.any() {
            return f.write_str("none");
        }
        for (on, ch) in [
            (self.spatial, 's'),
            (self.in_channel, 'c'),
            (self.filter, 'f'),
            (self.kernel, 'w'),
        ] {
            if on {
                write!(f, "{ch}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SpatialActivation {
    #[default]
    Sigmoid,
    Softmax,
}

impl FromStr for SpatialActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(SpatialActivation::Sigmoid),
            "softmax" => Ok(SpatialActivation::Softmax),
            other => Err(Error::param(format!("unknown spatial activation `{other}`"))),
        }
    }
}

impl fmt::Display for SpatialActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpatialActivation::Sigmoid => "sigmoid",
            SpatialActivation::Softmax => "softmax",
        })
    }
}

/// Linear temperature annealing for the kernel softmax:
/// `T(e) = start + (end - start) * min(e, warmup) / warmup`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
    pub warmup_epochs: usize,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            start: 30.0,
            end: 1.0,
            warmup_epochs: 10,
        }
    }
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.end > 0.0) || !self.start.is_finite() || !self.end.is_finite() {
            return Err(Error::param(format!(
                "temperatures must be positive and finite (start {}, end {})",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn at(&self, epoch: usize) -> f64 {
        if self.warmup_epochs == 0 {
            return self.end;
        }
        let e = epoch.min(self.warmup_epochs) as f64;
        self.start + (self.end - self.start) * e / self.warmup_epochs as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TemperatureSource {
    Fixed(f64),
    Schedule(TemperatureSchedule),
}

impl Default for TemperatureSource {
    fn default() -> Self {
        TemperatureSource::Schedule(TemperatureSchedule::default())
    }
}

impl TemperatureSource {
    pub fn at(&self, epoch: usize) -> f64 {
        match self {
            TemperatureSource::Fixed(t) => *t,
            TemperatureSource::Schedule(s) => s.at(epoch),
        }
    }

    /// Temperature used outside training.
    pub fn inference(&self) -> f64 {
        match self {
            TemperatureSource::Fixed(t) => *t,
            TemperatureSource::Schedule(s) => s.end,
        }
    }
}

/// Hyperparameters of one omni-dimensional dynamic convolution layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ODConvConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub geom: ConvGeometry,
    /// Number of candidate kernels.
    pub n: usize,
    /// Reduction ratio of the attention trunk, in `(0, 1]`.
    pub r: f64,
    /// Lower bound on the trunk's hidden width.
    pub hidden_floor: usize,
    pub flags: AttentionFlags,
    pub share_attentions: bool,
    pub spatial_activation: SpatialActivation,
    pub temperature: TemperatureSource,
}

impl ODConvConfig {
    /// All four attentions, `n = 1`, `r = 1/16`, hidden floor 16, shared heads.
    pub fn new(c_in: usize, c_out: usize, geom: ConvGeometry) -> Self {
        ODConvConfig {
            c_in,
            c_out,
            geom,
            n: 1,
            r: 1.0 / 16.0,
            hidden_floor: 16,
            flags: AttentionFlags::ALL,
            share_attentions: true,
            spatial_activation: SpatialActivation::Sigmoid,
            temperature: TemperatureSource::default(),
        }
    }

    pub fn with_kernels(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_reduction(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    pub fn with_hidden_floor(mut self, floor: usize) -> Self {
        self.hidden_floor = floor;
        self
    }

    pub fn with_flags(mut self, flags: AttentionFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn with_sharing(mut self, share: bool) -> Self {
        self.share_attentions = share;
        self
    }

    pub fn with_spatial_activation(mut self, act: SpatialActivation) -> Self {
        self.spatial_activation = act;
        self
    }

    pub fn with_temperature(mut self, source: TemperatureSource) -> Self {
        self.temperature = source;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 {
            return Err(Error::param("channel counts must be positive"));
        }
        if self.n == 0 {
            return Err(Error::param("kernel count n must be at least 1"));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::param(format!("reduction ratio r must lie in (0, 1], got {}", self.r)));
        }
        self.geom.check_channels(self.c_in, self.c_out)?;
        match self.temperature {
            TemperatureSource::Fixed(t) if !(t > 0.0) || !t.is_finite() => {
                return Err(Error::param(format!("fixed temperature must be positive, got {t}")))
            }
            TemperatureSource::Schedule(s) => s.validate()?,
            _ => {}
        }
        Ok(())
    }

    /// `max(round(c_in * r), hidden_floor)`, at least 1.
    pub fn hidden_width(&self) -> usize {
        ((self.c_in as f64 * self.r).round() as usize).max(self.hidden_floor).max(1)
    }

    pub fn c_in_per_filter(&self) -> usize {
        self.c_in / self.geom.groups
    }

    pub fn kernel_area(&self) -> usize {
        self.geom.k * self.geom.k
    }

    /// Number of independent attention copies for the spatial, channel and
    /// filter heads: one when shared, `n` otherwise.
    pub fn head_copies(&self) -> usize {
        if self.share_attentions {
            1
        } else {
            self.n
        }
    }

    // A head whose output would have a single entry is replaced by the constant 1.

    pub fn has_spatial_head(&self) -> bool {
        self.flags.spatial && self.geom.k > 1
    }

    pub fn has_in_channel_head(&self) -> bool {
        self.flags.in_channel && self.c_in_per_filter() > 1
    }

    pub fn has_filter_head(&self) -> bool {
        self.flags.filter
    }

    pub fn has_kernel_head(&self) -> bool {
        self.flags.kernel && self.n > 1
    }

    pub fn kernel_dims(&self) -> [usize; 5] {
        [self.n, self.c_out, self.c_in_per_filter(), self.geom.k, self.geom.k]
    }

    /// Stable textual description used for topology digests.
    pub fn describe(&self) -> String {
        let temp = match self.temperature {
            TemperatureSource::Fixed(t) => format!("fixed:{t}"),
            TemperatureSource::Schedule(s) => format!("anneal:{}:{}:{}", s.start, s.end, s.warmup_epochs),
        };
        format!(
            "odconv c_in={} c_out={} k={} stride={} padding={} groups={} n={} r={} floor={} flags={} share={} spatial={} temp={}",
            self.c_in,
            self.c_out,
            self.geom.k,
            self.geom.stride,
            self.geom.padding,
            self.geom.groups,
            self.n,
            self.r,
            self.hidden_floor,
            self.flags,
            self.share_attentions,
            self.spatial_activation,
            temp
        )
    }
}

/// Parses a ratio written as a decimal (`0.0625`) or a fraction (`1/16`).
pub fn parse_ratio(text: &str) -> Result<f64> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| Error::param(format!("bad ratio `{text}`")))?;
            let den: f64 = den.trim().parse().map_err(|_| Error::param(format!("bad ratio `{text}`")))?;
            if den == 0.0 {
                return Err(Error::param(format!("bad ratio `{text}`: zero denominator")));
            }
            num / den
        }
        None => text.parse().map_err(|_| Error::param(format!("bad ratio `{text}`")))?,
    };
    if !(value > 0.0 && value <= 1.0) {
        return Err(Error::param(format!("reduction ratio must lie in (0, 1], got {text}")));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = TemperatureSchedule::default();
        assert_eq!(s.at(0), 30.0);
        assert_eq!(s.at(5), 15.5);
        assert_eq!(s.at(10), 1.0);
        assert_eq!(s.at(11), 1.0);
        assert_eq!(s.at(1000), 1.0);
    }

    #[test]
    fn flags_round_trip_text() {
        for text in ["none", "s", "cf", "scfw", "sw"] {
            let f: AttentionFlags = text.parse().unwrap();
            assert_eq!(f.to_string(), text);
        }
        assert_eq!("all".parse::<AttentionFlags>().unwrap(), AttentionFlags::ALL);
        assert!("sx".parse::<AttentionFlags>().is_err());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratio("1/16").unwrap(), 0.0625);
        assert_eq!(parse_ratio("0.25").unwrap(), 0.25);
        assert!(parse_ratio("2.0").is_err());
        assert!(parse_ratio("0").is_err());
        assert!(parse_ratio("1/0").is_err());
    }

    #[test]
    fn hidden_width_floor() {
        let cfg = ODConvConfig::new(64, 64, ConvGeometry::same(3));
        assert_eq!(cfg.hidden_width(), 16);
        assert_eq!(cfg.with_hidden_floor(1).hidden_width(), 4);
        let wide = ODConvConfig::new(512, 512, ConvGeometry::same(3));
        assert_eq!(wide.hidden_width(), 32);
    }

    #[test]
    fn validation() {
        let base = ODConvConfig::new(4, 4, ConvGeometry::same(3));
        assert!(base.validate().is_ok());
        assert!(base.with_reduction(2.0).validate().is_err());
        assert!(base.with_kernels(0).validate().is_err());
        let grouped = ODConvConfig::new(4, 6, ConvGeometry::new(3, 1, 1, 4).unwrap());
        assert!(grouped.validate().is_err());
    }
}
