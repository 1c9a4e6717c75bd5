//! Omni-dimensional dynamic convolution.
//!
//! A layer holds `n` candidate kernels and a small attention module. For each
//! input sample the module produces four attentions: over the `k × k`
//! spatial positions, the input channels, the output filters and the kernel
//! index. They are multiplied into the kernels, the results are summed into a
//! single effective kernel, and the sample is convolved once with it.
//!
//! Regular convolution, kernel-only dynamic convolution and an input-conditioned
//! filter gate fall out as special configurations of [`ODConvConfig`].

mod combine;
mod config;
mod layer;

pub use combine::{CombineDims, CombineKernels};
pub use config::{
    parse_ratio, AttentionFlags, ODConvConfig, SpatialActivation, TemperatureSchedule,
    TemperatureSource,
};
pub use layer::{
    attention_forward, attention_on_tape, combine_kernels, init_layer, odconv_forward,
    odconv_on_tape, AttentionParams, AttentionSet, AttentionVars, KernelSet, LayerVars,
    ODConvLayer,
};
