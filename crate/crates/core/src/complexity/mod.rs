//! Static parameter and multiply-add accounting for whole networks, plus
//! closed-form and instrumented costs of a single dynamic layer.
//!
//! Multiply-adds count convolutions, fully connected layers and the
//! attention modules of dynamic layers. Batch normalisation contributes
//! parameters only.

mod arch;
mod cost;
mod instrumented;

pub use arch::{ArchSpec, Branch, ConvSpec, Extent, LayerDescriptor, LayerKind, PoolMode, ZOO};
pub use cost::{
    analyze, conv_cost, converted_layers, count_madds, count_params, odconv_extra_madds,
    odconv_extra_madds_multi, odconv_extra_madds_single, Bookkeeping, CostReport, LayerCost,
    Placement, Variant,
};
pub use instrumented::{instrumented_forward, OpCount};
