//! Closed-form extra multiply-adds against an instrumented forward pass.

use odconv::complexity::{instrumented_forward, odconv_extra_madds, odconv_extra_madds_multi, odconv_extra_madds_single};
use odconv::nn::ConvGeometry;
use odconv::odconv::{ODConvConfig, ODConvLayer};
use odconv::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> odconv::Result<()> {
    let (h, w, c_in, c_out, k) = (8, 8, 4, 6, 3);
    println!("n  counted-extra  closed-form  (pool, attention, combine)");
    for n in [1, 2, 4, 8] {
        let cfg = ODConvConfig::new(c_in, c_out, ConvGeometry::same(k))
            .with_kernels(n)
            .with_reduction(1.0)
            .with_hidden_floor(1);
        let layer = ODConvLayer::init(cfg, 1)?;
        let x = Tensor::uniform(&[1, c_in, h, w], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2))?;
        let (_, ops) = instrumented_forward(&layer, &x, 1.0)?;
        let closed = odconv_extra_madds(h, w, c_in, c_out, k, 1.0, n)?;
        println!("{n}  {:>13}  {closed:>11}  ({}, {}, {})", ops.extra(), ops.pool, ops.attention, ops.combine);
    }
    // The multi-kernel form evaluated at n = 1 is not the single-kernel form.
    let single = odconv_extra_madds_single(h, w, c_in, c_out, k, 1.0)?;
    let multi = odconv_extra_madds_multi(h, w, c_in, c_out, k, 1.0, 1)?;
    println!("n=1: single {single}, multi {multi}, difference {}", multi - single);
    Ok(())
}
