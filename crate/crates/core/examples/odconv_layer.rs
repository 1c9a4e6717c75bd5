//! Build a four-attention layer, inspect its attentions and run a forward pass.

use odconv::nn::ConvGeometry;
use odconv::odconv::{ODConvConfig, ODConvLayer};
use odconv::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> odconv::Result<()> {
    let cfg = ODConvConfig::new(16, 32, ConvGeometry::same(3))
        .with_kernels(4)
        .with_reduction(1.0 / 16.0);
    // Random heads so the attentions actually vary with the input.
    let layer = ODConvLayer::init_random_heads(cfg, 7, 0.5)?;
    println!("{}", cfg.describe());
    println!("hidden width {}, {} parameters", cfg.hidden_width(), layer.num_params());

    let x = Tensor::uniform(&[2, 16, 12, 12], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1))?;
    let att = layer.attention(&x, 1.0)?;
    println!("alpha_s {:?}  alpha_c {:?}  alpha_f {:?}  alpha_w {:?}",
        att.alpha_s.dims(), att.alpha_c.dims(), att.alpha_f.dims(), att.alpha_w.dims());
    for (b, row) in att.alpha_w.data().chunks(4).enumerate() {
        println!("sample {b} kernel weights {row:.3?}");
    }

    let y = layer.forward(&x, 1.0)?;
    println!("output {:?}", y.dims());

    // Hot softmax at the start of training flattens the kernel mixture.
    let hot = layer.attention(&x, 30.0)?;
    println!("T=30 kernel weights {:.3?}", &hot.alpha_w.data()[..4]);
    Ok(())
}
