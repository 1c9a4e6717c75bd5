//! Central-difference check of a full layer against the tape gradients.

use odconv::nn::ConvGeometry;
use odconv::odconv::{AttentionFlags, ODConvConfig, ODConvLayer, SpatialActivation};
use odconv::verify::layer_gradcheck;
use odconv::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> odconv::Result<()> {
    for (label, share, act) in [
        ("shared, sigmoid spatial", true, SpatialActivation::Sigmoid),
        ("unshared, softmax spatial", false, SpatialActivation::Softmax),
    ] {
        let cfg = ODConvConfig::new(3, 4, ConvGeometry::same(3))
            .with_kernels(4)
            .with_flags(AttentionFlags::ALL)
            .with_reduction(1.0)
            .with_hidden_floor(4)
            .with_sharing(share)
            .with_spatial_activation(act);
        let layer = ODConvLayer::init_random_heads(cfg, 3, 0.8)?;
        let x = Tensor::uniform(&[2, 3, 5, 5], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(4))?;
        println!("{label}");
        for (group, r) in layer_gradcheck(&layer, &x, 2.0, 1e-5)? {
            println!("  {group:<22} {:.2e}", r.max_rel_error);
        }
    }
    Ok(())
}
