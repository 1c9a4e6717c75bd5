//! The tape engine on its own: a tiny convolution + dense network and its gradients.

use odconv::autodiff::{finite_diff_check, Tape};
use odconv::nn::ConvGeometry;
use odconv::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> odconv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::uniform(&[2, 1, 6, 6], -1.0, 1.0, &mut rng)?;
    let k = Tensor::uniform(&[3, 1, 3, 3], -0.5, 0.5, &mut rng)?;
    let fc = Tensor::uniform(&[2, 3], -0.5, 0.5, &mut rng)?;

    let tape = Tape::new();
    let (xv, kv, fv) = (tape.constant(x.clone()), tape.leaf(k.clone()), tape.leaf(fc.clone()));
    let logits = xv.conv2d(kv, ConvGeometry::same(3))?.relu()?.global_average_pool()?.fully_connected(fv)?;
    let loss = logits.cross_entropy(&[0, 1])?;
    let grads = tape.backward(loss)?;
    println!("loss {:.6}, {} nodes on the tape", loss.value().item()?, tape.len());
    println!("d loss / d kernel[0] = {:.4?}", &grads.wrt(kv).data()[..9]);

    let err = finite_diff_check(|t, w| {
        let fc = t.constant(fc.clone());
        t.constant(x.clone()).conv2d(w, ConvGeometry::same(3))?.sigmoid()?.global_average_pool()?.fully_connected(fc)?.cross_entropy(&[0, 1])
    }, &k, 1e-5)?;
    println!("finite-difference max relative error {err:.2e}");
    Ok(())
}
