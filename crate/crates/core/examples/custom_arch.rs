//! Account for a user-written architecture and print its per-layer breakdown.

use odconv::complexity::{analyze, ArchSpec, Placement, Variant};

const TINY: &str = "
name tiny-net
input 3 32 32
condconv_blocks 1

conv c_in=3 c_out=16 k=3 stride=1 padding=1
bn
activation relu
block repeat=2
  conv c_in=16 c_out=16 k=3 stride=1 padding=1
  bn
  activation relu
end
block
  conv c_in=16 c_out=32 k=3 stride=2 padding=1
  bn
  conv c_in=16 c_out=32 k=1 stride=2 padding=0 branch=shortcut
  bn branch=shortcut
  add
end
gap
fc c_in=32 c_out=10 bias
";

fn main() -> odconv::Result<()> {
    let arch = ArchSpec::parse(TINY)?;
    for variant in [Variant::Static, Variant::odconv(4, 0.25)] {
        let rep = analyze(&arch, &variant, Placement::AllButFirst)?;
        println!("{variant}: {} params, {} MAdds", rep.params, rep.madds);
        for l in rep.layers.iter().filter(|l| l.params > 0) {
            println!("  {} {:<55} {:>7} {:>9}", if l.dynamic { '*' } else { ' ' }, l.label, l.params, l.madds);
        }
    }
    if let Err(e) = ArchSpec::parse("input 3 8 8\nconv c_in=4 c_out=8 k=3 stride=1 padding=1\n") {
        println!("channel mismatch is reported: {e}");
    }
    Ok(())
}
