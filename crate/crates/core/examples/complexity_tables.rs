//! Parameter and multiply-add counts for the bundled architectures.

use odconv::complexity::{analyze, ArchSpec, Placement, Variant, ZOO};

fn main() -> odconv::Result<()> {
    let r = 1.0 / 16.0;
    let variants = [
        Variant::Static,
        Variant::odconv(1, r),
        Variant::odconv(2, r),
        Variant::odconv(4, r),
        Variant::DyConv { n: 4 },
    ];
    println!("{:<18} {:<26} {:>10} {:>10}", "arch", "variant", "params", "MAdds");
    for (name, _) in ZOO {
        let arch = ArchSpec::zoo(name)?;
        for v in &variants {
            let rep = analyze(&arch, v, Placement::AllButFirst)?;
            println!("{name:<18} {:<26} {:>9.3}M {:>9.4}G", v.to_string(), rep.params as f64 / 1e6, rep.madds as f64 / 1e9);
        }
    }

    let arch = ArchSpec::zoo("resnet18")?;
    let cc = analyze(&arch, &Variant::CondConv { n: 8 }, Placement::CondConvStyle)?;
    println!("resnet18 condconv(8x) last blocks: {:.2}M, {} dynamic layers", cc.params as f64 / 1e6, cc.dynamic_layers());
    Ok(())
}
