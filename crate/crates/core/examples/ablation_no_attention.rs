//! Exploratory: does the gain survive without the attention? Trains a static
//! model, ODConv(4x) and a four-kernel model whose attentions are all
//! disabled (the kernels are simply summed) on several seeds. Nothing here is
//! asserted; toy-scale differences are within seed noise.

use odconv::odconv::AttentionFlags;
use odconv::training::{train, DynamicSpec, TrainConfig};

fn main() -> odconv::Result<()> {
    let seeds: Vec<u64> = (1..=5).collect();
    let arms: [(&str, Option<DynamicSpec>); 3] = [
        ("static", None),
        ("odconv 4x", Some(DynamicSpec::new(4))),
        ("4 kernels, no attention", Some(DynamicSpec { flags: AttentionFlags::NONE, ..DynamicSpec::new(4) })),
    ];
    for (name, dynamic) in arms {
        let mut accs = Vec::new();
        for &seed in &seeds {
            let mut cfg = TrainConfig::default().with_seed(seed);
            cfg.model.dynamic = dynamic;
            let (tr, ev) = cfg.datasets()?;
            let mut model = cfg.build_model()?;
            let mut state = cfg.options.optimizer()?;
            let rec = train(&mut model, &tr, &ev, &cfg.options, &mut state)?;
            accs.push(rec.last().map_or(0.0, |e| e.eval_acc));
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{name:<24} mean eval {mean:.3}  per seed {accs:.3?}");
    }
    Ok(())
}
