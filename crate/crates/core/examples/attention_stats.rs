//! Attention distributions before and after a short training run.

use odconv::training::{collect_attention_stats, train, Model, TrainConfig};

fn report(model: &Model, cfg: &TrainConfig) -> odconv::Result<()> {
    let (_, eval) = cfg.datasets()?;
    for layer in collect_attention_stats(model, &eval, 1.0, 32)? {
        for s in layer.all().into_iter().filter(|s| s.enabled) {
            println!("  layer {} {:<10} mean {:.3} std {:.3} hist {:?}", layer.layer, s.kind, s.mean, s.std, s.histogram);
        }
        println!("  layer {} kernel means {:.3?}", layer.layer, layer.kernel.per_index_mean);
    }
    Ok(())
}

fn main() -> odconv::Result<()> {
    let mut cfg = TrainConfig::default().with_seed(2);
    cfg.options.epochs = 6;
    let mut model = cfg.build_model()?;
    println!("fresh");
    report(&model, &cfg)?;

    let (tr, ev) = cfg.datasets()?;
    let mut state = cfg.options.optimizer()?;
    train(&mut model, &tr, &ev, &cfg.options, &mut state)?;
    println!("after {} epochs", cfg.options.epochs);
    report(&model, &cfg)
}
