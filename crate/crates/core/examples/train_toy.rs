//! Train the toy ODConv(4x) classifier and its static twin on the synthetic
//! texture task. Pass a seed as the first argument (default 1).

use odconv::training::{train, TrainConfig};

fn main() -> odconv::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = TrainConfig::default().with_seed(seed);
    let (train_set, eval_set) = cfg.datasets()?;
    for dynamic in [true, false] {
        let mut c = cfg.clone();
        if !dynamic {
            c.model.dynamic = None;
        }
        let mut model = c.build_model()?;
        let mut state = c.options.optimizer()?;
        let record = train(&mut model, &train_set, &eval_set, &c.options, &mut state)?;
        println!("{} ({} parameters)", if dynamic { "odconv 4x" } else { "static" }, model.num_params());
        print!("{}", record.to_csv());
    }
    Ok(())
}
