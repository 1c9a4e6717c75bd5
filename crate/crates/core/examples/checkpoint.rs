//! Save a trained model with its optimizer state, reload it and compare.

use odconv::persistence;
use odconv::training::{train, TrainConfig};

fn main() -> odconv::Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.options.epochs = 2;
    let (tr, ev) = cfg.datasets()?;
    let mut model = cfg.build_model()?;
    let mut state = cfg.options.optimizer()?;
    train(&mut model, &tr, &ev, &cfg.options, &mut state)?;

    let dir = std::env::temp_dir().join("odconv-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ck");
    persistence::save(&path, &model, 2, 1.0, Some(&state))?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    println!("{}", std::fs::read_to_string(persistence::sidecar_path(&path))?);

    let ck = persistence::load(&path)?;
    let (probe, _) = ev.batch(&[0, 1, 2])?;
    let same = model.predict(&probe, 1.0)?.data() == ck.model.predict(&probe, 1.0)?.data();
    println!("digest {}  identical outputs: {same}", persistence::topology_digest(&ck.model));
    Ok(())
}
