use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::SyntheticDataset;
use super::model::{correct_predictions, Model};
use super::optim::{sgd_step, OptimizerState};
use crate::error::{Error, Result};
use crate::odconv::TemperatureSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub warmup_epochs: usize,
    /// Seeds the per-epoch shuffling.
    pub seed: u64,
    /// Keeps the attention trunk and heads at their current values.
    pub freeze_attention: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let s = TemperatureSchedule::default();
        TrainOptions {
            epochs: 15,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            t_start: s.start,
            t_end: s.end,
            warmup_epochs: s.warmup_epochs,
            seed: 0,
            freeze_attention: false,
        }
    }
}

impl TrainOptions {
    pub fn schedule(&self) -> TemperatureSchedule {
        TemperatureSchedule {
            start: self.t_start,
            end: self.t_end,
            warmup_epochs: self.warmup_epochs,
        }
    }

    pub fn optimizer(&self) -> Result<OptimizerState> {
        OptimizerState::new(self.learning_rate, self.momentum, self.weight_decay)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub temperature: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str = "epoch,temperature,train_loss,train_acc,eval_acc";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch, e.temperature, e.train_loss, e.train_acc, e.eval_acc
            )
            .expect("writing to a String");
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Mean loss and accuracy over `data`, in batches of `batch_size`.
pub fn evaluate(model: &Model, data: &SyntheticDataset, temperature: f64, batch_size: usize) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk)?;
        let logits = model.predict(&x, temperature)?;
        loss += crate::nn::cross_entropy(&logits, &y)? * chunk.len() as f64;
        correct += correct_predictions(&logits, &y);
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch SGD for `opts.epochs` epochs. Epoch `e` (from 0) trains at
/// temperature `schedule.at(e)`; evaluation always uses the schedule's end value.
pub fn train(
    model: &mut Model,
    train_set: &SyntheticDataset,
    eval_set: &SyntheticDataset,
    opts: &TrainOptions,
    state: &mut OptimizerState,
) -> Result<TrainRecord> {
    let schedule = opts.schedule();
    schedule.validate()?;
    if opts.batch_size == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    let mut record = TrainRecord::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mask = model.trainable_mask(opts.freeze_attention);
    for epoch in 0..opts.epochs {
        let t = schedule.at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(opts.batch_size) {
            let (x, y) = train_set.batch(chunk)?;
            let (loss, hits, grads) = model.loss_and_grads(&x, &y, t, opts.freeze_attention)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += hits;
            let mut params: Vec<_> = model
                .params_mut()
                .into_iter()
                .zip(&mask)
                .filter_map(|(p, &m)| m.then_some(p))
                .collect();
            sgd_step(&mut params, &grads, state)?;
        }
        let n = train_set.len() as f64;
        let (_, eval_acc) = evaluate(model, eval_set, schedule.end, opts.batch_size)?;
        record.epochs.push(EpochRecord {
            epoch,
            temperature: t,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            eval_acc,
        });
    }
    Ok(record)
}
