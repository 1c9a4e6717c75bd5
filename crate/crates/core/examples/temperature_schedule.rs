//! The softmax temperature used for each training epoch.

use odconv::odconv::TemperatureSchedule;

fn main() {
    let s = TemperatureSchedule::default();
    for e in 0..=12 {
        println!("epoch {e:>2}  T = {}", s.at(e));
    }
    let short = TemperatureSchedule { start: 10.0, end: 1.0, warmup_epochs: 3 };
    println!("custom: {:?}", (0..5).map(|e| short.at(e)).collect::<Vec<_>>());
}
