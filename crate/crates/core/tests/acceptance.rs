//! One line per acceptance criterion, each with its tolerance and time budget.
//! Run with `cargo test --test acceptance -- --nocapture` to see the table.

use std::time::{Duration, Instant};

use odconv::complexity::{analyze, instrumented_forward, odconv_extra_madds, ArchSpec, Placement, Variant};
use odconv::nn::ConvGeometry;
use odconv::odconv::{ODConvConfig, ODConvLayer, TemperatureSchedule};
use odconv::persistence;
use odconv::training::{train, TrainConfig};
use odconv::verify::{self, Fault, PropertyOutcome};
use odconv::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const R: f64 = 1.0 / 16.0;
const SEED: u64 = 2022;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn criterion(id: usize, name: &'static str, budget_s: u64, f: impl FnOnce() -> Result<(bool, String)>) -> Line {
    let t0 = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let elapsed = t0.elapsed();
    let budget = Duration::from_secs(budget_s);
    Line {
        id,
        name,
        passed: passed && elapsed <= budget,
        detail,
        elapsed,
        budget,
    }
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want) / want
}

fn counts(arch: &str, variant: Variant) -> Result<(f64, f64)> {
    let r = analyze(&ArchSpec::zoo(arch)?, &variant, Placement::AllButFirst)?;
    Ok((r.params as f64 / 1e6, r.madds as f64 / 1e9))
}

fn params_criterion() -> Result<(bool, String)> {
    let table = [
        ("resnet18", Variant::Static, 11.69),
        ("resnet18", Variant::odconv(1, R), 11.94),
        ("resnet18", Variant::odconv(4, R), 44.90),
        ("mobilenetv2-1.0", Variant::Static, 3.50),
        ("mobilenetv2-1.0", Variant::odconv(1, R), 4.94),
        ("mobilenetv2-1.0", Variant::odconv(4, R), 11.52),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (arch, v, want) in table {
        let (got, _) = counts(arch, v)?;
        let e = rel(got, want);
        ok &= e.abs() <= 0.02;
        parts.push(format!("{got:.2}M ({:+.1}%)", 100.0 * e));
    }
    Ok((ok, parts.join(" ")))
}

fn madds_criterion() -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (v, want) in [(Variant::Static, 1.814), (Variant::odconv(1, R), 1.838), (Variant::odconv(4, R), 1.916)] {
        let (_, got) = counts("resnet18", v)?;
        let e = rel(got, want);
        ok &= e.abs() <= 0.02;
        parts.push(format!("{got:.3}G ({:+.1}%)", 100.0 * e));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let n = [1, 2, 4][i % 3];
        let k = [1, 3][rng.random_range(0..2)];
        let (c_in, c_out) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let (h, w) = (rng.random_range(3..=8), rng.random_range(3..=8));
        let cfg = ODConvConfig::new(c_in, c_out, ConvGeometry::same(k))
            .with_kernels(n)
            .with_reduction(1.0)
            .with_hidden_floor(1);
        let layer = ODConvLayer::init_random_heads(cfg, rng.random(), 1.0)?;
        let x = Tensor::uniform(&[1, c_in, h, w], -1.0, 1.0, &mut rng)?;
        let (_, count) = instrumented_forward(&layer, &x, 1.0)?;
        let closed = (h * w * k * k * c_in * c_out) as u64 + odconv_extra_madds(h, w, c_in, c_out, k, 1.0, n)?;
        worst = worst.max(rel(count.total() as f64, closed as f64).abs());
    }
    ok &= worst <= 0.10;
    parts.push(format!("closed form vs counter worst {:.1}% over 20 shapes", 100.0 * worst));
    Ok((ok, parts.join(" ")))
}

fn property(o: Result<PropertyOutcome>) -> Result<(bool, String)> {
    let o = o?;
    Ok((o.passed, format!("{} instances, {}", o.instances, o.detail)))
}

fn contracts_criterion() -> Result<(bool, String)> {
    let c = verify::check_attention_contracts(1000, SEED)?;
    let b = verify::check_batch_independence(20, SEED)?;
    Ok((c.passed && b.passed, format!("{}; batch independence {}", c.detail, b.detail)))
}

fn schedule_criterion() -> Result<(bool, String)> {
    let s = TemperatureSchedule::default();
    s.validate()?;
    let formula = |e: usize| 30.0 + (1.0 - 30.0) * (e.min(10) as f64) / 10.0;
    let exact = (0..=40).all(|e| s.at(e) == formula(e));
    let points = [s.at(0), s.at(5), s.at(10), s.at(11), s.at(100)];
    let ok = exact && points == [30.0, 15.5, 1.0, 1.0, 1.0];
    Ok((ok, format!("T(0,5,10,11,100) = {points:?}")))
}

fn training_criterion() -> Result<(bool, String)> {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in [1, 2, 3] {
        let cfg = TrainConfig::default().with_seed(seed);
        let (tr, ev) = cfg.datasets()?;
        let mut eval_acc = Vec::new();
        for dynamic in [true, false] {
            let mut c = cfg.clone();
            if !dynamic {
                c.model.dynamic = None;
            }
            let mut model = c.build_model()?;
            let mut state = c.options.optimizer()?;
            let record = train(&mut model, &tr, &ev, &c.options, &mut state)?;
            eval_acc.push(record.last().map_or(0.0, |e| e.eval_acc));
        }
        if eval_acc[0] >= eval_acc[1] {
            wins += 1;
        }
        parts.push(format!("seed {seed}: odconv {:.3} vs static {:.3}", eval_acc[0], eval_acc[1]));
    }
    Ok((wins >= 2, format!("{wins}/3 seeds; {}", parts.join(", "))))
}

fn checkpoint_criterion() -> Result<(bool, String)> {
    let cfg = TrainConfig::parse("layers 4 8\nimage 1 8 8\ntrain_samples 8\neval_samples 4\nepochs 2\nbatch 8\n")?;
    let (tr, ev) = cfg.datasets()?;
    let mut model = cfg.build_model()?;
    let mut state = cfg.options.optimizer()?;
    train(&mut model, &tr, &ev, &cfg.options, &mut state)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ck");
    persistence::save(&path, &model, 2, 1.0, Some(&state))?;
    let ck = persistence::load(&path)?;
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let params_equal = model.params().iter().zip(ck.model.params()).all(|(a, b)| bits(a) == bits(b));
    let velocity_equal = ck
        .optimizer
        .as_ref()
        .is_some_and(|s| s.velocity.iter().zip(&state.velocity).all(|(a, b)| bits(a) == bits(b)));
    let (probe, _) = ev.batch(&[0, 1, 2, 3])?;
    let outputs_equal = bits(&model.predict(&probe, 1.0)?) == bits(&ck.model.predict(&probe, 1.0)?);
    Ok((
        params_equal && velocity_equal && outputs_equal,
        format!("params {params_equal}, velocities {velocity_equal}, probe outputs {outputs_equal}"),
    ))
}

#[test]
fn acceptance() {
    let lines = vec![
        criterion(1, "parameter counts", 1, params_criterion),
        criterion(2, "multiply-add counts", 10, madds_criterion),
        criterion(3, "reduction to regular conv", 5, || property(verify::check_reduction(20, SEED))),
        criterion(4, "kernel-only equivalence", 5, || property(verify::check_eq1_equivalence(20, SEED))),
        criterion(5, "SE variant", 5, || property(verify::check_se_variant(20, SEED))),
        criterion(6, "linearity", 5, || property(verify::check_linearity(20, SEED, Fault::None))),
        criterion(7, "gradient suite", 60, || property(verify::check_gradient(10, SEED))),
        criterion(8, "attention contracts", 30, contracts_criterion),
        criterion(9, "temperature schedule", 1, schedule_criterion),
        criterion(10, "toy training smoke", 600, training_criterion),
        criterion(11, "checkpoint round-trip", 5, checkpoint_criterion),
    ];
    for l in &lines {
        println!(
            "criterion {:>2} {:<27} {}  [{:.2}s / {}s]  {}",
            l.id,
            l.name,
            if l.passed { "PASS" } else { "FAIL" },
            l.elapsed.as_secs_f64(),
            l.budget.as_secs(),
            l.detail
        );
    }
    let failed: Vec<_> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
