use odconv::odconv::{AttentionFlags, TemperatureSchedule};
use odconv::training::*;
use odconv::{Error, Tensor};

fn small() -> TrainConfig {
    TrainConfig::parse(
        "layers 4 8\nimage 1 8 8\ntrain_samples 6\neval_samples 4\nepochs 3\nbatch 8\n\
         conv odconv n=2 r=1/2 floor=2\n",
    )
    .unwrap()
}

fn run(cfg: &TrainConfig) -> (Model, TrainRecord) {
    let (tr, ev) = cfg.datasets().unwrap();
    let mut model = cfg.build_model().unwrap();
    let mut state = cfg.options.optimizer().unwrap();
    let record = train(&mut model, &tr, &ev, &cfg.options, &mut state).unwrap();
    (model, record)
}

#[test]
fn zero_epochs_is_a_no_op() {
    let mut cfg = small();
    cfg.options.epochs = 0;
    let (model, record) = run(&cfg);
    assert!(record.epochs.is_empty());
    assert_eq!(model, cfg.build_model().unwrap());
    assert_eq!(record.to_csv(), format!("{}\n", TrainRecord::CSV_HEADER));
}

#[test]
fn same_seed_same_record_and_weights() {
    let cfg = small().with_seed(4);
    let (m1, r1) = run(&cfg);
    let (m2, r2) = run(&cfg);
    assert_eq!(r1, r2);
    assert_eq!(m1, m2);
    assert_eq!(r1.to_csv(), r2.to_csv());
    let (_, r3) = run(&small().with_seed(5));
    assert_ne!(r1, r3);
}

#[test]
fn record_temperatures_follow_schedule() {
    let mut cfg = small();
    cfg.options.epochs = 12;
    cfg.options.batch_size = 64;
    let (_, record) = run(&cfg);
    let schedule = TemperatureSchedule::default();
    for (i, e) in record.epochs.iter().enumerate() {
        assert_eq!(e.epoch, i);
        assert_eq!(e.temperature, schedule.at(i));
    }
}

#[test]
fn loss_decreases_over_first_five_epochs() {
    for seed in [1, 2, 3] {
        let mut cfg = TrainConfig::default().with_seed(seed);
        cfg.options.epochs = 5;
        let (_, record) = run(&cfg);
        let first = record.epochs[0].train_loss;
        let last = record.last().unwrap().train_loss;
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn frozen_attention_is_not_updated() {
    let mut cfg = small();
    cfg.options.freeze_attention = true;
    let before = cfg.build_model().unwrap();
    let (after, _) = run(&cfg);
    for ((name, a), b) in before.param_names().iter().zip(before.params()).zip(after.params()) {
        assert_eq!(name.contains(".attention."), a == b, "{name}");
    }
}

/// Number of non-degenerate sigmoid heads in each layer.
fn sigmoid_heads(model: &Model) -> Vec<i32> {
    model
        .layers
        .iter()
        .map(|l| {
            let c = &l.cfg;
            [c.has_spatial_head(), c.has_in_channel_head(), c.has_filter_head()]
                .iter()
                .filter(|&&b| b)
                .count() as i32
        })
        .collect()
}

#[test]
fn first_step_matches_prescaled_static_model() {
    let data = SyntheticDataset::generate(SyntheticConfig::default(), 11).unwrap();
    let (x, y) = data.batch(&(0..16).collect::<Vec<_>>()).unwrap();

    let mut dyn_spec = ModelSpec::toy(1, 4, Some(DynamicSpec::new(1)));
    dyn_spec.normalize = false;
    let dynamic = Model::new(dyn_spec.clone(), 3).unwrap();
    let m = sigmoid_heads(&dynamic);
    assert_eq!(m, vec![2, 3, 3]);

    let mut static_spec = dyn_spec;
    static_spec.dynamic = None;
    let mut fixed = Model::new(static_spec, 3).unwrap();
    for (l, &heads) in fixed.layers.iter_mut().zip(&m) {
        let w = l.kernels.weights_mut();
        *w = w.scale(0.5f64.powi(heads));
    }

    let (ld, _, gd) = dynamic.loss_and_grads(&x, &y, 30.0, true).unwrap();
    let (ls, _, gs) = fixed.loss_and_grads(&x, &y, 30.0, true).unwrap();
    assert!((ld - ls).abs() <= 1e-9, "{ld} vs {ls}");
    assert_eq!(gd.len(), gs.len());
    let fc = gd.len() - 1;
    assert!(gd[fc].max_abs_diff(&gs[fc]).unwrap() <= 1e-9);
    for (i, &heads) in m.iter().enumerate() {
        let expected = gs[i].scale(0.5f64.powi(heads));
        assert!(gd[i].max_abs_diff(&expected).unwrap() <= 1e-9, "layer {i}");
    }
}

#[test]
fn fresh_model_attention_stats() {
    let cfg = TrainConfig::default();
    let model = cfg.build_model().unwrap();
    let (_, eval) = cfg.datasets().unwrap();
    let stats = collect_attention_stats(&model, &eval, 1.0, 32).unwrap();
    assert_eq!(stats.len(), 3);
    for layer in &stats {
        for s in [&layer.spatial, &layer.in_channel, &layer.filter] {
            if s.enabled {
                assert_eq!((s.mean, s.std, s.min, s.max), (0.5, 0.0, 0.5, 0.5), "{}", s.kind);
            }
        }
        assert!(layer.kernel.enabled);
        assert!(layer.kernel.per_index_mean.iter().all(|&v| v == 0.25));
        assert_eq!(layer.kernel.std, 0.0);
    }
    assert!(!stats[0].in_channel.enabled);
}

#[test]
fn trained_kernel_attention_means_sum_to_one() {
    let (model, _) = run(&small());
    let (_, eval) = small().datasets().unwrap();
    for layer in collect_attention_stats(&model, &eval, 1.0, 5).unwrap() {
        let total: f64 = layer.kernel.per_index_mean.iter().sum();
        assert!((total - 1.0).abs() <= 1e-9, "{total}");
        assert!(layer.kernel.std > 0.0);
        assert_eq!(layer.kernel.histogram.iter().sum::<u64>() as usize, layer.kernel.count);
    }
}

#[test]
fn divergence_is_reported() {
    let mut cfg = small();
    cfg.options.learning_rate = 1e6;
    cfg.options.momentum = 0.0;
    cfg.options.epochs = 20;
    cfg.model.normalize = false;
    let (tr, ev) = cfg.datasets().unwrap();
    let mut model = cfg.build_model().unwrap();
    let mut state = cfg.options.optimizer().unwrap();
    let err = train(&mut model, &tr, &ev, &cfg.options, &mut state).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. } | Error::Numeric(_)), "{err}");
}

#[test]
fn dataset_is_seeded_and_balanced() {
    let c = SyntheticConfig { samples_per_class: 5, ..SyntheticConfig::default() };
    let a = SyntheticDataset::generate(c, 1).unwrap();
    assert_eq!(a, SyntheticDataset::generate(c, 1).unwrap());
    assert_ne!(a, SyntheticDataset::generate(c, 2).unwrap());
    let mut counts = [0; 4];
    a.labels.iter().for_each(|&l| counts[l] += 1);
    assert_eq!(counts, [5; 4]);
    let (x, _) = a.batch(&[0, 1]).unwrap();
    assert_eq!(x.dims(), &[2, 1, 16, 16]);
}

#[test]
fn static_spec_has_no_attention_parameters() {
    let spec = ModelSpec::toy(1, 4, None);
    let model = Model::new(spec, 0).unwrap();
    assert_eq!(model.param_names(), ["layer0.kernels", "layer1.kernels", "layer2.kernels", "fc.weight"]);
    assert!(model.layers.iter().all(|l| l.cfg.flags == AttentionFlags::NONE));
    let x = Tensor::zeros(&[2, 1, 16, 16]).unwrap();
    assert_eq!(model.predict(&x, 1.0).unwrap().dims(), &[2, 4]);
}
