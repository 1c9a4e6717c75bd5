use odconv::nn::{self, ConvGeometry};
use odconv::odconv::{
    combine_kernels, AttentionFlags, AttentionSet, KernelSet, ODConvConfig, ODConvLayer,
    TemperatureSchedule,
};
use odconv::verify::{self, Fault};
use odconv::{Error, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(c_in: usize, c_out: usize, k: usize, n: usize) -> ODConvConfig {
    ODConvConfig::new(c_in, c_out, ConvGeometry::same(k)).with_kernels(n)
}

fn rand_x(dims: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(dims, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn zero_input_gives_half_gates_and_uniform_mixture() {
    let layer = ODConvLayer::init_random_heads(cfg(4, 3, 3, 4), 5, 1.0).unwrap();
    let att = layer.attention(&Tensor::zeros(&[2, 4, 5, 5]).unwrap(), 1.0).unwrap();
    for t in [&att.alpha_s, &att.alpha_c, &att.alpha_f] {
        assert!(t.data().iter().all(|&v| v == 0.5));
    }
    assert!(att.alpha_w.data().iter().all(|&v| v == 0.25));
}

#[test]
fn disabled_heads_are_constant_ones() {
    let layer = ODConvLayer::init(cfg(4, 3, 3, 2).with_flags(AttentionFlags::NONE), 1).unwrap();
    assert!(layer.attention.reduce.is_none());
    let att = layer.attention(&rand_x(&[2, 4, 5, 5], 2), 1.0).unwrap();
    assert_eq!(att.alpha_s.dims(), &[2, 1, 3, 3]);
    assert_eq!(att.alpha_w.dims(), &[2, 2]);
    for t in [&att.alpha_s, &att.alpha_c, &att.alpha_f, &att.alpha_w] {
        assert!(t.data().iter().all(|&v| v == 1.0));
    }
}

#[test]
fn higher_temperature_flattens_kernel_attention() {
    let layer = ODConvLayer::init_random_heads(cfg(4, 4, 3, 4), 9, 2.0).unwrap();
    let x = rand_x(&[1, 4, 6, 6], 3);
    let max = |t: f64| {
        let row = layer.attention(&x, t).unwrap().alpha_w.into_data();
        row.into_iter().fold(f64::MIN, f64::max)
    };
    assert!(max(30.0) < max(1.0));
}

#[test]
fn identity_attentions_leave_single_kernel_unchanged() {
    let c = cfg(2, 3, 3, 1);
    let layer = ODConvLayer::init(c, 4).unwrap();
    let ones = |d: &[usize]| Tensor::ones(d).unwrap();
    let att = AttentionSet {
        alpha_s: ones(&[1, 1, 3, 3]),
        alpha_c: ones(&[1, 1, 2]),
        alpha_f: ones(&[1, 1, 3]),
        alpha_w: ones(&[1, 1]),
    };
    let w = combine_kernels(&layer.kernels, &att, 0, &c).unwrap();
    assert_eq!(w, layer.kernels.kernel(0).unwrap());
}

#[test]
fn opposite_kernels_cancel() {
    let c = cfg(2, 2, 3, 2);
    let w1 = rand_x(&[2, 2, 3, 3], 6);
    let data: Vec<f64> = w1.data().iter().copied().chain(w1.data().iter().map(|v| -v)).collect();
    let kernels = KernelSet::new(Tensor::from_vec(&[2, 2, 2, 3, 3], data).unwrap()).unwrap();
    let ones = |d: &[usize]| Tensor::ones(d).unwrap();
    let att = AttentionSet {
        alpha_s: ones(&[1, 1, 3, 3]),
        alpha_c: ones(&[1, 1, 2]),
        alpha_f: ones(&[1, 1, 2]),
        alpha_w: Tensor::full(&[1, 2], 0.5).unwrap(),
    };
    let w = combine_kernels(&kernels, &att, 0, &c).unwrap();
    assert!(w.data().iter().all(|&v| v == 0.0));
}

#[test]
fn fresh_layer_is_scaled_regular_conv() {
    let c = cfg(3, 4, 3, 1);
    let layer = ODConvLayer::init(c, 12).unwrap();
    let x = rand_x(&[2, 3, 6, 6], 13);
    let y = layer.forward(&x, 1.0).unwrap();
    let want = nn::conv2d_naive(&x, &layer.kernels.kernel(0).unwrap(), &c.geom).unwrap().scale(0.125);
    assert!(y.max_abs_diff(&want).unwrap() <= 1e-12);
}

#[test]
fn fresh_init_attentions_are_input_independent() {
    let layer = ODConvLayer::init(cfg(4, 3, 3, 4), 8).unwrap();
    let att = layer.attention(&rand_x(&[3, 4, 5, 5], 1), 30.0).unwrap();
    for t in [&att.alpha_s, &att.alpha_c, &att.alpha_f] {
        assert!(t.data().iter().all(|&v| v == 0.5));
    }
    assert!(att.alpha_w.data().iter().all(|&v| v == 0.25));
}

#[test]
fn same_seed_same_parameters() {
    let a = ODConvLayer::init(cfg(4, 8, 3, 4), 77).unwrap();
    let b = ODConvLayer::init(cfg(4, 8, 3, 4), 77).unwrap();
    let bits = |l: &ODConvLayer| -> Vec<u64> {
        let mut v: Vec<u64> = l.kernels.weights().data().iter().map(|x| x.to_bits()).collect();
        for t in l.attention.slots().into_iter().flatten() {
            v.extend(t.data().iter().map(|x| x.to_bits()));
        }
        v
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&ODConvLayer::init(cfg(4, 8, 3, 4), 78).unwrap()));
}

#[test]
fn degenerate_heads_are_dropped() {
    let pointwise = ODConvLayer::init(cfg(8, 8, 1, 1), 0).unwrap();
    assert!(pointwise.attention.spatial.is_none());
    assert!(pointwise.attention.kernel.is_none());
    assert!(pointwise.attention.in_channel.is_some());
    let dw = ODConvConfig::new(8, 8, ConvGeometry::new(3, 1, 1, 8).unwrap()).with_kernels(4);
    let depthwise = ODConvLayer::init(dw, 0).unwrap();
    assert!(depthwise.attention.in_channel.is_none());
    assert_eq!(depthwise.attention.spatial.as_ref().unwrap().dims(), &[9, 16]);
}

#[test]
fn mismatched_input_channels_are_rejected() {
    let layer = ODConvLayer::init(cfg(4, 3, 3, 2), 1).unwrap();
    let err = layer.forward(&Tensor::zeros(&[1, 5, 4, 4]).unwrap(), 1.0).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
}

#[test]
fn schedule_points() {
    let s = TemperatureSchedule::default();
    assert_eq!(s.at(0), 30.0);
    assert_eq!(s.at(5), 15.5);
    assert_eq!(s.at(10), 1.0);
    assert_eq!(s.at(40), 1.0);
}

#[test]
fn reduction_to_regular_convolution() {
    let out = verify::check_reduction(20, 101).unwrap();
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn kernel_only_matches_mixture_reference() {
    let out = verify::check_eq1_equivalence(20, 102).unwrap();
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn filter_only_matches_gated_conv() {
    let out = verify::check_se_variant(20, 103).unwrap();
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn combine_then_convolve_matches_per_kernel_sum() {
    let out = verify::check_linearity(20, 104, Fault::None).unwrap();
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn rotated_combination_breaks_linearity() {
    let out = verify::check_linearity(5, 104, Fault::CombineOrder).unwrap();
    assert!(!out.passed);
}

#[test]
fn shared_and_copied_unshared_agree() {
    let out = verify::check_sharing(10, 105).unwrap();
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn batch_members_do_not_interact() {
    let out = verify::check_batch_independence(10, 106).unwrap();
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn full_layer_gradients() {
    let out = verify::check_gradient(2, 107).unwrap();
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn unshared_softmax_spatial_layer_gradients() {
    let c = cfg(3, 2, 3, 3)
        .with_sharing(false)
        .with_reduction(1.0)
        .with_hidden_floor(4)
        .with_spatial_activation(odconv::odconv::SpatialActivation::Softmax);
    let layer = ODConvLayer::init_random_heads(c, 3, 0.7).unwrap();
    let mut seed = 0;
    let x = loop {
        let x = rand_x(&[2, 3, 5, 4], seed);
        if verify::trunk_margin(&layer, &x).unwrap() > 1e-4 {
            break x;
        }
        seed += 1;
    };
    for (name, r) in verify::layer_gradcheck(&layer, &x, 3.0, 1e-5).unwrap() {
        assert!(r.max_rel_error <= 1e-4, "{name}: {}", r.max_rel_error);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_ranges_hold(seed in 0u64..10_000, n in 1usize..=4, c_in in 1usize..=4, share in any::<bool>()) {
        let c = cfg(c_in, 3, 3, n).with_sharing(share).with_hidden_floor(4);
        let layer = ODConvLayer::init_random_heads(c, seed, 1.0).unwrap();
        let att = layer.attention(&rand_x(&[2, c_in, 5, 5], seed + 1), 1.0).unwrap();
        for t in [&att.alpha_s, &att.alpha_c, &att.alpha_f] {
            prop_assert!(t.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        for row in att.alpha_w.data().chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn output_shape_follows_geometry(k in prop::sample::select(vec![1usize, 3]), stride in 1usize..=2, h in 3usize..=8) {
        let geom = ConvGeometry::new(k, stride, k / 2, 1).unwrap();
        let layer = ODConvLayer::init(ODConvConfig::new(2, 3, geom).with_kernels(2), 0).unwrap();
        let y = layer.forward(&rand_x(&[1, 2, h, h], 0), 1.0).unwrap();
        let e = geom.output_extent(h).unwrap();
        prop_assert_eq!(y.dims(), &[1, 3, e, e]);
    }
}
