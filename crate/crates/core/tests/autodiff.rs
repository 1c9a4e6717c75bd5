use odconv::autodiff::{finite_diff_check_many, Tape, Var};
use odconv::nn::{self, ConvGeometry};
use odconv::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;
const CASES: u64 = 10;

/// Uniform in `[-1, 1]` with entries kept away from zero so ReLU kinks are
/// never straddled by the finite-difference step.
fn rand_t(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

/// Contracts `out` with a fixed random tensor so every output coordinate
/// contributes a distinct weight to the scalar loss.
fn project<'t>(tape: &'t Tape, out: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let r = rand_t(&out.dims(), &mut ChaCha8Rng::seed_from_u64(seed ^ 0xABCD));
    out.mul(tape.constant(r))?.sum()
}

fn check<F>(name: &str, dims: &[&[usize]], f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let mut worst: f64 = 0.0;
    for case in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(case * 7919 + 17);
        let inputs: Vec<Tensor> = dims.iter().map(|d| rand_t(d, &mut rng)).collect();
        let reports = finite_diff_check_many(&f, &inputs, H).unwrap();
        worst = reports.iter().fold(worst, |m, r| m.max(r.max_rel_error));
    }
    assert!(worst <= TOL, "{name}: max relative error {worst:e}");
}

#[test]
fn elementwise_ops() {
    check("add", &[&[2, 3], &[2, 3]], |t, v| project(t, v[0].add(v[1])?, 1));
    check("sub", &[&[2, 3], &[2, 3]], |t, v| project(t, v[0].sub(v[1])?, 2));
    check("mul", &[&[2, 3], &[2, 3]], |t, v| project(t, v[0].mul(v[1])?, 3));
    check("scale", &[&[4]], |t, v| project(t, v[0].scale(-1.7)?, 4));
    check("relu", &[&[3, 4]], |t, v| project(t, v[0].relu()?, 5));
    check("sigmoid", &[&[3, 4]], |t, v| project(t, v[0].sigmoid()?, 6));
    check("exp", &[&[3, 4]], |t, v| project(t, v[0].exp()?, 7));
}

#[test]
fn structural_ops() {
    check("matmul", &[&[2, 3], &[3, 4]], |t, v| project(t, v[0].matmul(v[1])?, 8));
    check("reshape", &[&[2, 6]], |t, v| project(t, v[0].reshape(&[3, 4])?, 9));
    check("sum", &[&[2, 2, 3]], |_, v| v[0].sum());
    check("fully_connected", &[&[2, 5], &[3, 5]], |t, v| {
        project(t, v[0].fully_connected(v[1])?, 10)
    });
    check("global_average_pool", &[&[2, 3, 4, 4]], |t, v| {
        project(t, v[0].global_average_pool()?, 11)
    });
    check("avg_pool2d", &[&[2, 2, 4, 6]], |t, v| project(t, v[0].avg_pool2d(2, 2)?, 12));
    check("softmax_t", &[&[3, 4]], |t, v| project(t, v[0].softmax_t(2.5)?, 13));
    check("sample_norm", &[&[2, 3, 3, 3]], |t, v| {
        project(t, v[0].sample_norm(1e-5)?, 14)
    });
}

#[test]
fn convolutions() {
    let g = ConvGeometry::new(3, 2, 1, 1).unwrap();
    check("conv2d", &[&[2, 2, 5, 5], &[3, 2, 3, 3]], |t, v| {
        project(t, v[0].conv2d(v[1], g)?, 15)
    });
    let grouped = ConvGeometry::new(3, 1, 1, 2).unwrap();
    check("conv2d grouped", &[&[1, 4, 4, 4], &[2, 2, 3, 3]], |t, v| {
        project(t, v[0].conv2d(v[1], grouped)?, 16)
    });
    check("conv2d_per_sample", &[&[2, 2, 4, 4], &[2, 3, 2, 3, 3]], |t, v| {
        project(t, v[0].conv2d_per_sample(v[1], ConvGeometry::same(3))?, 17)
    });
}

#[test]
fn cross_entropy_gradient() {
    check("cross_entropy", &[&[4, 3]], |_, v| v[0].cross_entropy(&[0, 2, 1, 2]));
}

#[test]
fn cross_entropy_values() {
    let uniform = Tensor::zeros(&[2, 4]).unwrap();
    let l = nn::cross_entropy(&uniform, &[1, 3]).unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-15);

    let confident = Tensor::from_vec(&[1, 3], vec![50.0, 0.0, 0.0]).unwrap();
    assert!(nn::cross_entropy(&confident, &[0]).unwrap() < 1e-20);
    assert!(nn::cross_entropy(&confident, &[3]).is_err());
}

#[test]
fn sample_norm_standardises_each_sample() {
    let x = rand_t(&[3, 2, 4, 4], &mut ChaCha8Rng::seed_from_u64(3));
    let y = nn::sample_norm(&x, 1e-12).unwrap();
    for row in y.data().chunks(32) {
        let mean = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9, "{mean} {var}");
    }
    assert!(nn::sample_norm(&x, 0.0).is_err());
}
