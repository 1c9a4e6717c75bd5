//! The `odconv` command line. [`run`] parses arguments, writes to the given
//! sink and returns the process exit code:
//! 0 success, 1 verification or contract failure, 2 usage error, 3 I/O error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::complexity::{analyze, conv_cost, ArchSpec, Bookkeeping, ConvSpec, CostReport, Placement, Variant};
use crate::error::{Error, Result};
use crate::nn::ConvGeometry;
use crate::odconv::{parse_ratio, AttentionFlags, ODConvConfig, ODConvLayer, TemperatureSource};
use crate::persistence;
use crate::tensor::Tensor;
use crate::training::{collect_attention_stats, train, TrainConfig};
use crate::verify::{self, Fault};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "odconv", version, about = "Omni-dimensional dynamic convolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn ratio(s: &str) -> std::result::Result<f64, String> {
    parse_ratio(s).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum VariantKind {
    Static,
    Odconv,
    Dyconv,
    Condconv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LayerKind {
    Odconv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BenchLayer {
    Static,
    Odconv1x,
    Odconv4x,
    Eq1Only,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FaultArg {
    CombineOrder,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Finite-difference check of one dynamic layer.
    Gradcheck {
        #[arg(long, value_enum, default_value = "odconv")]
        layer: LayerKind,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, value_parser = ratio, default_value = "1")]
        r: f64,
        #[arg(long, default_value = "all")]
        flags: AttentionFlags,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        c_in: usize,
        #[arg(long, default_value_t = 3)]
        c_out: usize,
        #[arg(long, default_value_t = 4)]
        floor: usize,
        #[arg(long)]
        unshared: bool,
        #[arg(long, default_value_t = 2.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parameter and multiply-add counts of a zoo or user architecture.
    Complexity {
        /// Zoo name or path to an architecture file.
        #[arg(long, default_value = "resnet18")]
        arch: String,
        #[arg(long, value_enum, default_value = "static")]
        variant: VariantKind,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, value_parser = ratio, default_value = "1/16")]
        r: f64,
        #[arg(long, default_value_t = 16)]
        floor: usize,
        #[arg(long, default_value = "all")]
        flags: AttentionFlags,
        #[arg(long)]
        unshared: bool,
        #[arg(long, default_value = "all-but-first")]
        placement: Placement,
        #[arg(long, default_value = "reference")]
        bookkeeping: Bookkeeping,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Include the per-layer breakdown in text output.
        #[arg(long)]
        per_layer: bool,
    },
    /// Train a toy model and write the epoch record and a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Forward-pass latency of one layer.
    Bench {
        #[arg(long, value_enum, default_value = "odconv4x")]
        layer: BenchLayer,
        /// `B,C,H,W`
        #[arg(long, default_value = "1,32,28,28")]
        shape: String,
        /// Output channels; defaults to C.
        #[arg(long)]
        c_out: Option<usize>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(100..))]
        iterations: u64,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Attention distributions of a fresh or checkpointed model.
    AttentionStats {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Data settings (and the model, without `--checkpoint`).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Run the property suite and print a pass/fail matrix.
    Verify {
        /// Run only properties whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Outcome of a subcommand that ran to completion.
enum Status {
    Ok,
    Failed,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Parameter(_) | Error::Spec { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut buf = String::new();
    let result = execute(cli.command, &mut buf);
    let _ = out.write_all(buf.as_bytes());
    match result {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::Failed) => EXIT_FAILURE,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn read(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn execute(cmd: Command, out: &mut String) -> Result<Status> {
    match cmd {
        Command::Gradcheck {
            layer: LayerKind::Odconv,
            n,
            r,
            flags,
            k,
            c_in,
            c_out,
            floor,
            unshared,
            temperature,
            seed,
        } => gradcheck(n, r, flags, k, c_in, c_out, floor, !unshared, temperature, seed, out),
        Command::Complexity {
            arch,
            variant,
            n,
            r,
            floor,
            flags,
            unshared,
            placement,
            bookkeeping,
            format,
            per_layer,
        } => {
            let arch = ArchSpec::resolve(&arch)?;
            let variant = match variant {
                VariantKind::Static => Variant::Static,
                VariantKind::Dyconv => Variant::DyConv { n },
                VariantKind::Condconv => Variant::CondConv { n },
                VariantKind::Odconv => Variant::ODConv {
                    n,
                    r,
                    hidden_floor: floor,
                    flags,
                    share: !unshared,
                    bookkeeping,
                },
            };
            let report = analyze(&arch, &variant, placement)?;
            write_report(&report, format, per_layer, out);
            Ok(Status::Ok)
        }
        Command::Train { config, out: dir, seed, epochs } => {
            let mut cfg = match &config {
                Some(p) => TrainConfig::parse(&read(p)?)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            if let Some(e) = epochs {
                cfg.options.epochs = e;
            }
            let (train_set, eval_set) = cfg.datasets()?;
            let mut model = cfg.build_model()?;
            let mut state = cfg.options.optimizer()?;
            let record = train(&mut model, &train_set, &eval_set, &cfg.options, &mut state)?;
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("record.csv"), record.to_csv())?;
            let temperature = cfg.options.schedule().end;
            let ckpt = dir.join("model.ck");
            persistence::save(&ckpt, &model, record.epochs.len() as u64, temperature, Some(&state))?;
            for e in &record.epochs {
                writeln!(
                    out,
                    "epoch {:>3}  T {:>5.2}  loss {:.4}  train {:.3}  eval {:.3}",
                    e.epoch, e.temperature, e.train_loss, e.train_acc, e.eval_acc
                )
                .unwrap();
            }
            writeln!(out, "{} parameters; wrote {} and {}", model.num_params(), dir.join("record.csv").display(), ckpt.display())
                .unwrap();
            Ok(Status::Ok)
        }
        Command::Bench {
            layer,
            shape,
            c_out,
            k,
            iterations,
            warmup,
            format,
        } => bench(layer, &shape, c_out, k, iterations, warmup, format, out),
        Command::AttentionStats {
            checkpoint,
            config,
            temperature,
            format,
        } => {
            let cfg = match &config {
                Some(p) => TrainConfig::parse(&read(p)?)?,
                None => TrainConfig::default(),
            };
            let model = match &checkpoint {
                Some(p) => persistence::load(p)?.model,
                None => cfg.build_model()?,
            };
            let (_, eval_set) = cfg.datasets()?;
            let stats = collect_attention_stats(&model, &eval_set, temperature, 32)?;
            match format {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&stats).expect("stats serialise")).unwrap(),
                Format::Csv => {
                    writeln!(out, "layer,kind,enabled,count,mean,std,min,max").unwrap();
                    for l in &stats {
                        for s in l.all() {
                            writeln!(out, "{},{},{},{},{},{},{},{}", l.layer, s.kind, s.enabled, s.count, s.mean, s.std, s.min, s.max)
                                .unwrap();
                        }
                    }
                }
                Format::Text => {
                    for l in &stats {
                        for s in l.all().into_iter().filter(|s| s.enabled) {
                            writeln!(
                                out,
                                "layer {} {:<10} mean {:.4} std {:.4} range [{:.4}, {:.4}] hist {:?}",
                                l.layer, s.kind, s.mean, s.std, s.min, s.max, s.histogram
                            )
                            .unwrap();
                        }
                    }
                }
            }
            Ok(Status::Ok)
        }
        Command::Verify { filter, inject_fault, seed } => {
            if let Some(f) = &filter {
                if !verify::PROPERTIES.iter().any(|p| p.contains(f.as_str())) {
                    return Err(Error::param(format!(
                        "no property matches `{f}`; known: {}",
                        verify::PROPERTIES.join(", ")
                    )));
                }
            }
            let fault = match inject_fault {
                Some(FaultArg::CombineOrder) => Fault::CombineOrder,
                None => Fault::None,
            };
            let outcomes = verify::run(filter.as_deref(), fault, seed);
            for o in &outcomes {
                writeln!(
                    out,
                    "{:<20} {}  {} instances  {}",
                    o.name,
                    if o.passed { "PASS" } else { "FAIL" },
                    o.instances,
                    o.detail
                )
                .unwrap();
            }
            let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
            if failed.is_empty() {
                writeln!(out, "all {} properties passed", outcomes.len()).unwrap();
                Ok(Status::Ok)
            } else {
                writeln!(out, "failed: {}", failed.join(", ")).unwrap();
                Ok(Status::Failed)
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gradcheck(
    n: usize,
    r: f64,
    flags: AttentionFlags,
    k: usize,
    c_in: usize,
    c_out: usize,
    floor: usize,
    share: bool,
    temperature: f64,
    seed: u64,
    out: &mut String,
) -> Result<Status> {
    let cfg = ODConvConfig::new(c_in, c_out, ConvGeometry::same(k))
        .with_kernels(n)
        .with_reduction(r)
        .with_hidden_floor(floor)
        .with_flags(flags)
        .with_sharing(share)
        .with_temperature(TemperatureSource::Fixed(temperature));
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = ODConvLayer::init_random_heads(cfg, rng.random(), 0.8)?;
    let h = 1e-5;
    let mut x = Tensor::uniform(&[2, c_in, 5, 5], -1.0, 1.0, &mut rng)?;
    for _ in 0..100 {
        if verify::trunk_margin(&layer, &x)? >= 10.0 * h {
            break;
        }
        x = Tensor::uniform(&[2, c_in, 5, 5], -1.0, 1.0, &mut rng)?;
    }
    writeln!(out, "{}", cfg.describe()).unwrap();
    let mut worst: f64 = 0.0;
    for (name, rep) in verify::layer_gradcheck(&layer, &x, temperature, h)? {
        writeln!(out, "{name:<22} max relative error {:.3e}", rep.max_rel_error).unwrap();
        worst = worst.max(rep.max_rel_error);
    }
    let pass = worst <= GRADCHECK_TOLERANCE;
    writeln!(out, "{} (worst {worst:.3e}, tolerance {GRADCHECK_TOLERANCE:.0e})", if pass { "PASS" } else { "FAIL" }).unwrap();
    Ok(if pass { Status::Ok } else { Status::Failed })
}

fn write_report(report: &CostReport, format: Format, per_layer: bool, out: &mut String) {
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(report).expect("report serialises")).unwrap(),
        Format::Csv => {
            writeln!(out, "index,line,kind,dynamic,params,madds").unwrap();
            for l in &report.layers {
                writeln!(out, "{},{},{},{},{},{}", l.index, l.line, l.kind, l.dynamic, l.params, l.madds).unwrap();
            }
            writeln!(out, "total,,,{},{},{}", report.dynamic_layers(), report.params, report.madds).unwrap();
        }
        Format::Text => {
            if per_layer {
                for l in report.layers.iter().filter(|l| l.params > 0 || l.madds > 0) {
                    writeln!(
                        out,
                        "{:>4} {} {:<60} {:>10} {:>12}",
                        l.index,
                        if l.dynamic { '*' } else { ' ' },
                        l.label,
                        l.params,
                        l.madds
                    )
                    .unwrap();
                }
            }
            writeln!(
                out,
                "{} {} [{}]: {:.3}M params, {:.4}G MAdds, {} dynamic layers",
                report.arch,
                report.variant,
                report.placement,
                report.params as f64 / 1e6,
                report.madds as f64 / 1e9,
                report.dynamic_layers()
            )
            .unwrap();
        }
    }
}

fn parse_shape(s: &str) -> Result<[usize; 4]> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::param(format!("shape must be B,C,H,W, got `{s}`")))?;
    match v[..] {
        [b, c, h, w] if b * c * h * w > 0 => Ok([b, c, h, w]),
        _ => Err(Error::param(format!("shape must be four positive extents B,C,H,W, got `{s}`"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn bench(
    kind: BenchLayer,
    shape: &str,
    c_out: Option<usize>,
    k: usize,
    iterations: u64,
    warmup: usize,
    format: Format,
    out: &mut String,
) -> Result<Status> {
    let [b, c, h, w] = parse_shape(shape)?;
    let c_out = c_out.unwrap_or(c);
    let base = ODConvConfig::new(c, c_out, ConvGeometry::same(k)).with_reduction(1.0 / 16.0);
    let (cfg, variant) = match kind {
        BenchLayer::Static => (base.with_flags(AttentionFlags::NONE), Variant::Static),
        BenchLayer::Odconv1x => (base.with_kernels(1), Variant::odconv(1, 1.0 / 16.0)),
        BenchLayer::Odconv4x => (base.with_kernels(4), Variant::odconv(4, 1.0 / 16.0)),
        BenchLayer::Eq1Only => {
            let v = match Variant::odconv(4, 1.0 / 16.0) {
                Variant::ODConv { n, r, hidden_floor, share, bookkeeping, .. } => Variant::ODConv {
                    n,
                    r,
                    hidden_floor,
                    flags: AttentionFlags::KERNEL_ONLY,
                    share,
                    bookkeeping,
                },
                v => v,
            };
            (base.with_kernels(4).with_flags(AttentionFlags::KERNEL_ONLY), v)
        }
    };
    let layer = ODConvLayer::init_random_heads(cfg, 1, 0.5)?;
    let x = Tensor::uniform(&[b, c, h, w], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2))?;
    for _ in 0..warmup {
        std::hint::black_box(layer.forward(&x, 1.0)?);
    }
    let mut times = Vec::with_capacity(iterations as usize);
    for _ in 0..iterations {
        let t0 = Instant::now();
        std::hint::black_box(layer.forward(std::hint::black_box(&x), 1.0)?);
        times.push(t0.elapsed().as_secs_f64() * 1e6);
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    let p90 = times[(times.len() * 9 / 10).min(times.len() - 1)];
    let spec = ConvSpec { c_in: c, c_out, k, stride: 1, padding: k / 2, groups: 1 };
    let (params, madds_per_sample) = conv_cost(&spec, &variant, (h * w) as u64, (h * w) as u64)?;
    let madds = madds_per_sample * b as u64;
    let name = kind.to_possible_value().expect("no skipped variants").get_name().to_string();
    match format {
        Format::Json => writeln!(
            out,
            "{}",
            json!({
                "layer": name,
                "shape": [b, c, h, w],
                "c_out": c_out,
                "k": k,
                "iterations": iterations,
                "median_us": median,
                "p90_us": p90,
                "analytic_params": params,
                "analytic_madds": madds,
            })
        )
        .unwrap(),
        Format::Csv => {
            writeln!(out, "layer,b,c,h,w,c_out,k,iterations,median_us,p90_us,analytic_params,analytic_madds").unwrap();
            writeln!(out, "{name},{b},{c},{h},{w},{c_out},{k},{iterations},{median},{p90},{params},{madds}").unwrap();
        }
        Format::Text => writeln!(
            out,
            "{name} [{b},{c},{h},{w}] -> {c_out}, k={k}: median {median:.1} us, p90 {p90:.1} us over {iterations} runs; \
             analytic {params} params, {madds} MAdds"
        )
        .unwrap(),
    }
    Ok(Status::Ok)
}
