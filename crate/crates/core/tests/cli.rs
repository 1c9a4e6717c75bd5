use odconv::cli::{run, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

fn call(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("odconv").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn gradcheck_default_and_static_path() {
    let (code, out, _) = call(&["gradcheck"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert_eq!(out.lines().filter(|l| l.contains("max relative error")).count(), 7);

    let (code, out, _) = call(&["gradcheck", "--n", "1", "--flags", "none"]);
    assert_eq!(code, EXIT_OK);
    for line in out.lines().filter(|l| l.contains("max relative error")) {
        let v: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(v <= 1e-6, "{line}");
    }
}

#[test]
fn invalid_ratio_is_usage_error() {
    let (code, _, err) = call(&["gradcheck", "--r", "2.0"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("(0, 1]"), "{err}");
    assert_eq!(call(&["complexity", "--unknown-flag"]).0, EXIT_USAGE);
    assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(call(&["--help"]).0, EXIT_OK);
}

#[test]
fn complexity_formats() {
    let (code, out, _) = call(&["complexity", "--arch", "resnet18", "--variant", "odconv", "--n", "4", "--r", "1/16"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("44.902M"), "{out}");

    let (_, csv, _) = call(&["complexity", "--arch", "mobilenetv2-1.0", "--format", "csv"]);
    assert!(csv.starts_with("index,line,kind,dynamic,params,madds\n"));
    let total: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    let params: f64 = total[4].parse().unwrap();
    assert!((params / 3.50e6 - 1.0).abs() < 0.02);

    let (_, json, _) = call(&["complexity", "--variant", "odconv", "--r", "0.0625", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let sum: u64 = v["layers"].as_array().unwrap().iter().map(|l| l["params"].as_u64().unwrap()).sum();
    assert_eq!(sum, v["params"].as_u64().unwrap());

    assert_eq!(call(&["complexity", "--arch", "vgg-nonexistent"]).0, EXIT_USAGE);
}

#[test]
fn train_writes_record_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, "layers 4 8\nimage 1 8 8\ntrain_samples 6\neval_samples 3\nepochs 2\nbatch 8\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let empty = dir.path().join("empty");
    let (code, _, _) = call(&["train", "--config", cfg, "--out", empty.to_str().unwrap(), "--epochs", "0"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(
        std::fs::read_to_string(empty.join("record.csv")).unwrap(),
        "epoch,temperature,train_loss,train_acc,eval_acc\n"
    );

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        assert_eq!(call(&["train", "--config", cfg, "--out", d.to_str().unwrap(), "--seed", "7"]).0, EXIT_OK);
    }
    let csv = std::fs::read(a.join("record.csv")).unwrap();
    assert_eq!(csv, std::fs::read(b.join("record.csv")).unwrap());
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    assert_eq!(std::fs::read(a.join("model.ck")).unwrap(), std::fs::read(b.join("model.ck")).unwrap());

    let ck = a.join("model.ck");
    let (code, json, _) = call(&["attention-stats", "--checkpoint", ck.to_str().unwrap(), "--config", cfg, "--format", "json"]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn default_training_improves_train_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = call(&["train", "--out", dir.path().to_str().unwrap(), "--seed", "1"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let csv = std::fs::read_to_string(dir.path().join("record.csv")).unwrap();
    let acc: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(acc.len(), 15);
    assert!(acc[14] > acc[0], "{acc:?}");
}

#[test]
fn corrupt_checkpoint_fails_stats() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ck");
    std::fs::write(&p, b"not a checkpoint").unwrap();
    assert_eq!(call(&["attention-stats", "--checkpoint", p.to_str().unwrap()]).0, EXIT_FAILURE);
}

#[test]
fn bench_reports_analytic_madds() {
    let madds = |layer: &str| {
        let (code, out, _) = call(&["bench", "--layer", layer, "--shape", "1,8,8,8", "--format", "json"]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v["median_us"].as_f64().unwrap() <= v["p90_us"].as_f64().unwrap());
        v["analytic_madds"].as_u64().unwrap()
    };
    assert!(madds("odconv4x") > madds("static"));
    madds("eq1-only");
    madds("odconv1x");
    assert_eq!(call(&["bench", "--iterations", "10"]).0, EXIT_USAGE);
}

#[test]
fn verify_matrix_and_fault_injection() {
    let (code, out, _) = call(&["verify", "--filter", "reduction"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().filter(|l| l.contains("PASS")).count(), 1);

    let (code, out, _) = call(&["verify", "--filter", "linearity", "--inject-fault", "combine-order"]);
    assert_eq!(code, EXIT_FAILURE);
    assert!(out.contains("failed: linearity"), "{out}");
}
