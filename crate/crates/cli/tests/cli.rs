use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsm"))
        .args(args)
        .env("TSM_NUM_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = tsm(args);
    assert!(
        o.status.success(),
        "tsm {args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn datagen(out: &Path, extra: &[&str]) {
    let mut a = vec![
        "datagen", "--fine", "32", "--coarse", "16", "--trajectories", "2", "--eval-trajectories", "1",
        "--duration", "0.5", "--warmup", "0.2", "--seed", "3", "--out",
    ];
    a.push(s(out));
    a.extend_from_slice(extra);
    ok(&a);
}

fn train(data: &Path, out: &Path, mode: &str, window: &str, bundle: &str, extra: &[&str]) {
    let mut a = vec![
        "train", "--dataset", s(data), "--mode", mode, "--window", window, "--bundle", bundle, "--unroll", "4",
        "--layers", "2", "--channels", "4", "--batch", "2", "--steps", "3", "--lr-warmup", "0", "--out", s(out),
    ];
    a.extend_from_slice(extra);
    ok(&a);
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = tsm(&["evaluate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(tsm(&["--help"]).status.code(), Some(0));
}

#[test]
fn failures_print_one_coded_line() {
    let d = tempfile::tempdir().unwrap();
    let o = tsm(&["evaluate", "--pred", "/nonexistent.tsm", "--reference", "/nonexistent.tsm", "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("tsm: error[E_IO]: "), "{err}");

    let o = tsm(&["evaluate", "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().starts_with("tsm: error[E_USAGE]: "));

    let o = tsm(&["datagen", "--preset", "nope", "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_identical_trajectories_is_censored() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    datagen(&data, &[]);
    let traj = data.join("eval_000.tsm");
    let out = d.path().join("ev");
    let stdout = ok(&["evaluate", "--pred", s(&traj), "--reference", s(&traj), "--out", s(&out)]);
    assert!(stdout.contains("censored=true"), "{stdout}");
    let m = json(&data.join("manifest.json"));
    let frames = m["frames_per_trajectory"].as_u64().unwrap() as usize;
    let save_dt = m["save_dt"].as_f64().unwrap();
    let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let row = r.records().next().unwrap().unwrap();
    let duration: f64 = row[3].parse().unwrap();
    assert!((duration - (frames - 1) as f64 * save_dt).abs() < 1e-9);
    assert_eq!(&row[4], "true");
    let corr = fs::read_to_string(out.join("correlation.csv")).unwrap();
    assert!(corr.starts_with("time,rho\n"));
    assert_eq!(corr.lines().count(), frames + 1);
}

#[test]
fn pipeline() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    datagen(&data, &[]);
    let m = json(&data.join(RUN));
    assert_eq!(m["subcommand"], "datagen");
    assert_eq!(m["resolved"]["fine"], 32);
    assert!(m["outputs"].as_array().unwrap().iter().any(|f| f["path"].as_str().unwrap().ends_with("train_000.tsm")));

    let models = [("li", "1", "1"), ("tsm-raw", "4", "2"), ("tsm-hippo", "4", "2"), ("lc", "1", "1")];
    for (mode, w, k) in models {
        let out = d.path().join(mode);
        train(&data, &out, mode, w, k, &[]);
        assert!(out.join("final.ckpt").exists());
        let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
        assert!(log.starts_with("step,loss,lr,wall_time\n"));
        assert_eq!(log.lines().count(), 4);
        let m = json(&out.join(RUN));
        assert!(m["inputs"].as_array().unwrap().iter().all(|f| f["sha256"].as_str().unwrap().len() == 64));
    }

    let traj = data.join("eval_000.tsm");
    let pred = d.path().join("pred.tsm");
    let ck = d.path().join("tsm-hippo/final.ckpt");
    let stdout = ok(&["simulate", "--trajectory", s(&traj), "--checkpoint", s(&ck), "--out", s(&pred)]);
    assert!(stdout.contains("network calls"), "{stdout}");
    assert!(Path::new(&format!("{}.manifest.json", pred.display())).exists());

    let ev = d.path().join("ev");
    ok(&["evaluate", "--pred", s(&pred), "--reference", s(&traj), "--offset", "3", "--out", s(&ev)]);
    let summary = fs::read_to_string(ev.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5, "{summary}");

    let spec = d.path().join("spectrum.csv");
    ok(&["spectrum", "--trajectory", s(&traj), "--from", "0.1", "--out", s(&spec)]);
    assert!(fs::read_to_string(&spec).unwrap().starts_with("k,E_k,E_k_times_k5\n"));

    let cmp = d.path().join("cmp");
    let mut a = vec!["compare", "--dataset", s(&data), "--out", s(&cmp)];
    let specs: Vec<String> = models
        .iter()
        .rev()
        .map(|(m, _, _)| format!("{m}={}", d.path().join(m).join("final.ckpt").display()))
        .collect();
    for sp in &specs {
        a.push("--model");
        a.push(sp);
    }
    ok(&a);
    let mut r = csv::Reader::from_path(cmp.join("compare_table.csv")).unwrap();
    let kinds: Vec<(String, String)> = r.records().map(|x| x.unwrap()).map(|x| (x[0].to_string(), x[1].to_string())).collect();
    let order: Vec<&str> = kinds.iter().map(|(_, m)| m.as_str()).collect();
    assert_eq!(order, ["dns-16", "lc", "li", "tsm-raw", "tsm-hippo"]);
    assert_eq!(kinds[0].0, "DNS");
    assert!(cmp.join("corr_tsm-hippo_000.csv").exists());
}

const RUN: &str = "run_manifest.json";

#[test]
fn strict_runs_reproduce_bitwise() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    datagen(&data, &["--strict-deterministic"]);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    train(&data, &a, "tsm-hippo", "4", "2", &["--strict-deterministic"]);
    // Replaying the run manifest reproduces the run.
    let replay = a.join(RUN);
    ok(&["train", "--strict-deterministic", "--config", s(&replay), "--out", s(&b)]);
    for f in ["final.ckpt", "train_log.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (ma, mb) = (json(&a.join(RUN)), json(&b.join(RUN)));
    assert_eq!(ma["wall_clock_seconds"], 0.0);
    assert_eq!(ma["outputs"][0]["sha256"], mb["outputs"][0]["sha256"]);
}

#[test]
fn ks_dataset_trains() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("ks");
    ok(&[
        "datagen", "--equation", "ks", "--fine", "64", "--coarse", "32", "--trajectories", "1",
        "--eval-trajectories", "1", "--duration", "0.5", "--warmup", "1", "--out", s(&data),
    ]);
    let out = d.path().join("m");
    train(&data, &out, "tsm-hippo", "4", "2", &[]);
    let pred = d.path().join("p.tsm");
    ok(&["simulate", "--trajectory", s(&data.join("eval_000.tsm")), "--checkpoint", s(&out.join("final.ckpt")), "--out", s(&pred)]);
    let o = tsm(&["spectrum", "--trajectory", s(&pred), "--out", s(&d.path().join("s.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}
