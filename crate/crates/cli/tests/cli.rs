use std::path::Path;
use std::process::{Command, Output};

fn drumstyle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drumstyle")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> serde_json::Value {
    let out = drumstyle(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn one_line_error(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
    err
}

fn synth(dir: &Path, n: &str) -> String {
    let data = dir.join("data");
    ok_json(&["synth-dataset", "--out", data.to_str().unwrap(), "--n", n, "--seed", "4"]);
    data.join("manifest.jsonl").display().to_string()
}

#[test]
fn synth_describe_and_envelopes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "10");
    let text = std::fs::read_to_string(&manifest).unwrap();
    assert_eq!(text.lines().count(), 10);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let wav = dir.path().join("data").join(first["path"].as_str().unwrap());

    let d = ok_json(&["describe", "--in", wav.to_str().unwrap(), "--json"]);
    for k in ["brightness", "depth", "warmth"] {
        let v = d[k].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&v), "{k} = {v}");
    }

    let env_dir = dir.path().join("env");
    let r = ok_json(&[
        "envelopes-extract",
        "--manifest",
        &manifest,
        "--out",
        env_dir.to_str().unwrap(),
        "--length",
        "4096",
    ]);
    assert_eq!(r["envelopes"].as_array().unwrap().len(), 3);
    for class in ["hat", "kick", "snare"] {
        let bytes = std::fs::read(env_dir.join(format!("{class}.env"))).unwrap();
        assert_eq!(&bytes[..4], b"ENV1");
    }
}

#[test]
fn train_generate_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "12");
    let ckpt = dir.path().join("toy.ckpt");
    let log = dir.path().join("loss.csv");
    let t = ok_json(&[
        "train-toy",
        "--manifest",
        &manifest,
        "--out",
        ckpt.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
        "--steps",
        "2",
        "--seed",
        "1",
    ]);
    assert_eq!(t["steps"], 2);
    let csv = std::fs::read_to_string(&log).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let gen = dir.path().join("gen");
    let g = ok_json(&[
        "generate",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--out",
        gen.to_str().unwrap(),
        "--n",
        "3",
        "--class",
        "kick",
        "--brightness",
        "40",
        "--seed",
        "2",
    ]);
    assert_eq!(g["clips"], 3);
    assert!(g["realtime_factor"].as_f64().unwrap() > 0.0);
    assert_eq!(std::fs::read_dir(&gen).unwrap().count(), 4);

    let fad = drumstyle(&["fad", "--dir-a", gen.to_str().unwrap(), "--dir-b", gen.to_str().unwrap()]);
    // three clips cannot support a 64-dimensional covariance
    assert!(one_line_error(&fad).contains("more rows than columns"));

    let eval = dir.path().join("eval");
    let s = ok_json(&[
        "eval-control",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--descriptor",
        "depth",
        "--n",
        "3",
        "--seed",
        "5",
        "--out-dir",
        eval.to_str().unwrap(),
    ]);
    assert!(s.get("e1").is_some());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["records"], 9);
    let scatter = std::fs::read_to_string(eval.join("scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 10);

    let bad = drumstyle(&[
        "generate",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--out",
        gen.to_str().unwrap(),
        "--class",
        "cowbell",
        "--seed",
        "1",
    ]);
    assert!(one_line_error(&bad).contains("cowbell"));
}

#[test]
fn match_descriptors_from_noise() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.wav");
    let r = ok_json(&[
        "match-descriptors",
        "--out",
        out.to_str().unwrap(),
        "--warmth",
        "60",
        "--steps",
        "40",
        "--length",
        "2048",
    ]);
    assert!(r["final_loss"].as_f64().unwrap() <= r["initial_loss"].as_f64().unwrap());
    let d = ok_json(&["describe", "--in", out.to_str().unwrap(), "--json"]);
    assert!((d["warmth"].as_f64().unwrap() - r["achieved"]["warmth"].as_f64().unwrap()).abs() < 0.05);
    let none = drumstyle(&["match-descriptors", "--out", out.to_str().unwrap()]);
    one_line_error(&none);
}

#[test]
fn sample_report_balances() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "40");
    let r = ok_json(&["sample-report", "--manifest", &manifest, "--seed", "3", "--draws", "30000"]);
    for c in r["classes"].as_array().unwrap() {
        assert!((c["frequency"].as_f64().unwrap() - 1.0 / 3.0).abs() < 0.01);
    }
    let n =
        ok_json(&["sample-report", "--manifest", &manifest, "--mode", "natural", "--seed", "3", "--draws", "30000"]);
    let snare = n["classes"].as_array().unwrap().iter().find(|c| c["class"] == "snare").unwrap();
    assert!((snare["frequency"].as_f64().unwrap() - 0.6).abs() < 0.02);
}

#[test]
fn errors_are_single_lines() {
    one_line_error(&drumstyle(&["describe", "--in", "/nonexistent/x.wav"]));
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.wav");
    std::fs::write(&junk, b"RIFF\x10\0\0\0WAVEfmt ").unwrap();
    let e = one_line_error(&drumstyle(&["describe", "--in", junk.to_str().unwrap()]));
    assert!(e.contains("fmt"), "{e}");
    let e = one_line_error(&drumstyle(&[
        "synth-dataset",
        "--out",
        dir.path().to_str().unwrap(),
        "--proportions",
        "1,2",
        "--seed",
        "1",
    ]));
    assert!(e.contains("three"), "{e}");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[gan]\nkernel_length = 3\n").unwrap();
    one_line_error(&drumstyle(&["describe", "--in", junk.to_str().unwrap(), "--config", cfg.to_str().unwrap()]));
    assert!(!drumstyle(&["fad"]).status.success());
}
