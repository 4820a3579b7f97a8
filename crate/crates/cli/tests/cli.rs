use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMOKE: &str = r#"{
  "model": {"hidden_dims": [64, 32, 16]},
  "train": {"epochs": 3, "batches_per_epoch": 3, "batch_size": 16, "warmup_epochs": 1,
            "test_size": 32, "eval_mc_samples": 20, "eval_batch": 16},
  "baseline": {"test_size": 24, "feedback_bits": [12, 36]}
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gsmefb"));
    c.env_remove("GSMEFB_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("gsmefb-cli-{}-{}", name, std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn gen_data_is_deterministic_and_sized() {
    let d = tmp("gen");
    let (a, b) = (d.join("a.bin"), d.join("b.bin"));
    for p in [&a, &b] {
        let o = run(&["gen-data", "--count", "7", "--out", s(p)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(bytes.len(), 24 + 7 * 4 * 16 * 16);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 7);
    let side = fs::read_to_string(d.join("a.bin.json")).unwrap();
    assert!(side.contains("\"count\": 7") && side.contains("\"seed\": 2023"));

    let o = run(&["gen-data", "--count", "7", "--seed", "5", "--out", s(&b)]);
    assert_eq!(code(&o), 0);
    assert_ne!(bytes, fs::read(&b).unwrap());
}

#[test]
fn train_sweep_and_resume() {
    let d = tmp("train");
    let cfg = write_config(&d, SMOKE);
    let (a, b, c) = (d.join("runs/a"), d.join("b"), d.join("c"));
    for out in [&a, &b] {
        let o = run(&["train", "--config", s(&cfg), "--out-dir", s(out), "--quiet"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["metrics.csv", "checkpoint.bin", "config.json", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between reruns");
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# schema_version=1\n"));
    assert_eq!(data_rows(&metrics).len(), 3);

    // interrupted after one epoch, then resumed
    let o = run(&["train", "--config", s(&cfg), "--out-dir", s(&c), "--quiet", "--stop-after", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(data_rows(&fs::read_to_string(c.join("metrics.csv")).unwrap()).len(), 1);
    let o = run(&["train", "--out-dir", s(&c), "--resume", "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "checkpoint.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(c.join(f)).unwrap(), "{f} differs after resume");
    }

    let out = d.join("snr.csv");
    let out2 = d.join("snr2.csv");
    for o in [&out, &out2] {
        let r = run(&["sweep", "--checkpoint-set", s(&a), "--axis", "snr", "--values=-5,0,5,10,15", "--out", s(o)]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text, fs::read_to_string(&out2).unwrap());
    assert!(text.lines().any(|l| l == "axis_value,mi_amp_phase,mi_spatial,rate,mc_stderr,scheme"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 5);
    for r in &rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f.len(), 6);
        let (amp, sp, rate): (f64, f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap());
        assert!((amp + sp - rate).abs() < 1e-9);
    }

    // sigma^2 = 1e-30 swamps the identity in the covariance: Cholesky fails
    let r = run(&["sweep", "--checkpoint-set", s(&a), "--axis", "snr", "--values", "300", "--out", s(&out2)]);
    assert_eq!(code(&r), 2, "{}", String::from_utf8_lossy(&r.stderr));

    let r = run(&["sweep", "--checkpoint-set", s(&d.join("runs")), "--axis", "bits", "--values", "30", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(data_rows(&fs::read_to_string(&out).unwrap()).len(), 1);

    let r = run(&["sweep", "--checkpoint-set", s(&d.join("runs")), "--axis", "bits", "--values", "6,30,40", "--out", s(&out)]);
    assert_eq!(code(&r), 1);
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("6, 40"), "{err}");
}

#[test]
fn baseline_rows_and_dominance() {
    let d = tmp("baseline");
    let cfg = write_config(&d, SMOKE);
    let out = d.join("b.csv");
    let o = run(&["baseline", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 3);
    let rate = |i: usize| rows[i].split(',').nth(3).unwrap().parse::<f64>().unwrap();
    assert!(rows[0].starts_with("inf,") && rows[0].ends_with("infinite-feedback"));
    assert!(rows[2].starts_with("36,") && rows[2].ends_with("B=36"));
    assert!(rate(0) >= rate(2) && rate(2) >= rate(1), "{rows:?}");

    let o = run(&["baseline", "--config", s(&cfg), "--out", s(&out), "--snr-values", "0,10"]);
    assert_eq!(code(&o), 0);
    assert_eq!(data_rows(&fs::read_to_string(&out).unwrap()).len(), 6);
}

#[test]
fn exit_codes() {
    let d = tmp("exit");
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["gen-data", "--out", "x"])), 1);
    assert_eq!(code(&run(&["gen-data", "--count", "0", "--out", s(&d.join("x"))])), 1);

    let bad = write_config(&d, r#"{"train": {"warmup_epochs": 900}}"#);
    assert_eq!(code(&run(&["train", "--config", s(&bad), "--out-dir", s(&d.join("r"))])), 1);
    assert_eq!(code(&run(&["train", "--config", s(&d.join("missing.json")), "--out-dir", s(&d.join("r"))])), 1);
    assert_eq!(code(&run(&["train", "--out-dir", s(&d.join("none")), "--resume"])), 1);
    assert_eq!(code(&run(&["sweep", "--checkpoint-set", s(&d), "--axis", "snr", "--values", "1", "--out", s(&d.join("o"))])), 1);

    let o = bin().args(["--threads", "0", "--help"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let o = bin()
        .env("GSMEFB_THREADS", "0")
        .args(["gen-data", "--count", "1", "--out", s(&d.join("g"))])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}
