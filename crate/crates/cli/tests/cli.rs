use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use csnas::data::{load_dataset, simulate_acquisition, Acceleration};
use csnas::traineval::{evaluate, ZeroFilled};
use csnas_cli::artifacts::{read_weights_file, LoadedNetwork};

const TINY: [&str; 8] = ["--channels", "4", "--modules", "1", "--cells", "1", "--nodes", "2"];

fn csnas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csnas"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = csnas(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&TINY);
    v
}

/// Drops the leading `# config:` line.
fn body(text: &str) -> &str {
    assert!(text.starts_with("# config: {"));
    &text[text.find('\n').unwrap() + 1..]
}

fn gen(dir: &Path, name: &str, count: &str, size: &str, seed: &str) {
    ok(
        dir,
        &["gen-data", "--count", count, "--height", size, "--width", size, "--out", name, "--seed", seed],
    );
}

#[test]
fn gen_data_layout_and_determinism() {
    let t = TempDir::new().unwrap();
    gen(t.path(), "a.bin", "10", "64", "3");
    gen(t.path(), "b.bin", "10", "64", "3");
    let a = std::fs::read(t.path().join("a.bin")).unwrap();
    assert_eq!(a.len(), 8 + 12 + 10 * 64 * 64 * 8);
    assert_eq!(a, std::fs::read(t.path().join("b.bin")).unwrap());
    gen(t.path(), "c.bin", "10", "64", "4");
    assert_ne!(a, std::fs::read(t.path().join("c.bin")).unwrap());
}

#[test]
fn gen_data_rejects_zero_count() {
    let t = TempDir::new().unwrap();
    let out = csnas(t.path(), &["gen-data", "--count", "0", "--out", "x.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!t.path().join("x.bin").exists());
}

#[test]
fn missing_dataset_is_an_input_error() {
    let t = TempDir::new().unwrap();
    for cmd in ["search", "retrain"] {
        let out = csnas(t.path(), &[cmd, "--dataset", "nope.bin", "--model", "dccnn"]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("dataset not found"));
    }
}

#[test]
fn unknown_flags_and_subcommands_are_usage_errors() {
    let t = TempDir::new().unwrap();
    assert_eq!(csnas(t.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(csnas(t.path(), &["count", "--bogus"]).status.code(), Some(2));
    assert_eq!(csnas(t.path(), &["count", "--model", "vgg"]).status.code(), Some(2));
}

#[test]
fn count_reports_golden_values() {
    let t = TempDir::new().unwrap();
    let out = ok(t.path(), &["count", "--model", "dccnn", "--blocks", "3"]);
    assert!(out.contains("params 170022"), "{out}");
    assert!(out.contains("(17.41G at 320x320)"), "{out}");
    let out = ok(t.path(), &["count", "--model", "rdn", "--blocks", "3"]);
    assert!(out.contains("params 86790"), "{out}");
}

#[test]
fn config_file_is_strict_and_flags_override_it() {
    let t = TempDir::new().unwrap();
    std::fs::write(t.path().join("bad.json"), "{\n  \"seed\": 1,\n  \"sede\": 2\n}").unwrap();
    let out = csnas(t.path(), &["count", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("line 3"), "{err}");

    std::fs::write(
        t.path().join("run.json"),
        r#"{"network": {"kind": "dccnn", "blocks": 11}}"#,
    )
    .unwrap();
    let out = ok(t.path(), &["count", "--config", "run.json"]);
    assert!(out.contains("params 613926"), "{out}");
    let out = ok(t.path(), &["count", "--config", "run.json", "--blocks", "3"]);
    assert!(out.contains("params 170022"), "{out}");
}

#[test]
fn retrain_checks_genotype_requirements() {
    let t = TempDir::new().unwrap();
    gen(t.path(), "d.bin", "2", "16", "0");
    let out = csnas(t.path(), &["retrain", "--dataset", "d.bin"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(t.path().join("g.json"), "{\"search_space\": \"A\", \"nodes\": []}").unwrap();
    let out = csnas(t.path(), &["retrain", "--dataset", "d.bin", "--genotype", "g.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("g.json"));
}

#[test]
fn search_is_reproducible() {
    let t = TempDir::new().unwrap();
    gen(t.path(), "d.bin", "4", "16", "1");
    let run = |dir: &str| {
        let args = with_tiny(&["search", "--dataset", "d.bin", "--max-epochs", "1", "--out-dir", dir]);
        ok(t.path(), &args);
        (
            std::fs::read(t.path().join(dir).join("genotype.json")).unwrap(),
            std::fs::read(t.path().join(dir).join("alpha_trace.csv")).unwrap(),
        )
    };
    let a = run("a");
    let b = run("b");
    assert_ne!(a.0.len(), 0);
    // The out_dir differs, so compare everything but the echo.
    let strip = |bytes: &[u8]| {
        let v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        (v["search_space"].clone(), v["nodes"].clone())
    };
    assert_eq!(strip(&a.0), strip(&b.0));
    assert_eq!(body(std::str::from_utf8(&a.1).unwrap()), body(std::str::from_utf8(&b.1).unwrap()));
    let again = run("a");
    assert_eq!(a, again);
    let loss = std::fs::read_to_string(t.path().join("a/search_loss.csv")).unwrap();
    assert_eq!(body(&loss).lines().count(), 2);
}

#[test]
fn eval_of_zero_filled_matches_library() {
    let t = TempDir::new().unwrap();
    gen(t.path(), "test.bin", "5", "16", "2");
    ok(t.path(), &["eval", "--testset", "test.bin", "--baseline", "zero-filled", "--seed", "7", "--out-dir", "o"]);
    let csv = std::fs::read_to_string(t.path().join("o/metrics_zero_filled.csv")).unwrap();
    let ds = load_dataset(&t.path().join("test.bin")).unwrap();
    let report = evaluate(&ZeroFilled, &ds, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(body(&csv), report.to_csv());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.path().join("o/metrics_zero_filled.json")).unwrap())
            .unwrap();
    assert_eq!(summary["accel4"]["count"], 3);
    assert_eq!(summary["accel8"]["count"], 2);
    assert_eq!(summary["config"]["seed"], 7);
}

fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = std::fs::read(path).unwrap();
    let text_end = {
        // magic, comment, size and maxval lines
        let mut newlines = 0;
        bytes
            .iter()
            .position(|&b| {
                newlines += (b == b'\n') as usize;
                newlines == 4
            })
            .unwrap()
            + 1
    };
    let header = std::str::from_utf8(&bytes[..text_end]).unwrap();
    let lines: Vec<&str> = header.lines().collect();
    assert_eq!(lines[0], "P5");
    assert!(lines[1].starts_with("# config: "));
    assert_eq!(lines[3], "255");
    let dims: Vec<usize> = lines[2].split(' ').map(|v| v.parse().unwrap()).collect();
    (dims[1], dims[0], bytes[text_end..].to_vec())
}

#[test]
fn pipeline_round_trip() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    gen(p, "train.bin", "20", "64", "11");
    gen(p, "test.bin", "4", "64", "12");
    let common = ["--dataset", "train.bin", "--testset", "test.bin", "--out-dir", "o"];
    let mut args = with_tiny(&["search", "--max-epochs", "1"]);
    args.extend_from_slice(&common);
    ok(p, &args);
    let mut args = with_tiny(&["retrain", "--genotype", "o/genotype.json", "--epochs1", "1", "--epochs2", "1"]);
    args.extend_from_slice(&common);
    ok(p, &args);
    let mut args = vec!["eval", "--weights", "o/weights.bin"];
    args.extend_from_slice(&common);
    let out = ok(p, &args);
    assert!(out.contains("nas: psnr"), "{out}");
    let csv = std::fs::read_to_string(p.join("o/metrics_nas.csv")).unwrap();
    assert_eq!(body(&csv).lines().count(), 1 + 4 + 2);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("o/metrics_nas.json")).unwrap()).unwrap();
    assert!(summary["params"].as_u64().unwrap() > 0);
    assert!(summary["flops"].as_u64().unwrap() > 0);

    let mut args = vec!["reconstruct", "--weights", "o/weights.bin", "--slice", "2", "--fold", "8"];
    args.extend_from_slice(&common);
    ok(p, &args);
    let net = match read_weights_file(&p.join("o/weights.bin")).unwrap() {
        LoadedNetwork::F64(n) => n,
        LoadedNetwork::F32(_) => panic!("default precision is f64"),
    };
    let ds = load_dataset(&p.join("test.bin")).unwrap();
    let sample =
        simulate_acquisition(ds.slice(2), Acceleration::Fold(8), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let recon = net.reconstruct(&sample).unwrap().magnitude();
    let target = sample.target.magnitude();
    let err: Vec<f64> = recon.iter().zip(&target).map(|(a, b)| (a - b).abs()).collect();
    let peak = err.iter().copied().fold(0.0, f64::max);
    let (h, w, pixels) = read_pgm(&p.join("o/slice2_error.pgm"));
    assert_eq!((h, w), (64, 64));
    let want: Vec<u8> = err.iter().map(|v| (v / peak * 255.0).round() as u8).collect();
    assert_eq!(pixels, want);
    assert_eq!(pixels.iter().copied().max(), Some(255));
    for name in ["zero_filled", "reconstruction", "target"] {
        let (_, _, px) = read_pgm(&p.join(format!("o/slice2_{name}.pgm")));
        assert_eq!(px.len(), 64 * 64);
    }
}

#[test]
fn retrain_weights_are_byte_identical_and_reload() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    gen(p, "d.bin", "3", "16", "5");
    let run = || {
        let args = with_tiny(&[
            "retrain", "--model", "dccnn", "--blocks", "1", "--dataset", "d.bin", "--epochs1", "1",
            "--epochs2", "1", "--out-dir", "o",
        ]);
        ok(p, &args);
        std::fs::read(p.join("o/weights.bin")).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert_eq!(&a[..8], b"CSNASW1\0");
    assert!(matches!(read_weights_file(&p.join("o/weights.bin")).unwrap(), LoadedNetwork::F64(_)));

    let mut bad = a.clone();
    bad[0] = b'X';
    std::fs::write(p.join("bad.bin"), &bad).unwrap();
    let out = csnas(p, &["eval", "--weights", "bad.bin", "--testset", "d.bin"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(p.join("short.bin"), &a[..a.len() - 3]).unwrap();
    let out = csnas(p, &["eval", "--weights", "short.bin", "--testset", "d.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));
}

#[test]
fn single_precision_weights() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    gen(p, "d.bin", "2", "16", "5");
    let args = with_tiny(&[
        "retrain", "--model", "rdn", "--blocks", "2", "--precision", "f32", "--dataset", "d.bin",
        "--epochs1", "1", "--epochs2", "0", "--out-dir", "o",
    ]);
    ok(p, &args);
    assert!(matches!(read_weights_file(&p.join("o/weights.bin")).unwrap(), LoadedNetwork::F32(_)));
    ok(p, &["eval", "--weights", "o/weights.bin", "--testset", "d.bin", "--out-dir", "o"]);
    assert!(p.join("o/metrics_rdn.csv").exists());
}
