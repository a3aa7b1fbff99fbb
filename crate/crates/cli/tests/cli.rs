use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ldr2hdr_core::imgio::{load_hdr16, load_ldr, save_hdr16, save_ldr, HdrImage, LdrImage};

const SMALL_CONFIG: &str = r#"
batch_size = 2
patch_size = 64

[model.stage1]
n_rdab = 1
[model.stage1.rdab]
dense_layers = 2
growth = 8
base_channels = 8

[model.stage2]
n_rdab = 1
[model.stage2.rdab]
dense_layers = 2
growth = 8
base_channels = 8
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ldr2hdr"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Builds a small synthetic dataset and a checkpoint trained for two steps.
fn trained(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = run(&["dataset", "--synthetic", "2", "--patches", "2", "--patch-size", "64", "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let out = dir.join("run");
    let o = run(&["train", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&out), "--max-steps", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("final.ckpt")
}

#[test]
fn synthetic_dataset_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["dataset", "--synthetic", "2", "--patches", "3", "--seed", "5", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).starts_with("6 triplets"), "{}", stdout(&o));
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}

#[test]
fn missing_manifest_is_usage_error_naming_path() {
    let o = run(&["dataset", "--manifest", "/definitely/missing.toml", "--out", "/tmp/unused"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/definitely/missing.toml"));
}

#[test]
fn dataset_needs_a_source() {
    assert_eq!(code(&run(&["dataset", "--out", "/tmp/unused"])), 2);
}

#[test]
fn params_report_prints_counts_and_deviations() {
    let o = run(&["params"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for needle in ["534665", "269094", "803759", "555655", "278821", "834476", "%"] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
}

#[test]
fn params_report_follows_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("wide.toml");
    fs::write(&cfg, "[model.stage1]\nn_rdab = 2\n[model.stage1.rdab]\ngrowth = 64\n").unwrap();
    let o = run(&["params", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stage1: usize = stdout(&o)
        .lines()
        .find(|l| l.starts_with("stage-I "))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!(stage1 > 534_665);
}

#[test]
fn malformed_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "batch_size = [").unwrap();
    assert_eq!(code(&run(&["params", "--config", s(&cfg)])), 2);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let o = run(&["train", "--config", s(&cfg), "--dataset", s(dir.path()), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn train_logs_each_step_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    assert!(ckpt.exists());
    let log = dir.path().join("run/train_log.jsonl");
    let lines: Vec<serde_json::Value> = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|r| r["total"].is_f64() && r["step"].is_u64()));

    let cfg = dir.path().join("small.toml");
    let o = run(&[
        "train",
        "--config",
        s(&cfg),
        "--dataset",
        s(&dir.path().join("data")),
        "--out",
        s(&dir.path().join("run")),
        "--resume",
        s(&ckpt),
        "--max-steps",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("step 3"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);
}

#[test]
fn infer_preserves_size_and_rejects_16_bit_input() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    let input = dir.path().join("in.png");
    save_ldr(&LdrImage::from_fn(48, 64, |y, x, c| ((y * 3 + x * 2 + c * 40) % 256) as u8), &input).unwrap();
    let output = dir.path().join("out.png");
    let o = run(&["infer", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&output)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains(" s"), "wall time missing: {}", stdout(&o));
    let hdr = load_hdr16(&output).unwrap();
    assert_eq!((hdr.width(), hdr.height()), (64, 48));

    let o = run(&["infer", "--checkpoint", s(&ckpt), "--input", s(&output), "--output", s(&input)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

fn write_pairs(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("pairs.toml");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn eval_identical_pairs_hit_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    for (i, seed) in [(0, 7u32), (1, 11)] {
        let img = HdrImage::from_fn(20, 20, |y, x, c| ((y as u32 * 997 + x as u32 * 31 + c as u32 * seed) % 65536) as u16);
        save_hdr16(&img, dir.path().join(format!("gt{i}.png"))).unwrap();
    }
    let pairs = write_pairs(
        dir.path(),
        "[[pairs]]\nid = \"a\"\nhdr16 = \"gt0.png\"\npred = \"gt0.png\"\n\n[[pairs]]\nid = \"b\"\nhdr16 = \"gt1.png\"\npred = \"gt1.png\"\n",
    );
    let report = dir.path().join("report.jsonl");
    let o = run(&["eval", "--pairs", s(&pairs), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: Vec<serde_json::Value> = fs::read_to_string(&report)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r["schema"], 1);
        assert_eq!(r["psnr"], 100.0);
        assert_eq!(r["mu_psnr"], 100.0);
    }
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn eval_runs_the_model_on_ldr_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    let data = dir.path().join("data/scene0000");
    let pairs = write_pairs(
        dir.path(),
        &format!(
            "[[pairs]]\nid = \"p0\"\nldr = \"{0}/0_ldr.png\"\nhdr16 = \"{0}/0_ref16.png\"\n",
            data.display()
        ),
    );
    let report = dir.path().join("r/report.jsonl");
    let o = run(&["eval", "--checkpoint", s(&ckpt), "--pairs", s(&pairs), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("over 1 pairs"));

    let o = run(&["eval", "--pairs", s(&pairs), "--report", s(&report)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn eval_rejects_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = write_pairs(dir.path(), "");
    let o = run(&["eval", "--pairs", s(&pairs), "--report", s(&dir.path().join("r.jsonl"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn visualize_writes_8_bit_png() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("h.png");
    save_hdr16(&HdrImage::from_fn(8, 8, |y, x, _| (y * 8 + x) as u16 * 1000), &input).unwrap();
    let out = dir.path().join("v.png");
    let o = run(&["visualize", "--input", s(&input), "--output", s(&out), "--percentile", "0.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = load_ldr(&out).unwrap();
    assert_eq!(v.get(7, 7, 0), 255);
    assert_eq!(v.get(0, 0, 0), 0);

    let o = run(&["visualize", "--input", s(&input), "--output", s(&out), "--percentile", "1.5"]);
    assert_eq!(code(&o), 2);
}
