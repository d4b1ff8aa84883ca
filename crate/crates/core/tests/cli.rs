use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

use driftrisk::sqsd::{read_records_jsonl, Variant};

const BIN: &str = env!("CARGO_BIN_EXE_driftrisk");

/// One fig2-analog toy run shared by every test.
fn world() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = run_in(
            dir.path(),
            &["toy-run", "--preset", "fig2-analog", "--out-dir", "w"],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        dir
    })
    .path()
}

fn run_in(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

fn scratch() -> (tempfile::TempDir, PathBuf) {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().to_path_buf();
    (d, p)
}

fn w(name: &str) -> String {
    world().join("w").join(name).display().to_string()
}

fn danger() -> String {
    w("directions/danger-aegis-unsafe.safetensors")
}

fn safety() -> String {
    w("directions/safety-pku-saferlhf.safetensors")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr).to_string();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines.len(), 1, "expected one stderr line, got {s:?}");
    lines[0].to_string()
}

fn score(dir: &Path, variant: &str, out: &str) -> Output {
    run_in(
        dir,
        &[
            "score",
            "--init",
            &w("base.safetensors"),
            "--model-config",
            &w("model.json"),
            "--corpus",
            &w("corpus.jsonl"),
            "--danger",
            &danger(),
            "--safety",
            &safety(),
            "--variant",
            variant,
            "--out",
            out,
        ],
    )
}

#[test]
fn score_variants_differ_only_in_variant() {
    let (_d, dir) = scratch();
    assert!(score(&dir, "full", "full.jsonl").status.success());
    assert!(score(&dir, "no_norm", "raw.jsonl").status.success());
    let mut a = json(&dir.join("full.jsonl.manifest.json"));
    let mut b = json(&dir.join("raw.jsonl.manifest.json"));
    assert_eq!(a["inputs"], b["inputs"]);
    for m in [&mut a, &mut b] {
        m["config"]["variant"] = Value::Null;
        m["config"]["out"] = Value::Null;
        m["outputs"] = Value::Null;
    }
    assert_eq!(a, b);

    let read = |p: &str| {
        read_records_jsonl(std::io::BufReader::new(
            std::fs::File::open(dir.join(p)).unwrap(),
        ))
        .unwrap()
    };
    let (full, raw) = (read("full.jsonl"), read("raw.jsonl"));
    assert_eq!(full.len(), raw.len());
    for (f, r) in full.iter().zip(&raw) {
        assert_eq!(f.sample_id, r.sample_id);
        assert_eq!(f.variant_scores, r.variant_scores);
        assert_eq!(f.score, f.variant_scores[&Variant::Full]);
        assert_eq!(r.score, r.variant_scores[&Variant::NoNorm]);
    }
}

#[test]
fn score_is_idempotent_and_manifest_replays() {
    let (_d, dir) = scratch();
    assert!(score(&dir, "full", "a.jsonl").status.success());
    assert!(score(&dir, "full", "b.jsonl").status.success());
    let a = std::fs::read(dir.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.join("b.jsonl")).unwrap());
    let before = std::fs::read(dir.join("a.jsonl.manifest.json")).unwrap();
    std::fs::remove_file(dir.join("a.jsonl")).unwrap();
    let out = run_in(&dir, &["score", "--config", "a.jsonl.manifest.json"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(dir.join("a.jsonl")).unwrap(), a);
    assert_eq!(
        std::fs::read(dir.join("a.jsonl.manifest.json")).unwrap(),
        before
    );
}

#[test]
fn steer_sweep_emits_one_row_per_alpha() {
    let (_d, dir) = scratch();
    let out = run_in(
        &dir,
        &[
            "steer-sweep",
            "--base",
            &w("base.safetensors"),
            "--direction",
            &danger(),
            "--alphas",
            "-0.4:1.2:0.1",
            "--judge",
            &w("judge.json"),
            "--out",
            "sweep.csv",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut r = csv::Reader::from_path(dir.join("sweep.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["alpha", "safety", "asr"]);
    let alphas: Vec<f64> = r
        .records()
        .map(|x| x.unwrap()[0].parse().unwrap())
        .collect();
    assert_eq!(alphas.len(), 17);
    assert_eq!(alphas[0], -0.4);
    assert_eq!(alphas[16], 1.2);
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records()
        .map(|x| x.unwrap()[idx].parse().unwrap())
        .collect()
}

#[test]
fn fig2_trajectory_danger_projection_rises() {
    let p = world().join("w/trajectory.csv");
    for tag in ["p_danger:aegis-unsafe", "p_danger:beaver-unsafe"] {
        let v = column(&p, tag);
        let fin = *v.last().unwrap();
        assert!(fin > 0.0);
        let mut peak = f64::NEG_INFINITY;
        for x in v {
            peak = peak.max(x);
            assert!(
                peak - x <= 0.05 * fin,
                "{tag} dips {} below its running max",
                peak - x
            );
        }
    }
    let judge = column(&p, "judge_score");
    assert!(judge.last().unwrap() < &judge[0]);
}

#[test]
fn trace_reproduces_toy_trajectory() {
    let (_d, dir) = scratch();
    let mut ckpts: Vec<String> = std::fs::read_dir(world().join("w/checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().path().display().to_string())
        .collect();
    ckpts.reverse();
    let mut args = vec!["trace", "--base"];
    let base = w("base.safetensors");
    args.push(&base);
    args.push("--checkpoints");
    args.extend(ckpts.iter().map(String::as_str));
    let dirs = [
        danger(),
        w("directions/danger-beaver-unsafe.safetensors"),
        safety(),
    ];
    args.push("--directions");
    args.extend(dirs.iter().map(String::as_str));
    let judge = w("judge.json");
    args.extend(["--judge", &judge, "--out", "t.csv"]);
    let out = run_in(&dir, &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        std::fs::read_to_string(dir.join("t.csv")).unwrap(),
        std::fs::read_to_string(world().join("w/trajectory.csv")).unwrap()
    );
}

#[test]
fn errors_are_single_categorized_lines() {
    let (_d, dir) = scratch();
    let out = run_in(
        &dir,
        &[
            "score",
            "--init",
            &w("base.safetensors"),
            "--corpus",
            &w("corpus.jsonl"),
            "--danger",
            &danger(),
            "--out",
            "x",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error[invalid_combination]: "));

    let out = run_in(&dir, &["score", "--frobnicate", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[usage]: "));

    let out = run_in(
        &dir,
        &[
            "trace",
            "--base",
            "missing.safetensors",
            "--checkpoints",
            "c_1.st",
            "--directions",
            "d",
            "--out",
            "t.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error[missing_file]: "));

    std::fs::write(
        dir.join("bad.json"),
        r#"{"preset":"fig2-analog","out_dir":"o","sede":3}"#,
    )
    .unwrap();
    let out = run_in(&dir, &["toy-run", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error[config]: "));

    let out = run_in(
        &dir,
        &[
            "steer-sweep",
            "--base",
            &w("base.safetensors"),
            "--direction",
            &danger(),
            "--alphas",
            "1:0:0.1",
            "--judge",
            &w("judge.json"),
            "--out",
            "s.csv",
        ],
    );
    assert!(stderr_line(&out).starts_with("error[invalid_value]: "));
    assert!(!dir.join("s.csv").exists());
}

#[test]
fn flags_override_config_file() {
    let (_d, dir) = scratch();
    let cfg = serde_json::json!({
        "base": w("base.safetensors"),
        "direction": danger(),
        "alphas": "0:1:0.5",
        "judge": w("judge.json"),
        "out": "s.csv",
    });
    std::fs::write(dir.join("c.json"), cfg.to_string()).unwrap();
    let out = run_in(
        &dir,
        &["steer-sweep", "--config", "c.json", "--alphas", "0,0.25"],
    );
    assert!(out.status.success());
    assert_eq!(column(&dir.join("s.csv"), "alpha"), vec![0.0, 0.25]);
    assert_eq!(
        json(&dir.join("s.csv.manifest.json"))["config"]["alphas"],
        "0,0.25"
    );
}

#[test]
fn direction_and_sensitivity_round_trip() {
    let (_d, dir) = scratch();
    let out = run_in(
        &dir,
        &[
            "build-direction",
            "--base",
            &w("base.safetensors"),
            "--target",
            &w("checkpoints/step_00400.safetensors"),
            "--label",
            "danger",
            "--tag",
            "drift",
            "--modules",
            "layers.0.fc,layers.1.fc",
            "--out",
            "v.safetensors",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let side = json(&dir.join("v.safetensors.json"));
    assert_eq!(side["label"], "danger");
    assert_eq!(side["per_module_norms"].as_object().unwrap().len(), 2);

    let out = run_in(
        &dir,
        &[
            "sensitivity",
            "--kind",
            "linear",
            "--base",
            &w("base.safetensors"),
            "--direction",
            &danger(),
            "--alphas",
            "0:1:0.1",
            "--judge",
            &w("judge.json"),
            "--k",
            "3",
            "--out",
            "s.csv",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ranked = json(&dir.join("s.csv.ranked.json"));
    assert_eq!(ranked["top_k"].as_array().unwrap().len(), 3);
    assert_eq!(ranked["all"].as_array().unwrap().len(), 11);
    let ds: Vec<f64> = ranked["all"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["ds"].as_f64().unwrap())
        .collect();
    assert!(ds.windows(2).all(|w| w[0] <= w[1]));

    let out = run_in(
        &dir,
        &[
            "sensitivity",
            "--kind",
            "drift",
            "--base",
            &w("base.safetensors"),
            "--direction",
            &danger(),
            "--alphas",
            "0:1:0.1",
            "--judge",
            &w("judge.json"),
            "--out",
            "x.csv",
        ],
    );
    assert!(stderr_line(&out).starts_with("error[invalid_combination]: "));
}

#[test]
fn rank_eval_and_taylor_check() {
    let (_d, dir) = scratch();
    assert!(score(&dir, "full", "r.jsonl").status.success());
    let out = run_in(
        &dir,
        &[
            "rank-eval",
            "--scores",
            "r.jsonl",
            "--corpus",
            &w("corpus.jsonl"),
            "--base",
            &w("base.safetensors"),
            "--model-config",
            &w("model.json"),
            "--judge",
            &w("judge.json"),
            "--out",
            "re.json",
            "--table",
            "re.txt",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("Method"));
    assert_eq!(stdout, std::fs::read_to_string(dir.join("re.txt")).unwrap());
    let report = json(&dir.join("re.json"));
    assert_eq!(report["subsets"].as_array().unwrap().len(), 5);
    assert_eq!(report["asr_per_subset"].as_array().unwrap().len(), 5);

    let out = run_in(
        &dir,
        &[
            "taylor-check",
            "--init",
            &w("base.safetensors"),
            "--direction",
            &danger(),
            "--alpha",
            "0.01",
            "--model-config",
            &w("model.json"),
            "--corpus",
            &w("corpus.jsonl"),
            "--out",
            "tc.csv",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let agree = {
        let mut r = csv::Reader::from_path(dir.join("tc.csv")).unwrap();
        let rows: Vec<bool> = r.records().map(|x| &x.unwrap()[4] == "true").collect();
        rows.iter().filter(|b| **b).count() as f64 / rows.len() as f64
    };
    assert!(agree >= 0.95, "sign agreement {agree}");
    let out = run_in(
        &dir,
        &[
            "taylor-check",
            "--init",
            &w("base.safetensors"),
            "--corpus",
            &w("corpus.jsonl"),
            "--out",
            "t2.csv",
        ],
    );
    assert!(stderr_line(&out).starts_with("error[invalid_combination]: "));
}

#[test]
fn workers_flag_and_env_are_validated() {
    let (_d, dir) = scratch();
    let out = Command::new(BIN)
        .current_dir(&dir)
        .env("DRIFTRISK_WORKERS", "lots")
        .args(["toy-run", "--preset", "fig2-analog", "--out-dir", "o"])
        .output()
        .unwrap();
    assert!(stderr_line(&out).starts_with("error[invalid_value]: "));
    let out = run_in(
        &dir,
        &[
            "--workers",
            "0",
            "toy-run",
            "--preset",
            "fig2-analog",
            "--out-dir",
            "o",
        ],
    );
    assert!(stderr_line(&out).starts_with("error[invalid_value]: "));
}
