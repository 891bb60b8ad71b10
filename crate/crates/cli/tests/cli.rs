use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const CONDITION: &str = "5,-3,10,2,0,1.5,0.4,0.2";

fn rgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgs"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rgs(args);
    assert!(
        out.status.success(),
        "rgs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    rgs(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
}

/// A 120-sample dataset and a short two-stage run shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        let run = dir.path().join("run");
        ok(&["gen-data", "--out", s(&data_dir), "--seed", "4", "--n-samples", "120"]);
        let data = data_dir.join("dataset.jsonl");
        ok(&["train", "--data", s(&data), "--out", s(&run), "--seed", "4", "--stage1-epochs", "6", "--stage2-epochs", "4"]);
        Fixture { _dir: dir, data, run }
    })
}

fn manifest_is_complete(dir: &Path) -> Value {
    let m = json(&dir.join("manifest.json"));
    for o in m["outputs"].as_array().unwrap() {
        assert!(dir.join(o.as_str().unwrap()).is_file(), "{o} missing");
    }
    m
}

#[test]
fn gen_data_defaults_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-data", "--out", s(&a), "--seed", "11"]);
    ok(&["gen-data", "--out", s(&b), "--seed", "11"]);
    let bytes = std::fs::read(a.join("dataset.jsonl")).unwrap();
    assert_eq!(bytes, std::fs::read(b.join("dataset.jsonl")).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert_eq!(text.lines().count(), 1 + 805);
    let header: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!((header["n_train"].as_u64(), header["n_validation"].as_u64()), (Some(644), Some(161)));
    let m = manifest_is_complete(&a);
    assert_eq!(m["subcommand"], "gen-data");
    assert_eq!(m["seed"], 11);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 3\n[generator]\nn_samples = 40\n").unwrap();
    let out = dir.path().join("d");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out), "--n-samples", "30"]);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["generator"]["n_samples"], 30);
    assert!(m["inputs"].as_object().unwrap().contains_key(s(&cfg)));
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out), "--seed", "8"]);
    assert_eq!(json(&out.join("manifest.json"))["seed"], 8);
}

#[test]
fn config_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[generator.limits]\neye_yaw = 0.0\neye_pitch = 25.0\nhead_yaw = 80.0\nhead_pitch = 40.0\nhead_roll = 10.0\n").unwrap();
    assert_eq!(code(&["gen-data", "--config", s(&bad), "--out", s(&out)]), 2);
    assert!(!out.join("dataset.jsonl").exists());

    std::fs::write(&bad, "[train]\nbatch_size = 0\n").unwrap();
    let data = s(&fixture().data);
    assert_eq!(code(&["train", "--config", s(&bad), "--data", data, "--out", s(&out)]), 2);
    std::fs::write(&bad, "typo = 1\n").unwrap();
    assert_eq!(code(&["gen-data", "--config", s(&bad), "--out", s(&out)]), 2);
    assert_eq!(code(&["gen-data", "--config", s(&dir.path().join("none.toml")), "--out", s(&out)]), 2);
}

#[test]
fn data_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(code(&["train", "--data", s(&missing), "--out", out]), 3);
    let corrupt = dir.path().join("corrupt.jsonl");
    std::fs::write(&corrupt, "{\"schema\":\"something-else\"}\n").unwrap();
    assert_eq!(code(&["train", "--data", s(&corrupt), "--out", out]), 3);
    assert_eq!(code(&["sample", "--run", out, "--out", out, "--condition", CONDITION]), 3);
}

#[test]
fn train_writes_one_metrics_row_per_epoch() {
    let f = fixture();
    let csv = std::fs::read_to_string(f.run.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("1,")).count(), 6);
    assert_eq!(rows.iter().filter(|r| r.starts_with("2,")).count(), 4);
    assert_eq!(rows.len(), 10);
    let m = manifest_is_complete(&f.run);
    for file in ["stage1.ckpt.json", "stage2.ckpt.json", "code_labels.json", "metrics.csv"] {
        assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == file), "{file}");
    }
}

#[test]
fn training_is_reproducible_and_stages_compose() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (again, split) = (dir.path().join("again"), dir.path().join("split"));
    let common = ["--data", s(&f.data), "--seed", "4", "--stage1-epochs", "6", "--stage2-epochs", "4"];
    let run = |out: &Path, stage: &str| {
        let mut args = vec!["train", "--out", s(out), "--stage", stage];
        args.extend(common);
        ok(&args);
    };
    run(&again, "both");
    for file in ["stage1.ckpt.json", "stage2.ckpt.json", "code_labels.json", "metrics.csv"] {
        assert_eq!(std::fs::read(f.run.join(file)).unwrap(), std::fs::read(again.join(file)).unwrap(), "{file}");
    }
    run(&split, "1");
    assert!(!split.join("stage2.ckpt.json").exists());
    run(&split, "2");
    assert_eq!(
        std::fs::read(f.run.join("stage2.ckpt.json")).unwrap(),
        std::fs::read(split.join("stage2.ckpt.json")).unwrap()
    );
}

#[test]
fn stage2_refuses_a_foreign_dataset() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let other = dir.path().join("other");
    ok(&["gen-data", "--out", s(&other), "--seed", "5", "--n-samples", "120"]);
    let data = other.join("dataset.jsonl");
    let args = ["train", "--data", s(&data), "--out", s(dir.path()), "--stage", "2", "--stage1-run", s(&f.run)];
    assert_eq!(code(&args), 3);
}

#[test]
fn eval_reports_both_stages() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(&["eval", "--data", s(&f.data), "--run", s(&f.run), "--out", s(dir.path())]);
    let e = json(&dir.path().join("eval.json"));
    assert_eq!(e["split"], "validation");
    assert_eq!(e["samples"], 24);
    for stage in ["stage1", "stage2"] {
        assert!(e[stage]["eye_mgd"].as_f64().unwrap() > 0.0);
        assert!(e[stage]["head_mgd"].as_f64().unwrap() > 0.0);
    }
    assert_eq!(e["diversity"]["modes"].as_array().unwrap().len(), 20);
    let top1 = e["top1_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    // best stage-1 metrics recorded at training time are reproduced
    let ck = json(&f.run.join("stage1.ckpt.json"));
    assert_eq!(ck["metadata"]["best_metrics"]["val_eye_mgd"], e["stage1"]["eye_mgd"]);
    manifest_is_complete(dir.path());
}

fn sample(run: &Path, out: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["sample", "--run", s(run), "--out", s(out), "--condition", CONDITION, "--seed", "2"];
    args.extend(extra);
    ok(&args);
    json(&out.join("samples.json"))
}

#[test]
fn argmax_sampling_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = sample(&fixture().run, dir.path(), &["--mode", "argmax", "--n", "5"]);
    let samples = out["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 5);
    assert!(samples.iter().all(|x| x == &samples[0]));
}

#[test]
fn diversity_report_matches_threshold_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = sample(&fixture().run, dir.path(), &["--n", "50"]);
    let pi: Vec<f64> = out["pi"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).collect();
    assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut expected: Vec<u64> = (0..pi.len() as u64).filter(|&k| pi[k as usize] > 0.05).collect();
    let mut listed: Vec<u64> = out["modes"].as_array().unwrap().iter().map(|m| m["code"].as_u64().unwrap()).collect();
    expected.sort();
    listed.sort();
    assert_eq!(listed, expected);
    assert_eq!(out["samples"].as_array().unwrap().len(), 50);
}

#[test]
fn one_hot_prior_lists_one_code() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    std::fs::create_dir(&run).unwrap();
    std::fs::copy(fixture().run.join("stage1.ckpt.json"), run.join("stage1.ckpt.json")).unwrap();
    let mut ck = json(&fixture().run.join("stage2.ckpt.json"));
    let bias = ck["tensors"]["prior-network.2.bias"]["data"].as_array_mut().unwrap();
    bias[6] = Value::from(1.0e4);
    std::fs::write(run.join("stage2.ckpt.json"), ck.to_string()).unwrap();
    let out = sample(&run, &dir.path().join("o"), &["--n", "20"]);
    assert_eq!(out["modes"].as_array().unwrap().len(), 1);
    assert_eq!(out["modes"][0]["code"], 6);
    assert!(out["samples"].as_array().unwrap().iter().all(|x| x["code"] == 6));
}

#[test]
fn sample_rejects_mismatched_checkpoints_and_bad_conditions() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let other = dir.path().join("other");
    ok(&["train", "--data", s(&f.data), "--out", s(&other), "--seed", "9", "--stage", "1", "--stage1-epochs", "2"]);
    std::fs::copy(f.run.join("stage2.ckpt.json"), other.join("stage2.ckpt.json")).unwrap();
    let out = s(dir.path());
    assert_eq!(code(&["sample", "--run", s(&other), "--out", out, "--condition", CONDITION]), 3);
    assert_eq!(code(&["sample", "--run", s(&f.run), "--out", out, "--condition", "1,2,3"]), 2);
    assert_eq!(code(&["sample", "--run", s(&f.run), "--out", out, "--condition", CONDITION, "--floor", "1.5"]), 2);
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios")
}

fn table(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("table.csv")).unwrap().lines().map(String::from).collect()
}

#[test]
fn replay_scripted_backends() {
    let dir = tempfile::tempdir().unwrap();
    let (oracle, adversarial) = (dir.path().join("oracle"), dir.path().join("adv"));
    ok(&["replay", "--scenarios", s(&scenarios()), "--out", s(&oracle)]);
    assert_eq!(
        table(&oracle),
        ["regularity,clips,correct,success_rate", "H1,3,3,100.0", "H2,3,3,100.0", "H3,3,3,100.0", "H4,3,3,100.0"]
    );
    let m = manifest_is_complete(&oracle);
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == "logs/h1-pointing-cup.jsonl"));
    let log = std::fs::read_to_string(oracle.join("logs/h1-pointing-cup.jsonl")).unwrap();
    for line in log.lines() {
        let entry: Value = serde_json::from_str(line).unwrap();
        assert_eq!(entry["record"]["position"].as_array().unwrap().len(), 3);
    }

    ok(&["replay", "--scenarios", s(&scenarios()), "--out", s(&adversarial), "--script", "adversarial"]);
    for row in &table(&adversarial)[1..] {
        assert!(row.ends_with(",3,0,0.0"), "{row}");
    }
}

#[test]
fn malformed_scenarios_are_excluded_and_noted() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    std::fs::create_dir(&input).unwrap();
    for name in ["h1-pointing-cup.json", "h2-newcomer.json"] {
        std::fs::copy(scenarios().join(name), input.join(name)).unwrap();
    }
    std::fs::write(input.join("broken.json"), "{\"format\": \"rgs-scenario\"").unwrap();
    let out = dir.path().join("out");
    ok(&["replay", "--scenarios", s(&input), "--out", s(&out)]);
    let m = json(&out.join("manifest.json"));
    let notes = m["notes"].as_array().unwrap();
    assert!(notes.iter().any(|n| n.as_str().unwrap().contains("broken.json")));
    assert_eq!(table(&out)[1], "H1,1,1,100.0");
    assert_eq!(table(&out)[2], "H2,1,1,100.0");

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["replay", "--scenarios", s(&empty), "--out", s(&out)]), 3);
}

#[test]
fn remote_backend_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let sc = scenarios();
    // no endpoint configured
    assert_eq!(code(&["replay", "--scenarios", s(&sc), "--out", out, "--backend", "remote"]), 2);
    // nothing listens on the discard port: every cycle falls back
    let args = [
        "replay", "--scenarios", s(&sc), "--out", out, "--backend", "remote", "--endpoint",
        "http://127.0.0.1:9/v1/chat/completions", "--model", "m", "--timeout-ms", "200",
    ];
    assert_eq!(code(&args), 5);
    let m = manifest_is_complete(dir.path());
    assert!(m["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("failed on all")));
    for row in &table(dir.path())[1..] {
        assert!(row.ends_with(",0,0.0"), "{row}");
    }
}

#[test]
fn default_run_has_200_plus_100_metric_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    ok(&["gen-data", "--out", s(&data)]);
    let started = std::time::Instant::now();
    ok(&["train", "--data", s(&data.join("dataset.jsonl")), "--out", s(&run)]);
    assert!(started.elapsed().as_secs() < 600);
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("1,")).count(), 200);
    assert_eq!(rows.iter().filter(|r| r.starts_with("2,")).count(), 100);
    assert_eq!(rows.len(), 300);
}
