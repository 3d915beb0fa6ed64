use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kgrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgrec"))
        .args(args)
        .env_remove("KGREC_SEED")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn zero_epochs_writes_manifest_and_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = kgrec(&["train", "--dataset", "toy", "--epochs", "0", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["manifest.json", "checkpoint_best.bin", "checkpoint_last.bin", "metrics.jsonl", "summary.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let m = manifest(&out);
    assert_eq!(m["command"], "train");
    assert_eq!(m["config"]["epochs"], 0);
    assert_eq!(m["config"]["rationale"]["k_m"], 64);
    assert_eq!(m["dataset"]["source"], "toy");
    assert_eq!(m["dataset"]["content_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn oversized_mask_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = kgrec(&["train", "--dataset", "toy", "--k-m", "5000000", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("k_m exceeds triplet count"), "{}", stderr(&o));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn invalid_values_exit_two_naming_the_field() {
    let o = kgrec(&["train", "--dataset", "toy", "--rho-k", "1.5", "--epochs", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rho_k"), "{}", stderr(&o));
    let o = kgrec(&["train", "--dataset", "toy", "--tau", "abc"]);
    assert_eq!(code(&o), 2);
    let o = kgrec(&["train", "--dataset", "no/such/dir", "--epochs", "0"]);
    assert_eq!(code(&o), 2);
    let o = kgrec(&["train", "--dataset", "toy", "--set", "nonsense=1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn overwrite_false_refuses_to_clobber() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("keep.txt"), "precious").unwrap();
    let o = kgrec(&["train", "--dataset", "toy-tiny", "--epochs", "0", "--out", p(&out), "--overwrite=false"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("overwrite"), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 1);
    assert_eq!(std::fs::read_to_string(out.join("keep.txt")).unwrap(), "precious");

    let fresh = tmp.path().join("fresh");
    let o = kgrec(&["train", "--dataset", "toy-tiny", "--epochs", "0", "--out", p(&fresh), "--overwrite=false"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn manifest_replay_is_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = kgrec(&["train", "--dataset", "toy", "--epochs", "3", "--seed", "11", "--out", p(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = kgrec(&["train", "--from-manifest", p(&a.join("manifest.json")), "--out", p(&b)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let la = std::fs::read(a.join("metrics.jsonl")).unwrap();
    let lb = std::fs::read(b.join("metrics.jsonl")).unwrap();
    assert_eq!(la.iter().filter(|&&c| c == b'\n').count(), 4);
    assert_eq!(la, lb);
    assert_eq!(manifest(&a)["config"], manifest(&b)["config"]);
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_kgrec"))
        .args(["train", "--dataset", "toy-tiny", "--epochs", "0", "--out", p(&out)])
        .env("KGREC_SEED", "4242")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(manifest(&out)["seed"], 4242);
    assert_eq!(manifest(&out)["dataset"]["data_seed"], 4242);

    let flag = tmp.path().join("flag");
    let o = Command::new(env!("CARGO_BIN_EXE_kgrec"))
        .args(["train", "--dataset", "toy-tiny", "--epochs", "0", "--seed", "5", "--out", p(&flag)])
        .env("KGREC_SEED", "4242")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(manifest(&flag)["seed"], 5);
}

#[test]
fn missing_checkpoint_exits_two() {
    let o = kgrec(&["evaluate", "--checkpoint", "/nonexistent/ckpt.bin", "--dataset", "toy"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("checkpoint not found"), "{}", stderr(&o));
    let o = kgrec(&["evaluate", "--dataset", "toy"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn dimension_mismatch_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(code(&kgrec(&["train", "--dataset", "toy", "--epochs", "0", "--out", p(&out)])), 0);
    let ck = out.join("checkpoint_best.bin");
    let o = kgrec(&["evaluate", "--checkpoint", p(&ck), "--dim", "16", "--out", p(&tmp.path().join("e"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("dim"), "{}", stderr(&o));
    let o = kgrec(&["evaluate", "--checkpoint", p(&ck), "--dataset", "toy-tiny", "--out", p(&tmp.path().join("f"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn explain_untrained_checkpoint_is_uniform() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(code(&kgrec(&["train", "--dataset", "toy", "--epochs", "0", "--out", p(&out)])), 0);
    let ev = tmp.path().join("ev");
    let o = kgrec(&["evaluate", "--checkpoint", p(&out.join("checkpoint_best.bin")), "--explain", "--out", p(&ev)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(ev.join("reports.json")).unwrap()).unwrap();
    let rows = r["explain"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 10);
    for row in rows {
        let g = row["mean_gamma"].as_f64().unwrap();
        assert!((g - 1.0).abs() <= 1e-3, "{row}");
    }
    assert!(ev.join("explain.txt").is_file());
}

#[test]
fn evaluate_reports_groups_and_partial_kg() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(code(&kgrec(&["train", "--dataset", "toy", "--epochs", "2", "--out", p(&out)])), 0);
    let ev = tmp.path().join("ev");
    let o = kgrec(&[
        "evaluate",
        "--checkpoint",
        p(&out.join("checkpoint_best.bin")),
        "--groups",
        "user-degree",
        "--partial-kg",
        "0.4,0.7,1.0",
        "--out",
        p(&ev),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(ev.join("reports.json")).unwrap()).unwrap();
    let groups = r["groups"].as_array().unwrap();
    let users: u64 = groups.iter().map(|g| g["users"].as_u64().unwrap()).sum();
    assert_eq!(users, r["metrics"]["users_evaluated"].as_u64().unwrap());
    let rows = r["partial_kg"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2]["recall_retention"].as_f64().unwrap(), 1.0);
    assert!(ev.join("groups.txt").is_file() && ev.join("partial_kg.txt").is_file());

    let o = kgrec(&["evaluate", "--checkpoint", p(&out.join("checkpoint_best.bin")), "--groups", "by-mood"]);
    assert_eq!(code(&o), 2);
    let o = kgrec(&["evaluate", "--checkpoint", p(&out.join("checkpoint_best.bin")), "--partial-kg", "0,1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn trained_model_memorises_training_split() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = kgrec(&["train", "--dataset", "toy", "--epochs", "40", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ev = tmp.path().join("ev");
    let o = kgrec(&["evaluate", "--checkpoint", p(&out.join("checkpoint_last.bin")), "--split", "train", "--out", p(&ev)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(ev.join("reports.json")).unwrap()).unwrap();
    let recall = r["metrics"]["recall"].as_f64().unwrap();
    assert!(recall > 0.9, "train-split recall {recall}");
}

#[test]
fn selfcheck_filters_and_fails_on_injected_fault() {
    let o = kgrec(&["selfcheck", "--suite", "metrics"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("metrics") && s.contains("PASS"), "{s}");
    assert!(!s.contains("gradcheck") && !s.contains("sparse_dense"), "{s}");

    let o = kgrec(&["selfcheck", "--suite", "gradcheck", "--inject-fault", "gradient"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
    assert!(stderr(&o).contains("gradcheck"), "{}", stderr(&o));

    let o = kgrec(&["selfcheck", "--suite", "everything"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn full_selfcheck_passes() {
    let o = kgrec(&["selfcheck"]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));
    assert_eq!(stdout(&o).matches("PASS").count(), 4);
}

#[test]
fn gradcheck_command() {
    let o = kgrec(&["gradcheck", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("-> PASS").count(), 4);
}

#[test]
fn config_dump_defaults_round_trips() {
    let o = kgrec(&["config", "--dump-defaults"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for key in ["k_m", "rho_k", "rho_u", "tau", "lambda1", "lambda2", "layers", "dim", "lr", "weight_decay"] {
        assert!(text.contains(key), "missing {key}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("c.toml");
    std::fs::write(&f, &text).unwrap();
    let o = kgrec(&["config", "--config", p(&f)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), text);

    let o = kgrec(&["config", "--config", p(&f), "--tau", "0.3"]);
    assert!(stdout(&o).contains("tau = 0.3"));

    std::fs::write(&f, "[loss]\ntemperature = 1\n").unwrap();
    let o = kgrec(&["config", "--config", p(&f)]);
    assert_eq!(code(&o), 2);
}

/// A dataset directory with 1500 triplets, large enough for every mask size.
fn write_large_dataset(dir: &Path) {
    use std::fmt::Write as _;
    std::fs::create_dir_all(dir).unwrap();
    let (users, items) = (60, 50);
    let mut train = String::new();
    for u in 0..users {
        let row: Vec<String> = (0..12).map(|j| ((u * 7 + j * 3) % items).to_string()).collect();
        let _ = writeln!(train, "{u} {}", row.join(" "));
    }
    std::fs::write(dir.join("train.txt"), train).unwrap();
    let mut kg = String::new();
    for i in 0..1500 {
        let _ = writeln!(kg, "{} {} {}", i % items, i % 3, items + (i * 13) % 400);
    }
    std::fs::write(dir.join("kg_final.txt"), kg).unwrap();
}

#[test]
fn sweep_materialises_the_mask_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_large_dataset(&data);
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/lastfm.toml");
    let out = tmp.path().join("sweep");
    let o = kgrec(&[
        "train", "--config", config, "--dataset", p(&data), "--sweep", "k_m", "--epochs", "0", "--dim", "8", "--rho-u", "16", "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(manifest(&out)["extra"]["values"], serde_json::json!(["128", "256", "512", "1024"]));
    for k in [128, 256, 512, 1024] {
        let sub = out.join(format!("k_m={k}"));
        let m = manifest(&sub);
        assert_eq!(m["config"]["rationale"]["k_m"], k);
        assert_eq!(m["config"]["loss"]["tau"], 0.9);
        assert!(sub.join("checkpoint_best.bin").is_file());
    }
    assert_eq!(std::fs::read_to_string(out.join("sweep.txt")).unwrap().lines().count(), 5);

    // the toy graph has 1000 triplets, so the largest mask size cannot fit and
    // nothing is written
    let bad = tmp.path().join("bad");
    let o = kgrec(&["sweep", "k_m", "--dataset", "toy", "--epochs", "0", "--out", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("k_m exceeds triplet count"), "{}", stderr(&o));
    assert!(!bad.exists());

    let small = tmp.path().join("small");
    let o = kgrec(&["sweep", "tau", "--values", "0.2,0.5", "--dataset", "toy", "--epochs", "0", "--out", p(&small)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(small.join("tau=0.2").join("metrics.jsonl").is_file());
}

#[test]
fn ablate_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abl");
    let o = kgrec(&["ablate", "--dataset", "toy-tiny", "--ablate", "full,no_cl", "--seeds", "1,2", "--epochs", "1", "--k-m", "4", "--rho-u", "2", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(r["rows"].as_array().unwrap().len(), 2);
    assert_eq!(r["seeds"], serde_json::json!([1, 2]));
    assert!(stdout(&o).contains("no_cl"));
}

#[test]
fn prepare_round_trips_through_load() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    let o = kgrec(&["prepare", "--dataset", "toy", "--core", "5", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["train.txt", "valid.txt", "test.txt", "kg_final.txt", "stats.kv", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let run = tmp.path().join("run");
    let o = kgrec(&["train", "--dataset", p(&out), "--epochs", "0", "--k-m", "64", "--rho-u", "64", "--dim", "16", "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(manifest(&run)["dataset"]["files"].as_array().unwrap().len(), 4);
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = kgrec(&["train", "--bogus"]);
    assert_eq!(code(&o), 2);
}
