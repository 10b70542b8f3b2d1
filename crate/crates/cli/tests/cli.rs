use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn splotml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splotml")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn minimal_run_is_quick_and_complete() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("minimal.toml");
    let started = Instant::now();
    let o = splotml(&["run", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(started.elapsed() < Duration::from_secs(60));
    for name in [
        "config.toml",
        "dataset_summary.json",
        "sweights.csv",
        "train_constrained_mse.csv",
        "model_constrained_mse.spml",
        "learning_curve.csv",
        "learning_curve.svg",
        "summary.csv",
        "manifest.json",
    ] {
        assert!(out.path().join(name).is_file(), "missing {name}");
    }
}

#[test]
fn manifest_lists_every_written_file_with_checksum() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("minimal.toml");
    let o = splotml(&["run", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success());
    let m = manifest(out.path());
    let outputs = m["outputs"].as_object().unwrap();
    let mut on_disk: Vec<String> = std::fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let listed: Vec<String> = outputs.keys().cloned().collect();
    assert_eq!(listed, on_disk);
    for (name, entry) in outputs {
        let digest = splotml::artifacts::sha256_hex(&std::fs::read(out.path().join(name)).unwrap());
        assert_eq!(entry["sha256"].as_str().unwrap(), digest, "{name}");
    }
    for key in ["command", "config", "versions", "seeds", "inputs"] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
}

#[test]
fn rerun_from_manifest_config_reproduces_checksums() {
    let first = tempfile::tempdir().unwrap();
    let cfg = configs().join("minimal.toml");
    let args = |cfg: &Path, out: &Path| {
        splotml(&["run", "--threads", "1", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
    };
    assert!(args(&cfg, first.path()).status.success());
    let second = tempfile::tempdir().unwrap();
    let saved = tempfile::tempdir().unwrap();
    let replay = saved.path().join("replay.toml");
    std::fs::copy(first.path().join("config.toml"), &replay).unwrap();
    assert!(args(&replay, second.path()).status.success());
    assert_eq!(manifest(first.path())["outputs"], manifest(second.path())["outputs"]);
}

#[test]
fn negative_yield_exits_2_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[data.synthetic]\nn_events = 1000\n\n[mixture]\nsupport = [0.0, 8.0]\nsignal = { kind = \"gaussian\", mean = 4.0, sigma = 1.0 }\nbackground = { kind = \"exponential\", rate = 0.4 }\ninitial_yields = [-5.0, 100.0]\n",
    );
    let o = splotml(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mixture.initial_yields[0]"));
}

#[test]
fn unknown_key_exits_2_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[data.synthetic]\nn_events = 1000\n\n[train]\nstep = 10\n");
    let o = splotml(&["sweights", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train"));
}

#[test]
fn missing_csv_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[data.csv]\npath = \"/nonexistent/events.csv\"\nmass_column = \"m\"\n",
    );
    let o = splotml(&["sweights", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/events.csv"));
}

#[test]
fn sweights_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("events.csv");
    let mut text = String::from("m,x0,label\n");
    for i in 0..400 {
        let m = 8.0 * (i as f64 + 0.5) / 400.0;
        text.push_str(&format!("{m},{},{}\n", (i % 7) as f64 * 0.1, i % 2));
    }
    std::fs::write(&data, text).unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "[data.csv]\npath = \"{}\"\nmass_column = \"m\"\nlabel_column = \"label\"\n",
            data.display()
        ),
    );
    let out = dir.path().join("o");
    let o = splotml(&["sweights", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(out.join("sweights.csv")).unwrap().lines().count();
    assert_eq!(rows, 401);
}

#[test]
fn seed_flag_changes_outputs() {
    let cfg = configs().join("minimal.toml");
    let run = |seed: &str| {
        let out = tempfile::tempdir().unwrap();
        let o = splotml(&["sweights", "--seed", seed, "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(out.path().join("sweights.csv")).unwrap()
    };
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
}
