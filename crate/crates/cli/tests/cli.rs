use std::path::Path;
use std::process::{Command, Output};

fn splatbench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatbench"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SPLATBENCH_CACHE")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn synth(dir: &Path) {
    let out = splatbench(&["synth", "scene"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const TRAIN: &str = "[train]\ntotal_steps = 40\ndensify_interval = 10\ndensify_start = 10\ndensify_stop = 20\n";

#[test]
fn bench_succeeds_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = format!("scenes = [\"scene\"]\nsizes = [\"20\"]\nstrategies = [\"absgs\", \"none\"]\ngmax = {{ scene = 200 }}\n{TRAIN}");
    std::fs::write(dir.path().join("matrix.toml"), cfg).unwrap();
    let out = splatbench(&["bench", "matrix.toml", "-o", "out", "--single-threaded"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["results.json", "runs.csv", "curves_size.csv", "curves_noise.csv", "scene_means.csv"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let text = std::fs::read_to_string(dir.path().join("out/results.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn bench_with_a_failing_cell_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = format!("scenes = [\"scene\"]\ninits = [\"sfm\", \"ply:absent.ply\"]\nsizes = [\"20\"]\nstrategies = [\"none\"]\ngmax = {{ scene = 200 }}\n{TRAIN}");
    std::fs::write(dir.path().join("matrix.toml"), cfg).unwrap();
    let out = splatbench(&["bench", "matrix.toml", "-o", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("out/results.json").exists());
}

#[test]
fn train_and_init_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = splatbench(&["init", "sfm@25", "scene", "-o", "init.ply"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("init.ply").exists());
    let out = splatbench(
        &["train", "scene", "--init", "sfm@25", "--strategy", "mcmc", "--cap", "60", "--steps", "30", "-o", "t"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["cloud.ply", "log.ndjson", "metrics.json"] {
        assert!(dir.path().join("t").join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(dir.path().join("t/log.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 30);
}

#[test]
fn derive_gmax_uses_the_cache_directory() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let args = ["derive-gmax", "scene", "--steps", "30", "--cache", "cache"];
    let a = splatbench(&args, dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(std::fs::read_dir(dir.path().join("cache/gmax")).unwrap().count(), 1);
    let b = splatbench(&args, dir.path());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn bad_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(splatbench(&["bench"], dir.path()).status.code(), Some(2));
    assert_eq!(splatbench(&["train", "nowhere"], dir.path()).status.code(), Some(2));
    synth(dir.path());
    let out = splatbench(&["init", "sfm@lots", "scene", "-o", "x.ply"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
