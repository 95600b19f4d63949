use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn avfp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avfp")).args(args).current_dir(cwd).env_remove("AVFP_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const MANIFEST: [&str; 4] = ["--identities", "canon/identities.csv", "--videos", "canon/videos.csv"];

fn canonical(dir: &Path) {
    let o = avfp(&["synth", "--canonical", "--out", "canon"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn canonical_layout_validates() {
    let tmp = tempfile::tempdir().unwrap();
    canonical(tmp.path());
    let o = avfp(&[&["validate"][..], &MANIFEST, &["--split", "canon/split.json"]].concat(), tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("total: 12 of 12 cells match (66069 videos)"));
}

#[test]
fn tampered_count_fails_check() {
    let tmp = tempfile::tempdir().unwrap();
    canonical(tmp.path());
    let videos = fs::read_to_string(tmp.path().join("canon/videos.csv")).unwrap();
    // Drop one RAVDESS self-reenactment of LIVE.
    let kept: Vec<&str> = videos.lines().filter(|l| !l.starts_with("LIVE-R05-007,")).collect();
    assert_eq!(kept.len(), videos.lines().count() - 1);
    fs::write(tmp.path().join("canon/videos.csv"), kept.join("\n") + "\n").unwrap();
    let o = avfp(&[&["validate"][..], &MANIFEST].concat(), tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("RAVDESS LIVE self: expected 1440, found 1439"), "{}", stdout(&o));
}

#[test]
fn missing_input_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = avfp(&["validate", "--identities", "absent.csv", "--videos", "absent.csv"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.csv"));
}

#[test]
fn trials_echo_published_counts() {
    let tmp = tempfile::tempdir().unwrap();
    canonical(tmp.path());
    let args = [
        &["trials"][..],
        &MANIFEST,
        &["--split", "canon/split.json", "--convention", "include_identical", "--out", "t"],
    ];
    let o = avfp(&args.concat(), tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("CREMA-D,HUNY,124416,247536"), "{out}");
    assert!(out.contains("RAVDESS,GAGA,28800,50400"), "{out}");
    let rows = fs::read_to_string(tmp.path().join("t/trials.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 3 * (124_416 + 247_536 + 28_800 + 50_400));
}

#[test]
fn drawn_split_with_canonical_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    canonical(tmp.path());
    let o =
        avfp(&[&["trials"][..], &MANIFEST, &["--canonical-sizes", "--seed", "4", "--out", "t"]].concat(), tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let split = fs::read_to_string(tmp.path().join("t/split.json")).unwrap();
    let eval = split.split("\"evaluation\"").nth(1).unwrap();
    assert_eq!(eval.matches("\"C1").count(), 24);
    assert_eq!(eval.matches("\"R").count(), 8);
}

#[test]
fn manual_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let synth = ["synth", "--out", "s", "--n-identities", "10", "--videos-per-id", "4", "--min-frames", "40"];
    let o = avfp(&[&synth[..], &["--max-frames", "48", "--dim", "8", "--seed", "5"]].concat(), d);
    assert!(o.status.success());
    let m = ["--identities", "s/identities.csv", "--videos", "s/videos.csv"];
    assert!(avfp(&[&["trials"][..], &m, &["--out", "t", "--seed", "1"]].concat(), d).status.success());
    let train = ["train", "--store", "s/features.avfs", "--split", "t/split.json", "--dataset", "CREMA-D"];
    let rest = ["--generator", "all", "--window", "16", "--epochs", "2", "--out", "m.ckpt"];
    let o = avfp(&[&train[..], &m, &rest].concat(), d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = avfp(
        &["score", "--model", "m.ckpt", "--store", "s/features.avfs", "--trials", "t/trials.csv", "--out", "sc.csv"],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = avfp(&["evaluate", "sc.csv", "--condition", "intra", "--out", "rep.csv", "--roc", "roc"], d);
    assert!(o.status.success());
    let report = fs::read_to_string(d.join("rep.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("intra,model,"), "{report}");
    assert!(d.join("roc/sc.csv").is_file());
    let o = avfp(&[&["fairness", "--scores", "sc.csv", "--attributes", "gender"][..], &m].concat(), d);
    assert!(o.status.success());
    assert!(stdout(&o).contains("female"));
}

fn run_config(dir: &Path, window: usize) {
    let text = format!(
        r#"
seed = 2
[data]
source = "synthetic"
[[data.corpora]]
n_identities = 10
videos_per_id = 4
frames = [40, 48]
dim = 8
seed = 1
[protocol]
window = {window}
[hyper]
epochs = 1
[[models]]
name = "attn"
[[experiments]]
scenario = "intra-intra"
models = ["attn"]
"#
    );
    fs::write(dir.join("run.toml"), text).unwrap();
}

#[test]
fn run_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    run_config(tmp.path(), 16);
    let o = Command::new(env!("CARGO_BIN_EXE_avfp"))
        .args(["run", "run.toml", "--run-id", "r1"])
        .env("AVFP_WORKERS", "2")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let config = fs::read_to_string(tmp.path().join("runs/r1/config.toml")).unwrap();
    assert!(config.contains("workers = 2"), "{config}");
    assert!(tmp.path().join("runs/r1/reports/report.csv").is_file());
}

#[test]
fn failed_job_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    // Every video is shorter than the window, so training cannot start.
    run_config(tmp.path(), 64);
    let o = avfp(&["run", "run.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), "seed = 1\nbogus = true\n").unwrap();
    assert_eq!(avfp(&["run", "run.toml"], tmp.path()).status.code(), Some(2));
}
