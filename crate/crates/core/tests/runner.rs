use std::fs;
use std::path::Path;

use avfp_core::runner::{cmd_run, RunConfig, RunError};

fn config(out: &Path, run_id: &str) -> RunConfig {
    let text = format!(
        r#"
seed = 11
run_id = "{run_id}"
out_dir = "{}"

[data]
source = "synthetic"
[[data.corpora]]
n_identities = 12
videos_per_id = 4
frames = [40, 50]
dim = 8
seed = 3
generators = ["GAGA", "LIVE"]

[protocol]
window = 16

[hyper]
epochs = 2

[[models]]
name = "attn"

[[fusions]]
name = "fused"
members = ["attn"]

[fairness]
enabled = true

[[experiments]]
scenario = "intra-cross-generator"
datasets = ["CREMA-D"]
generators = ["GAGA"]
models = ["attn", "fused"]
"#,
        out.display()
    );
    let cfg = RunConfig::from_toml(&text, "test").unwrap();
    cfg.validate().unwrap();
    cfg
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["trials.csv", "split.json", "plan.json", "scores", "reports", "reports/roc"] {
        let p = dir.join(sub);
        if p.is_file() {
            out.push((sub.to_string(), fs::read(&p).unwrap()));
        } else {
            let mut names: Vec<_> =
                fs::read_dir(&p).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
            names.sort();
            for n in names {
                out.push((format!("{sub}/{}", n.file_name().unwrap().to_string_lossy()), fs::read(&n).unwrap()));
            }
        }
    }
    out
}

#[test]
fn generator_row_with_fusion_and_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let s = cmd_run(&config(tmp.path(), "a")).unwrap();
    assert!(s.failures.is_empty(), "{:?}", s.failures);
    // G->G, G->L, All->G for each model.
    assert_eq!(s.reports.len(), 6);
    assert_eq!(s.deltas.len(), 2);
    assert!(s.deltas.iter().all(|d| d.reference == "CREMA-D/GAGA->CREMA-D/GAGA" && d.rows.len() == 2));
    // A one-member fusion reproduces its member exactly.
    let auc = |m: &str, c: &str| s.reports.iter().find(|r| r.model == m && r.condition == c).unwrap().auc;
    assert_eq!(auc("attn", "CREMA-D/GAGA->CREMA-D/LIVE"), auc("fused", "CREMA-D/GAGA->CREMA-D/LIVE"));
    let fairness = fs::read_to_string(s.dir.join("reports/fairness.csv")).unwrap();
    assert!(fairness.starts_with("condition,model,attribute,subgroup,auc,genuine_n,impostor_n\n"));
    assert!(s.dir.join("reports/delta.txt").exists());
}

#[test]
fn identical_configs_identical_bytes_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let a = cmd_run(&config(tmp.path(), "a")).unwrap();
    let b = cmd_run(&config(tmp.path(), "b")).unwrap();
    assert_eq!(listing(&a.dir), listing(&b.dir));

    // Interrupt: drop one job's outputs, rerun, and compare.
    let victim = fs::read_dir(a.dir.join("jobs")).unwrap().next().unwrap().unwrap().path();
    let id = victim.file_stem().unwrap().to_string_lossy().to_string();
    fs::remove_file(&victim).unwrap();
    fs::remove_file(a.dir.join("scores").join(format!("{id}.csv"))).unwrap();
    let again = cmd_run(&config(tmp.path(), "a")).unwrap();
    assert_eq!(again.resumed, a.reports.len() - 1);
    assert_eq!(listing(&again.dir), listing(&b.dir));
}

#[test]
fn changed_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_run(&config(tmp.path(), "a")).unwrap();
    let mut cfg = config(tmp.path(), "a");
    cfg.seed = 12;
    assert!(matches!(cmd_run(&cfg), Err(RunError::ConfigChanged { .. })));
}
