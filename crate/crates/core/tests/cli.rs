mod common;

use std::path::Path;
use std::process::Command;

use catlab::report::read_csv;
use common::RC1_MODEL;

fn write_config(dir: &Path, name: &str, head: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, format!("{head}\n{RC1_MODEL}")).unwrap();
    p
}

fn catlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_catlab")).args(args).output().unwrap()
}

const HEAD: &str = "experiment = \"cluster_law\"\nn_list = [100, 150]\nreplicates = 300\nmaster_seed = 12\nrecord_runtime = false";

#[test]
fn csv_is_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", HEAD);
    let mut outputs = Vec::new();
    for w in ["1", "4", "8"] {
        let out = dir.path().join(format!("w{w}.csv"));
        let o = catlab(&["run", cfg.to_str().unwrap(), "--workers", w, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let rows = read_csv(outputs[0].as_slice()).unwrap();
    assert!(rows.iter().any(|r| r.n == 150 && r.stat == "ks_jplus_uniform"));
}

#[test]
fn seed_override_changes_results_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", HEAD);
    let a = catlab(&["run", cfg.to_str().unwrap()]);
    let b = catlab(&["run", cfg.to_str().unwrap(), "--seed", "13"]);
    assert!(a.status.success() && b.status.success());
    let ra = read_csv(a.stdout.as_slice()).unwrap();
    let rb = read_csv(b.stdout.as_slice()).unwrap();
    assert_eq!(rb[0].seed, 13);
    assert_ne!(ra[0].config_hash, rb[0].config_hash);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "experiment = \"cluster_law\"\nreplicates = 0");
    let o = catlab(&["run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicates"));
    let unknown = write_config(dir.path(), "u.toml", "experiment = \"cluster_law\"\nbogus = 1");
    assert_eq!(catlab(&["run", unknown.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(catlab(&["run", "/nonexistent/config.toml"]).status.code(), Some(2));
}

#[test]
fn summary_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let head = format!("{HEAD}\n[thresholds.mu_psi]\nmin = 0.9");
    let cfg = write_config(dir.path(), "t.toml", &head);
    let o = catlab(&["run", cfg.to_str().unwrap(), "--format", "summary"]);
    assert_eq!(o.status.code(), Some(3));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("FAIL cluster_law n=100 mu_psi"));

    let head = format!("{HEAD}\n[thresholds.ks_jplus_uniform]\n[thresholds.mean_span]\n[thresholds.atom_fraction_gap]");
    let cfg = write_config(dir.path(), "ok.toml", &head);
    let o = catlab(&["run", cfg.to_str().unwrap(), "--format", "summary"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn json_output_and_experiment_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", HEAD);
    let o = catlab(&["run", cfg.to_str().unwrap(), "--format", "json", "--experiment", "two_jump"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v.as_array().unwrap();
    assert!(rows.iter().all(|r| r["experiment"] == "two_jump"));
    assert!(rows.iter().any(|r| r["stat"] == "two_jump_ratio"));
}

#[test]
fn records_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("records.csv");
    let head = format!("{HEAD}\nrecords_path = \"{}\"", rec.display());
    let cfg = write_config(dir.path(), "c.toml", &head);
    assert!(catlab(&["run", cfg.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(&rec).unwrap();
    assert!(text.starts_with("replicate,n,j_plus,j_minus"));
    assert_eq!(text.lines().count(), 1 + 600);
}
