use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data")
}

fn ecosched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecosched")).args(args).output().unwrap()
}

fn write_config(dir: &Path, schedulers: &str) -> PathBuf {
    let data = data_dir();
    let text = format!(
        r#"{{
  "catalog": "{}",
  "host_count": 6,
  "vm_count": 8,
  "workload": {{ "task_count": 25, "trace_dir": "{}" }},
  "schedulers": [{schedulers}],
  "ga": {{ "population_size": 10, "generations": 15 }},
  "seeds": [1, 2, 3],
  "output_dir": "out"
}}"#,
        data.join("catalog.json").display(),
        data.join("planetlab").display()
    );
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn count(dir: &Path, suffix: &str) -> usize {
    std::fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(suffix)).count()
}

#[test]
fn run_writes_reports_and_compare_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#""GA_LC_MLR", "GA_LM""#);
    let out = ecosched(&["run", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = dir.path().join("out");
    assert_eq!(count(&results, "_tasks.csv"), 6);
    assert_eq!(count(&results, "_summary.json"), 6);
    assert_eq!(count(&results, "comparison.json"), 1);

    let a = results.join("GA_LC_MLR_seed2_summary.json");
    let b = results.join("GA_LM_seed2_summary.json");
    let cmp = ecosched(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(cmp.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&cmp.stdout).unwrap();
    assert_eq!(doc["pairs"][0]["a"], "GA_LC_MLR");
    assert!(doc["pairs"][0]["total_energy_j"]["winner"].is_string());

    let other_seed = results.join("GA_LM_seed3_summary.json");
    let mismatch = ecosched(&["compare", a.to_str().unwrap(), other_seed.to_str().unwrap()]);
    assert_eq!(mismatch.status.code(), Some(1));
}

#[test]
fn out_and_seeds_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#""MWFD""#);
    let elsewhere = dir.path().join("elsewhere");
    let out = ecosched(&["run", "--config", config.to_str().unwrap(), "--out", elsewhere.to_str().unwrap(), "--seeds", "7,8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(count(&elsewhere, "_summary.json"), 2);
    assert!(elsewhere.join("MWFD_seed7_tasks.csv").is_file());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#""GA_LC_MLR""#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(ecosched(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    }
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let out = ecosched(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least one scheduler"));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\n  \"catalog\": \"x\",\n  oops\n}").unwrap();
    let out = ecosched(&["run", "--config", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn compare_needs_two_summaries() {
    let out = ecosched(&["compare", "only-one.json"]);
    assert!(!out.status.success());
}
