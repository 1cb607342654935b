use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str =
    "n_ue = 8\nn_bs = 8\nr_ue = 2\nr_bs = 4\nt_e = 12\ntrials = 4\np_dbm = [0.0, 10.0]\n";

fn rapid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rapid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = rapid(&["run", &cfg, "--out", out.to_str().unwrap(), "--verbose"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("scheme,P_dBm,metric,value,ci95"));
    assert!(csv.contains("RDB+RAPID,10,min_rate,"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    // one entry per (scheme, power), each holding the four trials
    let groups = json["trials"].as_array().unwrap();
    assert_eq!(groups.len(), 8);
    assert!(groups
        .iter()
        .all(|g| g["min_rate"].as_array().unwrap().len() == 4));
}

#[test]
fn overrides_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "small.json",
        r#"{"n_ue": 8, "n_bs": 8, "r_ue": 2, "r_bs": 4, "t_e": 12, "p_dbm": [10.0]}"#,
    );
    let mut csvs = Vec::new();
    for (i, seed) in ["7", "7", "8"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}"));
        let o = rapid(&[
            "run",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--trials",
            "3",
            "--seed",
            seed,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(fs::read(out.join("results.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_ne!(csvs[0], csvs[2]);
}

#[test]
fn sweep_writes_one_directory_per_power() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("sweep");
    let o = rapid(&[
        "sweep",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--p-dbm",
        "-5,5",
        "--trials",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("-5dBm/results.csv").exists());
    assert!(out.join("5dBm/results.csv").exists());
}

#[test]
fn validate_passes_on_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let o = rapid(&["validate", &cfg]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(!text.contains("FAIL"));
    assert!(text.contains("codebook unitarity"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "r_ue = 40\n");
    assert_eq!(rapid(&["run", &bad]).status.code(), Some(2));
    let unknown = write_config(dir.path(), "unknown.toml", "antennas = 4\n");
    assert_eq!(rapid(&["validate", &unknown]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        rapid(&["run", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
}
