use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &[&str] = &[
    "dataset.n_train=8",
    "dataset.n_test=3",
    "dataset.height=32",
    "dataset.width=32",
    "dataset.voronoi_seeds=16",
    "region_size=8",
    "n_image=2",
    "n_region=2",
    "max_cycles=3",
    "model.epochs=10",
];

fn decomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decomp")).args(args).output().unwrap()
}

fn with_sets<'a>(mut args: Vec<&'a str>, sets: &[&'a str]) -> Vec<&'a str> {
    for s in sets {
        args.push("--set");
        args.push(s);
    }
    args
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn run_writes_cycles_and_summary() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    ok(&decomp(&with_sets(vec!["run", "--out", out.to_str().unwrap()], SMALL)));
    let csv = read(&out.join("cycles.csv"));
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..6], &["strategy", "repeat", "cycle", "annotated_units", "annotated_fraction", "metric"]);
    assert!(header.contains(&"sigma_c4") && header.contains(&"w_c0") && header.contains(&"annotated_c2"));
    // three default strategies, one repeat, three cycles
    assert_eq!(lines.count(), 9);
    let summary: serde_json::Value = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 3);
    assert!(summary["reference_metric"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["config"]["n_image"], 2);
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, "strategies = [\"decomp\", \"badge\"]\nrepeats = 2\n[dataset]\nmode = \"roi\"\nroi_count = 12\n").unwrap();
    let out = dir.path().join("run");
    ok(&decomp(&with_sets(vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], SMALL)));
    let csv = read(&out.join("cycles.csv"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("decomp,") || l.starts_with("badge,")));
}

#[test]
fn generated_dataset_can_be_reused() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let dataset_sets: Vec<String> = SMALL.iter().filter_map(|s| s.strip_prefix("dataset.")).map(str::to_string).collect();
    let dataset_sets: Vec<&str> = dataset_sets.iter().map(String::as_str).collect();
    ok(&decomp(&with_sets(vec!["gen", "--out", data.to_str().unwrap()], &dataset_sets)));
    assert!(data.join("manifest.json").is_file());
    assert!(data.join("train_labels.dten").is_file());

    let from_disk = dir.path().join("a");
    let path_set = format!("dataset_path=\"{}\"", data.display());
    let mut sets = SMALL.to_vec();
    sets.push(&path_set);
    ok(&decomp(&with_sets(vec!["run", "--out", from_disk.to_str().unwrap()], &sets)));
    let generated = dir.path().join("b");
    ok(&decomp(&with_sets(vec!["run", "--out", generated.to_str().unwrap()], SMALL)));
    assert_eq!(read(&from_disk.join("cycles.csv")), read(&generated.join("cycles.csv")));
}

#[test]
fn sweep_and_report() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sweep");
    let mut sets = SMALL.to_vec();
    sets.push("strategies=[\"decomp\"]");
    ok(&decomp(&with_sets(vec!["sweep", "--axis", "dense-sparse", "--out", out.to_str().unwrap()], &sets)));
    assert!(out.join("dense-sparse=2x4/cycles.csv").is_file());
    assert!(out.join("dense-sparse=4x2/summary.json").is_file());
    let sweep = read(&out.join("sweep.csv"));
    assert!(sweep.starts_with("axis,axis_value,strategy,"));
    assert_eq!(sweep.lines().count(), 1 + 2 * 3);

    let report = dir.path().join("report.csv");
    let run_dir = out.join("dense-sparse=2x4");
    ok(&decomp(&["report", out.to_str().unwrap(), run_dir.to_str().unwrap(), "--out", report.to_str().unwrap()]));
    let text = read(&report);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "source,axis_value,strategy,repeat,cycle,annotated_fraction,metric");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6 + 3);
    assert_eq!(rows[0][1], "2x4");
    assert_eq!(rows[6][1], "");
    // both budgets spend the same area
    assert_eq!(rows[2][5], rows[5][5]);
}

#[test]
fn validation_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    for args in [
        vec!["run", "--out", out, "--set", "tau=1.5"],
        vec!["run", "--out", out, "--set", "no_such_key=1"],
        vec!["run", "--out", out, "--set", "n_image"],
        vec!["run", "--out", out, "--set", "strategies=[\"nope\"]"],
        vec!["run", "--out", out, "--config", "/does/not/exist.toml"],
        vec!["run", "--out", out, "--threads", "0"],
        vec!["frobnicate"],
    ] {
        assert_eq!(decomp(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn malformed_report_input_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.csv");
    let missing = dir.path().join("missing.csv");
    fs::write(&missing, "strategy,cycle\nrand,1\n").unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "strategy,repeat,cycle,annotated_fraction,metric\nrand,0,1,0.1,abc\n").unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    for input in [&missing, &bad, &empty] {
        let o = decomp(&["report", input.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{}", input.display());
    }
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    let o = decomp(&["run", "--out", out.to_str().unwrap(), "--set", "dataset_path=\"/no/such/dataset\""]);
    assert_eq!(o.status.code(), Some(1));
}
