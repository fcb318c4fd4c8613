use std::path::PathBuf;
use std::process::{Command, Output};

fn softermax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softermax")).args(args).output().unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn single_error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    serde_json::from_str(lines[0]).unwrap()
}

#[test]
fn run_reports_top_level_keys() {
    let v = json(&softermax(&["run", "--rows", "3", "--cols", "20", "--compare-oracle"]));
    for key in ["schema_version", "config", "stats", "errors"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["config"]["lane_width"], 16);
    assert_eq!(v["config"]["mode"], "quantized");
    assert_eq!(v["stats"]["rows"], 3);
}

#[test]
fn identical_invocations_are_byte_identical() {
    let args = ["run", "--rows", "40", "--cols", "96", "--seed", "11", "--compare-oracle"];
    let a = softermax(&args);
    let b = softermax(&args);
    let mut serial = args.to_vec();
    serial.push("--serial");
    let c = softermax(&serial);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn fixture_input_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let status = softermax(&[
        "run",
        "--input",
        &fixture("example.csv"),
        "--compare-oracle",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success());
    assert!(status.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    let err = v["errors"]["max_abs_err"].as_f64().unwrap();
    assert!((err - 0.00446).abs() < 1e-5);
}

#[test]
fn sweep_emits_one_entry_per_length() {
    let v = json(&softermax(&["sweep", "--lengths", "8,64,128", "--rows", "4", "--lane-width", "32"]));
    let cols: Vec<u64> = v.as_array().unwrap().iter().map(|r| r["stats"]["cols"].as_u64().unwrap()).collect();
    assert_eq!(cols, [8, 64, 128]);

    let csv = softermax(&["sweep", "--lengths", "8,64", "--rows", "4", "--format", "csv", "--compare-oracle"]);
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("schema_version,"));
}

#[test]
fn json_and_csv_agree() {
    let base = ["run", "--rows", "5", "--cols", "77", "--seed", "6", "--compare-oracle"];
    let v = json(&softermax(&base));
    let mut csv_args = base.to_vec();
    csv_args.extend(["--format", "csv"]);
    let out = softermax(&csv_args);
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    let headers = reader.headers().unwrap().clone();
    let record = reader.records().next().unwrap().unwrap();
    for (section, key) in [("errors", "max_abs_err"), ("errors", "mean_abs_err"), ("errors", "max_sum_dev"), ("stats", "lut_reads")] {
        let i = headers.iter().position(|h| h == key).unwrap();
        assert_eq!(record[i].parse::<f64>().unwrap(), v[section][key].as_f64().unwrap(), "{key}");
    }
}

#[test]
fn tables_dump() {
    let v = json(&softermax(&["tables"]));
    let tables = v.as_array().unwrap();
    assert_eq!(tables[0]["function"], "pow2");
    assert_eq!(tables[0]["segments"], 4);
    assert_eq!(tables[0]["c_raw"][0], 32768);
    assert_eq!(tables[1]["function"], "recip");
    assert_eq!(tables[1]["segments"], 8);
    assert_eq!(tables[1]["m_raw"].as_array().unwrap().len(), 8);
}

#[test]
fn nonstandard_lane_width_warns() {
    let out = softermax(&["run", "--rows", "1", "--cols", "10", "--lane-width", "7"]);
    let v = json(&out);
    assert_eq!(v["config"]["lane_width_warning"], true);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonstandard_lane_width"));
}

#[test]
fn failures_are_single_line_errors() {
    let e = single_error_line(&softermax(&["run", "--distribution", "cauchy(0,1)"]));
    assert_eq!(e["error"], "usage");
    let e = single_error_line(&softermax(&["run", "--input", "/nonexistent/scores.csv"]));
    assert_eq!(e["error"], "io");
    let e = single_error_line(&softermax(&["run", "--lane-width", "0"]));
    assert_eq!(e["error"], "usage");
    let e = single_error_line(&softermax(&["run", "--mode", "approximate"]));
    assert_eq!(e["error"], "usage");
    let e = single_error_line(&softermax(&["frobnicate"]));
    assert_eq!(e["error"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2,3\n4,5\n").unwrap();
    let e = single_error_line(&softermax(&["run", "--input", bad.to_str().unwrap()]));
    assert_eq!(e["error"], "input");
}

#[test]
fn help_exits_cleanly() {
    let out = softermax(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("sweep"));
}
