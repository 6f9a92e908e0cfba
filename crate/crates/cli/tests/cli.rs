use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use iterquant::{save_model, Bundle, Matrix};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iterquant"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn pseudo(i: usize) -> f64 {
    ((i as u64 * 2_654_435_761) % 1_000_003) as f64 / 1_000_003.0 - 0.5
}

fn write_model(dir: &Path, rows: usize, cols: usize) -> std::path::PathBuf {
    let m = Matrix::from_fn(rows, cols, |r, c| pseudo(r * cols + c));
    let bundle = Bundle::from_tensors(vec![("layer.w".into(), m)]).unwrap();
    let path = dir.join("model.iqwt");
    save_model(&bundle.cast::<f32>(), &path).unwrap();
    path
}

fn total_sse(json: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    v["total_sse"].as_f64().unwrap()
}

#[test]
fn missing_input_exits_2_and_names_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.iqwt");
    let out = dir.path().join("q");
    let o = run(&["quantize", p(&missing), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.iqwt"));
}

#[test]
fn garbage_model_exits_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.iqwt");
    fs::write(&bad, b"not a model at all").unwrap();
    let o = run(&["quantize", p(&bad), "--out", p(&dir.path().join("q"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn greedy_and_alternating_one_bit_artifacts_identical() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), 20, 50);
    let g = dir.path().join("g");
    let a = dir.path().join("a");
    assert!(run(&["quantize", p(&model), "--method", "greedy", "--out", p(&g)]).status.success());
    assert!(run(&["quantize", p(&model), "--method", "alternating", "--out", p(&a)]).status.success());
    let fg = fs::read(g.join("layer.w.iqqt")).unwrap();
    let fa = fs::read(a.join("layer.w.iqqt")).unwrap();
    assert_eq!(fg, fa);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
}

#[test]
fn more_tables_never_increase_sse() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), 10, 200);
    let one = run(&["--json", "quantize", p(&model), "--tables", "1", "--out", p(&dir.path().join("t1"))]);
    let eight = run(&["--json", "quantize", p(&model), "--tables", "8", "--out", p(&dir.path().join("t8"))]);
    assert!(total_sse(&stdout(&eight)) <= total_sse(&stdout(&one)) + 1e-9);
}

#[test]
fn prune_point_eight_keeps_32000_of_160000() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), 200, 800);
    let mask = dir.path().join("m.iqmk");
    let o = run(&["--json", "prune", p(&model), "--rate", "0.8", "--out-mask", p(&mask)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["survivors"], 32000);
    assert!(dir.path().join("m.iqmk.manifest.json").exists());
}

#[test]
fn prune_rate_zero_warns_and_keeps_everything() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), 4, 10);
    let o = run(&["--json", "prune", p(&model), "--rate", "0", "--out-mask", p(&dir.path().join("m.iqmk"))]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["survivors"], 40);
}

#[test]
fn prune_rate_one_exits_3_with_failed_manifest() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), 4, 10);
    let o = run(&["prune", p(&model), "--rate", "1.0", "--out-mask", p(&dir.path().join("m.iqmk"))]);
    assert_eq!(o.status.code(), Some(3));
    let manifest = fs::read_to_string(dir.path().join("m.iqmk.manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
}

#[test]
fn dry_run_reproduces_table_sizes() {
    let o = run(&["--json", "report", "--rows", "400", "--cols", "800", "--bits", "1,2,3", "--tables", "1,2,4,8"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let kib: Vec<f64> = v["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["table_size_kib"].as_f64().unwrap())
        .collect();
    // bits-major over tables 1, 2, 4, 8
    let expected = [0.78125, 1.5625, 3.125, 6.25, 1.5625, 3.125, 6.25, 12.5, 2.34375, 4.6875, 9.375, 18.75];
    assert_eq!(kib, expected);
}

#[test]
fn pruned_budget_line() {
    let o = run(&[
        "report", "--rows", "400", "--cols", "800", "--prune-rate", "0.8", "--mask-bits", "0.1", "--alpha-bits", "0",
    ]);
    assert!(stdout(&o).contains("0.300 bits/weight, 106.7× vs f32"), "{}", stdout(&o));
}

#[test]
fn report_without_target_exits_3() {
    assert_eq!(run(&["report"]).status.code(), Some(3));
}

#[test]
fn histograms_of_one_row_respect_codebook_size() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), 1, 200);
    let q = dir.path().join("q");
    assert!(run(&["quantize", p(&model), "--bits", "1", "--tables", "2", "--out", p(&q)]).status.success());
    let h = dir.path().join("h");
    let o = run(&["report", "--artifact", p(&q.join("layer.w.iqqt")), "--histograms", p(&h)]);
    assert!(o.status.success());
    let csv = fs::read_to_string(h.join("layer.w_q.csv")).unwrap();
    let populated = csv.lines().skip(1).filter(|l| !l.ends_with(",0")).count();
    assert!((1..=4).contains(&populated), "{populated} populated bins");
}

#[test]
fn iterate_single_iteration_writes_one_record() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"iterations": 1, "synthetic_bytes": 20000,
            "trainer": {"hidden": 8, "bptt_len": 16, "batch": 8, "epochs": 1}}"#,
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let o = run(&["iterate", "--config", p(&cfg), "--out", p(&run_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = fs::read_to_string(run_dir.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 2);
    assert!(stdout(&o).contains("iter   1"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["corpus_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["trainer"]["lr_decay"], 0.5);
}

#[test]
fn iterate_unknown_config_field_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"iterationz": 1}"#).unwrap();
    let o = run(&["iterate", "--config", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn iterate_invalid_config_leaves_failed_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"bits": 0}"#).unwrap();
    let run_dir = dir.path().join("run");
    let o = run(&["iterate", "--config", p(&cfg), "--out", p(&run_dir)]);
    assert_eq!(o.status.code(), Some(3));
    let manifest = fs::read_to_string(run_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
