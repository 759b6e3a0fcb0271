use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use layoutjoint::layout::parse_layout_json;
use layoutjoint::pgm::decode_pgm;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_layoutjoint");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("LAYOUTJOINT_SEED")
        .output()
        .unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_layout(dir: &Path, name: &str, boxes: &[[f64; 4]], resolution: u32) -> PathBuf {
    let colours = ["red", "blue", "green", "yellow"];
    let instances: Vec<Value> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            serde_json::json!({
                "text": format!("a {} cup", colours[i % 4]),
                "box": b,
                "attribute": colours[i % 4],
            })
        })
        .collect();
    let doc = serde_json::json!({
        "global_text": "a photo of cups on a white background",
        "resolution": resolution,
        "instances": instances,
    });
    let path = dir.join(name);
    fs::write(&path, doc.to_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn build_mask_writes_phase_boundaries() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = write_layout(tmp.path(), "l.json", &[[0.0, 0.0, 0.5, 1.0], [0.5, 0.0, 1.0, 1.0]], 512);
    let out = tmp.path().join("masks");
    run_ok(&["build-mask", "--layout", s(&layout), "--out", s(&out)]);
    let files = sorted_files(&out);
    assert_eq!(
        files,
        ["mask_step_00.json", "mask_step_00.pgm", "mask_step_03.json", "mask_step_03.pgm",
         "mask_step_04.json", "mask_step_04.pgm", "mask_step_19.json", "mask_step_19.pgm"]
    );
    let side_car: Value = serde_json::from_slice(&fs::read(out.join("mask_step_03.json")).unwrap()).unwrap();
    assert_eq!(side_car["gamma"], 4);
    assert_eq!(side_car["steps"][0]["phase"], "strict");
    let pgm = decode_pgm(&fs::read(out.join("mask_step_04.pgm")).unwrap()).unwrap();
    let side = side_car["side"].as_u64().unwrap() as usize;
    assert_eq!((pgm.width, pgm.height, pgm.maxval), (side, side, 255));

    let off = tmp.path().join("off");
    run_ok(&["build-mask", "--layout", s(&layout), "--out", s(&off), "--no-detail-renderer"]);
    assert_eq!(sorted_files(&off), ["mask_all_steps.json", "mask_all_steps.pgm"]);
}

#[test]
fn higher_resolution_shortens_strict_phase() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = write_layout(tmp.path(), "l.json", &[[0.0, 0.0, 0.5, 1.0], [0.5, 0.0, 1.0, 1.0]], 1024);
    let out = tmp.path().join("m");
    run_ok(&["build-mask", "--layout", s(&layout), "--out", s(&out), "--patch-size", "128"]);
    assert!(out.join("mask_step_01.pgm").exists());
    assert!(out.join("mask_step_02.pgm").exists());
}

#[test]
fn missing_layout_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = run(&["run", "--layout", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn invalid_layout_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_layout(tmp.path(), "bad.json", &[[0.6, 0.0, 0.5, 1.0]], 512);
    let out = run(&["run", "--layout", s(&bad), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
}

#[test]
fn run_dumps_every_state() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = write_layout(tmp.path(), "l.json", &[[0.05, 0.1, 0.45, 0.9], [0.55, 0.1, 0.95, 0.9]], 512);
    let out = tmp.path().join("r");
    run_ok(&["run", "--layout", s(&layout), "--out", s(&out), "--dump-states", "--seed", "4"]);
    let states = sorted_files(&out.join("states"));
    assert_eq!(states.len(), 21);
    let last = fs::read(out.join("states/state_020.bin")).unwrap();
    let (steps, text_len, block) = layoutjoint::dump::decode_state(&last).unwrap();
    assert_eq!((steps, text_len), (20, 96));
    assert_eq!(block.rows, 96 + 256);
    let report: Value = serde_json::from_slice(&fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 4);
    assert!(report["instances"].as_array().unwrap().iter().all(|i| i["verdict"]["success"] == true));
}

#[test]
fn evaluate_is_reproducible_and_grid_writes_six_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        run_ok(&["evaluate", "--suite-count", "6", "--seed", "9", "--out", s(dir), "--jobs", "1"]);
    }
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    let csv = fs::read_to_string(a.join("report.csv")).unwrap();
    assert!(csv.starts_with("config,ISR_L2,"));
    assert!(csv.lines().nth(1).unwrap().starts_with("all,"));

    let grid = tmp.path().join("grid");
    run_ok(&["evaluate", "--suite-count", "3", "--ablation-grid", "--out", s(&grid)]);
    let files = sorted_files(&grid);
    assert_eq!(files.iter().filter(|f| f.ends_with(".json")).count(), 6);
    assert_eq!(fs::read_to_string(grid.join("summary.csv")).unwrap().lines().count(), 7);
}

#[test]
fn empty_suite_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["evaluate", "--suite-count", "0", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = run(&["evaluate", "--layout-dir", s(&empty), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn depth_and_refine() {
    let tmp = tempfile::tempdir().unwrap();
    let exact = [[64.0, 64.0, 192.0, 160.0], [300.0, 280.0, 460.0, 500.0]];
    let layout = write_layout(tmp.path(), "l.json", &exact, 512);
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(&layout).unwrap()).unwrap();
    doc["pixel_coords"] = Value::Bool(true);
    fs::write(&layout, doc.to_string()).unwrap();

    let out = tmp.path().join("d");
    run_ok(&["depth", "--layout", s(&layout), "--out", s(&out), "--refine"]);
    let pgm = decode_pgm(&fs::read(out.join("depth.pgm")).unwrap()).unwrap();
    assert_eq!((pgm.width, pgm.height, pgm.maxval), (512, 512, 65535));
    let refined = parse_layout_json(&fs::read_to_string(out.join("refined_layout.json")).unwrap()).unwrap();
    let original = parse_layout_json(&fs::read_to_string(&layout).unwrap()).unwrap();
    assert_eq!(refined.layout.instances(), original.layout.instances());

    // padded boxes over the depth map of the exact ones
    let depth = layoutjoint::depth::layout_to_depth(&original.layout, 512, 512).unwrap();
    let padded: Vec<_> = original
        .layout
        .instances()
        .iter()
        .map(|i| {
            let b = i.bbox;
            layoutjoint::layout::BoundingBox::new(b.x0 - 0.02, b.y0 - 0.02, b.x1 + 0.02, (b.y1 + 0.02).min(1.0))
        })
        .collect();
    let tightened = layoutjoint::depth::refine_layout(&original.layout.with_boxes(&padded).unwrap(), &depth);
    for (t, o) in tightened.instances().iter().zip(original.layout.instances()) {
        for (x, y) in t.bbox.as_array().iter().zip(o.bbox.as_array()) {
            assert!((x - y).abs() <= 1.0 / 512.0);
        }
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = write_layout(tmp.path(), "l.json", &[[0.05, 0.1, 0.45, 0.9], [0.55, 0.1, 0.95, 0.9]], 512);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 17, "steps": 6}"#).unwrap();

    let a = tmp.path().join("a");
    run_ok(&["--config", s(&cfg), "run", "--layout", s(&layout), "--out", s(&a)]);
    let ra: Value = serde_json::from_slice(&fs::read(a.join("run.json")).unwrap()).unwrap();
    assert_eq!((ra["seed"].as_u64(), ra["total_steps"].as_u64()), (Some(17), Some(6)));

    let b = tmp.path().join("b");
    run_ok(&["--config", s(&cfg), "run", "--layout", s(&layout), "--out", s(&b), "--seed", "3"]);
    let rb: Value = serde_json::from_slice(&fs::read(b.join("run.json")).unwrap()).unwrap();
    assert_eq!((rb["seed"].as_u64(), rb["total_steps"].as_u64()), (Some(3), Some(6)));
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let layout = write_layout(tmp.path(), "l.json", &[[0.05, 0.1, 0.45, 0.9]], 512);
    let out = Command::new(BIN)
        .args(["run", "--layout", s(&layout), "--out", s(tmp.path())])
        .env("LAYOUTJOINT_SEED", "123")
        .output()
        .unwrap();
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&fs::read(tmp.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(r["seed"], 123);

    let bad = Command::new(BIN)
        .args(["run", "--layout", s(&layout), "--out", s(tmp.path())])
        .env("LAYOUTJOINT_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
