use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use d2co::geometry::Pose;
use d2co::sim::{self, Placement, SyntheticScene, SCENE_SCHEMA_VERSION};
use nalgebra::Vector3;
use serde_json::Value;

fn d2co(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d2co"))
        .current_dir(dir)
        .env_remove("D2CO_CONFIG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn pose(v: &Value) -> Pose {
    serde_json::from_value(v.clone()).unwrap()
}

/// One "ell" resting 2 mm and 0.05 rad away from a node of the default bank grid.
fn one_object_scene(dir: &Path) -> (PathBuf, Pose) {
    let models = sim::standard_models();
    let world = sim::resting_pose(&models[0], 0.012, -0.008, std::f64::consts::FRAC_PI_4 + 0.05, false);
    let scene = SyntheticScene {
        schema_version: SCENE_SCHEMA_VERSION,
        placements: vec![Placement {
            object_id: "ell".into(),
            pose: world,
        }],
        workspace: d2co::experiments::Setup::default().workspace,
        seed: 0,
    };
    let p = dir.join("one.json");
    scene.save(&p).unwrap();
    (p, world)
}

fn yaw_of(p: &Pose) -> f64 {
    let r = p.rotation_matrix();
    r[(1, 0)].atan2(r[(0, 0)])
}

#[test]
fn detect_finds_the_object_within_one_grid_step() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, truth) = one_object_scene(dir.path());
    let camera = d2co::experiments::Setup::default().reference;
    ok(&d2co(dir.path(), &["--out", "a", "detect", "--scene", scene.to_str().unwrap()]));
    let c = read_json(dir.path().join("a/candidates.json"));
    let top = &c["candidates"][0];
    assert_eq!(top["object_id"], "ell");
    let world = camera.inverse().compose(&pose(&top["pose"]));
    let d = world.translation - truth.translation;
    // Bank grid: 10 mm in x and y, π/4 in yaw.
    assert!(d.x.abs() <= 0.01 && d.y.abs() <= 0.01 && d.z.abs() < 1e-9, "{d:?}");
    let dyaw = d2co::edges::wrap_pi(yaw_of(&world) - yaw_of(&truth) + std::f64::consts::FRAC_PI_2) - std::f64::consts::FRAC_PI_2;
    assert!(dyaw.abs() <= std::f64::consts::FRAC_PI_4, "{dyaw}");

    // The rendered image and the edgel file lead to the same entry.
    ok(&d2co(dir.path(), &["--out", "a", "render-scene", "--scene", scene.to_str().unwrap()]));
    ok(&d2co(dir.path(), &["--out", "a", "detect", "--image", "a/image.png", "--output", "a/from_image.json"]));
    ok(&d2co(dir.path(), &["--out", "a", "detect", "--edgels", "a/edgels.csv", "--output", "a/from_edgels.json"]));
    for f in ["a/from_image.json", "a/from_edgels.json"] {
        let c = read_json(dir.path().join(f));
        assert_eq!(c["candidates"][0]["template_ref"], top["template_ref"], "{f}");
    }
}

#[test]
fn top_k_bounds_the_candidate_list() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = one_object_scene(dir.path());
    ok(&d2co(dir.path(), &["--out", "a", "detect", "--scene", scene.to_str().unwrap(), "--top-k", "5"]));
    let c = read_json(dir.path().join("a/candidates.json"));
    let list = c["candidates"].as_array().unwrap();
    assert!(!list.is_empty() && list.len() <= 5);
    let d: Vec<f64> = list.iter().map(|x| x["avg_dcd"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(c["schema_version"], 1);
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&d2co(dir.path(), &["--out", out, "--seed", "9", "render-scene"]));
        ok(&d2co(dir.path(), &["--out", out, "detect", "--scene", &format!("{out}/scene.json")]));
        ok(&d2co(dir.path(), &["--out", out, "register", "--candidates", &format!("{out}/candidates.json"), "--scene", &format!("{out}/scene.json")]));
    }
    for f in ["scene.json", "edgels.csv", "image.png"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    // Only the source path differs.
    for f in ["candidates.json", "registered.json"] {
        let mut a = read_json(dir.path().join("a").join(f));
        let mut b = read_json(dir.path().join("b").join(f));
        a["source"] = Value::Null;
        b["source"] = Value::Null;
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn empty_candidate_list_registers_to_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = one_object_scene(dir.path());
    let s = scene.to_str().unwrap();
    ok(&d2co(dir.path(), &["--out", "a", "detect", "--scene", s]));
    let mut c = read_json(dir.path().join("a/candidates.json"));
    c["candidates"] = Value::Array(vec![]);
    std::fs::write(dir.path().join("empty.json"), c.to_string()).unwrap();
    let o = d2co(dir.path(), &["--out", "a", "register", "--candidates", "empty.json", "--scene", s]);
    ok(&o);
    let r = read_json(dir.path().join("a/registered.json"));
    assert_eq!(r["candidates"].as_array().unwrap().len(), 0);
    assert_eq!(r["evaluation"]["correct"], 0);
}

#[test]
fn three_views_register_at_least_as_well_as_one() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = one_object_scene(dir.path());
    let s = scene.to_str().unwrap();
    ok(&d2co(dir.path(), &["--out", "a", "detect", "--scene", s, "--top-k", "3"]));
    // Move every candidate about 7 mm, mostly in depth.
    let mut c = read_json(dir.path().join("a/candidates.json"));
    for cand in c["candidates"].as_array_mut().unwrap() {
        let mut p = pose(&cand["pose"]);
        p.translation += Vector3::new(0.003, -0.002, 0.006);
        cand["pose"] = serde_json::to_value(p).unwrap();
    }
    std::fs::write(dir.path().join("off.json"), c.to_string()).unwrap();
    let mut correct = Vec::new();
    for views in ["1", "3"] {
        let out = format!("r{views}.json");
        ok(&d2co(dir.path(), &["--out", "a", "register", "--candidates", "off.json", "--scene", s, "--views", views, "--output", &out]));
        let r = read_json(dir.path().join(&out));
        assert_eq!(r["views"].as_u64().unwrap().to_string(), views);
        correct.push(r["candidates"].as_array().unwrap().iter().filter(|x| x["correct"] == true).count());
    }
    assert!(correct[1] >= correct[0] && correct[1] >= 1, "{correct:?}");
}

const SMALL_NBV: &str = r#"{
  "scene_objects": 3,
  "workspace": {"min": [-0.06, -0.06, 0.0], "max": [0.06, 0.06, 0.1]},
  "nbv": {
    "actions": 8,
    "grid": {"x": {"min": -0.05, "max": 0.05, "count": 6}, "y": {"min": -0.05, "max": 0.05, "count": 6},
             "yaw": {"min": 0.0, "max": 5.5, "count": 8}, "flips": true},
    "planner": {"n_candidates": 15, "n_particles": 60, "n_combinations": 200, "max_views": 5}
  }
}"#;

#[test]
fn nbv_random_runs_repeat_and_respect_the_view_budget() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.json"), SMALL_NBV).unwrap();
    for out in ["a", "b"] {
        ok(&d2co(dir.path(), &["--config", "small.json", "--out", out, "nbv", "--strategy", "random"]));
    }
    let a = std::fs::read_to_string(dir.path().join("a/telemetry-random.jsonl")).unwrap();
    assert_eq!(a, std::fs::read_to_string(dir.path().join("b/telemetry-random.jsonl")).unwrap());
    let rows: Vec<Value> = a.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    // The first line is the initial image; the others are acquired views.
    assert!(rows[0]["action"].is_null());
    let views = rows.iter().filter(|r| !r["action"].is_null()).count();
    assert!((1..=5).contains(&views), "{views}");
    let csv = std::fs::read_to_string(dir.path().join("a/nbv.csv")).unwrap();
    assert!(csv.starts_with("schema_version,strategy,views"));
    assert_eq!(csv.lines().count(), 1 + 6);

    ok(&d2co(dir.path(), &["--config", "small.json", "--out", "c", "nbv", "--strategy", "mi-max", "--max-views", "2"]));
    let t = std::fs::read_to_string(dir.path().join("c/telemetry-mi-max.jsonl")).unwrap();
    assert!(t.lines().count() <= 3);
}

#[test]
fn basin_benchmark_writes_one_row_per_magnitude() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.json"), r#"{"benchmark": {"basin": {"trials": 2}}}"#).unwrap();
    ok(&d2co(dir.path(), &["--config", "b.json", "--out", "a", "benchmark", "--experiment", "basin"]));
    let mut r = csv::Reader::from_path(dir.path().join("a/basin.csv")).unwrap();
    assert_eq!(&r.headers().unwrap()[0], "schema_version");
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|x| &x[3] == "2"));
    assert!(read_json(dir.path().join("a/summary.json"))["basin"].is_array());

    std::fs::write(dir.path().join("e.json"), r#"{"benchmark": {"basin": {"magnitudes_mm": []}}}"#).unwrap();
    ok(&d2co(dir.path(), &["--config", "e.json", "--out", "e", "benchmark", "--experiment", "basin"]));
    let text = std::fs::read_to_string(dir.path().join("e/basin.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("schema_version,translation_mm"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |o: Output| o.status.code().unwrap();

    std::fs::write(d.join("m.json"), r#"{"models": [{"id": "gear", "path": "meshes/gear.stl"}]}"#).unwrap();
    let o = d2co(d, &["--config", "m.json", "render-scene"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gear.stl"));
    assert_eq!(code(o), 2);
    assert_eq!(code(d2co(d, &["--config", "nope.json", "render-scene"])), 2);
    std::fs::write(d.join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(d2co(d, &["--config", "bad.json", "render-scene"])), 2);
    assert_eq!(code(d2co(d, &["frobnicate"])), 2);
    assert_eq!(code(d2co(d, &["detect"])), 2);

    let env = Command::new(env!("CARGO_BIN_EXE_d2co"))
        .current_dir(d)
        .env("D2CO_CONFIG", "m.json")
        .arg("render-scene")
        .output()
        .unwrap();
    assert_eq!(code(env), 2);

    std::fs::write(d.join("s.json"), "[1, 2").unwrap();
    assert_eq!(code(d2co(d, &["detect", "--scene", "s.json"])), 3);
    assert_eq!(code(d2co(d, &["detect", "--scene", "missing.json"])), 3);
    std::fs::write(d.join("e.csv"), "x,y,theta\n1,2\n").unwrap();
    assert_eq!(code(d2co(d, &["detect", "--edgels", "e.csv"])), 3);

    let (scene, _) = one_object_scene(d);
    let s = scene.to_str().unwrap();
    ok(&d2co(d, &["--out", "a", "detect", "--scene", s]));
    ok(&d2co(d, &["--out", "a", "render-scene", "--scene", s]));
    assert_eq!(code(d2co(d, &["--out", "a", "register", "--candidates", "a/candidates.json", "--edgels", "a/edgels.csv", "--views", "3"])), 2);
    // A camera change invalidates earlier candidates.
    std::fs::write(d.join("cam.json"), r#"{"camera": {"azimuth": 0.5}}"#).unwrap();
    assert_eq!(code(d2co(d, &["--config", "cam.json", "--out", "a", "register", "--candidates", "a/candidates.json", "--scene", s])), 3);

    let help = d2co(d, &["--help"]);
    ok(&help);
    let text = String::from_utf8_lossy(&help.stdout);
    for c in ["render-scene", "detect", "register", "nbv", "benchmark", "D2CO_CONFIG"] {
        assert!(text.contains(c), "{c}");
    }
}
