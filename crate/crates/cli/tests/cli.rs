use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gvgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvgs"))
        .args(args)
        .env_remove("GVGS_THREADS")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn assert_error(out: &Output, code: i32, kind: &str) {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error ")).collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    assert!(lines[0].starts_with(&format!("error kind={kind} msg=\"")), "{stderr}");
}

/// Synthetic plane written to disk, shared by the file-based tests.
fn synth_plane(dir: &Path) -> (PathBuf, PathBuf) {
    let out = gvgs(&["synth", "--scene", "textured-plane", "--size", "48", "--out", p(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (dir.join("scene.ply"), dir.join("cameras.json"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/plane.toml")
}

#[test]
fn render_writes_declared_outputs_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let (scene, cams) = synth_plane(&tmp.path().join("s"));
    let files = ["color.png", "depth.pfm", "alpha.png", "normal.png"];
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = tmp.path().join(run);
        let out = gvgs(&["render", "--scene", p(&scene), "--cameras", p(&cams), "--view", "0", "--out", p(&out_dir)]);
        assert!(out.status.success());
        runs.push(files.map(|f| std::fs::read(out_dir.join(f)).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
    let depth = gvgs_core::io::pfm::decode_pfm(&runs[0][1]).unwrap();
    assert_eq!(depth.dims(), (48, 48));
}

#[test]
fn calibrate_level_two_reports_sixteen_blocks() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    let (scene, cams) = synth_plane(&s);
    let r = tmp.path().join("r");
    assert!(gvgs(&["render", "--scene", p(&scene), "--cameras", p(&cams), "--view", "1", "--out", p(&r)]).status.success());
    let q = tmp.path().join("q");
    let out = gvgs(&[
        "calibrate",
        "--mono",
        p(&s.join("mono/1.pfm")),
        "--rendered",
        p(&r.join("depth.pfm")),
        "--mask",
        p(&r.join("alpha.png")),
        "--level",
        "2",
        "--out",
        p(&q),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(q.join("blocks.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "row,col,a,b,valid_count,fallback");
    assert_eq!(rows.len(), 17);
    assert!(q.join("calibrated.pfm").exists());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(q.join("residuals.json")).unwrap()).unwrap();
    assert_eq!(report["levels"].as_array().unwrap().len(), 3);
}

#[test]
fn visibility_consistency_and_mesh_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (scene, cams) = synth_plane(&tmp.path().join("s"));
    let pair = ["--scene", p(&scene), "--cameras", p(&cams), "--reference", "0", "--neighbor", "1"];
    let v = tmp.path().join("v");
    assert!(gvgs(&[&["visibility"], &pair[..], &["--out", p(&v)]].concat()).status.success());
    let weights = std::fs::read_to_string(v.join("weights.csv")).unwrap();
    assert!(weights.starts_with("index,weight,indicator\n"));
    for f in ["opacity.pfm", "covis.png", "weights.png"] {
        assert!(v.join(f).exists(), "{f}");
    }
    let c = tmp.path().join("c");
    assert!(gvgs(&[&["consistency"], &pair[..], &["--out", p(&c)]].concat()).status.success());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(c.join("report.json")).unwrap()).unwrap();
    assert!(report["loss"].as_f64().unwrap() >= 0.0);
    assert!(report["count"].as_u64().unwrap() > 0);
    let m = tmp.path().join("m.obj");
    let out = gvgs(&["mesh", "--scene", p(&scene), "--cameras", p(&cams), "--resolution", "48", "--out", p(&m)]);
    assert!(out.status.success());
    assert!(std::fs::read_to_string(&m).unwrap().lines().any(|l| l.starts_with("f ")));
}

#[test]
fn train_fixture_reduces_depth_error_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = tmp.path().join(run);
        let out = gvgs(&["train", "--config", p(&fixture()), "--out", p(&out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(std::fs::read(out_dir.join("metrics.csv")).unwrap());
        assert!(out_dir.join("scene.ply").exists());
    }
    assert_eq!(csvs[0], csvs[1], "same seed must give a bitwise-identical metrics CSV");
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "depth_rmse").unwrap();
    let rmse: Vec<f64> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(col).and_then(|v| v.parse().ok()))
        .collect();
    let (first, last) = (rmse[0], *rmse.last().unwrap());
    assert!(last < first, "depth_rmse {first} -> {last}");
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_error(&gvgs(&["frobnicate"]), 2, "usage");
    assert_error(&gvgs(&["render", "--scene", "x.ply"]), 2, "usage");

    let bad_cfg = tmp.path().join("bad.toml");
    std::fs::write(&bad_cfg, "iterations = 10\nlr.centre = 1\n").unwrap();
    assert_error(&gvgs(&["train", "--config", p(&bad_cfg), "--out", p(tmp.path())]), 3, "config");
    std::fs::write(&bad_cfg, "iterations = = 10\n").unwrap();
    assert_error(&gvgs(&["train", "--config", p(&bad_cfg), "--out", p(tmp.path())]), 3, "config");

    let missing = tmp.path().join("nope.ply");
    assert_error(&gvgs(&["render", "--scene", p(&missing), "--cameras", "c.json", "--view", "0", "--out", "o"]), 4, "missing_input");
    std::fs::write(&bad_cfg, "paths.scene = \"absent.ply\"\n").unwrap();
    assert_error(&gvgs(&["train", "--config", p(&bad_cfg)]), 4, "missing_input");

    let corrupt = tmp.path().join("corrupt.ply");
    std::fs::write(&corrupt, b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nend_header\n\0\0").unwrap();
    let out = gvgs(&["render", "--scene", p(&corrupt), "--cameras", "c.json", "--view", "0", "--out", "o"]);
    assert_error(&out, 5, "format");
    assert!(String::from_utf8_lossy(&out.stderr).contains("at byte"));
}

#[test]
fn thread_cap_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_gvgs"))
        .args(["synth", "--scene", "sphere", "--out", "/nonexistent-dir/x"])
        .env("GVGS_THREADS", "lots")
        .output()
        .unwrap();
    assert_error(&out, 3, "config");
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gvgs"))
        .args(["synth", "--scene", "textured-plane", "--size", "16", "--out", p(tmp.path())])
        .env("GVGS_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn help_documents_every_subcommand() {
    let out = gvgs(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["synth", "render", "visibility", "consistency", "calibrate", "train", "mesh"] {
        assert!(text.contains(sub), "{sub} missing from --help");
    }
    assert!(text.contains("GVGS_THREADS"));
    let out = gvgs(&["calibrate", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--mono", "--rendered", "--mask", "--level", "--spread", "--n-min", "--out"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn synthesized_config_trains_from_files() {
    let tmp = tempfile::tempdir().unwrap();
    let s = tmp.path().join("s");
    synth_plane(&s);
    let cfg = s.join("config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("iterations = 30000", "iterations = 3");
    std::fs::write(&cfg, text).unwrap();
    let out = gvgs(&["train", "--config", p(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(s.join("train/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}
