use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use meshfit_core::sceneio::{load_checkpoint, read_body_model, read_obj};

fn meshfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshfit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Four training frames (2 cameras x 2 poses) and two held-out frames at 48x48.
fn synth(dir: &Path) -> (PathBuf, PathBuf) {
    let o = meshfit(&[
        "synth-scene",
        "--out",
        s(dir),
        "--resolution",
        "48",
        "--cameras",
        "2",
        "--poses",
        "2",
        "--held-out",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (dir.join("train.json"), dir.join("heldout.json"))
}

fn fit(scene: &Path, out: &Path, s1: usize, s2: usize) -> Output {
    meshfit(&[
        "fit",
        "--scene",
        s(scene),
        "--out",
        s(out),
        "--stage1-iters",
        &s1.to_string(),
        "--stage2-iters",
        &s2.to_string(),
        "--seed",
        "3",
    ])
}

fn loss_rows(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("loss.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn fit_writes_checkpoint_log_mesh_and_renders() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synth(dir.path());
    let out = dir.path().join("fit");
    let o = fit(&train, &out, 12, 8);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.json", "checkpoint_stage1.json", "checkpoint_stage2.json", "mesh.obj", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    for i in 0..4 {
        assert!(out.join(format!("renders/train_{i:03}.png")).exists());
    }
    let rows = loss_rows(&out);
    assert_eq!(rows.len(), 20);
    assert!(rows[11].contains(",stage1,") && rows[12].contains(",stage2,"));
    let ckpt = load_checkpoint(&out.join("checkpoint.json")).unwrap();
    assert_eq!((ckpt.stage.as_str(), ckpt.iteration), ("stage2", 20));
}

#[test]
fn same_seed_reproduces_the_loss_log() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synth(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&fit(&train, &a, 6, 4)), 0);
    let o = meshfit(&[
        "--threads",
        "1",
        "fit",
        "--scene",
        s(&train),
        "--out",
        s(&b),
        "--stage1-iters",
        "6",
        "--stage2-iters",
        "4",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(loss_rows(&a)[..10], loss_rows(&b)[..10]);
}

#[test]
fn missing_mask_is_a_data_error_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synth(dir.path());
    std::fs::remove_file(dir.path().join("train_mask_002.png")).unwrap();
    let o = fit(&train, &dir.path().join("fit"), 2, 2);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("train_mask_002.png"), "{err}");
}

#[test]
fn usage_errors_and_help() {
    let o = meshfit(&["fit", "--scene", "x.json", "--out", "o", "--bogus"]);
    assert_eq!(code(&o), 2);
    let o = meshfit(&["toy-cube", "--help"]);
    assert_eq!(code(&o), 0);
    let help = String::from_utf8_lossy(&o.stdout);
    for flag in ["--out", "--views", "--mode", "--resolution", "--iters", "--subdivisions", "--seed", "--threads"] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
    let dir = tempfile::tempdir().unwrap();
    let o = meshfit(&["toy-cube", "--out", s(dir.path()), "--views", "3"]);
    assert_eq!(code(&o), 2);
    let o = meshfit(&["--threads", "0", "gradcheck", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn render_reproduces_the_training_log_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synth(dir.path());
    let out = dir.path().join("fit");
    assert_eq!(code(&fit(&train, &out, 40, 40)), 0);
    let r = dir.path().join("render");
    let ck = out.join("checkpoint.json");
    let o = meshfit(&["render", "--scene", s(&train), "--checkpoint", s(&ck), "--out", s(&r)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rendered: Vec<(usize, f64)> = std::fs::read_to_string(r.join("render.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (f, p) = l.split_once(',').unwrap();
            (f.parse().unwrap(), p.parse().unwrap())
        })
        .collect();
    assert_eq!(rendered.len(), 4);
    let rows = loss_rows(&out);
    for (frame, p) in rendered {
        let last = rows
            .iter()
            .rev()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|c| c[2].parse::<usize>().unwrap() == frame)
            .unwrap();
        let logged: f64 = last[9].parse().unwrap();
        assert!(p >= logged - 0.1, "frame {frame}: rendered {p} vs logged {logged}");
    }
    assert!(r.join("render_003.png").exists() && r.join("render_mask_003.png").exists());
}

#[test]
fn exported_mesh_round_trips_and_eval_reports_means() {
    let dir = tempfile::tempdir().unwrap();
    let (train, held) = synth(dir.path());
    let out = dir.path().join("fit");
    assert_eq!(code(&fit(&train, &out, 5, 5)), 0);
    let ck = out.join("checkpoint.json");
    let body = dir.path().join("body_model.json");

    let ex = dir.path().join("export");
    let o = meshfit(&["export-mesh", "--body-model", s(&body), "--checkpoint", s(&ck), "--out", s(&ex)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let model = read_body_model(&body).unwrap();
    let canonical = load_checkpoint(&ck).unwrap().params.canonical_mesh(&model).unwrap();
    let back = read_obj(&ex.join("canonical.obj")).unwrap();
    assert_eq!(&*back.faces, &*canonical.faces);
    for (a, b) in back.vertices.iter().zip(&canonical.vertices) {
        assert!((a - b).amax() <= 1e-7);
    }
    let o = meshfit(&["export-mesh", "--body-model", s(&body), "--checkpoint", s(&ck), "--out", s(&ex), "--frame", "1"]);
    assert_eq!(code(&o), 0);
    assert!(ex.join("posed_001.obj").exists());

    let ev = dir.path().join("eval");
    let gt = dir.path().join("gt_canonical.obj");
    let o = meshfit(&["eval", "--scene", s(&held), "--checkpoint", s(&ck), "--out", s(&ev), "--gt-mesh", s(&gt), "--samples", "500"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(ev.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 2 + 1);
    assert!(lines[3].starts_with("mean,"));
    assert!(lines[3].split(',').all(|c| !c.is_empty()));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["frames"].as_array().unwrap().len(), 2);
    assert!(json["mean"]["chamfer"].as_f64().unwrap() > 0.0);

    let o = meshfit(&["eval", "--scene", s(&held), "--checkpoint", s(&dir.path().join("none.json")), "--out", s(&ev)]);
    assert_eq!(code(&o), 3);
    let o = meshfit(&["render", "--scene", s(&held), "--checkpoint", s(&ck), "--out", s(&ev), "--frames", "7"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_exit_status_follows_the_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = meshfit(&["gradcheck", "--out", s(dir.path()), "--groups", "offsets,face_colors"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(dir.path().join("gradcheck.json").exists());
    let o = meshfit(&["gradcheck", "--out", s(dir.path()), "--groups", "offsets", "--corrupt", "offsets"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn toy_cube_both_emits_a_two_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = meshfit(&[
        "toy-cube", "--out", s(dir.path()), "--views", "4", "--resolution", "32", "--iters", "5", "--subdivisions", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("toycube.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("sil-only,") && rows[1].starts_with("rgb-sil,"));
    for f in ["gt.obj", "fitted_sil-only.obj", "fitted_rgb-sil.obj", "loss_rgb-sil.csv", "toycube.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
