use log::info;
use meshfit_core::fit::toycube::{run_toy_cube, toy_cube_scene, ToyCubeConfig, ToyCubeMode, ToyCubeResult};
use meshfit_core::fit::{grad_check, FramePose, GradCheckOptions, LogRow, RecordingMonitor};
use meshfit_core::sceneio::synth::{toy_body_scene, SynthConfig};
use meshfit_core::sceneio::{export_obj, write_scene};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{out_dir, write_json, write_text};
use crate::{CubeMode, GradcheckArgs, SynthArgs, ToyCubeArgs};

#[derive(Debug, Serialize)]
struct ToyCubeReport {
    config: ToyCubeConfig,
    results: Vec<ToyCubeResult>,
    /// chamfer(rgb-sil) / chamfer(sil-only), when both ran.
    chamfer_ratio: Option<f64>,
}

pub fn toy_cube(a: &ToyCubeArgs) -> CliResult<()> {
    let cfg = ToyCubeConfig {
        resolution: a.resolution,
        views: a.views,
        subdivisions: a.subdivisions,
        iters: a.iters,
        seed: a.seed,
        ..ToyCubeConfig::default()
    };
    let modes = match a.mode {
        CubeMode::Both => vec![ToyCubeMode::SilOnly, ToyCubeMode::RgbSil],
        CubeMode::SilOnly => vec![ToyCubeMode::SilOnly],
        CubeMode::RgbSil => vec![ToyCubeMode::RgbSil],
    };
    let data = toy_cube_scene(&cfg)?;
    let out = out_dir(&a.out)?;
    export_obj(&data.gt, &out.join("gt.obj"))?;
    let mut results = Vec::new();
    for mode in modes {
        info!("toy cube: fitting {} with {} views", mode.name(), cfg.views);
        let mut rec = RecordingMonitor::default();
        let r = run_toy_cube(&data, &cfg, mode, &mut rec)?;
        let mut csv = format!("{}\n", LogRow::HEADER);
        for row in &rec.rows {
            csv.push_str(&row.to_csv());
            csv.push('\n');
        }
        write_text(&out.join(format!("loss_{}.csv", mode.name())), &csv)?;
        export_obj(&r.fitted, &out.join(format!("fitted_{}.obj", mode.name())))?;
        results.push(r);
    }
    let chamfer_ratio = match results.as_slice() {
        [s, r] => Some(r.chamfer / s.chamfer),
        _ => None,
    };

    let mut table = String::from("mode,chamfer,p2s,iou_min,iou_mean,chamfer_undeformed\n");
    for r in &results {
        table.push_str(&format!(
            "{},{:.6e},{:.6e},{:.6},{:.6},{:.6e}\n",
            r.mode.name(),
            r.chamfer,
            r.p2s,
            r.iou_min,
            r.iou_mean,
            r.chamfer_plain
        ));
    }
    write_text(&out.join("toycube.csv"), &table)?;
    print!("{table}");
    if let Some(q) = chamfer_ratio {
        println!("chamfer ratio rgb-sil / sil-only: {q:.3}");
    }
    write_json(
        &out.join("toycube.json"),
        &ToyCubeReport {
            config: cfg,
            results,
            chamfer_ratio,
        },
    )
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    if !(a.tol > 0.0) {
        return Err(CliError::Usage("--tol must be positive".into()));
    }
    let report = grad_check(&GradCheckOptions {
        groups: a.groups.clone(),
        step: a.step,
        seed: a.seed,
        corrupt: a.corrupt.clone(),
    })?;
    let out = out_dir(&a.out)?;
    write_json(&out.join("gradcheck.json"), &report)?;
    println!("{:<12} {:>8} {:>12} {:>12} {:>12}", "group", "entries", "max|grad|", "max|err|", "rel_err");
    for g in &report.groups {
        let flag = if g.rel_err <= a.tol { "" } else { "  FAIL" };
        println!(
            "{:<12} {:>8} {:>12.4e} {:>12.4e} {:>12.4e}{flag}",
            g.group, g.entries, g.max_abs_grad, g.max_abs_err, g.rel_err
        );
    }
    if report.passes(a.tol) {
        Ok(())
    } else {
        Err(CliError::GradCheck {
            max_rel_err: report.max_rel_err(),
            tol: a.tol,
        })
    }
}

#[derive(Debug, Serialize)]
struct SynthTruth {
    beta: Vec<f64>,
    poses: Vec<FramePose>,
    train_cameras: Vec<usize>,
    held_out_cameras: Vec<usize>,
}

pub fn synth_scene(a: &SynthArgs) -> CliResult<()> {
    let s = toy_body_scene(&SynthConfig {
        resolution: a.resolution,
        cameras: a.cameras,
        poses: a.poses,
        held_out: a.held_out,
        seed: a.seed,
        ..SynthConfig::default()
    })?;
    let out = out_dir(&a.out)?;
    let train = write_scene(&out, "train", &s.scene)?;
    println!("wrote {} ({} frames)", train.display(), s.scene.frames.len());
    if !s.held_out.frames.is_empty() {
        let held = write_scene(&out, "heldout", &s.held_out)?;
        println!("wrote {} ({} frames)", held.display(), s.held_out.frames.len());
    }
    export_obj(&s.gt.canonical, &out.join("gt_canonical.obj"))?;
    write_json(
        &out.join("gt.json"),
        &SynthTruth {
            beta: s.gt.beta.clone(),
            poses: s.gt.poses.clone(),
            train_cameras: s.camera_of.clone(),
            held_out_cameras: s.held_out_camera_of.clone(),
        },
    )
}
