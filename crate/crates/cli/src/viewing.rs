use std::path::Path;

use log::info;
use meshfit_core::fit::{ColorMode, FramePose};
use meshfit_core::geometry::rotation::log_map;
use meshfit_core::geometry::BodyModel;
use meshfit_core::losses::FrameObservation;
use meshfit_core::sceneio::metrics::{iou, psnr, ssim, MetricReport};
use meshfit_core::sceneio::{
    chamfer_p2s, export_obj, load_checkpoint, load_scene, read_body_model, read_obj, read_pose, write_gray, write_rgb,
    Checkpoint,
};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{out_dir, write_json, write_text};
use crate::{EvalArgs, ExportArgs, PoseSource, RenderArgs, Shading};

fn checkpoint_for(path: &Path, model: &BodyModel) -> CliResult<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.check_model(model)?;
    Ok(ckpt)
}

fn color_mode(shading: Shading, ckpt: &Checkpoint) -> ColorMode {
    match shading {
        Shading::FaceColors => ColorMode::FaceColors,
        Shading::Texture => ColorMode::Texture,
        Shading::Auto if ckpt.stage == "stage1" || ckpt.stage == "init" => ColorMode::FaceColors,
        Shading::Auto => ColorMode::Texture,
    }
}

fn manifest_pose(f: &FrameObservation) -> FramePose {
    FramePose {
        theta: f.init_pose.theta.clone(),
        rot: log_map(&f.init_pose.rot),
        trans: f.init_pose.trans,
    }
}

fn frame_pose(ckpt: &Checkpoint, frames: &[FrameObservation], i: usize, source: PoseSource) -> CliResult<FramePose> {
    match source {
        PoseSource::Manifest => Ok(manifest_pose(&frames[i])),
        PoseSource::Fitted => ckpt.params.poses.get(i).cloned().ok_or_else(|| {
            CliError::Usage(format!(
                "checkpoint has fitted poses for {} frames, frame {i} requested; use --poses manifest",
                ckpt.params.poses.len()
            ))
        }),
    }
}

fn select_frames(requested: &[usize], n: usize) -> CliResult<Vec<usize>> {
    if requested.is_empty() {
        return Ok((0..n).collect());
    }
    if let Some(i) = requested.iter().find(|&&i| i >= n) {
        return Err(CliError::Usage(format!("frame {i} out of range, scene has {n} frames")));
    }
    Ok(requested.to_vec())
}

pub fn render(a: &RenderArgs) -> CliResult<()> {
    let (scene, _) = load_scene(&a.scene)?;
    let ckpt = checkpoint_for(&a.checkpoint, &scene.model)?;
    let novel = a.pose.as_deref().map(read_pose).transpose()?;
    let mode = color_mode(a.shading, &ckpt);
    let bg = ckpt.config.soft.background_color;
    let out = out_dir(&a.out)?;
    let mut table = String::from("frame,psnr\n");
    for i in select_frames(&a.frames, scene.frames.len())? {
        let f = &scene.frames[i];
        let pose = match &novel {
            Some(p) => p.clone(),
            None => frame_pose(&ckpt, &scene.frames, i, a.poses)?,
        };
        let (img, mask) = ckpt.params.render_view(&scene.model, &pose, &f.camera, mode, bg)?;
        write_rgb(&out.join(format!("render_{i:03}.png")), &img)?;
        write_gray(&out.join(format!("render_mask_{i:03}.png")), &mask)?;
        if novel.is_none() {
            let p = psnr(&img, &f.image)?;
            table.push_str(&format!("{i},{p:.6}\n"));
            println!("frame {i:>3}  PSNR {p:.3} dB");
        }
    }
    if novel.is_none() {
        write_text(&out.join("render.csv"), &table)?;
    }
    info!("renders written to {}", out.display());
    Ok(())
}

pub fn export(a: &ExportArgs) -> CliResult<()> {
    let model = read_body_model(&a.body_model)?;
    let ckpt = checkpoint_for(&a.checkpoint, &model)?;
    let out = out_dir(&a.out)?;
    let p = &ckpt.params;
    let (mesh, name) = match (a.frame, &a.pose) {
        (Some(i), _) => {
            let posed = p.posed(&model, i).map_err(|_| {
                CliError::Usage(format!("checkpoint has no fitted pose for frame {i} ({} frames)", p.poses.len()))
            })?;
            (posed.mesh, format!("posed_{i:03}.obj"))
        }
        (None, Some(path)) => {
            let pose = read_pose(path)?;
            let canonical = p.canonical_mesh(&model)?;
            let posed = meshfit_core::geometry::lbs_pose(
                &canonical,
                &model,
                &pose.theta,
                &meshfit_core::geometry::rotation::rodrigues(&pose.rot),
                &pose.trans,
            )?;
            (posed.mesh, "posed.obj".to_string())
        }
        (None, None) => (p.canonical_mesh(&model)?, "canonical.obj".to_string()),
    };
    let path = out.join(name);
    export_obj(&mesh, &path)?;
    println!("wrote {} ({} vertices, {} faces)", path.display(), mesh.num_vertices(), mesh.num_faces());
    Ok(())
}

#[derive(Debug, Serialize)]
struct FrameMetrics {
    frame: usize,
    #[serde(flatten)]
    report: MetricReport,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    frames: Vec<FrameMetrics>,
    mean: MetricReport,
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let (scene, _) = load_scene(&a.scene)?;
    let ckpt = checkpoint_for(&a.checkpoint, &scene.model)?;
    let mode = color_mode(a.shading, &ckpt);
    let bg = ckpt.config.soft.background_color;
    let out = out_dir(&a.out)?;
    let mut frames = Vec::with_capacity(scene.frames.len());
    for (i, f) in scene.frames.iter().enumerate() {
        let pose = frame_pose(&ckpt, &scene.frames, i, a.poses)?;
        let (img, mask) = ckpt.params.render_view(&scene.model, &pose, &f.camera, mode, bg)?;
        write_rgb(&out.join(format!("eval_{i:03}.png")), &img)?;
        frames.push(FrameMetrics {
            frame: i,
            report: MetricReport {
                psnr: psnr(&img, &f.image)?,
                ssim: ssim(&img, &f.image)?,
                iou: iou(&mask, &f.mask)?,
                chamfer: None,
                p2s: None,
            },
        });
    }
    let n = frames.len() as f64;
    let mean_of = |g: fn(&MetricReport) -> f64| frames.iter().map(|f| g(&f.report)).sum::<f64>() / n;
    let mut mean = MetricReport {
        psnr: mean_of(|r| r.psnr),
        ssim: mean_of(|r| r.ssim),
        iou: mean_of(|r| r.iou),
        chamfer: None,
        p2s: None,
    };
    if let Some(gt) = &a.gt_mesh {
        let gt = read_obj(gt)?;
        let fitted = ckpt.params.canonical_mesh(&scene.model)?;
        let c = chamfer_p2s(&fitted, &gt, a.samples, a.seed)?;
        mean.chamfer = Some(c.chamfer);
        mean.p2s = Some(c.p2s);
    }

    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6e}"));
    let mut csv = String::from("frame,psnr,ssim,iou,chamfer,p2s\n");
    for f in &frames {
        let r = &f.report;
        csv.push_str(&format!("{},{:.6},{:.6},{:.6},,\n", f.frame, r.psnr, r.ssim, r.iou));
    }
    csv.push_str(&format!(
        "mean,{:.6},{:.6},{:.6},{},{}\n",
        mean.psnr,
        mean.ssim,
        mean.iou,
        opt(mean.chamfer),
        opt(mean.p2s)
    ));
    write_text(&out.join("metrics.csv"), &csv)?;
    write_json(&out.join("metrics.json"), &EvalReport { frames, mean })?;
    print!("{csv}");
    Ok(())
}
