use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use meshfit_core::fit::{fit as run_fit, AvatarParams, ColorMode, FitConfig, LogRow, Monitor};
use meshfit_core::geometry::BodyModel;
use meshfit_core::sceneio::metrics::psnr;
use meshfit_core::sceneio::{export_obj, load_scene, save_checkpoint, write_rgb, Checkpoint};
use meshfit_core::{Error, Result};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{out_dir, write_json};
use crate::FitArgs;

pub fn load_config(path: Option<&Path>) -> CliResult<FitConfig> {
    let Some(path) = path else {
        return Ok(FitConfig::default());
    };
    let entry = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Load {
            entry: entry.clone(),
            reason: e.to_string(),
        }
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {entry}: {e}")))
}

/// Streams the loss log and writes a checkpoint whenever a stage ends.
struct FitMonitor<'a> {
    csv: BufWriter<std::fs::File>,
    csv_path: PathBuf,
    out: &'a Path,
    model: &'a BodyModel,
    cfg: &'a FitConfig,
    last: Option<LogRow>,
    rows: usize,
}

impl FitMonitor<'_> {
    fn io(&self, path: &Path, source: std::io::Error) -> Error {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl Monitor for FitMonitor<'_> {
    fn on_row(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.csv, "{}", row.to_csv()).map_err(|e| self.io(&self.csv_path, e))?;
        if row.iter % 100 == 0 {
            info!("{} iter {:>6}  total {:.5e}  psnr {:.2}", row.stage, row.iter, row.total, row.psnr);
        }
        self.rows += 1;
        self.last = Some(row.clone());
        Ok(())
    }

    fn on_stage_end(&mut self, stage: &str, iters: usize, params: &AvatarParams) -> Result<()> {
        let iteration = self.last.as_ref().map_or(0, |r| r.iter + 1);
        let path = self.out.join(format!("checkpoint_{stage}.json"));
        save_checkpoint(&path, &Checkpoint::new(self.model, stage, iteration, self.cfg, params))?;
        info!("{stage}: {iters} iterations, checkpoint {}", path.display());
        self.csv.flush().map_err(|e| self.io(&self.csv_path, e))
    }
}

#[derive(Debug, Serialize)]
struct FitSummary {
    frames: usize,
    stage1_iters: usize,
    stage2_iters: usize,
    one_stage: bool,
    rows: usize,
    final_row: Option<LogRow>,
    train_psnr: Vec<f64>,
    mean_train_psnr: f64,
    seconds: f64,
}

pub fn final_mode(cfg: &FitConfig, frames: usize) -> ColorMode {
    if cfg.one_stage || cfg.stage2_budget(frames) > 0 {
        ColorMode::Texture
    } else {
        ColorMode::FaceColors
    }
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.stage1_iters.is_some() {
        cfg.stage1_iters = a.stage1_iters;
    }
    if a.stage2_iters.is_some() {
        cfg.stage2_iters = a.stage2_iters;
    }
    cfg.one_stage |= a.one_stage;
    cfg.validate()?;
    let (scene, _) = load_scene(&a.scene)?;
    let out = out_dir(&a.out)?;
    let n = scene.frames.len();
    info!("loaded {n} frames, fitting {} + {} iterations", cfg.stage1_budget(n), cfg.stage2_budget(n));

    let csv_path = out.join("loss.csv");
    let mut csv = BufWriter::new(crate::output::create(&csv_path)?);
    crate::output::write_line(&mut csv, &csv_path, LogRow::HEADER)?;
    let mut monitor = FitMonitor {
        csv,
        csv_path: csv_path.clone(),
        out: &out,
        model: &scene.model,
        cfg: &cfg,
        last: None,
        rows: 0,
    };
    let params = run_fit(&scene, &cfg, &mut monitor)?;
    monitor.csv.flush().map_err(|e| CliError::write(&csv_path, e))?;

    let stage = if cfg.one_stage { "joint" } else { "stage2" };
    let iteration = monitor.last.as_ref().map_or(0, |r| r.iter + 1);
    save_checkpoint(
        &out.join("checkpoint.json"),
        &Checkpoint::new(&scene.model, stage, iteration, &cfg, &params),
    )?;
    export_obj(&params.canonical_mesh(&scene.model)?, &out.join("mesh.obj"))?;

    let renders = out_dir(&out.join("renders"))?;
    let mode = final_mode(&cfg, n);
    let mut train_psnr = Vec::with_capacity(n);
    for (i, f) in scene.frames.iter().enumerate() {
        let (img, _) = params.render_view(&scene.model, &params.poses[i], &f.camera, mode, cfg.soft.background_color)?;
        write_rgb(&renders.join(format!("train_{i:03}.png")), &img)?;
        train_psnr.push(psnr(&img, &f.image)?);
    }
    let mean_train_psnr = train_psnr.iter().sum::<f64>() / n as f64;
    let summary = FitSummary {
        frames: n,
        stage1_iters: if cfg.one_stage { 0 } else { cfg.stage1_budget(n) },
        stage2_iters: if cfg.one_stage { 0 } else { cfg.stage2_budget(n) },
        one_stage: cfg.one_stage,
        rows: monitor.rows,
        final_row: monitor.last.clone(),
        train_psnr,
        mean_train_psnr,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "fitted {n} frames in {:.1} s, mean training PSNR {mean_train_psnr:.2} dB, outputs in {}",
        summary.seconds,
        out.display()
    );
    Ok(())
}
