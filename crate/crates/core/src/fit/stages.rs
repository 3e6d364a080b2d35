use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::ParamGroup;
use super::objective::{Branches, CacheUse, Gradients, Objective, Wanted};
use super::params::{flatten3, unflatten3, AvatarParams, ColorMode};
use super::{FitConfig, Scene};
use crate::error::{Error, Result};

/// One row of the loss log. Term columns are summed over the batch; `frame`
/// is the first frame of the batch and `psnr` the batch mean of the hard
/// render against the observed image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub stage: String,
    pub frame: usize,
    pub rgb: f64,
    pub sil: f64,
    pub kps: f64,
    pub nc: f64,
    pub fa: f64,
    pub total: f64,
    pub psnr: f64,
}

impl LogRow {
    pub const HEADER: &'static str = "iter,stage,frame,rgb,sil,kps,nc,fa,total,psnr";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.iter, self.stage, self.frame, self.rgb, self.sil, self.kps, self.nc, self.fa, self.total, self.psnr
        )
    }
}

/// Receives progress from the driver. Every method defaults to a no-op.
pub trait Monitor {
    fn on_row(&mut self, _row: &LogRow) -> Result<()> {
        Ok(())
    }

    /// Called after the parameter update of every iteration.
    fn on_step(&mut self, _iter: usize, _params: &AvatarParams) -> Result<()> {
        Ok(())
    }

    fn on_stage_end(&mut self, _stage: &str, _iters: usize, _params: &AvatarParams) -> Result<()> {
        Ok(())
    }
}

/// Collects log rows in memory.
#[derive(Debug, Default)]
pub struct RecordingMonitor {
    pub rows: Vec<LogRow>,
}

impl Monitor for RecordingMonitor {
    fn on_row(&mut self, row: &LogRow) -> Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }
}

/// Parameter groups a stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Active {
    pub beta: bool,
    pub offsets: bool,
    pub pose: bool,
    pub face_colors: bool,
    pub texture: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct StageSpec {
    pub name: &'static str,
    pub mode: ColorMode,
    pub iters: usize,
    pub active: Active,
    /// Added to the iteration number written to the log.
    pub iter_offset: usize,
}

struct Groups {
    beta: ParamGroup,
    offsets: ParamGroup,
    face_colors: ParamGroup,
    texcoords: ParamGroup,
    tables: ParamGroup,
    mlp: ParamGroup,
    poses: Vec<ParamGroup>,
}

impl Groups {
    fn new(p: &AvatarParams, cfg: &FitConfig, a: Active) -> Self {
        let lr = &cfg.lr;
        let frozen = |mut g: ParamGroup, on: bool| {
            g.frozen = !on;
            g
        };
        Groups {
            beta: frozen(ParamGroup::new("beta", p.beta.len(), lr.beta), a.beta),
            offsets: frozen(ParamGroup::new("offsets", 3 * p.offsets.len(), lr.offsets), a.offsets),
            face_colors: frozen(
                ParamGroup::new("face_colors", 3 * p.face_colors.len(), lr.face_colors),
                a.face_colors,
            ),
            texcoords: frozen(
                ParamGroup::new("texcoords", 3 * p.texture.texcoords.len(), lr.texcoords),
                a.texture,
            ),
            tables: frozen(ParamGroup::new("tables", p.texture.tables.len(), lr.tables), a.texture),
            mlp: frozen(ParamGroup::new("mlp", p.texture.mlp.params.len(), lr.mlp), a.texture),
            poses: p
                .poses
                .iter()
                .enumerate()
                .map(|(i, q)| frozen(ParamGroup::new(format!("pose[{i}]"), q.num_values(), lr.pose), a.pose))
                .collect(),
        }
    }
}

/// Frame order: a fresh seeded permutation per pass over the scene.
struct FrameSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    next: usize,
}

impl FrameSampler {
    fn new(n: usize, seed: u64) -> Self {
        FrameSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            next: n,
        }
    }

    fn batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.next >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.next = 0;
            }
            let f = self.order[self.next];
            self.next += 1;
            if !out.contains(&f) {
                out.push(f);
            }
        }
        out
    }
}

fn stage_seed(seed: u64, name: &str) -> u64 {
    name.bytes().fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Runs one optimization stage in place. Returns the number of iterations
/// performed.
pub fn run_stage(
    scene: &Scene,
    params: &mut AvatarParams,
    cfg: &FitConfig,
    spec: StageSpec,
    monitor: &mut dyn Monitor,
) -> Result<usize> {
    cfg.validate()?;
    params.validate(&scene.model)?;
    if scene.frames.is_empty() {
        return Err(Error::config("scene has no frames"));
    }
    let objective = Objective {
        scene,
        weights: cfg.weights,
        soft: cfg.soft,
        normalize_regularizers: cfg.normalize_regularizers,
    };
    let a = spec.active;
    let wanted = Wanted {
        shape: a.beta || a.offsets,
        pose: a.pose,
        face_colors: a.face_colors && spec.mode == ColorMode::FaceColors,
        texture: a.texture && spec.mode == ColorMode::Texture,
    };
    let mut groups = Groups::new(params, cfg, a);
    let mut sampler = FrameSampler::new(scene.frames.len(), stage_seed(cfg.seed, spec.name));
    let mut initial = None;
    let mut above = 0usize;

    for it in 0..spec.iters {
        let batch = sampler.batch(cfg.batch_size);
        let ev = objective.evaluate(params, spec.mode, &batch, Branches::ALL, wanted, CacheUse::Off)?;
        if !ev.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss in {} at iteration {it}",
                spec.name
            )));
        }
        let n = ev.frames.len() as f64;
        let row = LogRow {
            iter: spec.iter_offset + it,
            stage: spec.name.to_string(),
            frame: batch[0],
            rgb: ev.frames.iter().map(|f| f.terms.rgb).sum(),
            sil: ev.frames.iter().map(|f| f.terms.sil).sum(),
            kps: ev.frames.iter().map(|f| f.terms.kps).sum(),
            nc: ev.reg.nc,
            fa: ev.reg.fa,
            total: ev.total,
            psnr: ev.frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        };
        monitor.on_row(&row)?;

        let init = *initial.get_or_insert(ev.total);
        if ev.total > cfg.divergence_factor * init {
            above += 1;
            if above >= cfg.divergence_patience {
                return Err(Error::Diverged {
                    stage: spec.name.to_string(),
                    iteration: it,
                    loss: ev.total,
                    initial: init,
                });
            }
        } else {
            above = 0;
        }

        if let Some(g) = ev.grad {
            step_groups(&mut groups, params, &g, a, wanted)?;
        }
        monitor.on_step(spec.iter_offset + it, params)?;
    }
    monitor.on_stage_end(spec.name, spec.iters, params)?;
    Ok(spec.iters)
}

fn step_groups(groups: &mut Groups, params: &mut AvatarParams, g: &Gradients, a: Active, wanted: Wanted) -> Result<()> {
    {
        if a.beta {
            groups.beta.adam_step(&mut params.beta, &g.beta)?;
        }
        if a.offsets {
            let mut x = flatten3(&params.offsets);
            groups.offsets.adam_step(&mut x, &flatten3(&g.offsets))?;
            unflatten3(&x, &mut params.offsets);
        }
        if wanted.face_colors {
            let mut x: Vec<f64> = params.face_colors.iter().flatten().copied().collect();
            let gx: Vec<f64> = g.face_colors.iter().flatten().copied().collect();
            groups.face_colors.adam_step(&mut x, &gx)?;
            for (c, v) in params.face_colors.iter_mut().zip(x.chunks_exact(3)) {
                *c = [v[0], v[1], v[2]];
            }
        }
        if let (true, Some(gt)) = (wanted.texture, g.texture.as_ref()) {
            let tf = &mut params.texture;
            let mut x = flatten3(&tf.texcoords);
            groups.texcoords.adam_step(&mut x, &flatten3(&gt.texcoords))?;
            unflatten3(&x, &mut tf.texcoords);
            groups.tables.adam_step(&mut tf.tables, &gt.tables)?;
            groups.mlp.adam_step(&mut tf.mlp.params, &gt.mlp)?;
        }
        if a.pose {
            for (i, pg) in g.poses.iter().enumerate() {
                if let Some(pg) = pg {
                    let mut x = params.poses[i].to_flat();
                    groups.poses[i].adam_step(&mut x, &pg.to_flat())?;
                    params.poses[i].set_flat(&x);
                }
            }
        }
    }
    Ok(())
}

/// Stage 1: geometry, shape, pose and per-face base colors.
pub fn run_stage1(scene: &Scene, params: &mut AvatarParams, cfg: &FitConfig, monitor: &mut dyn Monitor) -> Result<()> {
    let spec = StageSpec {
        name: "stage1",
        mode: ColorMode::FaceColors,
        iters: cfg.stage1_budget(scene.frames.len()),
        active: Active {
            beta: cfg.stage1_shape,
            offsets: cfg.stage1_offsets,
            pose: cfg.stage1_pose,
            face_colors: cfg.stage1_face_colors,
            texture: false,
        },
        iter_offset: 0,
    };
    run_stage(scene, params, cfg, spec, monitor).map(|_| ())
}

/// Stage 2: texture field with per-frame pose refinement; shape, offsets
/// and face colors stay fixed.
pub fn run_stage2(scene: &Scene, params: &mut AvatarParams, cfg: &FitConfig, monitor: &mut dyn Monitor) -> Result<()> {
    let spec = StageSpec {
        name: "stage2",
        mode: ColorMode::Texture,
        iters: cfg.stage2_budget(scene.frames.len()),
        active: Active {
            beta: false,
            offsets: false,
            pose: cfg.refine_pose_stage2,
            face_colors: false,
            texture: true,
        },
        iter_offset: cfg.stage1_budget(scene.frames.len()),
    };
    run_stage(scene, params, cfg, spec, monitor).map(|_| ())
}

/// Full fit from the scene's initialization: two stages, or a single joint
/// stage with the texture field from the start when `one_stage` is set. The
/// joint stage gets both stage budgets.
pub fn fit(scene: &Scene, cfg: &FitConfig, monitor: &mut dyn Monitor) -> Result<AvatarParams> {
    cfg.validate()?;
    let mut params = AvatarParams::init(scene, cfg)?;
    if cfg.one_stage {
        let n = scene.frames.len();
        let spec = StageSpec {
            name: "joint",
            mode: ColorMode::Texture,
            iters: cfg.stage1_budget(n) + cfg.stage2_budget(n),
            active: Active {
                beta: cfg.stage1_shape,
                offsets: cfg.stage1_offsets,
                pose: cfg.stage1_pose,
                face_colors: false,
                texture: true,
            },
            iter_offset: 0,
        };
        run_stage(scene, &mut params, cfg, spec, monitor)?;
    } else {
        run_stage1(scene, &mut params, cfg, monitor)?;
        run_stage2(scene, &mut params, cfg, monitor)?;
    }
    Ok(params)
}
