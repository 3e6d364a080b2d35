use nalgebra::Vector2;
use rayon::prelude::*;

use super::dual::{Dual, Real};
use super::{GrayImage, RenderOutput, RgbImage, SoftRasterConfig, TileGrid};
use crate::error::Result;
use crate::geometry::{Camera, ProjectedMesh};

/// Support radius of the coverage sigmoid, as a multiple of sigma in d².
const TRUNCATION: f64 = 30.0;

#[inline]
fn cross<R: Real>(u: [R; 2], v: [R; 2]) -> R {
    u[0] * v[1] - u[1] * v[0]
}

#[inline]
fn clamp01<R: Real>(x: R) -> R {
    if x.val() <= 0.0 {
        R::cst(0.0)
    } else if x.val() >= 1.0 {
        R::cst(1.0)
    } else {
        x
    }
}

#[inline]
fn segment_dist2<R: Real>(p: [f64; 2], a: [R; 2], b: [R; 2]) -> R {
    let pa = [a[0] - p[0], a[1] - p[1]];
    let ab = [b[0] - a[0], b[1] - a[1]];
    let l2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if l2.val() > 0.0 {
        clamp01(-(pa[0] * ab[0] + pa[1] * ab[1]) / l2)
    } else {
        R::cst(0.0)
    };
    let dx = pa[0] + t * ab[0];
    let dy = pa[1] + t * ab[1];
    dx * dx + dy * dy
}

#[derive(Clone, Copy)]
struct Frame {
    sx: f64,
    sy: f64,
    near: f64,
    far: f64,
    sigma: f64,
}

/// Coverage `D` and normalized depth of one face at pixel center `p` (NDC).
/// `xy` are the pixel-space vertex positions, `z` their camera depths.
#[inline]
fn face_pixel<R: Real>(p: [f64; 2], xy: [[R; 2]; 3], z: [R; 3], fr: Frame) -> Option<(R, R)> {
    let v = xy.map(|q| [q[0] * fr.sx - 1.0, q[1] * fr.sy - 1.0]);
    let [a, b, c] = v;
    let area = cross([b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]]);
    if area.val().abs() < 1e-20 {
        return None;
    }
    let rel = v.map(|q| [q[0] - p[0], q[1] - p[1]]);
    let w = [
        cross(rel[1], rel[2]) / area,
        cross(rel[2], rel[0]) / area,
        cross(rel[0], rel[1]) / area,
    ];
    let inside = w.iter().all(|x| x.val() >= 0.0);
    let mut d2 = segment_dist2(p, a, b);
    for (s, e) in [(b, c), (c, a)] {
        let cand = segment_dist2(p, s, e);
        if cand.val() < d2.val() {
            d2 = cand;
        }
    }
    if !inside && d2.val() > TRUNCATION * fr.sigma {
        return None;
    }
    let arg = d2 * (1.0 / fr.sigma);
    let cov = if inside { arg } else { -arg }.sigmoid();

    let wc = w.map(clamp01);
    let s = wc[0] + wc[1] + wc[2];
    let inv_z = (wc[0] / z[0] + wc[1] / z[1] + wc[2] / z[2]) / s;
    let depth = R::cst(1.0) / inv_z;
    let zt = clamp01((-(depth - fr.far)) * (1.0 / (fr.far - fr.near)));
    Some((cov, zt))
}

type PixelBox = Option<(usize, usize, usize, usize)>;

struct Prepared<'a> {
    pm: &'a ProjectedMesh,
    grid: TileGrid,
    boxes: Vec<PixelBox>,
    bins: Vec<Vec<u32>>,
    frame: Frame,
    cfg: SoftRasterConfig,
}

impl<'a> Prepared<'a> {
    fn new(pm: &'a ProjectedMesh, cam: &Camera, cfg: &SoftRasterConfig) -> Result<Self> {
        cfg.validate()?;
        let (w, h) = (cam.width, cam.height);
        let r = (TRUNCATION * cfg.sigma).sqrt();
        let (rx, ry) = (r * w as f64 / 2.0, r * h as f64 / 2.0);
        let boxes: Vec<PixelBox> = (0..pm.faces.len())
            .map(|f| {
                if !pm.face_is_valid(f) {
                    return None;
                }
                let [a, b, c] = pm.faces[f].map(|v| pm.xy[v]);
                let x = TileGrid::pixel_range(a.x.min(b.x).min(c.x) - rx, a.x.max(b.x).max(c.x) + rx, w)?;
                let y = TileGrid::pixel_range(a.y.min(b.y).min(c.y) - ry, a.y.max(b.y).max(c.y) + ry, h)?;
                Some((x.0, x.1, y.0, y.1))
            })
            .collect();
        let grid = TileGrid::new(w, h);
        let bins = grid.bin(&boxes);
        Ok(Prepared {
            pm,
            grid,
            boxes,
            bins,
            frame: Frame {
                sx: 2.0 / w as f64,
                sy: 2.0 / h as f64,
                near: cam.near,
                far: cam.far,
                sigma: cfg.sigma,
            },
            cfg: *cfg,
        })
    }

    fn ndc(&self, x: usize, y: usize) -> [f64; 2] {
        [
            (x as f64 + 0.5) * self.frame.sx - 1.0,
            (y as f64 + 0.5) * self.frame.sy - 1.0,
        ]
    }

    fn eval_f64(&self, f: usize, p: [f64; 2]) -> Option<(f64, f64)> {
        let idx = self.pm.faces[f];
        let xy = idx.map(|v| [self.pm.xy[v].x, self.pm.xy[v].y]);
        let z = idx.map(|v| self.pm.depth[v]);
        face_pixel(p, xy, z, self.frame)
    }

    fn eval_dual(&self, f: usize, p: [f64; 2]) -> Option<(Dual<9>, Dual<9>)> {
        let idx = self.pm.faces[f];
        let mut xy = [[Dual::cst(0.0); 2]; 3];
        let mut z = [Dual::cst(0.0); 3];
        for k in 0..3 {
            let v = idx[k];
            xy[k] = [
                Dual::var(self.pm.xy[v].x, 2 * k),
                Dual::var(self.pm.xy[v].y, 2 * k + 1),
            ];
            z[k] = Dual::var(self.pm.depth[v], 6 + k);
        }
        face_pixel(p, xy, z, self.frame)
    }

    /// Faces of tile `t` touching pixel `(x, y)`: `(slot in bin, D, z̃)`.
    fn hits(&self, t: usize, x: usize, y: usize, out: &mut Vec<(usize, f64, f64)>) {
        out.clear();
        let p = self.ndc(x, y);
        for (slot, &f) in self.bins[t].iter().enumerate() {
            let (x0, x1, y0, y1) = self.boxes[f as usize].unwrap();
            if x < x0 || x > x1 || y < y0 || y > y1 {
                continue;
            }
            if let Some((d, zt)) = self.eval_f64(f as usize, p) {
                out.push((slot, d, zt));
            }
        }
    }

    fn max_logit(&self, hits: &[(usize, f64, f64)]) -> f64 {
        hits.iter()
            .map(|h| h.2)
            .fold(self.cfg.background_eps, f64::max)
    }
}

struct Aggregate {
    rgb: [f64; 3],
    alpha: f64,
    sil: f64,
    /// Normalizer Z and shift m of the softmax.
    z: f64,
    m: f64,
}

fn aggregate(
    prep: &Prepared,
    t: usize,
    hits: &[(usize, f64, f64)],
    colors: Option<&[[f64; 3]]>,
) -> Aggregate {
    let cfg = &prep.cfg;
    let m = prep.max_logit(hits);
    // colors are accumulated relative to the nearest hit so that a pixel
    // covered by faces of one color reproduces it exactly
    let base = match (colors, hits.iter().max_by(|a, b| a.2.total_cmp(&b.2))) {
        (Some(colors), Some(h)) => colors[prep.bins[t][h.0] as usize],
        _ => cfg.background_color,
    };
    let e_bg = ((cfg.background_eps - m) / cfg.gamma).exp();
    let mut z = e_bg;
    let mut rgb = [0, 1, 2].map(|k| (cfg.background_color[k] - base[k]) * e_bg);
    let mut keep = 1.0;
    for &(slot, d, zt) in hits {
        let e = d * ((zt - m) / cfg.gamma).exp();
        z += e;
        if let Some(colors) = colors {
            let c = colors[prep.bins[t][slot] as usize];
            for k in 0..3 {
                rgb[k] += e * (c[k] - base[k]);
            }
        }
        keep *= 1.0 - d;
    }
    Aggregate {
        rgb: [0, 1, 2].map(|k| base[k] + rgb[k] / z),
        alpha: 1.0 - e_bg / z,
        sil: 1.0 - keep,
        z,
        m,
    }
}

fn render_impl(prep: &Prepared, colors: Option<&[[f64; 3]]>) -> RenderOutput {
    let (w, h) = (prep.grid.width, prep.grid.height);
    let tiles: Vec<Vec<Aggregate>> = (0..prep.grid.len())
        .into_par_iter()
        .map(|t| {
            let r = prep.grid.tile(t);
            let mut hits = Vec::new();
            let mut out = Vec::with_capacity((r.x1 - r.x0) * (r.y1 - r.y0));
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    prep.hits(t, x, y, &mut hits);
                    out.push(aggregate(prep, t, &hits, colors));
                }
            }
            out
        })
        .collect();
    let mut rgb = RgbImage::filled(w, h, [0.0; 3]);
    let mut alpha = GrayImage::filled(w, h, 0.0);
    let mut sil = GrayImage::filled(w, h, 0.0);
    for (t, px) in tiles.into_iter().enumerate() {
        let r = prep.grid.tile(t);
        let tw = r.x1 - r.x0;
        for (i, a) in px.into_iter().enumerate() {
            let (x, y) = (r.x0 + i % tw, r.y0 + i / tw);
            rgb.data[y * w + x] = a.rgb;
            alpha.data[y * w + x] = a.alpha;
            sil.data[y * w + x] = a.sil;
        }
    }
    RenderOutput {
        rgb,
        alpha,
        silhouette: sil,
    }
}

/// Soft rasterization with softmax depth aggregation. Colors are constants
/// of the render (no gradient flows to them).
pub fn soft_render(
    pm: &ProjectedMesh,
    cam: &Camera,
    face_colors: &[[f64; 3]],
    cfg: &SoftRasterConfig,
) -> Result<RenderOutput> {
    let prep = Prepared::new(pm, cam, cfg)?;
    Ok(render_impl(&prep, Some(face_colors)))
}

/// Probabilistic silhouette `1 - prod_j (1 - D_j)`.
pub fn soft_silhouette(pm: &ProjectedMesh, cam: &Camera, cfg: &SoftRasterConfig) -> Result<GrayImage> {
    let prep = Prepared::new(pm, cam, cfg)?;
    Ok(render_impl(&prep, None).silhouette)
}

/// Normalized soft weights `(face, w_j)` and the background weight at one
/// pixel.
pub fn soft_weights_at(
    pm: &ProjectedMesh,
    cam: &Camera,
    cfg: &SoftRasterConfig,
    x: usize,
    y: usize,
) -> Result<(Vec<(u32, f64)>, f64)> {
    let prep = Prepared::new(pm, cam, cfg)?;
    let t = (y / super::TILE) * prep.grid.nx + x / super::TILE;
    let mut hits = Vec::new();
    prep.hits(t, x, y, &mut hits);
    let agg = aggregate(&prep, t, &hits, None);
    let w = hits
        .iter()
        .map(|&(slot, d, zt)| (prep.bins[t][slot], d * ((zt - agg.m) / cfg.gamma).exp() / agg.z))
        .collect();
    Ok((w, ((cfg.background_eps - agg.m) / cfg.gamma).exp() / agg.z))
}

/// Gradients on projected vertex positions (pixels) and camera depths.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftGrad {
    pub xy: Vec<Vector2<f64>>,
    pub depth: Vec<f64>,
}

/// Backward pass of [`soft_render`] for gradients on the RGB image and the
/// silhouette. Either gradient may be empty.
pub fn soft_render_vjp(
    pm: &ProjectedMesh,
    cam: &Camera,
    face_colors: &[[f64; 3]],
    cfg: &SoftRasterConfig,
    grad_rgb: &[[f64; 3]],
    grad_sil: &[f64],
) -> Result<SoftGrad> {
    let prep = Prepared::new(pm, cam, cfg)?;
    let w = cam.width;
    let use_rgb = !grad_rgb.is_empty();
    let use_sil = !grad_sil.is_empty();
    let gamma = cfg.gamma;

    let tiles: Vec<Vec<[f64; 9]>> = (0..prep.grid.len())
        .into_par_iter()
        .map(|t| {
            let r = prep.grid.tile(t);
            let mut acc = vec![[0.0; 9]; prep.bins[t].len()];
            let mut hits = Vec::new();
            let mut g_d = Vec::new();
            let mut g_z = Vec::new();
            let mut prefix = Vec::new();
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let i = y * w + x;
                    let g_rgb = if use_rgb { grad_rgb[i] } else { [0.0; 3] };
                    let g_s = if use_sil { grad_sil[i] } else { 0.0 };
                    if g_rgb == [0.0; 3] && g_s == 0.0 {
                        continue;
                    }
                    prep.hits(t, x, y, &mut hits);
                    if hits.is_empty() {
                        continue;
                    }
                    let agg = aggregate(&prep, t, &hits, Some(face_colors));
                    g_d.clear();
                    g_z.clear();
                    for &(slot, d, zt) in &hits {
                        let c = face_colors[prep.bins[t][slot] as usize];
                        let a = (0..3).map(|k| g_rgb[k] * (c[k] - agg.rgb[k])).sum::<f64>() / agg.z;
                        let ex = ((zt - agg.m) / gamma).exp();
                        g_d.push(a * ex);
                        g_z.push(a * ex * d / gamma);
                    }
                    if g_s != 0.0 {
                        // dS/dD_j = prod_{k != j} (1 - D_k)
                        prefix.clear();
                        let mut run = 1.0;
                        for h in &hits {
                            prefix.push(run);
                            run *= 1.0 - h.1;
                        }
                        let mut suffix = 1.0;
                        for j in (0..hits.len()).rev() {
                            g_d[j] += g_s * prefix[j] * suffix;
                            suffix *= 1.0 - hits[j].1;
                        }
                    }
                    let p = prep.ndc(x, y);
                    for (j, &(slot, _, _)) in hits.iter().enumerate() {
                        if g_d[j] == 0.0 && g_z[j] == 0.0 {
                            continue;
                        }
                        let f = prep.bins[t][slot] as usize;
                        let (d, zt) = prep.eval_dual(f, p).expect("hit faces re-evaluate");
                        for k in 0..9 {
                            acc[slot][k] += g_d[j] * d.d[k] + g_z[j] * zt.d[k];
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut out = SoftGrad {
        xy: vec![Vector2::zeros(); pm.xy.len()],
        depth: vec![0.0; pm.xy.len()],
    };
    for (t, acc) in tiles.into_iter().enumerate() {
        for (slot, g) in acc.into_iter().enumerate() {
            let idx = pm.faces[prep.bins[t][slot] as usize];
            for k in 0..3 {
                out.xy[idx[k]].x += g[2 * k];
                out.xy[idx[k]].y += g[2 * k + 1];
                out.depth[idx[k]] += g[6 + k];
            }
        }
    }
    Ok(out)
}
