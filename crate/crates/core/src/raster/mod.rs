//! Hard and soft rasterization with analytic backward passes.

pub mod dual;
mod hard;
mod shade;
mod soft;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hard::rasterize_hard;
pub use shade::{shade_face_colors, shade_face_colors_vjp, shade_fragments, shade_fragments_vjp};
pub use soft::{soft_render, soft_render_vjp, soft_silhouette, soft_weights_at, SoftGrad};

pub const TILE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, c: [f64; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: vec![c; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel result of hard rasterization.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentBuffer {
    pub width: usize,
    pub height: usize,
    pub face: Vec<Option<u32>>,
    /// Perspective-correct barycentrics.
    pub bary: Vec<[f64; 3]>,
    /// Camera-space depth of the fragment.
    pub depth: Vec<f64>,
}

impl FragmentBuffer {
    pub fn coverage(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.face.iter().map(|f| f.map_or(0.0, |_| 1.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftRasterConfig {
    /// Face blur in squared NDC units.
    pub sigma: f64,
    /// Depth aggregation temperature.
    pub gamma: f64,
    pub background_eps: f64,
    pub background_color: [f64; 3],
}

impl Default for SoftRasterConfig {
    fn default() -> Self {
        SoftRasterConfig {
            sigma: 1e-5,
            gamma: 1e-4,
            background_eps: 0.0,
            background_color: [0.0; 3],
        }
    }
}

impl SoftRasterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    pub alpha: GrayImage,
    pub silhouette: GrayImage,
}

/// Pixel rectangle `[x0, x1) x [y0, y1)` of one tile.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tile {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

pub(crate) struct TileGrid {
    pub nx: usize,
    pub ny: usize,
    pub width: usize,
    pub height: usize,
}

impl TileGrid {
    pub fn new(width: usize, height: usize) -> Self {
        TileGrid {
            nx: width.div_ceil(TILE),
            ny: height.div_ceil(TILE),
            width,
            height,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn tile(&self, t: usize) -> Tile {
        let (tx, ty) = (t % self.nx, t / self.nx);
        Tile {
            x0: tx * TILE,
            x1: ((tx + 1) * TILE).min(self.width),
            y0: ty * TILE,
            y1: ((ty + 1) * TILE).min(self.height),
        }
    }

    /// Inclusive pixel range whose centers fall inside `[lo, hi]`, or `None`
    /// when it misses the image.
    pub fn pixel_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
        let a = (lo - 0.5).ceil().max(0.0);
        let b = (hi - 0.5).floor().min(n as f64 - 1.0);
        if !(a <= b) {
            return None;
        }
        Some((a as usize, b as usize))
    }

    /// Bins per-face pixel boxes `(x0, x1, y0, y1)` (inclusive) into tiles.
    /// Each tile lists faces in ascending order.
    pub fn bin(&self, boxes: &[Option<(usize, usize, usize, usize)>]) -> Vec<Vec<u32>> {
        let mut bins = vec![Vec::new(); self.len()];
        for (f, b) in boxes.iter().enumerate() {
            if let Some((x0, x1, y0, y1)) = *b {
                for ty in y0 / TILE..=y1 / TILE {
                    for tx in x0 / TILE..=x1 / TILE {
                        bins[ty * self.nx + tx].push(f as u32);
                    }
                }
            }
        }
        bins
    }
}
