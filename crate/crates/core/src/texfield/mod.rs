//! Learned per-vertex 3D texture coordinates, hash-grid encoding and a
//! small MLP decoding RGB.

mod hashgrid;
mod mlp;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Face;

pub use hashgrid::{hash_encode, hash_encode_vjp, HashGridConfig};
pub use mlp::{Mlp, MlpScratch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureField {
    pub texcoords: Vec<Vector3<f64>>,
    pub domain_min: Vector3<f64>,
    pub domain_max: Vector3<f64>,
    pub grid: HashGridConfig,
    pub tables: Vec<f64>,
    pub mlp: Mlp,
}

/// Gradients on every texture parameter, laid out like the field.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureGrad {
    pub texcoords: Vec<Vector3<f64>>,
    pub tables: Vec<f64>,
    pub mlp: Vec<f64>,
}

impl TextureGrad {
    pub fn zeros(tf: &TextureField) -> Self {
        TextureGrad {
            texcoords: vec![Vector3::zeros(); tf.texcoords.len()],
            tables: vec![0.0; tf.tables.len()],
            mlp: vec![0.0; tf.mlp.num_params()],
        }
    }

    pub fn add_assign(&mut self, o: &TextureGrad) {
        for (a, b) in self.texcoords.iter_mut().zip(&o.texcoords) {
            *a += b;
        }
        for (a, b) in self.tables.iter_mut().zip(&o.tables) {
            *a += b;
        }
        for (a, b) in self.mlp.iter_mut().zip(&o.mlp) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        let t = self.texcoords.iter().map(|v| v.amax()).fold(0.0, f64::max);
        let h = self.tables.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let m = self.mlp.iter().map(|v| v.abs()).fold(0.0, f64::max);
        t.max(h).max(m)
    }
}

/// Convex combination of a face's texture coordinates.
pub fn interpolate_texcoord(bary: [f64; 3], tc: [Vector3<f64>; 3]) -> Vector3<f64> {
    tc[0] * bary[0] + tc[1] * bary[1] + tc[2] * bary[2]
}

/// Per-thread buffers for color evaluation.
#[derive(Debug, Clone, Default)]
pub struct ColorScratch {
    pub enc: Vec<f64>,
    pub mlp: MlpScratch,
    pub grad_enc: Vec<f64>,
}

impl TextureField {
    /// Texcoords start at `rest`; the domain box is their bounding box padded
    /// by 10% per side.
    pub fn new(rest: &[Vector3<f64>], grid: HashGridConfig, hidden: usize, layers: usize, seed: u64) -> Result<Self> {
        grid.validate()?;
        if rest.is_empty() {
            return Err(Error::config("texture field needs at least one vertex"));
        }
        if hidden == 0 {
            return Err(Error::config("MLP width must be positive"));
        }
        let mut lo = rest[0];
        let mut hi = rest[0];
        for v in rest {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let ext = hi - lo;
        let floor = (ext.max() * 1e-3).max(1e-6);
        let pad = ext.map(|e| 0.1 * e.max(floor));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = (0..grid.num_params()).map(|_| rng.random_range(-1e-4..1e-4)).collect();
        let mlp = Mlp::new(grid.output_dim(), hidden, layers, &mut rng);
        Ok(TextureField {
            texcoords: rest.to_vec(),
            domain_min: lo - pad,
            domain_max: hi + pad,
            grid,
            tables,
            mlp,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if (0..3).any(|a| !(self.domain_max[a] > self.domain_min[a])) {
            return Err(Error::config("texture domain box has non-positive extent"));
        }
        if self.tables.len() != self.grid.num_params() || self.mlp.input_dim() != self.grid.output_dim() {
            return Err(Error::config("texture field parameter sizes do not match its grid"));
        }
        Ok(())
    }

    /// Maps a texture coordinate into the unit cube (unclamped).
    pub fn to_unit(&self, t: &Vector3<f64>) -> [f64; 3] {
        let e = self.domain_max - self.domain_min;
        [
            (t.x - self.domain_min.x) / e.x,
            (t.y - self.domain_min.y) / e.y,
            (t.z - self.domain_min.z) / e.z,
        ]
    }

    /// RGB at a texture coordinate.
    pub fn color_at(&self, t: &Vector3<f64>, s: &mut ColorScratch) -> [f64; 3] {
        s.enc.resize(self.grid.output_dim(), 0.0);
        hash_encode(&self.to_unit(t), &self.grid, &self.tables, &mut s.enc);
        self.mlp.forward(&s.enc, &mut s.mlp)
    }

    /// Backward of [`TextureField::color_at`] through the MLP only. Leaves the
    /// encoding gradient in `s.grad_enc`; call after `color_at` with the same
    /// coordinate.
    pub fn mlp_vjp(&self, s: &mut ColorScratch, g: &[f64; 3], grad_mlp: &mut [f64]) {
        s.grad_enc.resize(self.grid.output_dim(), 0.0);
        self.mlp.backward(&s.enc, &s.mlp, g, grad_mlp, &mut s.grad_enc);
    }

    /// Backward through the hash encoding for an encoding gradient; returns
    /// the gradient on the texture coordinate.
    pub fn encoding_vjp(&self, t: &Vector3<f64>, grad_enc: &[f64], grad_tables: &mut [f64]) -> Vector3<f64> {
        let gu = hash_encode_vjp(&self.to_unit(t), &self.grid, &self.tables, grad_enc, |i, v| {
            grad_tables[i] += v
        });
        let e = self.domain_max - self.domain_min;
        Vector3::new(gu[0] / e.x, gu[1] / e.y, gu[2] / e.z)
    }

    /// Full backward for one color sample at barycentric `bary` of `face`.
    pub fn sample_color_vjp(
        &self,
        bary: [f64; 3],
        face: &Face,
        g: &[f64; 3],
        s: &mut ColorScratch,
        grad: &mut TextureGrad,
    ) {
        let t = interpolate_texcoord(bary, face.map(|v| self.texcoords[v]));
        self.color_at(&t, s);
        self.mlp_vjp(s, g, &mut grad.mlp);
        let gt = self.encoding_vjp(&t, &s.grad_enc, &mut grad.tables);
        for k in 0..3 {
            grad.texcoords[face[k]] += gt * bary[k];
        }
    }

    /// Colors at face-centroid texture coordinates.
    pub fn face_centroid_colors(&self, faces: &[Face]) -> Vec<[f64; 3]> {
        let mut s = ColorScratch::default();
        let third = 1.0 / 3.0;
        faces
            .iter()
            .map(|f| {
                let t = interpolate_texcoord([third; 3], f.map(|v| self.texcoords[v]));
                self.color_at(&t, &mut s)
            })
            .collect()
    }
}

/// Color of a fragment with barycentrics `bary` on `face`.
pub fn sample_color(bary: [f64; 3], face: &Face, tf: &TextureField, s: &mut ColorScratch) -> [f64; 3] {
    let t = interpolate_texcoord(bary, face.map(|v| tf.texcoords[v]));
    tf.color_at(&t, s)
}
