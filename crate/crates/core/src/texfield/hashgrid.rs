use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub levels: usize,
    pub table_size: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub feat_dim: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl HashGridConfig {
    /// Small grid used by tests and the synthetic scenes.
    pub fn desk() -> Self {
        HashGridConfig {
            levels: 8,
            table_size: 1 << 14,
            n_min: 16,
            n_max: 256,
            feat_dim: 2,
        }
    }

    pub fn full() -> Self {
        HashGridConfig {
            levels: 16,
            table_size: 1 << 19,
            n_min: 16,
            n_max: 1024,
            feat_dim: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("hash grid needs at least one level"));
        }
        if !self.table_size.is_power_of_two() || self.table_size > 1 << 31 {
            return Err(Error::config(format!(
                "hash table size {} is not a power of two",
                self.table_size
            )));
        }
        if self.n_min == 0 || self.n_max < self.n_min {
            return Err(Error::config(format!(
                "invalid grid resolutions n_min={} n_max={}",
                self.n_min, self.n_max
            )));
        }
        if self.feat_dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        Ok(())
    }

    /// Per-level resolution growth factor `b`.
    pub fn growth(&self) -> f64 {
        if self.levels == 1 {
            return 1.0;
        }
        (((self.n_max as f64).ln() - (self.n_min as f64).ln()) / (self.levels - 1) as f64).exp()
    }

    /// Grid points per axis at level `l`.
    pub fn resolution(&self, l: usize) -> usize {
        self.resolution_at(self.growth(), l)
    }

    #[inline]
    fn resolution_at(&self, b: f64, l: usize) -> usize {
        ((self.n_min as f64 * b.powi(l as i32)) + 1e-9).floor() as usize
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.feat_dim
    }

    pub fn num_params(&self) -> usize {
        self.levels * self.table_size * self.feat_dim
    }
}

#[inline]
pub(crate) fn hash(c: [u32; 3], mask: u32) -> u32 {
    (c[0].wrapping_mul(PRIMES[0]) ^ c[1].wrapping_mul(PRIMES[1]) ^ c[2].wrapping_mul(PRIMES[2])) & mask
}

/// Corner entries and trilinear weights of one level.
#[derive(Debug, Clone, Copy)]
struct Cell {
    /// Table offsets (already including the level base) of the 8 corners.
    slot: [usize; 8],
    frac: [f64; 3],
    scale: f64,
}

fn cell(cfg: &HashGridConfig, b: f64, l: usize, u: &[f64; 3]) -> Cell {
    let n = cfg.resolution_at(b, l);
    let scale = (n.max(1) - 1) as f64;
    let mut base = [0u32; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let x = u[a].clamp(0.0, 1.0) * scale;
        let i = if n >= 2 { (x.floor() as usize).min(n - 2) } else { 0 };
        base[a] = i as u32;
        frac[a] = x - i as f64;
    }
    let mask = (cfg.table_size - 1) as u32;
    let level_base = l * cfg.table_size;
    let mut slot = [0; 8];
    for (k, s) in slot.iter_mut().enumerate() {
        let c = [
            base[0] + (k & 1) as u32,
            base[1] + ((k >> 1) & 1) as u32,
            base[2] + ((k >> 2) & 1) as u32,
        ];
        *s = (level_base + hash(c, mask) as usize) * cfg.feat_dim;
    }
    Cell { slot, frac, scale }
}

#[inline]
fn corner_weight(frac: &[f64; 3], k: usize) -> f64 {
    let mut w = 1.0;
    for (a, f) in frac.iter().enumerate() {
        w *= if (k >> a) & 1 == 1 { *f } else { 1.0 - f };
    }
    w
}

/// Multi-resolution encoding of a point `u` in the unit cube. Writes
/// `levels * feat_dim` values into `out`.
pub fn hash_encode(u: &[f64; 3], cfg: &HashGridConfig, tables: &[f64], out: &mut [f64]) {
    let f = cfg.feat_dim;
    let b = cfg.growth();
    for l in 0..cfg.levels {
        let c = cell(cfg, b, l, u);
        let dst = &mut out[l * f..(l + 1) * f];
        dst.fill(0.0);
        for k in 0..8 {
            let w = corner_weight(&c.frac, k);
            for (d, t) in dst.iter_mut().zip(&tables[c.slot[k]..c.slot[k] + f]) {
                *d += w * t;
            }
        }
    }
}

/// Backward pass of [`hash_encode`]. Table gradients are handed to `scatter`
/// as `(flat index, value)` in a fixed order; the gradient on `u` is
/// returned.
pub fn hash_encode_vjp(
    u: &[f64; 3],
    cfg: &HashGridConfig,
    tables: &[f64],
    grad_out: &[f64],
    mut scatter: impl FnMut(usize, f64),
) -> [f64; 3] {
    let f = cfg.feat_dim;
    let mut gu = [0.0; 3];
    let b = cfg.growth();
    for l in 0..cfg.levels {
        let g = &grad_out[l * f..(l + 1) * f];
        if g.iter().all(|x| *x == 0.0) {
            continue;
        }
        let c = cell(cfg, b, l, u);
        for k in 0..8 {
            let w = corner_weight(&c.frac, k);
            let entry = &tables[c.slot[k]..c.slot[k] + f];
            let dot: f64 = entry.iter().zip(g).map(|(t, g)| t * g).sum();
            for (j, gj) in g.iter().enumerate() {
                scatter(c.slot[k] + j, w * gj);
            }
            for a in 0..3 {
                // d weight / d frac_a, with the other two factors unchanged
                let mut dw = if (k >> a) & 1 == 1 { 1.0 } else { -1.0 };
                for b in 0..3 {
                    if b != a {
                        dw *= if (k >> b) & 1 == 1 { c.frac[b] } else { 1.0 - c.frac[b] };
                    }
                }
                gu[a] += dw * dot * c.scale;
            }
        }
    }
    for a in 0..3 {
        if !(0.0..=1.0).contains(&u[a]) {
            gu[a] = 0.0;
        }
    }
    gu
}
