use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::raster::dual::sigmoid_f64;

/// Fully connected network: rectified hidden layers, sigmoid RGB output.
/// Parameters are stored flat, layer by layer, weights (row-major,
/// `out x in`) followed by biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
}

/// Pre-activations and rectified outputs of every layer from the last
/// forward call.
#[derive(Debug, Clone, Default)]
pub struct MlpScratch {
    acts: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Dot product with four independent partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Mlp {
    /// He-uniform weights and zero biases.
    pub fn new(input: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, layers));
        dims.push(3);
        let mut params = Vec::new();
        for w in dims.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Mlp { dims, params }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Mlp {
            dims,
            params: vec![0.0; n],
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Offsets of (weights, biases) of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.dims[l] * self.dims[l + 1])
    }

    pub fn forward(&self, input: &[f64], scratch: &mut MlpScratch) -> [f64; 3] {
        let n_layers = self.dims.len() - 1;
        scratch.acts.resize(n_layers, Vec::new());
        scratch.post.resize(n_layers, Vec::new());
        for l in 0..n_layers {
            let (ni, no) = (self.dims[l], self.dims[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            let w = &self.params[wo..wo + ni * no];
            let b = &self.params[bo..bo + no];
            let (before, rest) = scratch.post.split_at_mut(l);
            let prev: &[f64] = if l == 0 { input } else { &before[l - 1] };
            let z = &mut scratch.acts[l];
            z.clear();
            z.extend(w.chunks_exact(ni).zip(b).map(|(row, bo)| bo + dot(row, prev)));
            let post = &mut rest[0];
            post.clear();
            post.extend(z.iter().map(|v| v.max(0.0)));
        }
        let z = &scratch.acts[n_layers - 1];
        [sigmoid_f64(z[0]), sigmoid_f64(z[1]), sigmoid_f64(z[2])]
    }

    /// Backward pass of the last [`Mlp::forward`] call with the same input.
    /// Accumulates into `grad_params` and writes `grad_input`.
    pub fn backward(
        &self,
        input: &[f64],
        scratch: &MlpScratch,
        grad_out: &[f64; 3],
        grad_params: &mut [f64],
        grad_input: &mut [f64],
    ) {
        let n_layers = self.dims.len() - 1;
        let last = &scratch.acts[n_layers - 1];
        let mut g: Vec<f64> = (0..3)
            .map(|k| {
                let s = sigmoid_f64(last[k]);
                grad_out[k] * s * (1.0 - s)
            })
            .collect();
        for l in (0..n_layers).rev() {
            let (ni, no) = (self.dims[l], self.dims[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            let x: &[f64] = if l == 0 { input } else { &scratch.post[l - 1] };
            let mut gx = vec![0.0; ni];
            for o in 0..no {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                grad_params[bo + o] += go;
                let row = wo + o * ni;
                for i in 0..ni {
                    grad_params[row + i] += go * x[i];
                    gx[i] += go * self.params[row + i];
                }
            }
            if l == 0 {
                grad_input.copy_from_slice(&gx);
            } else {
                for (gi, z) in gx.iter_mut().zip(&scratch.acts[l - 1]) {
                    if *z <= 0.0 {
                        *gi = 0.0;
                    }
                }
                g = gx;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_half() {
        let m = Mlp::zeros(vec![4, 8, 8, 3]);
        assert_eq!(m.forward(&[1.0, 2.0, 3.0, 4.0], &mut MlpScratch::default()), [0.5; 3]);
    }

    #[test]
    fn saturated_bias_outputs_one() {
        let mut m = Mlp::zeros(vec![4, 8, 8, 3]);
        let (_, bo) = m.layer_offsets(2);
        m.params[bo..bo + 3].fill(20.0);
        let out = m.forward(&[0.3; 4], &mut MlpScratch::default());
        assert!(out.iter().all(|v| (1.0 - v) < 1e-8));
    }

    #[test]
    fn matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = Mlp::new(6, 16, 2, &mut rng);
        for p in &mut m.params {
            *p += rng.random_range(-0.1..0.1);
        }
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.9).sin()).collect();
        let out = m.forward(&x, &mut MlpScratch::default());
        let mut h = DVector::from_vec(x.clone());
        for l in 0..3 {
            let (ni, no) = (m.dims[l], m.dims[l + 1]);
            let (wo, bo) = m.layer_offsets(l);
            let w = DMatrix::from_row_slice(no, ni, &m.params[wo..wo + ni * no]);
            let b = DVector::from_column_slice(&m.params[bo..bo + no]);
            h = w * h + b;
            if l < 2 {
                h = h.map(|v| v.max(0.0));
            }
        }
        for k in 0..3 {
            let oracle = 1.0 / (1.0 + (-h[k]).exp());
            assert!((oracle - out[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut m = Mlp::new(5, 7, 2, &mut rng);
        for p in &mut m.params {
            *p += rng.random_range(-0.2..0.2);
        }
        let x: Vec<f64> = (0..5).map(|i| (i as f64 * 1.3).cos()).collect();
        let g = [0.7, -0.4, 1.1];
        let mut s = MlpScratch::default();
        m.forward(&x, &mut s);
        let mut gp = vec![0.0; m.num_params()];
        let mut gx = vec![0.0; 5];
        m.backward(&x, &s, &g, &mut gp, &mut gx);
        let f = |m: &Mlp, x: &[f64]| {
            let o = m.forward(x, &mut MlpScratch::default());
            o[0] * g[0] + o[1] * g[1] + o[2] * g[2]
        };
        let h = 1e-6;
        for i in 0..m.num_params() {
            let mut p = m.clone();
            let mut q = m.clone();
            p.params[i] += h;
            q.params[i] -= h;
            let fd = (f(&p, &x) - f(&q, &x)) / (2.0 * h);
            assert!((fd - gp[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "param {i}");
        }
        for i in 0..5 {
            let mut p = x.clone();
            let mut q = x.clone();
            p[i] += h;
            q[i] -= h;
            let fd = (f(&m, &p) - f(&m, &q)) / (2.0 * h);
            assert!((fd - gx[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "input {i}");
        }
    }
}
