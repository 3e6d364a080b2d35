use nalgebra::Vector3;
use rayon::prelude::*;

use super::{FragmentBuffer, RgbImage, TileGrid};
use crate::geometry::Face;
use crate::texfield::{interpolate_texcoord, sample_color, ColorScratch, TextureField, TextureGrad};

/// Hard-branch shading with one constant color per face.
pub fn shade_face_colors(frags: &FragmentBuffer, colors: &[[f64; 3]], background: [f64; 3]) -> RgbImage {
    RgbImage {
        width: frags.width,
        height: frags.height,
        data: frags
            .face
            .iter()
            .map(|f| f.map_or(background, |f| colors[f as usize]))
            .collect(),
    }
}

/// Gradient of [`shade_face_colors`] with respect to the face colors.
pub fn shade_face_colors_vjp(frags: &FragmentBuffer, num_faces: usize, grad_rgb: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; num_faces];
    for (f, g) in frags.face.iter().zip(grad_rgb) {
        if let Some(f) = f {
            for k in 0..3 {
                out[*f as usize][k] += g[k];
            }
        }
    }
    out
}

/// Hard-branch shading through the texture field.
pub fn shade_fragments(frags: &FragmentBuffer, tf: &TextureField, faces: &[Face], background: [f64; 3]) -> RgbImage {
    let grid = TileGrid::new(frags.width, frags.height);
    let tiles: Vec<Vec<[f64; 3]>> = (0..grid.len())
        .into_par_iter()
        .map(|t| {
            let r = grid.tile(t);
            let mut s = ColorScratch::default();
            let mut out = Vec::with_capacity((r.x1 - r.x0) * (r.y1 - r.y0));
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let i = y * frags.width + x;
                    out.push(match frags.face[i] {
                        Some(f) => sample_color(frags.bary[i], &faces[f as usize], tf, &mut s),
                        None => background,
                    });
                }
            }
            out
        })
        .collect();
    let mut img = RgbImage::filled(frags.width, frags.height, background);
    for (t, px) in tiles.into_iter().enumerate() {
        let r = grid.tile(t);
        let tw = r.x1 - r.x0;
        for (k, c) in px.into_iter().enumerate() {
            img.data[(r.y0 + k / tw) * frags.width + r.x0 + k % tw] = c;
        }
    }
    img
}

/// Gradients of [`shade_fragments`] on texcoords, hash tables and MLP
/// weights. The MLP backward runs per tile in parallel; encoding gradients
/// are scattered into the tables afterwards in tile order.
pub fn shade_fragments_vjp(
    frags: &FragmentBuffer,
    tf: &TextureField,
    faces: &[Face],
    grad_rgb: &[[f64; 3]],
) -> TextureGrad {
    let grid = TileGrid::new(frags.width, frags.height);
    let n_mlp = tf.mlp.num_params();
    let tiles: Vec<(Vec<f64>, Vec<(usize, Vec<f64>)>)> = (0..grid.len())
        .into_par_iter()
        .map(|t| {
            let r = grid.tile(t);
            let mut s = ColorScratch::default();
            let mut g_mlp = Vec::new();
            let mut enc_grads = Vec::new();
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let i = y * frags.width + x;
                    let (Some(f), g) = (frags.face[i], grad_rgb[i]) else {
                        continue;
                    };
                    if g == [0.0; 3] {
                        continue;
                    }
                    if g_mlp.is_empty() {
                        g_mlp = vec![0.0; n_mlp];
                    }
                    sample_color(frags.bary[i], &faces[f as usize], tf, &mut s);
                    tf.mlp_vjp(&mut s, &g, &mut g_mlp);
                    enc_grads.push((i, s.grad_enc.clone()));
                }
            }
            (g_mlp, enc_grads)
        })
        .collect();

    let mut out = TextureGrad::zeros(tf);
    for (g_mlp, enc_grads) in tiles {
        for (a, b) in out.mlp.iter_mut().zip(&g_mlp) {
            *a += b;
        }
        for (i, ge) in enc_grads {
            let face = faces[frags.face[i].unwrap() as usize];
            let bary = frags.bary[i];
            let t = interpolate_texcoord(bary, face.map(|v| tf.texcoords[v]));
            let gt: Vector3<f64> = tf.encoding_vjp(&t, &ge, &mut out.tables);
            for k in 0..3 {
                out.texcoords[face[k]] += gt * bary[k];
            }
        }
    }
    out
}
