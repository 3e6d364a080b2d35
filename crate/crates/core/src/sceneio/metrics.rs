use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{GrayImage, RgbImage};

pub const PSNR_CAP: f64 = 99.0;

fn check_same(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::config(format!(
            "image size mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    check_same(pred, gt)?;
    let n = 3 * gt.data.len();
    if n == 0 {
        return Err(Error::config("empty image"));
    }
    let s: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum::<f64>())
        .sum();
    Ok(s / n as f64)
}

/// `10 log10(1 / MSE)`, capped at 99 dB.
pub fn psnr(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

const WIN: usize = 11;
const WIN_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; WIN] {
    let mut w = [0.0; WIN];
    let c = (WIN / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WIN_SIGMA * WIN_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filtering over the valid region only.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; WIN]) -> Vec<f64> {
    let ow = w + 1 - WIN;
    let oh = h + 1 - WIN;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WIN).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WIN).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// averaged over channels. Only fully covered windows are used.
pub fn ssim(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    check_same(pred, gt)?;
    let (w, h) = (gt.width, gt.height);
    if w < WIN || h < WIN {
        return Err(Error::config(format!("SSIM needs images of at least {WIN}x{WIN}")));
    }
    let k = gaussian_window();
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut total = 0.0;
    for ch in 0..3 {
        let a: Vec<f64> = pred.data.iter().map(|p| p[ch]).collect();
        let b: Vec<f64> = gt.data.iter().map(|p| p[ch]).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let (ma, mb) = (filter_valid(&a, w, h, &k), filter_valid(&b, w, h, &k));
        let (saa, sbb, sab) = (
            filter_valid(&aa, w, h, &k),
            filter_valid(&bb, w, h, &k),
            filter_valid(&ab, w, h, &k),
        );
        let n = ma.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cxy = sab[i] - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / 3.0)
}

/// Intersection over union of two masks binarized at 0.5. Two empty masks
/// count as a perfect match.
pub fn iou(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::config(format!(
            "mask size mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.data.iter().zip(&b.data) {
        let (x, y) = (*x >= 0.5, *y >= 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Image and geometry metrics of one evaluated frame. Geometry entries are
/// present only when a reference surface is available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub iou: f64,
    pub chamfer: Option<f64>,
    pub p2s: Option<f64>,
}
