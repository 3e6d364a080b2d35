//! 8-bit PNG and PNM (PPM/PGM) reading and writing.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageReader};

use crate::error::{Error, Result};
use crate::raster::{GrayImage, RgbImage};

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format().is_none() {
        return Err(Error::UnsupportedImage {
            path: path.into(),
            reason: "unrecognized file format".into(),
        });
    }
    let img = reader.decode().map_err(|e| Error::UnsupportedImage {
        path: path.into(),
        reason: e.to_string(),
    })?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => Ok(img),
        other => Err(Error::UnsupportedImage {
            path: path.into(),
            reason: format!("unsupported bit depth ({other:?}); only 8-bit images are accepted"),
        }),
    }
}

/// Reads an 8-bit RGB or grayscale image into `[0, 1]` channels. Alpha is
/// dropped.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage {
        width: w as usize,
        height: h as usize,
        data: img
            .pixels()
            .map(|p| p.0.map(|c| c as f64 / 255.0))
            .collect(),
    })
}

/// Reads an 8-bit grayscale image (color images are converted to luma).
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(GrayImage {
        width: w as usize,
        height: h as usize,
        data: img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
    })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save(path: &Path, buf: &[u8], w: usize, h: usize, color: image::ExtendedColorType) -> Result<()> {
    let format = image::ImageFormat::from_path(path).map_err(|_| Error::UnsupportedImage {
        path: path.into(),
        reason: "expected a .png, .ppm, .pgm or .pnm extension".into(),
    })?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Pnm) {
        return Err(Error::UnsupportedImage {
            path: path.into(),
            reason: format!("{format:?} output is not supported"),
        });
    }
    image::save_buffer_with_format(path, buf, w as u32, h as u32, color, format).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedImage {
            path: path.into(),
            reason: other.to_string(),
        },
    })
}

/// Writes an RGB image with channels clamped to `[0, 1]` and rounded to
/// 8 bits. The format follows the extension.
pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let buf: Vec<u8> = img.data.iter().flat_map(|p| p.map(quantize)).collect();
    save(path, &buf, img.width, img.height, image::ExtendedColorType::Rgb8)
}

pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let buf: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    save(path, &buf, img.width, img.height, image::ExtendedColorType::L8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> RgbImage {
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                [x / (w - 1) as f64, y / (h - 1) as f64, (x * 0.37 + y * 0.11).sin().abs()]
            })
            .collect();
        RgbImage { width: w, height: h, data }
    }

    #[test]
    fn gradient_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient(37, 21);
        for name in ["g.png", "g.ppm"] {
            let p = dir.path().join(name);
            write_rgb(&p, &img).unwrap();
            let back = read_rgb(&p).unwrap();
            assert_eq!((back.width, back.height), (37, 21));
            let err = img
                .data
                .iter()
                .zip(&back.data)
                .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
                .fold(0.0, f64::max);
            assert!(err <= 1.0 / 255.0, "{name}: {err}");
            // a second pass is exact
            write_rgb(&p, &back).unwrap();
            assert_eq!(read_rgb(&p).unwrap(), back);
        }
    }

    #[test]
    fn mask_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mask = GrayImage {
            width: 9,
            height: 4,
            data: (0..36).map(|i| if (i * 7) % 5 < 2 { 1.0 } else { 0.0 }).collect(),
        };
        for name in ["m.png", "m.pgm"] {
            let p = dir.path().join(name);
            write_gray(&p, &mask).unwrap();
            assert_eq!(read_gray(&p).unwrap(), mask);
        }
    }

    #[test]
    fn sixteen_bit_input_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_fn(4, 4, |x, y| image::Luma([(x * 1000 + y) as u16]));
        buf.save(&p).unwrap();
        let err = read_rgb(&p).unwrap_err();
        assert!(matches!(err, Error::UnsupportedImage { .. }), "{err}");
        assert!(err.to_string().contains("bit depth"));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_gray(Path::new("/nonexistent/mask_7.png")).unwrap_err();
        assert!(err.to_string().contains("mask_7.png"));
    }
}
