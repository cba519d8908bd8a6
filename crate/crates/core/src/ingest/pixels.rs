//! Pixel normalization and model-input preparation.

use image::imageops::{self, FilterType};
use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::dicom::{DicomImage, Photometric, Window};
use crate::error::{Error, Result};
use crate::geometry::LetterboxTransform;
use crate::refnet::Tensor;

/// Side length of the square network input.
pub const MODEL_INPUT_SIZE: u32 = 512;
/// Gray value used for letterbox padding.
pub const LETTERBOX_FILL: u8 = 114;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInputConfig {
    pub size: u32,
    pub fill: u8,
}

impl Default for ModelInputConfig {
    fn default() -> Self {
        ModelInputConfig {
            size: MODEL_INPUT_SIZE,
            fill: LETTERBOX_FILL,
        }
    }
}

/// Linear VOI transform mapped to `[0, 1]`.
fn apply_window(v: f64, w: Window) -> f64 {
    let c = w.center - 0.5;
    if w.width <= 1.0 {
        return if v <= c { 0.0 } else { 1.0 };
    }
    (((v - c) / (w.width - 1.0)) + 0.5).clamp(0.0, 1.0)
}

fn scale_to_u8(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if values.is_empty() || hi <= lo {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| (255.0 * (v - lo) / (hi - lo)).floor().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Maps stored values to 8-bit display gray: optional window, MONOCHROME1
/// inversion, then min-max scaling. A constant image maps to all zeros.
pub fn normalize_pixels(img: &DicomImage) -> Result<GrayImage> {
    let expected = img.rows as usize * img.cols as usize;
    if img.pixels.len() != expected {
        return Err(Error::contract(format!(
            "{} pixels for a {}x{} image",
            img.pixels.len(),
            img.rows,
            img.cols
        )));
    }
    let data = match img.window {
        None => {
            let max = img.pixels.iter().copied().max().unwrap_or(0);
            let min = img.pixels.iter().copied().min().unwrap_or(0);
            let span = (max - min) as u32;
            img.pixels
                .iter()
                .map(|&v| {
                    let v = match img.photometric {
                        Photometric::Monochrome1 => max - v + min,
                        Photometric::Monochrome2 => v,
                    };
                    (255 * (v - min) as u32).checked_div(span).unwrap_or(0) as u8
                })
                .collect()
        }
        Some(w) => {
            let windowed: Vec<f64> = img
                .pixels
                .iter()
                .map(|&v| {
                    let y = apply_window(v as f64, w);
                    match img.photometric {
                        Photometric::Monochrome1 => 1.0 - y,
                        Photometric::Monochrome2 => y,
                    }
                })
                .collect();
            scale_to_u8(&windowed)
        }
    };
    GrayImage::from_raw(img.cols, img.rows, data)
        .ok_or_else(|| Error::contract("pixel buffer does not match image size"))
}

/// Aspect-preserving resize onto a padded square canvas.
pub fn letterbox_image(img: &GrayImage, cfg: ModelInputConfig) -> Result<(GrayImage, LetterboxTransform)> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 || cfg.size == 0 {
        return Err(Error::contract(format!("cannot letterbox a {w}x{h} image")));
    }
    let t = LetterboxTransform::new(w, h, cfg.size, cfg.size)?;
    let (rw, rh) = t.resized_dims();
    let resized = if (rw, rh) == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, rw, rh, FilterType::Triangle)
    };
    let mut canvas = GrayImage::from_pixel(cfg.size, cfg.size, Luma([cfg.fill]));
    imageops::replace(&mut canvas, &resized, t.pad_left as i64, t.pad_top as i64);
    Ok((canvas, t))
}

/// Letterboxes to the model size and returns a `(1, 3, S, S)` tensor in `[0, 1]`
/// with the gray plane replicated across channels.
pub fn to_model_input(img: &GrayImage, cfg: ModelInputConfig) -> Result<(Tensor, LetterboxTransform)> {
    let (canvas, t) = letterbox_image(img, cfg)?;
    let plane: Vec<f32> = canvas.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    let mut data = Vec::with_capacity(plane.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    let s = cfg.size as usize;
    Ok((Tensor::new([1, 3, s, s], data)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(pixels: Vec<u16>, rows: u32, cols: u32, photometric: Photometric) -> DicomImage {
        DicomImage {
            rows,
            cols,
            bits_allocated: 16,
            photometric,
            pixels,
            body_part: None,
            study_id: String::new(),
            image_id: String::new(),
            window: None,
        }
    }

    #[test]
    fn fixture_values() {
        let m2 = image(vec![0, 100, 200, 300], 2, 2, Photometric::Monochrome2);
        assert_eq!(normalize_pixels(&m2).unwrap().into_raw(), vec![0, 85, 170, 255]);
        let m1 = image(vec![0, 100, 200, 300], 2, 2, Photometric::Monochrome1);
        assert_eq!(normalize_pixels(&m1).unwrap().into_raw(), vec![255, 170, 85, 0]);
    }

    #[test]
    fn constant_image_is_black() {
        let img = image(vec![700; 6], 2, 3, Photometric::Monochrome2);
        assert_eq!(normalize_pixels(&img).unwrap().into_raw(), vec![0; 6]);
        let img = image(vec![700; 6], 2, 3, Photometric::Monochrome1);
        assert_eq!(normalize_pixels(&img).unwrap().into_raw(), vec![0; 6]);
    }

    #[test]
    fn offset_range_uses_min() {
        let img = image(vec![1000, 1051, 1255], 1, 3, Photometric::Monochrome2);
        assert_eq!(normalize_pixels(&img).unwrap().into_raw(), vec![0, 51, 255]);
    }

    #[test]
    fn window_clips_before_scaling() {
        let mut img = image(vec![0, 50, 100, 1000], 1, 4, Photometric::Monochrome2);
        img.window = Some(Window {
            center: 50.5,
            width: 101.0,
        });
        assert_eq!(normalize_pixels(&img).unwrap().into_raw(), vec![0, 127, 255, 255]);
    }

    #[test]
    fn letterbox_wide_image() {
        let img = GrayImage::from_pixel(1024, 512, Luma([200]));
        let (canvas, t) = letterbox_image(&img, ModelInputConfig::default()).unwrap();
        assert_eq!(t.scale, 0.5);
        assert_eq!((t.pad_left, t.pad_top), (0.0, 128.0));
        assert_eq!(canvas.get_pixel(10, 127).0, [114]);
        assert_eq!(canvas.get_pixel(10, 128).0, [200]);
        assert_eq!(canvas.get_pixel(511, 383).0, [200]);
        assert_eq!(canvas.get_pixel(511, 384).0, [114]);
    }

    #[test]
    fn model_input_layout() {
        let img = GrayImage::from_pixel(512, 512, Luma([255]));
        let (t, lb) = to_model_input(&img, ModelInputConfig::default()).unwrap();
        assert_eq!(t.dims(), [1, 3, 512, 512]);
        assert!(t.data().iter().all(|&v| v == 1.0));
        assert_eq!(lb.scale, 1.0);
    }

    #[test]
    fn zero_sized_image_is_contract_error() {
        let img = GrayImage::new(0, 4);
        assert!(matches!(
            to_model_input(&img, ModelInputConfig::default()),
            Err(Error::Contract(_))
        ));
    }
}
