//! Raw head grids to prediction records.
//!
//! The raw file is a tensor file whose metadata lists the images and their
//! letterbox transforms, with one tensor per image and stride named
//! `{image_id}/stride{N}` of shape `[anchors, rows, cols, 5 + classes]`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use radeval_core::postprocess::{decode_head, nms, AnchorSet, HeadGrid};
use radeval_core::tensorfile::TensorFile;
use radeval_core::LetterboxTransform;
use serde::{Deserialize, Serialize};

use super::read_text;
use crate::exit;
use crate::records::{write_predictions, PredictionRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawImage {
    pub image_id: String,
    pub letterbox: LetterboxTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMetadata {
    pub images: Vec<RawImage>,
    /// Class names by index; indices are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

pub fn tensor_name(image_id: &str, stride: u32) -> String {
    format!("{image_id}/stride{stride}")
}

pub fn load_anchors(path: &Path) -> Result<AnchorSet> {
    let set: AnchorSet =
        serde_json::from_str(&read_text(path)?).with_context(|| format!("invalid anchors file {}", path.display()))?;
    set.validate()?;
    Ok(set)
}

/// Decodes every image in the raw file. Records are grouped by image in
/// metadata order; within an image they follow NMS order.
pub fn decode_raw(raw: &TensorFile, anchors: &AnchorSet, conf: f64, nms_iou: f64) -> Result<Vec<PredictionRecord>> {
    if !(0.0..=1.0).contains(&conf) || !(0.0..=1.0).contains(&nms_iou) {
        bail!("--conf and --nms-iou must lie in [0, 1]");
    }
    let meta: RawMetadata =
        serde_json::from_value(raw.metadata.clone()).context("raw file metadata lacks an `images` list")?;
    let mut records = Vec::new();
    for img in &meta.images {
        let lb = &img.letterbox;
        let mut dets = Vec::new();
        let mut n_classes = None;
        for level in &anchors.levels {
            let name = tensor_name(&img.image_id, level.stride);
            let t = raw.get(&name)?;
            let [a, rows, cols, ch]: [usize; 4] = t
                .shape
                .as_slice()
                .try_into()
                .with_context(|| format!("{name}: expected 4 dims, got {:?}", t.shape))?;
            let stride = level.stride as usize;
            if rows * stride != lb.dst_height as usize || cols * stride != lb.dst_width as usize {
                bail!(
                    "{name}: {rows}x{cols} grid at stride {stride} does not cover a {}x{} input",
                    lb.dst_height,
                    lb.dst_width
                );
            }
            if *n_classes.get_or_insert(ch) != ch {
                bail!("{name}: channel count {ch} differs from other strides");
            }
            let grid = HeadGrid::new([a, rows, cols, ch], t.data.clone()).with_context(|| name.clone())?;
            dets.extend(decode_head(&grid, level, conf, &img.image_id).with_context(|| name.clone())?);
        }
        if let (Some(names), Some(ch)) = (&meta.classes, n_classes) {
            if names.len() != ch - 5 {
                bail!("{} class names for {} class channels", names.len(), ch - 5);
            }
        }
        let (w, h) = (lb.src_width as f64, lb.src_height as f64);
        for d in nms(&dets, nms_iou) {
            let b = lb.invert(&d.bbox).clamp_to(w, h);
            if b.area() <= 0.0 {
                continue;
            }
            let class = match &meta.classes {
                Some(names) => names[d.class_id as usize].clone(),
                None => d.class_id.to_string(),
            };
            records.push(PredictionRecord {
                image_id: d.image_id,
                class,
                score: d.score,
                x_min: b.x_min,
                y_min: b.y_min,
                x_max: b.x_max,
                y_max: b.y_max,
            });
        }
    }
    Ok(records)
}

pub fn run(raw: &Path, anchors: &Path, conf: f64, nms_iou: f64, out_path: &Path, out: &mut dyn Write) -> Result<u8> {
    let anchors = load_anchors(anchors)?;
    let raw = TensorFile::read(raw).with_context(|| format!("cannot load {}", raw.display()))?;
    let records = decode_raw(&raw, &anchors, conf, nms_iou)?;
    let file = File::create(out_path).with_context(|| format!("cannot create {}", out_path.display()))?;
    write_predictions(&records, BufWriter::new(file))?;
    writeln!(out, "{} records written to {}", records.len(), out_path.display())?;
    Ok(exit::SUCCESS)
}
