//! Decoding of raw YOLO detection-head grids and non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::metrics::{score_order, ClassId, Detection};

/// Confidence cut used when producing detections for mAP evaluation.
pub const EVAL_CONF_THRESHOLD: f64 = 0.001;
/// Confidence cut used for human-facing output.
pub const DISPLAY_CONF_THRESHOLD: f64 = 0.25;
pub const DEFAULT_NMS_IOU: f64 = 0.45;

pub const ALLOWED_STRIDES: [u32; 3] = [8, 16, 32];

/// Anchor priors for one detection scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLevel {
    pub stride: u32,
    /// `(width, height)` in input pixels.
    pub anchors: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub levels: Vec<AnchorLevel>,
}

impl AnchorSet {
    pub fn new(levels: Vec<AnchorLevel>) -> Result<Self> {
        let set = AnchorSet { levels };
        set.validate()?;
        Ok(set)
    }

    /// The stock YOLOv5 P3/P4/P5 anchors.
    pub fn yolov5_default() -> Self {
        AnchorSet {
            levels: vec![
                AnchorLevel {
                    stride: 8,
                    anchors: vec![(10., 13.), (16., 30.), (33., 23.)],
                },
                AnchorLevel {
                    stride: 16,
                    anchors: vec![(30., 61.), (62., 45.), (59., 119.)],
                },
                AnchorLevel {
                    stride: 32,
                    anchors: vec![(116., 90.), (156., 198.), (373., 326.)],
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::contract("anchor set has no levels"));
        }
        for pair in self.levels.windows(2) {
            if pair[1].stride <= pair[0].stride {
                return Err(Error::contract("anchor strides must be strictly increasing"));
            }
        }
        for level in &self.levels {
            if !ALLOWED_STRIDES.contains(&level.stride) {
                return Err(Error::contract(format!("unsupported stride {}", level.stride)));
            }
            if level.anchors.is_empty() {
                return Err(Error::contract(format!("stride {} has no anchors", level.stride)));
            }
            if level
                .anchors
                .iter()
                .any(|&(w, h)| !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()))
            {
                return Err(Error::contract(format!(
                    "stride {} has a non-positive anchor",
                    level.stride
                )));
            }
        }
        Ok(())
    }
}

/// Raw head output for one scale: `(anchors, rows, cols, 5 + classes)`,
/// row-major, last axis holding `t_x, t_y, t_w, t_h, t_obj, class logits…`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrid {
    pub anchors: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl HeadGrid {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let [anchors, rows, cols, channels] = shape;
        if channels < 6 {
            return Err(Error::contract(format!(
                "head grid needs at least 6 channels (box, objectness, one class), got {channels}"
            )));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::contract(format!(
                "head grid shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(HeadGrid {
            anchors,
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn zeros(shape: [usize; 4]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn num_classes(&self) -> usize {
        self.channels - 5
    }

    pub fn cell(&self, a: usize, i: usize, j: usize) -> &[f32] {
        let start = ((a * self.rows + i) * self.cols + j) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn cell_mut(&mut self, a: usize, i: usize, j: usize) -> &mut [f32] {
        let start = ((a * self.rows + i) * self.cols + j) * self.channels;
        &mut self.data[start..start + self.channels]
    }
}

/// Logistic function kept strictly below 1 so that a finite logit can
/// never reach a confidence of exactly 1.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;
    (1.0 / (1.0 + (-x).exp())).min(BELOW_ONE)
}

/// Decodes one scale of head output into pixel-space detections whose
/// confidence reaches `conf_threshold`.
///
/// Emission order is anchor-major, then row, then column.
pub fn decode_head(
    grid: &HeadGrid,
    level: &AnchorLevel,
    conf_threshold: f64,
    image_id: &str,
) -> Result<Vec<Detection>> {
    if grid.anchors != level.anchors.len() {
        return Err(Error::contract(format!(
            "grid has {} anchor slots but stride {} defines {} anchors",
            grid.anchors,
            level.stride,
            level.anchors.len()
        )));
    }
    let stride = level.stride as f64;
    let mut out = Vec::new();
    for (a, &(anchor_w, anchor_h)) in level.anchors.iter().enumerate() {
        for i in 0..grid.rows {
            for j in 0..grid.cols {
                let cell = grid.cell(a, i, j);
                let objectness = sigmoid(cell[4] as f64);
                let (class_id, class_prob) = cell[5..].iter().map(|&v| sigmoid(v as f64)).enumerate().fold(
                    (0usize, f64::NEG_INFINITY),
                    |best, (c, p)| {
                        if p > best.1 {
                            (c, p)
                        } else {
                            best
                        }
                    },
                );
                let confidence = objectness * class_prob;
                if confidence.is_nan() || confidence < conf_threshold {
                    continue;
                }
                let cx = (2.0 * sigmoid(cell[0] as f64) - 0.5 + j as f64) * stride;
                let cy = (2.0 * sigmoid(cell[1] as f64) - 0.5 + i as f64) * stride;
                let w = (2.0 * sigmoid(cell[2] as f64)).powi(2) * anchor_w;
                let h = (2.0 * sigmoid(cell[3] as f64)).powi(2) * anchor_h;
                out.push(Detection {
                    image_id: image_id.to_owned(),
                    class_id: class_id as ClassId,
                    score: confidence,
                    bbox: BBox {
                        x_min: cx - w / 2.0,
                        y_min: cy - h / 2.0,
                        x_max: cx + w / 2.0,
                        y_max: cy + h / 2.0,
                    },
                });
            }
        }
    }
    Ok(out)
}

/// Greedy class-aware NMS.
///
/// Boxes only suppress boxes of the same image and class, and only when
/// their IoU is strictly greater than `iou_threshold`. The result is sorted
/// by descending score (stable on ties).
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let order = score_order(dets);
    let mut kept: Vec<&Detection> = Vec::new();
    for idx in order {
        let cand = &dets[idx];
        let suppressed = kept.iter().any(|k| {
            k.class_id == cand.class_id && k.image_id == cand.image_id && iou(&k.bbox, &cand.bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(cand);
        }
    }
    kept.into_iter().cloned().collect()
}
