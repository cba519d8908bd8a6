//! Axis-aligned boxes, IoU, coordinate conversion and the letterbox transform.
//!
//! Pixel boxes use the half-open convention `[min, max)`, so a box covering
//! an `w × h` image is `(0, 0, w, h)` and its area is `w · h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on normalized coordinates before they are rejected.
pub const NORMALIZED_TOLERANCE: f64 = 1e-6;

/// Axis-aligned box in half-open xyxy pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite or inverted coordinates.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !b.is_finite() {
            return Err(Error::annotation(format!("non-finite box {b:?}")));
        }
        if x_max < x_min || y_max < y_min {
            return Err(Error::annotation(format!("inverted box {b:?}")));
        }
        Ok(b)
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x_min.is_finite() && self.y_min.is_finite() && self.x_max.is_finite() && self.y_max.is_finite()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clamps the box into `[0, width) × [0, height)`.
    pub fn clamp_to(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox {
            x_min: cx(self.x_min),
            y_min: cy(self.y_min),
            x_max: cx(self.x_max),
            y_max: cy(self.y_max),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

/// Intersection over union of two boxes.
///
/// Two zero-area boxes have an empty union; their IoU is defined as 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Coordinate conventions understood by [`convert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxFormat {
    /// `(x_min, y_min, x_max, y_max)` in pixels.
    XyxyPixel,
    /// `(cx, cy, w, h)` as fractions of the image width and height.
    XywhCenterNormalized,
}

fn check_normalized(v: [f64; 4], what: &str) -> Result<()> {
    let lo = -NORMALIZED_TOLERANCE;
    let hi = 1.0 + NORMALIZED_TOLERANCE;
    if v.iter().any(|c| !c.is_finite() || *c < lo || *c > hi) {
        return Err(Error::annotation(format!(
            "{what} normalized coordinates {v:?} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Re-expresses a coordinate tuple in another [`BoxFormat`].
pub fn convert(coords: [f64; 4], from: BoxFormat, to: BoxFormat, img_w: u32, img_h: u32) -> Result<[f64; 4]> {
    if img_w == 0 || img_h == 0 {
        return Err(Error::contract(format!(
            "image size must be positive, got {img_w}x{img_h}"
        )));
    }
    let (w, h) = (img_w as f64, img_h as f64);

    let xyxy = match from {
        BoxFormat::XyxyPixel => BBox::from_array(coords)?.to_array(),
        BoxFormat::XywhCenterNormalized => {
            check_normalized(coords, "input")?;
            let [cx, cy, bw, bh] = coords;
            if bw < 0.0 || bh < 0.0 {
                return Err(Error::annotation(format!("negative box size {coords:?}")));
            }
            [
                (cx - bw / 2.0) * w,
                (cy - bh / 2.0) * h,
                (cx + bw / 2.0) * w,
                (cy + bh / 2.0) * h,
            ]
        }
    };

    match to {
        BoxFormat::XyxyPixel => Ok(xyxy),
        BoxFormat::XywhCenterNormalized => {
            let [x0, y0, x1, y1] = xyxy;
            let out = [(x0 + x1) / 2.0 / w, (y0 + y1) / 2.0 / h, (x1 - x0) / w, (y1 - y0) / h];
            check_normalized(out, "output")?;
            Ok(out)
        }
    }
}

/// Aspect-preserving resize plus padding from a source image into a fixed
/// destination canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LetterboxTransform {
    pub src_width: u32,
    pub src_height: u32,
    pub dst_width: u32,
    pub dst_height: u32,
    pub scale: f64,
    pub pad_left: f64,
    pub pad_top: f64,
}

impl LetterboxTransform {
    /// Padding is floored on the left/top; the remainder goes right/bottom.
    pub fn new(src_width: u32, src_height: u32, dst_width: u32, dst_height: u32) -> Result<Self> {
        if src_width == 0 || src_height == 0 || dst_width == 0 || dst_height == 0 {
            return Err(Error::contract(format!(
                "letterbox dims must be positive: {src_width}x{src_height} -> {dst_width}x{dst_height}"
            )));
        }
        let scale = (dst_width as f64 / src_width as f64).min(dst_height as f64 / src_height as f64);
        let pad_left = ((dst_width as f64 - scale * src_width as f64) / 2.0).floor();
        let pad_top = ((dst_height as f64 - scale * src_height as f64) / 2.0).floor();
        Ok(LetterboxTransform {
            src_width,
            src_height,
            dst_width,
            dst_height,
            scale,
            pad_left,
            pad_top,
        })
    }

    pub fn identity(width: u32, height: u32) -> Result<Self> {
        Self::new(width, height, width, height)
    }

    /// Size of the resized image inside the canvas, in whole pixels.
    pub fn resized_dims(&self) -> (u32, u32) {
        let w = (self.scale * self.src_width as f64).round() as u32;
        let h = (self.scale * self.src_height as f64).round() as u32;
        (w.clamp(1, self.dst_width), h.clamp(1, self.dst_height))
    }

    pub fn apply(&self, b: &BBox) -> BBox {
        BBox {
            x_min: b.x_min * self.scale + self.pad_left,
            y_min: b.y_min * self.scale + self.pad_top,
            x_max: b.x_max * self.scale + self.pad_left,
            y_max: b.y_max * self.scale + self.pad_top,
        }
    }

    pub fn invert(&self, b: &BBox) -> BBox {
        BBox {
            x_min: (b.x_min - self.pad_left) / self.scale,
            y_min: (b.y_min - self.pad_top) / self.scale,
            x_max: (b.x_max - self.pad_left) / self.scale,
            y_max: (b.y_max - self.pad_top) / self.scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_hand_cases() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 20., 30., 30.)), 0.0);
        // inter 50, union 150
        let v = iou(&b(0., 0., 10., 10.), &b(0., 5., 10., 15.));
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_of_degenerate_boxes_is_zero() {
        let p = b(3., 3., 3., 3.);
        assert_eq!(iou(&p, &p), 0.0);
        let line = b(0., 0., 10., 0.);
        assert_eq!(iou(&line, &b(0., 0., 10., 10.)), 0.0);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(10., 0., 20., 10.)), 0.0);
    }

    #[test]
    fn rejects_inverted_and_nan() {
        assert!(BBox::new(5., 0., 4., 1.).is_err());
        assert!(BBox::new(f64::NAN, 0., 4., 1.).is_err());
    }

    #[test]
    fn convert_hand_cases() {
        let full = convert(
            [0.5, 0.5, 1.0, 1.0],
            BoxFormat::XywhCenterNormalized,
            BoxFormat::XyxyPixel,
            100,
            100,
        )
        .unwrap();
        assert_eq!(full, [0., 0., 100., 100.]);

        let q = convert(
            [0.25, 0.25, 0.5, 0.5],
            BoxFormat::XywhCenterNormalized,
            BoxFormat::XyxyPixel,
            200,
            100,
        )
        .unwrap();
        assert_eq!(q, [0., 0., 100., 50.]);
    }

    #[test]
    fn convert_rejects_out_of_range_normalized() {
        let err = convert(
            [0.5, 1.2, 0.1, 0.1],
            BoxFormat::XywhCenterNormalized,
            BoxFormat::XyxyPixel,
            10,
            10,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MalformedAnnotation(_)));
        // within tolerance is accepted
        convert(
            [0.5, 1.0 + 5e-7, 0.1, 0.0],
            BoxFormat::XywhCenterNormalized,
            BoxFormat::XyxyPixel,
            10,
            10,
        )
        .unwrap();
        assert!(convert([0.; 4], BoxFormat::XyxyPixel, BoxFormat::XyxyPixel, 0, 5).is_err());
    }

    #[test]
    fn letterbox_wide_image() {
        let t = LetterboxTransform::new(1024, 512, 512, 512).unwrap();
        assert_eq!(t.scale, 0.5);
        assert_eq!(t.pad_left, 0.0);
        assert_eq!(t.pad_top, 128.0);
        assert_eq!(t.apply(&b(0., 0., 1024., 512.)), b(0., 128., 512., 384.));
        assert_eq!(t.resized_dims(), (512, 256));
    }

    #[test]
    fn letterbox_odd_remainder_goes_bottom_right() {
        let t = LetterboxTransform::new(10, 7, 10, 10).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.pad_top, 1.0);
    }

    #[test]
    fn letterbox_identity() {
        let t = LetterboxTransform::identity(640, 480).unwrap();
        let x = b(1.5, 2.5, 100.25, 300.0);
        assert_eq!(t.apply(&x), x);
        assert_eq!(t.invert(&x), x);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..1000.0f64, 0.0..1000.0f64, 0.0..500.0f64, 0.0..500.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            prop_assert_eq!(ab, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn translated_by_width_is_disjoint(a in arb_box(), extra in 0.0..50.0f64) {
            let moved = a.translate(a.width() + extra, 0.0);
            prop_assert_eq!(iou(&a, &moved), 0.0);
        }

        #[test]
        fn convert_round_trip(a in arb_box()) {
            let n = convert(a.to_array(), BoxFormat::XyxyPixel, BoxFormat::XywhCenterNormalized, 1500, 1500).unwrap();
            let back = convert(n, BoxFormat::XywhCenterNormalized, BoxFormat::XyxyPixel, 1500, 1500).unwrap();
            for (x, y) in back.iter().zip(a.to_array()) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn letterbox_round_trip(sw in 1u32..4000, sh in 1u32..4000, a in arb_box()) {
            let t = LetterboxTransform::new(sw, sh, 512, 512).unwrap();
            let back = t.invert(&t.apply(&a));
            for (x, y) in back.to_array().iter().zip(a.to_array()) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }
}
