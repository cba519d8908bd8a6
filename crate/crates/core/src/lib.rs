//! Evaluation and preprocessing toolkit for chest-radiograph object detection.
//!
//! The crate is split by pipeline stage:
//!
//! - [`geometry`]: boxes, IoU, coordinate formats and the letterbox transform.
//! - [`metrics`]: greedy detection matching, PR curves, AP/mAP, confusion matrices.
//! - [`postprocess`]: YOLO head decoding and class-aware NMS.
//! - [`refnet`]: forward-only reference implementations of the YOLOv5 blocks.
//! - [`ingest`]: DICOM parsing, pixel normalization, model input and study labels.
//! - [`tensorfile`]: the JSON-headed little-endian f32 container used for
//!   weights and raw head grids.

pub mod error;
pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod postprocess;
pub mod refnet;
pub mod tensorfile;

pub use error::{Error, Result};
pub use geometry::{iou, BBox, BoxFormat, LetterboxTransform};
pub use metrics::{Detection, EvalReport, GroundTruthBox};
