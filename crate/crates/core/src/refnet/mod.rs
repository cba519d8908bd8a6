//! Forward-only reference implementations of the YOLOv5 building blocks.
//!
//! Everything here runs on plain `Vec<f32>` tensors with direct loops in a
//! fixed order: identical inputs and weights give bit-identical outputs.
//! Weights are either seeded-random or loaded from a [`TensorFile`](crate::tensorfile::TensorFile).

mod backbone;
mod blocks;
pub mod check;
mod layers;
mod tensor;

pub use backbone::{backbone_forward, BackboneConfig, BackboneParams, Pyramid, MAX_STRIDE};
pub use blocks::{
    csp_concat, csp_forward, focus_forward, focus_slice, focus_unslice, panet_concat, panet_fuse, res_unit_forward,
    spp_forward, spp_pool, CspParams, CspVariant, PanParams, ResUnitParams, SPP_KERNELS,
};
pub use layers::{
    cbl_forward, conv2d, leaky_relu, max_pool_same, BatchNorm, ConvParams, ConvWeights, LayerConstants, DEFAULT_BN_EPS,
    DEFAULT_LEAKY_SLOPE,
};
pub use tensor::Tensor;
