//! Sparse pillar-based point cloud processing: COO pseudoimages, pillar
//! feature extraction, sparse and submanifold convolution kernels, dense
//! and sparse feature-pyramid backbones, and an analytic convolution-count
//! model for both backbones.

pub mod backbone;
pub mod conv;
pub mod costmodel;
pub mod error;
pub mod pillars;
pub mod tensor;

pub use error::{Error, Result};
