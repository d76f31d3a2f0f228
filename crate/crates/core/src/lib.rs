//! Core algorithms for multi-view bird's-eye-view (BEV) pedestrian tracking.
//!
//! The crate is `no_std` and only needs `alloc`. It covers the numeric part of
//! the pipeline:
//!
//! * [`geometry`]: pinhole projection, ground-plane homographies and the BEV grid.
//! * [`tokens`]: BEV feature maps, 3D sinusoidal positional codes and
//!   detection-anchored token extraction.
//! * [`affinity`]: the cross-attention association module (pairwise micro-CNN
//!   affinity, entry/exit extension, dual softmax, value propagation).
//! * [`detect`]: heatmap peak decoding.
//! * [`tracker`]: Kalman filtering, Hungarian assignment and the two-stage
//!   online association.
//! * [`metrics`]: CLEAR MOT and IDF1 on ground-plane points.
//! * [`pipeline`]: per-frame glue from detections to track records.
//!
//! File formats, the synthetic scene generator and the CLI live in the
//! `bevtrack` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod affinity;
pub mod detect;
mod error;
pub mod geometry;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod tokens;
pub mod tracker;

pub use error::{Error, Result};
pub use matrix::Matrix;
