//! Point-prompted segmentation through iterative box refinement.
//!
//! A point prompt is turned into a seed box, expanded into a bag of scaled
//! proposals, and the proposal closest to the learned class prototype is sent
//! to a box-promptable segmenter. The tight box of the returned mask seeds the
//! next round.

pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod refiner;
pub mod segmenter;

pub use error::{Error, Result};
