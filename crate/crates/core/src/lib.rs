//! Event-camera facial action unit recognition and frame reconstruction.

pub mod blob;
pub mod dataset;
pub mod events;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod reconstruction;
pub mod representation;
pub mod snn;
