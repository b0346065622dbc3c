//! Range imaging from color stripe patterns cast by several projectors at once.
//!
//! Several projectors cast the same color-stripe code in different
//! orientations at once. A single camera frame is split back into one
//! derivative signal per projector with directional derivatives, each signal
//! is decoded into stripe indices, and every projector-camera pair is
//! triangulated into a range image. Range images are then merged.
//!
//! The crate also contains a Lambertian renderer that produces camera frames
//! with exact ground truth, so every stage can be measured.

pub mod io;
pub mod pattern;
pub mod raster;
pub mod optics;
pub mod scene;
pub mod demux;
pub mod synth;
pub mod decode;
pub mod range;
pub mod analysis;
pub mod config;
pub mod scenarios;
pub mod pipeline;
pub mod error;
