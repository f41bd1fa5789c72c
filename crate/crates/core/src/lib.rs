//! Gaussian-splatting geometry toolkit.
//!
//! The crate covers a CPU forward rasterizer with an analytic reverse pass,
//! Gaussian-level cross-view visibility, multi-view geometric and photometric
//! consistency terms, progressive quadtree calibration of monocular depth,
//! a training loop over those objectives, TSDF meshing, and the file codecs
//! used by the command-line front end.

pub mod calibration;
pub mod consistency;
pub mod image;
pub mod io;
pub mod meshing;
pub mod objective;
pub mod photometric;
pub mod render;
pub mod scene;
pub mod train;
pub mod synth;
pub mod visibility;
