//! 3D fingerprint preprocessing and registration toolkit: local surface
//! depth visualization, nonparametric unwrapping, rigid registration and
//! seam-aware fusion of partial scans, canonical pose normalization, and
//! 2D-3D registration against contactless and contact targets.

pub mod config;
pub mod crossmodal;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod mosaic;
pub mod pose;
pub mod raster;
pub mod register;
pub mod synth;
pub mod unwrap;

pub use error::{Error, Result};
