//! Stereo-photometric depth from direct per-pixel optimization.
//!
//! A discrete depth-density volume and a continuous sigmoid residual are
//! fit jointly against a rectified stereo pair by minimizing photometric
//! reconstruction and smoothness losses through a reverse-mode tape.

pub mod config;
pub mod depth_model;
pub mod error;
pub mod field;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod occlusion;
pub mod optimize;
pub mod reconstruction;
pub mod synth;
pub mod tape;

pub use error::{Error, Result};
