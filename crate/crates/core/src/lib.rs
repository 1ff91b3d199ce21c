//! Ordered centerline reconstruction of thin deformable threads from gradient
//! road maps.
//!
//! A gradient road map stores, on every thread pixel, the normalized arclength
//! parameter of the thread at that point. The reconstruction pipeline runs
//!
//! 1. conjugate-map fusion ([`pipeline::fuse_conjugate`]),
//! 2. sub-pixel ridge extraction ([`ridge`]),
//! 3. polarity-seeded region growing into curve segments ([`search`]),
//! 4. intensity-ordered segment linking ([`link`]),
//! 5. per-coordinate cubic spline fitting ([`spline`]).
//!
//! [`synth`] generates synthetic scenes with exact ground truth and
//! [`metrics`] scores reconstructions against them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod geom;
pub mod io;
pub mod link;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod ridge;
pub mod search;
pub mod spline;
pub mod synth;

pub use error::{Error, Result};
pub use geom::{Polyline, Vec2};
pub use pipeline::{reconstruct, PipelineConfig, ReconstructionResult};
pub use raster::{BinaryMask, GradientMap, OverlapLabel, OverlapMap, ScalarField};
