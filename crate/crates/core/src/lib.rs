//! Stroke-based image stylization.
//!
//! Three pipelines share one raster toolkit:
//!
//! - [`painterly`]: tone quantization plus coarse-to-fine curved-brush
//!   painting driven by image gradients.
//! - [`neural`]: content/style loss minimization over a fixed, seeded
//!   filter-bank feature extractor, with analytic gradients.
//! - [`planning`]: hybrid stroke planning. Rule-based initialization from
//!   edge, saliency and density maps ([`features`]), a pluggable refiner,
//!   convex blending, consistency scoring and merging. The resulting plan is
//!   rasterized by [`render`].
//!
//! Every pipeline is a pure function of its inputs and a 64-bit seed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod features;
pub mod io;
pub mod neural;
pub mod painterly;
pub mod pipeline;
pub mod plan_json;
pub mod planning;
pub mod raster;
pub mod render;
mod rng;

pub use config::PlanConfig;
pub use error::{Error, Result};
pub use raster::{GradientField, RasterImage, ScalarField};
pub use planning::{Stroke, Texture};
