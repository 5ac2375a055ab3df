//! Location prior generation: fuses building footprints, satellite imagery,
//! UAV telemetry and vehicle trajectories into an uncertainty-annotated 3D
//! prior for a circular operational region.
//!
//! The pipeline runs in five stages:
//!
//! 1. region delimitation around the UAV hover center ([`geo`], [`ingest`])
//! 2. footprint validation and lane extraction ([`ingest`], [`topology`])
//! 3. quality-gated height inference ([`gate`], [`shem`], [`fallback`])
//! 4. prior assembly and occluder flagging ([`prior`], [`topology`])
//! 5. LPSP-v0 serialization ([`prior`])
//!
//! [`pipeline`] wires the stages together; [`synth`] renders synthetic scenes
//! with known building heights for testing the shadow estimator.

pub mod error;
pub mod fallback;
pub mod gate;
pub mod geo;
pub mod ingest;
pub mod pipeline;
pub mod prior;
pub mod raster;
pub mod shem;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};
