//! Per-building height retrieval from single slant-range SAR amplitude images.
//!
//! Given building footprints and a SAR image, the pipeline regresses each
//! building's bounding box from its footprint bounding box and converts the
//! width difference into a height via the radar viewing geometry. A built-in
//! synthetic scene simulator provides a verifiable oracle for the whole chain
//! at desk scale.
//!
//! Pipeline stages, each with a module of its own:
//!
//! 1. [`geometry`] — closed-form world/slant-range projection and the
//!    layover/height relations.
//! 2. [`simulate`] — synthetic amplitude scenes with layover, double-bounce,
//!    shadow and speckle.
//! 3. [`dataset`] — reference-data workflow: footprint masks, footprint and
//!    building boxes, stale-building filtering, patch cropping, normalization,
//!    spatial train/test split, positioning-error injection.
//! 4. [`nn`] + [`model`] — a small differentiable compute engine and the
//!    footprint-guided regression network trained with SGD.
//! 5. [`bbox`] — box parameterization, delta encode/decode, CIoU loss.
//! 6. [`height`] — box-to-height conversion, LoD1 prisms, error metrics.
//! 7. [`cli`] + [`formats`] — batch commands and the on-disk file formats.

pub mod bbox;
pub mod cli;
pub mod dataset;
pub mod formats;
pub mod geometry;
pub mod height;
pub mod model;
pub mod nn;
pub mod raster;
pub mod seedmix;
pub mod simulate;
pub mod synthetic;
