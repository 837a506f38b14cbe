//! Morphometry of multilayer coated-particle cross sections.
//!
//! The crate is organized around one forward model, the nested-sphere
//! [`geometry`], and the tools that feed and invert it:
//!
//! - [`synthgen`] renders synthetic sections with exact ground truth,
//! - [`gtgen`] composes ground-truth masks from boundary annotations,
//! - [`maskops`] measures area-equivalent radii and overlap metrics,
//! - [`spherefit`] recovers spherical radii from four sections,
//! - [`statsreport`] aggregates fitted radii into cohort reports,
//! - [`io`] reads and writes images, masks and their JSON sidecars.
//!
//! The numeric core is generic over [`Real`] (`f32`/`f64`); the `*F64`
//! aliases below fix the scalar for the common case.

pub mod error;
pub mod geometry;
pub mod gtgen;
pub mod io;
pub mod maskops;
pub mod scalar;
pub mod spherefit;
pub mod statsreport;
pub mod synthgen;

mod linalg;

pub use error::{Error, Result};
pub use geometry::{LayerBoundary, SectionPlane};
pub use maskops::{BinaryGrid, ClassLabel, LabeledMask, MaskMeasurement};
pub use scalar::Real;
pub use spherefit::{BatchSummary, FitConfig, FitStatus, SectionObservation};
pub use synthgen::SynthConfig;

pub type ParticleGeometryF64 = geometry::ParticleGeometry<f64>;
pub type ParticleGeometryF32 = geometry::ParticleGeometry<f32>;
pub type SectionPlaneF64 = geometry::SectionPlane<f64>;
pub type ObservationSetF64 = spherefit::ObservationSet<f64>;
pub type FitResultF64 = spherefit::FitResult<f64>;
pub type BatchOutcomeF64 = spherefit::BatchOutcome<f64>;
pub type MeanStdF64 = statsreport::MeanStd<f64>;
pub type SummaryF64 = statsreport::Summary<f64>;
