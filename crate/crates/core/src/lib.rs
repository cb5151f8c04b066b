//! Photogrammetry-to-acoustics modeling.
//!
//! Turns a structure-from-motion reconstruction into an acoustically
//! annotated, geometrically reduced room model and simulates its impulse
//! response:
//!
//! - [`ingest`]: COLMAP text parsing and the point reprojection database
//! - [`masking`]: polygon masks on photos, edge assistance, extrapolation
//! - [`materials`]: absorption measurements and text-similarity suggestions
//! - [`geometry`]: cloud cleanup, plane segmentation, meshing, STL export
//! - [`acoustics`]: image sources, ray tracing, decay analysis, auralization

pub mod acoustics;
pub mod fixtures;
pub mod geom2d;
pub mod geometry;
pub mod ingest;
pub mod masking;
pub mod materials;
pub mod spatial;

pub type Vec3 = nalgebra::Vector3<f64>;
