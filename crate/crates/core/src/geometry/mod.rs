//! Point-cloud cleanup, plane segmentation, meshing and STL export.
//!
//! The reduced room model is built from segmented planes: each plane's
//! convex inlier hull describes the surface, and the closed shell is the
//! intersection of the inward half-spaces of all planes.

mod cloud;
mod io;
mod mesh;
mod pivot;
mod planes;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cloud::{
    estimate_normals, filter_objects, reassign_identities, remove_outliers, substitute_object,
    voxel_downsample, CloudPoint, Placement, PointCloud, Replacement, Substitution,
};
pub use io::{
    apply_sidecar, export_bytes, export_stl, parse_sidecar, read_ply, read_stl, sidecar_json, write_ply, write_stl, ExportReport,
    Sidecar, SidecarFacet,
};
pub use mesh::{
    annotate_materials, fill_holes, triangulate_planes, validate_mesh, AnnotatedMesh, FacetMaterial,
    FacetSource, FillReport, MeshReport, WELD_TOLERANCE,
};
pub use pivot::ball_pivot;
pub use planes::{
    close_shell, fit_plane_least_squares, plane_boundary, ransac_plane, segment_planes, Plane,
    RansacFit, Segmentation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlaneId(pub u32);

impl fmt::Display for PlaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "plane {}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("points are collinear")]
    Collinear,
    #[error("degenerate boundary loop on {0}")]
    DegenerateLoop(PlaneId),
    #[error("cloud has points without normals")]
    NoNormals,
    #[error("target identity set is empty")]
    EmptyTarget,
    #[error("principal axes are not unique (near-isotropic cloud)")]
    DegenerateAxes,
    #[error("mesh is not watertight")]
    NotWatertight,
    #[error("{} facet(s) have no material, first is facet {}", .0.len(), .0[0])]
    Unannotated(Vec<usize>),
    #[error("malformed {format} data: {message}")]
    Format { format: &'static str, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
