//! Structure-from-motion ingestion and the point reprojection database.
//!
//! The database keeps cameras, posed photos and triangulated point
//! identities together with the two-way mapping between a photo's local
//! pixel observations and the global identities they belong to.

mod colmap;
mod database;

use std::fmt;

use nalgebra::{Matrix3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec3;

pub use colmap::{parse_sfm_text, write_sfm_text, SfmText};
pub use database::{ProjectedPoint, ReprojectionDatabase, DEFAULT_LOOKUP_RADIUS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointId(pub u64);

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "camera {}", self.0)
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "image {}", self.0)
    }
}

impl fmt::Display for PointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "point {}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: unsupported camera model `{model}`")]
    UnsupportedModel {
        file: String,
        line: usize,
        model: String,
    },
    #[error("dangling reference: {0}")]
    Dangling(String),
    #[error("invalid {id}: {reason}")]
    InvalidCamera { id: CameraId, reason: String },
    #[error("unknown {0}")]
    UnknownImage(ImageId),
    #[error("unknown {0}")]
    UnknownPoint(PointId),
    #[error("marker {0} and {1} coincide")]
    CoincidentMarkers(PointId, PointId),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CameraKind {
    Pinhole,
    SimpleRadial,
}

impl CameraKind {
    pub fn colmap_name(self) -> &'static str {
        match self {
            CameraKind::Pinhole => "PINHOLE",
            CameraKind::SimpleRadial => "SIMPLE_RADIAL",
        }
    }
}

/// Intrinsics of one physical camera. `k` is the radial term and stays zero
/// for pinhole cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub id: CameraId,
    pub kind: CameraKind,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k: f64,
}

impl CameraModel {
    pub fn pinhole(id: CameraId, width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            id,
            kind: CameraKind::Pinhole,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            k: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let fail = |reason: &str| {
            Err(IngestError::InvalidCamera {
                id: self.id,
                reason: reason.to_string(),
            })
        };
        if self.width == 0 || self.height == 0 {
            return fail("image dimensions must be positive");
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return fail("focal lengths must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) || !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return fail("principal point lies outside the image");
        }
        if !self.k.is_finite() {
            return fail("radial coefficient is not finite");
        }
        if self.kind == CameraKind::Pinhole && self.k != 0.0 {
            return fail("pinhole camera carries a radial coefficient");
        }
        Ok(())
    }

    /// Maps camera-frame coordinates to pixels, or `None` when `z <= 0`.
    pub fn project_camera_frame(&self, p: &Vec3) -> Option<(f64, f64)> {
        if !(p.z > 0.0) {
            return None;
        }
        let mut x = p.x / p.z;
        let mut y = p.y / p.z;
        if self.kind == CameraKind::SimpleRadial {
            let factor = 1.0 + self.k * (x * x + y * y);
            x *= factor;
            y *= factor;
        }
        Some((self.fx * x + self.cx, self.fy * y + self.cy))
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// One keypoint of a photo, optionally tied to a triangulated identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub u: f64,
    pub v: f64,
    pub identity: Option<PointId>,
}

/// A registered photo: world-to-camera rotation and translation.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotoPose {
    pub id: ImageId,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
    pub camera: CameraId,
    pub name: String,
    pub observations: Vec<Observation>,
}

impl PhotoPose {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_camera_frame(&self, world: &Vec3) -> Vec3 {
        self.rotation * world + self.translation
    }

    /// Camera center `-R^T t` in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }

    /// Optical axis in world coordinates (third row of `R`).
    pub fn viewing_direction(&self) -> Vec3 {
        let r = self.rotation_matrix();
        Vec3::new(r[(2, 0)], r[(2, 1)], r[(2, 2)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrackEntry {
    pub image: ImageId,
    pub observation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointIdentity {
    pub id: PointId,
    pub position: Vec3,
    pub color: [u8; 3],
    pub reproj_error: f64,
    pub track: Vec<TrackEntry>,
}

/// Outcome of projecting a world point into a photo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64, depth: f64 },
    BehindCamera,
}

impl Projection {
    pub fn pixel(self) -> Option<(f64, f64)> {
        match self {
            Projection::Pixel { u, v, .. } => Some((u, v)),
            Projection::BehindCamera => None,
        }
    }
}
