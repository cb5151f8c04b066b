//! Polygon masks on photos and their link to global point identities.
//!
//! A mask is drawn (or imported) on one photo; the identities inside it are
//! derived from the reprojection database and can be carried over to any
//! other photo by projecting them there.

mod canny;
mod masks;
mod suggestions;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ImageId, IngestError};

pub use canny::{compute_edge_map, snap_vertex, EdgeMap, EdgeParams, Raster};
pub use masks::{
    divide_mask, extrapolate_mask, mask_identities, merge_masks, Extrapolation, MaskSet,
    PolygonMask, BOUNDS_MARGIN_PX,
};
pub use suggestions::{import_suggestions, Suggestion, DEFAULT_CONFIDENCE_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaskId(pub u32);

impl fmt::Display for MaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mask {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaskOrigin {
    Manual,
    Extrapolated,
    ImportedSuggestion,
}

#[derive(Debug, Error)]
pub enum MaskingError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("cannot merge masks from {0} and {1}")]
    CrossImageMerge(ImageId, ImageId),
    #[error("degenerate cut: {0}")]
    DegenerateCut(String),
    #[error("{0} has no identities to extrapolate")]
    EmptyIdentitySet(MaskId),
    #[error("unknown {0}")]
    UnknownMask(MaskId),
    #[error("{0} was not extrapolated from another mask")]
    NotDerived(MaskId),
    #[error("suggestion document invalid at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("image has no pixels")]
    EmptyImage,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
