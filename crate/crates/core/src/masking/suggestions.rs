use serde::{Deserialize, Serialize};

use super::{MaskId, MaskOrigin, MaskingError, PolygonMask};
use crate::geom2d::Vec2;
use crate::ingest::{ImageId, ReprojectionDatabase};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

/// One entry of an external segmentation suggestion document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub image_id: ImageId,
    pub polygon: Vec<[f64; 2]>,
    pub category_label: String,
    #[serde(default)]
    pub material_hint: Option<String>,
    pub confidence: f64,
}

fn schema_error(path: String, message: impl Into<String>) -> MaskingError {
    MaskingError::Schema {
        path,
        message: message.into(),
    }
}

/// Parses a suggestion document and turns every entry with
/// `confidence >= threshold` into an editable mask. Returned masks carry
/// placeholder ids; the caller allocates real ones.
pub fn import_suggestions(
    db: &ReprojectionDatabase,
    document: &str,
    threshold: f64,
    radius: f64,
) -> Result<Vec<PolygonMask>, MaskingError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MaskingError::InvalidParameter(format!(
            "confidence threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let de = &mut serde_json::Deserializer::from_str(document);
    let entries: Vec<Suggestion> = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema_error(path, e.into_inner().to_string())
    })?;
    let mut out = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        if !(0.0..=1.0).contains(&entry.confidence) {
            return Err(schema_error(
                format!("[{i}].confidence"),
                format!("{} is outside [0, 1]", entry.confidence),
            ));
        }
        if db.photo(entry.image_id).is_err() {
            return Err(schema_error(
                format!("[{i}].image_id"),
                format!("unknown image {}", entry.image_id),
            ));
        }
        if entry.confidence < threshold {
            continue;
        }
        let vertices: Vec<Vec2> = entry.polygon.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        let mut mask = PolygonMask::new(db, MaskId(0), entry.image_id, vertices, radius).map_err(|e| match e {
            MaskingError::InvalidPolygon(msg) => schema_error(format!("[{i}].polygon"), msg),
            other => other,
        })?;
        mask.origin = MaskOrigin::ImportedSuggestion;
        mask.category_label = entry.category_label.clone();
        mask.object_tag = format!("{}-{}", entry.category_label, i + 1);
        mask.material_hint = entry.material_hint.clone();
        out.push(mask);
    }
    Ok(out)
}
