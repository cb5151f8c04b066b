use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{MaskId, MaskOrigin, MaskingError};
use crate::geom2d::{self, Vec2};
use crate::ingest::{
    ImageId, PointId, ProjectedPoint, Projection, ReprojectionDatabase, DEFAULT_LOOKUP_RADIUS,
};
use crate::spatial::PixelGrid;
use crate::materials::MeasurementId;

/// Vertices may sit this far outside the photo.
pub const BOUNDS_MARGIN_PX: f64 = 10.0;
const OCCLUSION_RADIUS_PX: f64 = 1.0;
const OCCLUSION_DEPTH_RATIO: f64 = 0.95;

/// A simple polygon on one photo with its object/material assignment and
/// the cached set of point identities it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonMask {
    pub id: MaskId,
    pub image: ImageId,
    vertices: Vec<[f64; 2]>,
    pub origin: MaskOrigin,
    pub category_label: String,
    pub object_tag: String,
    pub material_ref: Option<MeasurementId>,
    pub material_hint: Option<String>,
    /// Source mask of an extrapolated preview.
    pub derived_from: Option<MaskId>,
    identities: BTreeSet<PointId>,
}

impl PolygonMask {
    /// Validates the polygon and derives its identity set.
    pub fn new(
        db: &ReprojectionDatabase,
        id: MaskId,
        image: ImageId,
        vertices: Vec<Vec2>,
        radius: f64,
    ) -> Result<Self, MaskingError> {
        validate_polygon(db, image, &vertices)?;
        let identities = polygon_identities(db, image, &vertices, radius)?;
        Ok(Self {
            id,
            image,
            vertices: vertices.iter().map(|v| [v.x, v.y]).collect(),
            origin: MaskOrigin::Manual,
            category_label: String::new(),
            object_tag: String::new(),
            material_ref: None,
            material_hint: None,
            derived_from: None,
            identities,
        })
    }

    pub fn with_labels(mut self, category: impl Into<String>, object_tag: impl Into<String>) -> Self {
        self.category_label = category.into();
        self.object_tag = object_tag.into();
        self
    }

    pub fn vertices(&self) -> Vec<Vec2> {
        self.vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect()
    }

    pub fn identities(&self) -> &BTreeSet<PointId> {
        &self.identities
    }

    /// Replaces the outline and recomputes the identity set.
    pub fn set_vertices(
        &mut self,
        db: &ReprojectionDatabase,
        vertices: Vec<Vec2>,
        radius: f64,
    ) -> Result<(), MaskingError> {
        validate_polygon(db, self.image, &vertices)?;
        self.identities = polygon_identities(db, self.image, &vertices, radius)?;
        self.vertices = vertices.iter().map(|v| [v.x, v.y]).collect();
        Ok(())
    }

    fn inherit_assignments(&mut self, from: &PolygonMask) {
        self.category_label = from.category_label.clone();
        self.object_tag = from.object_tag.clone();
        self.material_ref = from.material_ref;
        self.material_hint = from.material_hint.clone();
    }
}

fn validate_polygon(
    db: &ReprojectionDatabase,
    image: ImageId,
    vertices: &[Vec2],
) -> Result<(), MaskingError> {
    let photo = db.photo(image)?;
    let cam = db.camera_of(photo);
    if vertices.len() < 3 {
        return Err(MaskingError::InvalidPolygon(format!(
            "needs at least 3 vertices, got {}",
            vertices.len()
        )));
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    for v in vertices {
        if !v.x.is_finite()
            || !v.y.is_finite()
            || v.x < -BOUNDS_MARGIN_PX
            || v.y < -BOUNDS_MARGIN_PX
            || v.x > w + BOUNDS_MARGIN_PX
            || v.y > h + BOUNDS_MARGIN_PX
        {
            return Err(MaskingError::InvalidPolygon(format!(
                "vertex ({}, {}) lies outside {}x{} image bounds",
                v.x, v.y, cam.width, cam.height
            )));
        }
    }
    if !geom2d::is_simple(vertices) {
        return Err(MaskingError::InvalidPolygon(
            "polygon self-intersects or has zero area".into(),
        ));
    }
    Ok(())
}

fn polygon_bbox(poly: &[Vec2], pad: f64) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in poly {
        b.0 = b.0.min(v.x);
        b.1 = b.1.min(v.y);
        b.2 = b.2.max(v.x);
        b.3 = b.3.max(v.y);
    }
    (b.0 - pad, b.1 - pad, b.2 + pad, b.3 + pad)
}

/// Occlusion proxy: another identity projects within 1 px and is more than
/// 5% closer to the camera.
fn occluded(grid: &PixelGrid<ProjectedPoint>, identity: PointId, u: f64, v: f64, depth: f64) -> bool {
    let mut hit = false;
    grid.for_each_within(u, v, OCCLUSION_RADIUS_PX, |q, _| {
        if q.identity != identity && q.depth < OCCLUSION_DEPTH_RATIO * depth {
            hit = true;
        }
    });
    hit
}

fn polygon_identities(
    db: &ReprojectionDatabase,
    image: ImageId,
    poly: &[Vec2],
    radius: f64,
) -> Result<BTreeSet<PointId>, MaskingError> {
    if !(radius >= 0.0) {
        return Err(MaskingError::InvalidParameter(format!(
            "radius must be non-negative, got {radius}"
        )));
    }
    let photo = db.photo(image)?;
    let mut out = BTreeSet::new();
    let mut tracked_here = BTreeSet::new();
    for obs in &photo.observations {
        if let Some(pid) = obs.identity {
            tracked_here.insert(pid);
            if geom2d::distance_to_polygon(poly, Vec2::new(obs.u, obs.v)) <= radius {
                out.insert(pid);
            }
        }
    }
    let grid = db.reprojections(image)?;
    let (u0, v0, u1, v1) = polygon_bbox(poly, radius);
    grid.for_each_in_rect(u0, v0, u1, v1, |u, v, p| {
        if out.contains(&p.identity) || geom2d::distance_to_polygon(poly, Vec2::new(u, v)) > radius {
            return;
        }
        if tracked_here.contains(&p.identity) || !occluded(grid, p.identity, u, v, p.depth) {
            out.insert(p.identity);
        }
    });
    Ok(out)
}

/// Identities covered by `mask`: stored observations of its photo inside the
/// polygon (within `radius` px, boundary inclusive, even-odd rule) plus
/// reprojected identities inside it that pass the occlusion proxy.
pub fn mask_identities(
    db: &ReprojectionDatabase,
    mask: &PolygonMask,
    radius: f64,
) -> Result<BTreeSet<PointId>, MaskingError> {
    polygon_identities(db, mask.image, &mask.vertices(), radius)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extrapolation {
    Mask {
        mask: PolygonMask,
        /// Kept identities with their pixel in the target photo.
        kept: Vec<(PointId, Vec2)>,
    },
    NotVisible {
        kept: usize,
    },
}

/// Projects the identities of `mask` into `target` and wraps the in-front,
/// in-bounds projections that pass the occlusion proxy in their convex hull.
pub fn extrapolate_mask(
    db: &ReprojectionDatabase,
    mask: &PolygonMask,
    target: ImageId,
    new_id: MaskId,
) -> Result<Extrapolation, MaskingError> {
    let photo = db.photo(target)?;
    if mask.identities.is_empty() {
        return Err(MaskingError::EmptyIdentitySet(mask.id));
    }
    let cam = db.camera_of(photo);
    let grid = db.reprojections(target)?;
    let tracked_here: BTreeSet<PointId> = photo.observations.iter().filter_map(|o| o.identity).collect();
    let mut kept = Vec::new();
    for pid in &mask.identities {
        let point = db.point(*pid)?;
        if let Projection::Pixel { u, v, depth } = db.project_into(photo, &point.position) {
            let visible = tracked_here.contains(pid) || !occluded(grid, *pid, u, v, depth);
            if cam.contains_pixel(u, v) && visible {
                kept.push((*pid, Vec2::new(u, v)));
            }
        }
    }
    if kept.len() < 3 {
        return Ok(Extrapolation::NotVisible { kept: kept.len() });
    }
    let pixels: Vec<Vec2> = kept.iter().map(|k| k.1).collect();
    let hull = geom2d::convex_hull(&pixels);
    if hull.len() < 3 {
        return Ok(Extrapolation::NotVisible { kept: kept.len() });
    }
    let mut out = PolygonMask {
        id: new_id,
        image: target,
        vertices: hull.iter().map(|v| [v.x, v.y]).collect(),
        origin: MaskOrigin::Extrapolated,
        category_label: String::new(),
        object_tag: String::new(),
        material_ref: None,
        material_hint: None,
        derived_from: Some(mask.id),
        identities: kept.iter().map(|k| k.0).collect(),
    };
    out.inherit_assignments(mask);
    Ok(Extrapolation::Mask { mask: out, kept })
}

/// Union of two masks on the same photo; the outline becomes the convex
/// hull of both and the assignments of `a` carry over.
pub fn merge_masks(a: &PolygonMask, b: &PolygonMask, new_id: MaskId) -> Result<PolygonMask, MaskingError> {
    if a.image != b.image {
        return Err(MaskingError::CrossImageMerge(a.image, b.image));
    }
    let mut all = a.vertices();
    all.extend(b.vertices());
    let hull = geom2d::convex_hull(&all);
    let mut out = PolygonMask {
        id: new_id,
        image: a.image,
        vertices: hull.iter().map(|v| [v.x, v.y]).collect(),
        origin: MaskOrigin::Manual,
        category_label: String::new(),
        object_tag: String::new(),
        material_ref: None,
        material_hint: None,
        derived_from: None,
        identities: a.identities.union(&b.identities).copied().collect(),
    };
    out.inherit_assignments(a);
    Ok(out)
}

struct Crossing {
    segment: usize,
    t: f64,
    edge: usize,
    s: f64,
    point: Vec2,
}

fn identity_pixel(db: &ReprojectionDatabase, image: ImageId, pid: PointId) -> Option<Vec2> {
    let photo = db.photo(image).ok()?;
    if let Some(o) = photo.observations.iter().find(|o| o.identity == Some(pid)) {
        return Some(Vec2::new(o.u, o.v));
    }
    let point = db.point(pid).ok()?;
    db.project_into(photo, &point.position)
        .pixel()
        .map(|(u, v)| Vec2::new(u, v))
}

/// Splits a mask along a polyline that crosses its outline exactly twice.
/// Identities go to the piece containing their pixel in the mask's photo.
pub fn divide_mask(
    db: &ReprojectionDatabase,
    mask: &PolygonMask,
    cut: &[Vec2],
    ids: (MaskId, MaskId),
) -> Result<(PolygonMask, PolygonMask), MaskingError> {
    let poly = mask.vertices();
    let n = poly.len();
    if cut.len() < 2 {
        return Err(MaskingError::DegenerateCut("cut needs at least two points".into()));
    }
    if geom2d::contains_point(&poly, cut[0]) || geom2d::contains_point(&poly, cut[cut.len() - 1]) {
        return Err(MaskingError::DegenerateCut(
            "cut must start and end outside the mask".into(),
        ));
    }
    let mut crossings = Vec::new();
    for k in 0..cut.len() - 1 {
        for e in 0..n {
            if let Some((t, s)) = geom2d::segment_intersection(cut[k], cut[k + 1], poly[e], poly[(e + 1) % n]) {
                crossings.push(Crossing {
                    segment: k,
                    t,
                    edge: e,
                    s,
                    point: cut[k] + (cut[k + 1] - cut[k]) * t,
                });
            }
        }
    }
    if crossings.len() != 2 {
        return Err(MaskingError::DegenerateCut(format!(
            "cut crosses the outline {} times, expected 2",
            crossings.len()
        )));
    }
    crossings.sort_by(|a, b| a.segment.cmp(&b.segment).then(a.t.total_cmp(&b.t)));
    let (mut x, mut y) = (crossings.remove(0), crossings.remove(0));
    if (x.point - y.point).norm() < 1e-9 {
        return Err(MaskingError::DegenerateCut("cut touches the outline at a single point".into()));
    }
    let mut inner: Vec<Vec2> = cut[x.segment + 1..=y.segment].to_vec();
    if (x.edge as f64 + x.s) > (y.edge as f64 + y.s) {
        std::mem::swap(&mut x, &mut y);
        inner.reverse();
    }

    let mut first = vec![x.point];
    first.extend((x.edge + 1..=y.edge).map(|i| poly[i % n]));
    first.push(y.point);
    first.extend(inner.iter().rev().copied());

    let mut second = vec![y.point];
    let wrap = n - (y.edge - x.edge);
    second.extend((1..=wrap).map(|i| poly[(y.edge + i) % n]));
    second.push(x.point);
    second.extend(inner.iter().copied());

    for piece in [&mut first, &mut second] {
        piece.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
        if piece.len() > 1 && (piece[0] - piece[piece.len() - 1]).norm() < 1e-12 {
            piece.pop();
        }
        if !geom2d::is_simple(piece) {
            return Err(MaskingError::DegenerateCut("cut produces a degenerate piece".into()));
        }
    }

    let mut left = BTreeSet::new();
    let mut right = BTreeSet::new();
    for pid in &mask.identities {
        let inside_first = identity_pixel(db, mask.image, *pid)
            .map(|p| geom2d::contains_point(&first, p))
            .unwrap_or(true);
        if inside_first {
            left.insert(*pid);
        } else {
            right.insert(*pid);
        }
    }
    let build = |id: MaskId, verts: &[Vec2], identities: BTreeSet<PointId>| {
        let mut m = PolygonMask {
            id,
            image: mask.image,
            vertices: verts.iter().map(|v| [v.x, v.y]).collect(),
            origin: MaskOrigin::Manual,
            category_label: String::new(),
            object_tag: String::new(),
            material_ref: None,
            material_hint: None,
            derived_from: None,
            identities,
        };
        m.inherit_assignments(mask);
        m
    };
    Ok((build(ids.0, &first, left), build(ids.1, &second, right)))
}

/// The masks of a project with id allocation and the editing operations
/// of the masking window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    masks: BTreeMap<MaskId, PolygonMask>,
    next_id: u32,
    /// Pixel neighborhood used when deriving identity sets.
    pub radius: f64,
}

impl Default for MaskSet {
    fn default() -> Self {
        Self {
            masks: BTreeMap::new(),
            next_id: 1,
            radius: DEFAULT_LOOKUP_RADIUS,
        }
    }
}

impl MaskSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PolygonMask> {
        self.masks.values()
    }

    pub fn get(&self, id: MaskId) -> Result<&PolygonMask, MaskingError> {
        self.masks.get(&id).ok_or(MaskingError::UnknownMask(id))
    }

    pub fn get_mut(&mut self, id: MaskId) -> Result<&mut PolygonMask, MaskingError> {
        self.masks.get_mut(&id).ok_or(MaskingError::UnknownMask(id))
    }

    fn allocate(&mut self) -> MaskId {
        let id = MaskId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Adds a mask built elsewhere under a freshly allocated id.
    pub fn insert(&mut self, mut mask: PolygonMask) -> MaskId {
        let id = self.allocate();
        mask.id = id;
        self.masks.insert(id, mask);
        id
    }

    pub fn create(
        &mut self,
        db: &ReprojectionDatabase,
        image: ImageId,
        vertices: Vec<Vec2>,
        category: &str,
        object_tag: &str,
    ) -> Result<MaskId, MaskingError> {
        let mask = PolygonMask::new(db, MaskId(0), image, vertices, self.radius)?
            .with_labels(category, object_tag);
        Ok(self.insert(mask))
    }

    /// Imports a suggestion document; nothing is added when any entry is invalid.
    pub fn import(
        &mut self,
        db: &ReprojectionDatabase,
        document: &str,
        threshold: f64,
    ) -> Result<Vec<MaskId>, MaskingError> {
        let masks = super::import_suggestions(db, document, threshold, self.radius)?;
        Ok(masks.into_iter().map(|m| self.insert(m)).collect())
    }

    pub fn remove(&mut self, id: MaskId) -> Result<PolygonMask, MaskingError> {
        self.masks.remove(&id).ok_or(MaskingError::UnknownMask(id))
    }

    /// Merges two masks, replacing both by the result.
    pub fn merge(&mut self, a: MaskId, b: MaskId) -> Result<MaskId, MaskingError> {
        let merged = merge_masks(self.get(a)?, self.get(b)?, MaskId(0))?;
        self.masks.remove(&a);
        self.masks.remove(&b);
        Ok(self.insert(merged))
    }

    /// Divides a mask, replacing it by the two pieces.
    pub fn divide(
        &mut self,
        db: &ReprojectionDatabase,
        id: MaskId,
        cut: &[Vec2],
    ) -> Result<(MaskId, MaskId), MaskingError> {
        let (a, b) = divide_mask(db, self.get(id)?, cut, (MaskId(0), MaskId(0)))?;
        self.masks.remove(&id);
        Ok((self.insert(a), self.insert(b)))
    }

    /// Extrapolates a mask into another photo; `None` when it is not visible there.
    pub fn extrapolate(
        &mut self,
        db: &ReprojectionDatabase,
        id: MaskId,
        target: ImageId,
    ) -> Result<Option<MaskId>, MaskingError> {
        match extrapolate_mask(db, self.get(id)?, target, MaskId(0))? {
            Extrapolation::Mask { mask, .. } => Ok(Some(self.insert(mask))),
            Extrapolation::NotVisible { .. } => Ok(None),
        }
    }

    /// Rebuilds an extrapolated mask from the current state of its source.
    /// Extrapolated masks are otherwise frozen when their source changes.
    pub fn regenerate(&mut self, db: &ReprojectionDatabase, id: MaskId) -> Result<bool, MaskingError> {
        let current = self.get(id)?;
        let source_id = current.derived_from.ok_or(MaskingError::NotDerived(id))?;
        let target = current.image;
        match extrapolate_mask(db, self.get(source_id)?, target, id)? {
            Extrapolation::Mask { mask, .. } => {
                self.masks.insert(id, mask);
                Ok(true)
            }
            Extrapolation::NotVisible { .. } => {
                self.masks.remove(&id);
                Ok(false)
            }
        }
    }

    pub fn assign_material(&mut self, id: MaskId, measurement: Option<MeasurementId>) -> Result<(), MaskingError> {
        self.get_mut(id)?.material_ref = measurement;
        Ok(())
    }

    /// Masks covering each identity, in mask id order.
    pub fn masks_by_identity(&self) -> BTreeMap<PointId, Vec<MaskId>> {
        let mut out: BTreeMap<PointId, Vec<MaskId>> = BTreeMap::new();
        for mask in self.masks.values() {
            for pid in &mask.identities {
                out.entry(*pid).or_default().push(mask.id);
            }
        }
        out
    }
}
