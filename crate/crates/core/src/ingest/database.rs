use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use super::{
    CameraId, CameraModel, ImageId, IngestError, PhotoPose, PointId, PointIdentity, Projection,
};
use crate::spatial::{KdTree, PixelGrid};
use crate::Vec3;

/// Bucket size of the per-photo pixel grids.
const GRID_CELL_PX: f64 = 16.0;

/// Neighborhood used when relating reprojected pixels to identities.
pub const DEFAULT_LOOKUP_RADIUS: f64 = 2.0;

/// A point identity projected into a given photo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub identity: PointId,
    pub depth: f64,
}

/// Cameras, photos and point identities with pixel/identity indexes.
///
/// Immutable once built except through [`ReprojectionDatabase::scale_by_marker`]
/// and [`ReprojectionDatabase::scale_by`], which take `&mut self`.
#[derive(Debug, Clone)]
pub struct ReprojectionDatabase {
    cameras: BTreeMap<CameraId, CameraModel>,
    photos: BTreeMap<ImageId, PhotoPose>,
    points: BTreeMap<PointId, PointIdentity>,
    scale_factor: f64,
    observation_grids: HashMap<ImageId, PixelGrid<PointId>>,
    // lazily built; reset whenever positions change
    reprojection_grids: HashMap<ImageId, OnceLock<PixelGrid<ProjectedPoint>>>,
    point_ids: Vec<PointId>,
    point_tree: KdTree,
}

impl ReprojectionDatabase {
    /// Validates cross references and builds the spatial indexes.
    pub fn new(
        cameras: BTreeMap<CameraId, CameraModel>,
        photos: BTreeMap<ImageId, PhotoPose>,
        points: BTreeMap<PointId, PointIdentity>,
    ) -> Result<Self, IngestError> {
        for cam in cameras.values() {
            cam.validate()?;
        }
        for photo in photos.values() {
            if !cameras.contains_key(&photo.camera) {
                return Err(IngestError::Dangling(format!(
                    "{} references missing {}",
                    photo.id, photo.camera
                )));
            }
            let norm = photo.rotation.quaternion().norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(IngestError::InvalidArgument(format!(
                    "{} rotation is not a unit quaternion (norm {norm})",
                    photo.id
                )));
            }
            if !photo.center().iter().all(|c| c.is_finite()) {
                return Err(IngestError::InvalidArgument(format!(
                    "{} has a non-finite camera center",
                    photo.id
                )));
            }
            for (idx, obs) in photo.observations.iter().enumerate() {
                if let Some(pid) = obs.identity {
                    let Some(point) = points.get(&pid) else {
                        return Err(IngestError::Dangling(format!(
                            "{} observation {idx} references missing {pid}",
                            photo.id
                        )));
                    };
                    let listed = point
                        .track
                        .iter()
                        .any(|t| t.image == photo.id && t.observation == idx);
                    if !listed {
                        return Err(IngestError::Dangling(format!(
                            "{} observation {idx} is not part of the track of {pid}",
                            photo.id
                        )));
                    }
                }
            }
        }
        for point in points.values() {
            if !point.position.iter().all(|c| c.is_finite()) {
                return Err(IngestError::InvalidArgument(format!(
                    "{} has a non-finite position",
                    point.id
                )));
            }
            for entry in &point.track {
                let Some(photo) = photos.get(&entry.image) else {
                    return Err(IngestError::Dangling(format!(
                        "track of {} references missing {}",
                        point.id, entry.image
                    )));
                };
                match photo.observations.get(entry.observation) {
                    Some(obs) if obs.identity == Some(point.id) => {}
                    Some(_) => {
                        return Err(IngestError::Dangling(format!(
                            "track of {} names observation {} of {} which belongs elsewhere",
                            point.id, entry.observation, entry.image
                        )))
                    }
                    None => {
                        return Err(IngestError::Dangling(format!(
                            "track of {} names missing observation {} of {}",
                            point.id, entry.observation, entry.image
                        )))
                    }
                }
            }
        }

        let mut db = Self {
            cameras,
            photos,
            points,
            scale_factor: 1.0,
            observation_grids: HashMap::new(),
            reprojection_grids: HashMap::new(),
            point_ids: Vec::new(),
            point_tree: KdTree::new(Vec::new()),
        };
        db.rebuild_indexes();
        Ok(db)
    }

    fn rebuild_indexes(&mut self) {
        self.observation_grids.clear();
        self.reprojection_grids.clear();
        for photo in self.photos.values() {
            let mut grid = PixelGrid::new(GRID_CELL_PX);
            for obs in &photo.observations {
                if let Some(pid) = obs.identity {
                    grid.insert(obs.u, obs.v, pid);
                }
            }
            self.observation_grids.insert(photo.id, grid);
            self.reprojection_grids.insert(photo.id, OnceLock::new());
        }
        self.point_ids = self.points.keys().copied().collect();
        self.point_tree = KdTree::new(self.points.values().map(|p| p.position).collect());
    }

    pub fn cameras(&self) -> &BTreeMap<CameraId, CameraModel> {
        &self.cameras
    }

    pub fn photos(&self) -> &BTreeMap<ImageId, PhotoPose> {
        &self.photos
    }

    pub fn points(&self) -> &BTreeMap<PointId, PointIdentity> {
        &self.points
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    pub fn photo(&self, id: ImageId) -> Result<&PhotoPose, IngestError> {
        self.photos.get(&id).ok_or(IngestError::UnknownImage(id))
    }

    pub fn point(&self, id: PointId) -> Result<&PointIdentity, IngestError> {
        self.points.get(&id).ok_or(IngestError::UnknownPoint(id))
    }

    /// Camera of a registered photo; existence is checked at construction.
    pub fn camera_of(&self, photo: &PhotoPose) -> &CameraModel {
        &self.cameras[&photo.camera]
    }

    /// Projects a world point into photo `image`.
    pub fn project(&self, image: ImageId, point: &Vec3) -> Result<Projection, IngestError> {
        let photo = self.photo(image)?;
        Ok(self.project_into(photo, point))
    }

    pub fn project_into(&self, photo: &PhotoPose, point: &Vec3) -> Projection {
        let cam = photo.to_camera_frame(point);
        match self.camera_of(photo).project_camera_frame(&cam) {
            Some((u, v)) => Projection::Pixel { u, v, depth: cam.z },
            None => Projection::BehindCamera,
        }
    }

    /// Pixel grid over every in-front identity projected into `image`.
    pub fn reprojections(&self, image: ImageId) -> Result<&PixelGrid<ProjectedPoint>, IngestError> {
        let photo = self.photo(image)?;
        let cell = self
            .reprojection_grids
            .get(&image)
            .ok_or(IngestError::UnknownImage(image))?;
        Ok(cell.get_or_init(|| {
            let mut grid = PixelGrid::new(GRID_CELL_PX);
            for point in self.points.values() {
                if let Projection::Pixel { u, v, depth } = self.project_into(photo, &point.position) {
                    grid.insert(
                        u,
                        v,
                        ProjectedPoint {
                            identity: point.id,
                            depth,
                        },
                    );
                }
            }
            grid
        }))
    }

    /// Identities with a stored observation or a reprojection within
    /// `radius` px of `(u, v)` in `image`, nearest first, ties by identity.
    pub fn lookup_identities_near_pixel(
        &self,
        image: ImageId,
        u: f64,
        v: f64,
        radius: f64,
    ) -> Result<Vec<PointId>, IngestError> {
        Ok(self
            .lookup_with_distance(image, u, v, radius)?
            .into_iter()
            .map(|(id, _)| id)
            .collect())
    }

    pub fn lookup_with_distance(
        &self,
        image: ImageId,
        u: f64,
        v: f64,
        radius: f64,
    ) -> Result<Vec<(PointId, f64)>, IngestError> {
        if !(radius >= 0.0) {
            return Err(IngestError::InvalidArgument(format!(
                "lookup radius must be non-negative, got {radius}"
            )));
        }
        let observations = self
            .observation_grids
            .get(&image)
            .ok_or(IngestError::UnknownImage(image))?;
        let mut best: HashMap<PointId, f64> = HashMap::new();
        let mut keep = |id: PointId, d: f64| {
            best.entry(id)
                .and_modify(|cur| *cur = cur.min(d))
                .or_insert(d);
        };
        observations.for_each_within(u, v, radius, |id, d| keep(*id, d));
        self.reprojections(image)?
            .for_each_within(u, v, radius, |p, d| keep(p.identity, d));
        let mut out: Vec<(PointId, f64)> = best.into_iter().collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(out)
    }

    /// Nearest identity to a world position, ties by lower identity.
    pub fn nearest_identity(&self, position: &Vec3) -> Option<(PointId, f64)> {
        self.point_tree
            .nearest(position)
            .map(|(i, d)| (self.point_ids[i], d))
    }

    /// Identities within `radius` meters of a world position.
    pub fn identities_within(&self, position: &Vec3, radius: f64) -> Vec<(PointId, f64)> {
        self.point_tree
            .within_radius(position, radius)
            .into_iter()
            .map(|(i, d)| (self.point_ids[i], d))
            .collect()
    }

    /// Rescales the model so the two marker identities lie `true_distance`
    /// apart. Returns the applied factor.
    pub fn scale_by_marker(
        &mut self,
        a: PointId,
        b: PointId,
        true_distance: f64,
    ) -> Result<f64, IngestError> {
        let pa = self.point(a)?.position;
        let pb = self.point(b)?.position;
        if !(true_distance > 0.0) || !true_distance.is_finite() {
            return Err(IngestError::InvalidArgument(format!(
                "true distance must be positive, got {true_distance}"
            )));
        }
        let current = (pa - pb).norm();
        if current == 0.0 {
            return Err(IngestError::CoincidentMarkers(a, b));
        }
        let s = true_distance / current;
        self.scale_by(s)?;
        Ok(s)
    }

    /// Multiplies every point position and photo translation by `s`.
    pub fn scale_by(&mut self, s: f64) -> Result<(), IngestError> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(IngestError::InvalidArgument(format!(
                "scale factor must be positive and finite, got {s}"
            )));
        }
        if s == 1.0 {
            return Ok(());
        }
        for point in self.points.values_mut() {
            point.position *= s;
        }
        for photo in self.photos.values_mut() {
            photo.translation *= s;
        }
        self.scale_factor *= s;
        self.rebuild_indexes();
        Ok(())
    }

    /// Moves the world origin: points shift by `offset` and every camera
    /// keeps its view, so all projections are unchanged.
    pub fn translate(&mut self, offset: Vec3) {
        for point in self.points.values_mut() {
            point.position += offset;
        }
        for photo in self.photos.values_mut() {
            photo.translation -= photo.rotation * offset;
        }
        self.rebuild_indexes();
    }

    /// Identities an image observes through tracked observations.
    pub fn observed_identities(&self, image: ImageId) -> Result<BTreeSet<PointId>, IngestError> {
        Ok(self
            .photo(image)?
            .observations
            .iter()
            .filter_map(|o| o.identity)
            .collect())
    }

    /// Greedy overlap reduction: keep picking the photo that observes the
    /// most not-yet-covered identities (ties to the lower image id) until
    /// `coverage_fraction` of all tracked identities is covered.
    pub fn reduce_photo_set(&self, coverage_fraction: f64) -> Result<Vec<ImageId>, IngestError> {
        if !(0.0..=1.0).contains(&coverage_fraction) {
            return Err(IngestError::InvalidArgument(format!(
                "coverage fraction must lie in [0, 1], got {coverage_fraction}"
            )));
        }
        let tracked: BTreeSet<PointId> = self
            .points
            .values()
            .filter(|p| !p.track.is_empty())
            .map(|p| p.id)
            .collect();
        let target = ((coverage_fraction * tracked.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let views: Vec<(ImageId, BTreeSet<PointId>)> = self
            .photos
            .keys()
            .map(|&id| {
                let seen = self
                    .observed_identities(id)
                    .expect("photo exists")
                    .into_iter()
                    .filter(|p| tracked.contains(p))
                    .collect();
                (id, seen)
            })
            .collect();

        let mut covered: BTreeSet<PointId> = BTreeSet::new();
        let mut picked: Vec<ImageId> = Vec::new();
        while covered.len() < target {
            let mut best: Option<(usize, ImageId)> = None;
            for (id, seen) in &views {
                if picked.contains(id) {
                    continue;
                }
                let gain = seen.difference(&covered).count();
                // strict comparison keeps the lowest id on ties
                if gain > 0 && best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, *id));
                }
            }
            let Some((_, id)) = best else { break };
            picked.push(id);
            let seen = &views.iter().find(|(v, _)| *v == id).expect("picked view").1;
            covered.extend(seen.iter().copied());
        }
        Ok(picked)
    }
}
