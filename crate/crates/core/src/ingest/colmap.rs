//! COLMAP text export (`cameras.txt`, `images.txt`, `points3D.txt`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion};

use super::{
    CameraId, CameraKind, CameraModel, ImageId, IngestError, Observation, PhotoPose, PointId,
    PointIdentity, ReprojectionDatabase, TrackEntry,
};
use crate::Vec3;

const CAMERAS: &str = "cameras.txt";
const IMAGES: &str = "images.txt";
const POINTS: &str = "points3D.txt";

/// The three text files of a COLMAP sparse model.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SfmText {
    pub cameras: String,
    pub images: String,
    pub points: String,
}

struct Fields<'a> {
    file: &'static str,
    line: usize,
    tokens: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn new(file: &'static str, line: usize, text: &'a str) -> Self {
        Self {
            file,
            line,
            tokens: text.split_whitespace(),
        }
    }

    fn error(&self, message: impl Into<String>) -> IngestError {
        IngestError::Malformed {
            file: self.file.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next<T: FromStr>(&mut self, what: &str) -> Result<T, IngestError> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| self.error(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| self.error(format!("cannot parse {what} from `{tok}`")))
    }

    fn rest(&mut self) -> Vec<&'a str> {
        self.tokens.by_ref().collect()
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
}

fn parse_cameras(text: &str) -> Result<BTreeMap<CameraId, CameraModel>, IngestError> {
    let mut cameras = BTreeMap::new();
    for (line, raw) in content_lines(text) {
        if raw.trim().is_empty() {
            continue;
        }
        let mut f = Fields::new(CAMERAS, line, raw);
        let id = CameraId(f.next("CAMERA_ID")?);
        let model: String = f.next("MODEL")?;
        let width: u32 = f.next("WIDTH")?;
        let height: u32 = f.next("HEIGHT")?;
        let cam = match model.as_str() {
            "PINHOLE" => {
                let fx = f.next("fx")?;
                let fy = f.next("fy")?;
                let cx = f.next("cx")?;
                let cy = f.next("cy")?;
                CameraModel::pinhole(id, width, height, fx, fy, cx, cy)
            }
            "SIMPLE_RADIAL" => {
                let focal: f64 = f.next("f")?;
                CameraModel {
                    id,
                    kind: CameraKind::SimpleRadial,
                    width,
                    height,
                    fx: focal,
                    fy: focal,
                    cx: f.next("cx")?,
                    cy: f.next("cy")?,
                    k: f.next("k")?,
                }
            }
            other => {
                return Err(IngestError::UnsupportedModel {
                    file: CAMERAS.to_string(),
                    line,
                    model: other.to_string(),
                })
            }
        };
        if !f.rest().is_empty() {
            return Err(f.error("unexpected trailing camera parameters"));
        }
        cam.validate().map_err(|e| f.error(e.to_string()))?;
        if cameras.insert(id, cam).is_some() {
            return Err(f.error(format!("duplicate {id}")));
        }
    }
    Ok(cameras)
}

fn parse_images(text: &str) -> Result<BTreeMap<ImageId, PhotoPose>, IngestError> {
    let mut photos = BTreeMap::new();
    let mut lines = content_lines(text);
    while let Some((line, raw)) = lines.next() {
        if raw.trim().is_empty() {
            continue;
        }
        let mut f = Fields::new(IMAGES, line, raw);
        let id = ImageId(f.next("IMAGE_ID")?);
        let qw: f64 = f.next("QW")?;
        let qx: f64 = f.next("QX")?;
        let qy: f64 = f.next("QY")?;
        let qz: f64 = f.next("QZ")?;
        let tx: f64 = f.next("TX")?;
        let ty: f64 = f.next("TY")?;
        let tz: f64 = f.next("TZ")?;
        let camera = CameraId(f.next("CAMERA_ID")?);
        // names may contain spaces
        let name = f.rest().join(" ");
        if name.is_empty() {
            return Err(f.error("missing NAME"));
        }
        let q = Quaternion::new(qw, qx, qy, qz);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(f.error(format!("rotation quaternion has norm {norm}")));
        }
        let rotation = UnitQuaternion::new_normalize(q);

        let mut observations = Vec::new();
        if let Some((pline, praw)) = lines.next() {
            let mut g = Fields::new(IMAGES, pline, praw);
            let tokens = g.rest();
            if tokens.len() % 3 != 0 {
                return Err(g.error("POINTS2D line must hold X Y POINT3D_ID triplets"));
            }
            for chunk in tokens.chunks(3) {
                let parse_f = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| g.error(format!("cannot parse coordinate `{s}`")))
                };
                let u = parse_f(chunk[0])?;
                let v = parse_f(chunk[1])?;
                let pid: i64 = chunk[2]
                    .parse()
                    .map_err(|_| g.error(format!("cannot parse POINT3D_ID `{}`", chunk[2])))?;
                let identity = match pid {
                    -1 => None,
                    p if p >= 0 => Some(PointId(p as u64)),
                    p => return Err(g.error(format!("invalid POINT3D_ID {p}"))),
                };
                observations.push(Observation { u, v, identity });
            }
        }
        let pose = PhotoPose {
            id,
            rotation,
            translation: Vec3::new(tx, ty, tz),
            camera,
            name,
            observations,
        };
        if photos.insert(id, pose).is_some() {
            return Err(f.error(format!("duplicate {id}")));
        }
    }
    Ok(photos)
}

fn parse_points(text: &str) -> Result<BTreeMap<PointId, PointIdentity>, IngestError> {
    let mut points = BTreeMap::new();
    for (line, raw) in content_lines(text) {
        if raw.trim().is_empty() {
            continue;
        }
        let mut f = Fields::new(POINTS, line, raw);
        let id = PointId(f.next("POINT3D_ID")?);
        let position = Vec3::new(f.next("X")?, f.next("Y")?, f.next("Z")?);
        let color = [f.next("R")?, f.next("G")?, f.next("B")?];
        let reproj_error: f64 = f.next("ERROR")?;
        let rest = f.rest();
        if rest.len() % 2 != 0 {
            return Err(f.error("track must hold IMAGE_ID POINT2D_IDX pairs"));
        }
        let mut track = Vec::with_capacity(rest.len() / 2);
        for pair in rest.chunks(2) {
            let image = pair[0]
                .parse()
                .map_err(|_| f.error(format!("cannot parse IMAGE_ID `{}`", pair[0])))?;
            let observation = pair[1]
                .parse()
                .map_err(|_| f.error(format!("cannot parse POINT2D_IDX `{}`", pair[1])))?;
            track.push(TrackEntry {
                image: ImageId(image),
                observation,
            });
        }
        let point = PointIdentity {
            id,
            position,
            color,
            reproj_error,
            track,
        };
        if points.insert(id, point).is_some() {
            return Err(f.error(format!("duplicate {id}")));
        }
    }
    Ok(points)
}

/// Parses the three text files and builds a consistent database.
pub fn parse_sfm_text(
    cameras: &str,
    images: &str,
    points: &str,
) -> Result<ReprojectionDatabase, IngestError> {
    let cameras = parse_cameras(cameras)?;
    let photos = parse_images(images)?;
    let points = parse_points(points)?;
    ReprojectionDatabase::new(cameras, photos, points)
}

/// Serializes a database back into COLMAP text form. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_sfm_text(db: &ReprojectionDatabase) -> SfmText {
    let mut cameras = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    for cam in db.cameras().values() {
        match cam.kind {
            CameraKind::Pinhole => writeln!(
                cameras,
                "{} PINHOLE {} {} {} {} {} {}",
                cam.id.0, cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy
            ),
            CameraKind::SimpleRadial => writeln!(
                cameras,
                "{} SIMPLE_RADIAL {} {} {} {} {} {}",
                cam.id.0, cam.width, cam.height, cam.fx, cam.cx, cam.cy, cam.k
            ),
        }
        .expect("writing to a String");
    }

    let mut images = String::from("# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for photo in db.photos().values() {
        let q = photo.rotation.quaternion();
        let t = photo.translation;
        writeln!(
            images,
            "{} {} {} {} {} {} {} {} {} {}",
            photo.id.0, q.w, q.i, q.j, q.k, t.x, t.y, t.z, photo.camera.0, photo.name
        )
        .expect("writing to a String");
        let obs: Vec<String> = photo
            .observations
            .iter()
            .map(|o| {
                let pid = o.identity.map(|p| p.0 as i64).unwrap_or(-1);
                format!("{} {} {}", o.u, o.v, pid)
            })
            .collect();
        images.push_str(&obs.join(" "));
        images.push('\n');
    }

    let mut points = String::from("# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    for p in db.points().values() {
        write!(
            points,
            "{} {} {} {} {} {} {} {}",
            p.id.0, p.position.x, p.position.y, p.position.z, p.color[0], p.color[1], p.color[2], p.reproj_error
        )
        .expect("writing to a String");
        for t in &p.track {
            write!(points, " {} {}", t.image.0, t.observation).expect("writing to a String");
        }
        points.push('\n');
    }
    SfmText {
        cameras,
        images,
        points,
    }
}
