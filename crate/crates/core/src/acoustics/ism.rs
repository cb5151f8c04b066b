use serde::{Deserialize, Serialize};

use super::filters::OctaveFilterBank;
use super::{AcousticsError, ImpulseResponse, RenderSettings, SimulationScene};
use crate::materials::{band_lookup, AbsorptionSpectrum};
use crate::Vec3;

/// Largest polyhedral reflection order accepted without an override.
pub const DEFAULT_ORDER_GUARD: usize = 3;

const FRACTIONAL_TAPS: i64 = 8;

/// Axis-aligned box `[0, dims]`. Walls are ordered -x, +x, -y, +y, -z, +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShoeboxRoom {
    pub dims: Vec3,
    pub walls: [AbsorptionSpectrum; 6],
}

impl ShoeboxRoom {
    pub fn new(dims: Vec3, walls: [AbsorptionSpectrum; 6]) -> Result<Self, AcousticsError> {
        if !(dims.x > 0.0 && dims.y > 0.0 && dims.z > 0.0) {
            return Err(AcousticsError::InvalidParameter(format!("box dimensions must be positive, got {dims:?}")));
        }
        Ok(Self { dims, walls })
    }

    pub fn uniform(dims: Vec3, spectrum: AbsorptionSpectrum) -> Result<Self, AcousticsError> {
        Self::new(dims, std::array::from_fn(|_| spectrum.clone()))
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    /// Wall areas in wall order.
    pub fn wall_areas(&self) -> [f64; 6] {
        let d = self.dims;
        [d.y * d.z, d.y * d.z, d.x * d.z, d.x * d.z, d.x * d.y, d.x * d.y]
    }

    fn strictly_contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] > 0.0 && p[i] < self.dims[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSource {
    pub position: Vec3,
    pub order: usize,
    /// Reflecting walls (shoebox) or faces (polyhedral), source side first.
    pub reflections: Vec<usize>,
    /// Product of pressure reflection factors per band.
    pub reflection_gain: Vec<f64>,
    /// Path length to the receiver.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsmResult {
    pub sources: Vec<ImageSource>,
    pub ir: ImpulseResponse,
}

/// Per-band pressure amplitude `sqrt(P) prod(beta) sqrt(air) / (4 pi d)`.
fn pulse_gains(source: &ImageSource, settings: &RenderSettings, power: f64) -> Vec<f64> {
    let air = settings.air_gain(source.distance);
    source
        .reflection_gain
        .iter()
        .zip(air)
        .map(|(g, a)| power.sqrt() * g * a.sqrt() / (4.0 * std::f64::consts::PI * source.distance))
        .collect()
}

/// Places band pulses and renders them through the octave bank. Pulses are
/// `(delay seconds, per-band amplitude)`.
pub(crate) fn render_pulses(pulses: &[(f64, Vec<f64>)], settings: &RenderSettings, bin_width: f64) -> ImpulseResponse {
    let bank = OctaveFilterBank::new(&settings.bands, settings.sample_rate);
    let fs = settings.sample_rate as f64;
    let nb = settings.bands.len();
    let last = pulses.iter().map(|p| p.0).fold(0.0f64, f64::max);
    let len = if pulses.is_empty() {
        0
    } else {
        (last * fs).ceil() as usize + FRACTIONAL_TAPS as usize + bank.taps() / 2 + 1
    };
    let bins = ((len as f64 / fs) / bin_width).ceil() as usize;
    let mut trains = vec![vec![0.0; len]; nb];
    let mut band_energies = vec![vec![0.0; bins]; nb];
    for (delay, gains) in pulses {
        let x = delay * fs;
        if settings.fractional_delay {
            let base = x.floor() as i64;
            for n in base - FRACTIONAL_TAPS / 2 + 1..=base + FRACTIONAL_TAPS / 2 {
                if n < 0 || n as usize >= len {
                    continue;
                }
                let u = n as f64 - x;
                let sinc = if u == 0.0 { 1.0 } else { (std::f64::consts::PI * u).sin() / (std::f64::consts::PI * u) };
                let w = 0.5 * (1.0 + (std::f64::consts::PI * u / (FRACTIONAL_TAPS as f64 / 2.0)).cos());
                for b in 0..nb {
                    trains[b][n as usize] += gains[b] * sinc * w;
                }
            }
        } else {
            let n = x.round() as usize;
            for b in 0..nb {
                trains[b][n] += gains[b];
            }
        }
        let k = ((delay / bin_width) as usize).min(bins.saturating_sub(1));
        for b in 0..nb {
            band_energies[b][k] += gains[b] * gains[b];
        }
    }
    ImpulseResponse {
        sample_rate: settings.sample_rate,
        samples: bank.synthesize(&trains),
        bands: settings.bands.clone(),
        bin_width,
        band_energies,
    }
}

pub(crate) fn render_sources(sources: &[ImageSource], settings: &RenderSettings, power: f64) -> ImpulseResponse {
    let pulses: Vec<(f64, Vec<f64>)> = sources
        .iter()
        .map(|s| (s.distance / settings.speed_of_sound, pulse_gains(s, settings, power)))
        .collect();
    render_pulses(&pulses, settings, settings.histogram_bin)
}

/// Allen-Berkeley image lattice up to `max_order` reflections with
/// `beta = sqrt(1 - alpha)` per wall hit.
pub fn ism_shoebox(
    room: &ShoeboxRoom,
    source: Vec3,
    receiver: Vec3,
    max_order: usize,
    settings: &RenderSettings,
) -> Result<IsmResult, AcousticsError> {
    settings.validate()?;
    if !room.strictly_contains(&source) {
        return Err(AcousticsError::OutsideRoom("source"));
    }
    if !room.strictly_contains(&receiver) {
        return Err(AcousticsError::OutsideRoom("receiver"));
    }
    if (source - receiver).norm() == 0.0 {
        return Err(AcousticsError::ZeroDistance);
    }
    let betas: Vec<Vec<f64>> = room
        .walls
        .iter()
        .map(|w| settings.bands.iter().map(|b| (1.0 - band_lookup(w, *b)).sqrt()).collect())
        .collect();
    let n = max_order as i64;
    // per axis: (coordinate, order, hits on low wall, hits on high wall)
    let axis = |i: usize| -> Vec<(f64, i64, i64, i64)> {
        let mut v = Vec::new();
        for m in -n..=n {
            for q in 0..=1i64 {
                let order = (2 * m - q).abs();
                if order <= n {
                    let c = (1 - 2 * q) as f64 * source[i] + 2.0 * m as f64 * room.dims[i];
                    v.push((c, order, (m - q).abs(), m.abs()));
                }
            }
        }
        v.sort_by_key(|e| (e.1, e.2, e.3));
        v
    };
    let (ax, ay, az) = (axis(0), axis(1), axis(2));
    let mut sources = Vec::new();
    for x in &ax {
        for y in ay.iter().filter(|y| x.1 + y.1 <= n) {
            for z in az.iter().filter(|z| x.1 + y.1 + z.1 <= n) {
                let position = Vec3::new(x.0, y.0, z.0);
                let hits = [x.2, x.3, y.2, y.3, z.2, z.3];
                let reflection_gain = (0..settings.bands.len())
                    .map(|b| (0..6).map(|w| betas[w][b].powi(hits[w] as i32)).product())
                    .collect();
                let reflections = hits.iter().enumerate().flat_map(|(w, h)| std::iter::repeat_n(w, *h as usize)).collect();
                sources.push(ImageSource {
                    position,
                    order: (x.1 + y.1 + z.1) as usize,
                    reflections,
                    reflection_gain,
                    distance: (position - receiver).norm(),
                });
            }
        }
    }
    let ir = render_sources(&sources, settings, 1.0);
    Ok(IsmResult { sources, ir })
}

/// Image sources over the mesh's planar faces. A candidate is kept when the
/// path traced back from the receiver crosses each generating face inside
/// one of its triangles and no segment is blocked.
pub fn ism_polyhedral(scene: &SimulationScene, max_order: usize, allow_beyond_guard: bool) -> Result<IsmResult, AcousticsError> {
    if max_order > DEFAULT_ORDER_GUARD && !allow_beyond_guard {
        return Err(AcousticsError::OrderGuard {
            order: max_order,
            guard: DEFAULT_ORDER_GUARD,
        });
    }
    let sources = polyhedral_sources(scene, max_order);
    let ir = render_sources(&sources, &scene.config.render, scene.config.source_power);
    Ok(IsmResult { sources, ir })
}

pub(crate) fn polyhedral_sources(scene: &SimulationScene, max_order: usize) -> Vec<ImageSource> {
    let q = &scene.query;
    let src = scene.config.source;
    let mut out = Vec::new();
    // depth-first over face sequences; stack holds (images along the chain, faces)
    let mut stack: Vec<(Vec<Vec3>, Vec<usize>)> = vec![(vec![src], Vec::new())];
    while let Some((images, faces)) = stack.pop() {
        if let Some(s) = validate_chain(scene, &images, &faces) {
            out.push(s);
        }
        if faces.len() == max_order {
            continue;
        }
        let last = *images.last().expect("chain starts at the source");
        for f in (0..q.faces.len()).rev() {
            if faces.last() == Some(&f) {
                continue;
            }
            // only mirror images lying in front of the face
            if q.faces[f].signed_distance(&last) >= 0.0 {
                continue;
            }
            let mut next_images = images.clone();
            next_images.push(q.faces[f].mirror(&last));
            let mut next_faces = faces.clone();
            next_faces.push(f);
            stack.push((next_images, next_faces));
        }
    }
    out.sort_by(|a, b| a.order.cmp(&b.order).then_with(|| a.reflections.cmp(&b.reflections)));
    out
}

fn validate_chain(scene: &SimulationScene, images: &[Vec3], faces: &[usize]) -> Option<ImageSource> {
    let q = &scene.query;
    let receiver = scene.config.receiver;
    let nb = scene.config.render.bands.len();
    let mut gain = vec![1.0; nb];
    let mut p = receiver;
    let mut prev_face: Option<usize> = None;
    for j in (1..images.len()).rev() {
        let face_id = faces[j - 1];
        let face = &q.faces[face_id];
        let target = images[j];
        let dir = target - p;
        let hit = face
            .triangles
            .iter()
            .filter_map(|&t| q.intersect_triangle(t, &p, &dir))
            .filter(|h| h.t > 1e-12 && h.t < 1.0 - 1e-12)
            .max_by(|a, b| a.margin.total_cmp(&b.margin))?;
        let point = p + dir * hit.t;
        let ignore: Vec<usize> = prev_face.into_iter().chain(std::iter::once(face_id)).collect();
        if !q.segment_clear(&p, &point, &ignore) {
            return None;
        }
        for (g, a) in gain.iter_mut().zip(scene.facet_alphas(hit.triangle)) {
            *g *= (1.0 - a).sqrt();
        }
        p = point;
        prev_face = Some(face_id);
    }
    let ignore: Vec<usize> = prev_face.into_iter().collect();
    if !q.segment_clear(&p, &images[0], &ignore) {
        return None;
    }
    let position = *images.last().expect("non-empty");
    Some(ImageSource {
        position,
        order: faces.len(),
        reflections: faces.to_vec(),
        reflection_gain: gain,
        distance: (position - receiver).norm(),
    })
}
