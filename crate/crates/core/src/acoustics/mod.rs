//! Room impulse responses on annotated meshes: image sources (shoebox lattice
//! and general polyhedra), stochastic ray tracing, a hybrid of both, decay
//! analysis, convolution and WAV/CSV output.

mod analysis;
mod filters;
mod hybrid;
mod ism;
mod mesh_query;
mod output;
mod raytrace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{validate_mesh, AnnotatedMesh};
use crate::ingest::{ImageId, IngestError, ReprojectionDatabase};
use crate::materials::{band_lookup, DEFAULT_BANDS};
use crate::Vec3;

pub use analysis::{decay_time, sabine_eyring, schroeder_curve, schroeder_rt, t30, ReverbPrediction, DEFAULT_DECAY_RANGE, T30_RANGE};
pub use filters::{convolve, convolve_direct, fft_convolve, normalize_peak, OctaveFilterBank, BASE_FILTER_TAPS};
pub use hybrid::{default_crossover, hybrid_rir, HybridParams, HybridResult};
pub use ism::{ism_polyhedral, ism_shoebox, ImageSource, IsmResult, ShoeboxRoom, DEFAULT_ORDER_GUARD};
pub use mesh_query::{point_in_mesh, MeshQuery};
pub use output::{histogram_csv, read_wav, write_wav, WavSignal};
pub use raytrace::{ray_trace, EnergyLedger, RayTraceParams, RayTraceResult, RAY_CHUNK};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_SAMPLE_RATE: u32 = 48_000;
pub const DEFAULT_CAPTURE_RADIUS: f64 = 0.25;

#[derive(Debug, Error)]
pub enum AcousticsError {
    #[error("source and receiver coincide")]
    ZeroDistance,
    #[error("{0} lies outside the room")]
    OutsideRoom(&'static str),
    #[error("mesh is not watertight")]
    OpenMesh,
    #[error("facets without absorption data: {0:?}")]
    Unannotated(Vec<usize>),
    #[error("order {order} exceeds the guard {guard}; pass an override to allow it")]
    OrderGuard { order: usize, guard: usize },
    #[error("ray {ray} escaped the mesh at t = {time:.4} s")]
    RayEscaped { ray: usize, time: f64 },
    #[error("decay range {0:?} dB not reached")]
    DecayRangeNotReached((f64, f64)),
    #[error("impulse response is silent")]
    Silent,
    #[error("sample rates differ: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("WAV: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rendering parameters shared by every simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    /// Octave band centers in Hz, ascending.
    pub bands: Vec<f64>,
    /// 8-tap windowed-sinc fractional delay instead of nearest-sample pulses.
    pub fractional_delay: bool,
    /// Per-band air attenuation of intensity in 1/m, applied as `exp(-m d)`.
    pub air_absorption: Option<Vec<f64>>,
    /// Width of the per-band energy histograms of image-source renders.
    pub histogram_bin: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            bands: DEFAULT_BANDS.to_vec(),
            fractional_delay: false,
            air_absorption: None,
            histogram_bin: 1e-3,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<(), AcousticsError> {
        let bad = |m: String| Err(AcousticsError::InvalidParameter(m));
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if !(self.speed_of_sound > 0.0) || !self.speed_of_sound.is_finite() {
            return bad(format!("speed of sound must be positive, got {}", self.speed_of_sound));
        }
        if self.bands.is_empty() || self.bands.windows(2).any(|w| !(w[0] < w[1])) || !(self.bands[0] > 0.0) {
            return bad("bands must be positive and ascending".into());
        }
        if !(self.histogram_bin > 0.0) {
            return bad("histogram bin must be positive".into());
        }
        if let Some(air) = &self.air_absorption {
            if air.len() != self.bands.len() || air.iter().any(|m| !(*m >= 0.0)) {
                return bad("air absorption needs one non-negative coefficient per band".into());
            }
        }
        Ok(())
    }

    /// Intensity attenuation factor per band over `distance`.
    pub(crate) fn air_gain(&self, distance: f64) -> Vec<f64> {
        match &self.air_absorption {
            Some(m) => m.iter().map(|m| (-m * distance).exp()).collect(),
            None => vec![1.0; self.bands.len()],
        }
    }
}

/// Source, receiver and simulation switches; serialized as the scene config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub source: Vec3,
    /// Emitted power; 1.0 is the normalized reference.
    pub source_power: f64,
    pub receiver: Vec3,
    pub capture_radius: f64,
    /// Probability that a ray reflection is diffuse.
    pub scattering: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub render: RenderSettings,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            source: Vec3::zeros(),
            source_power: 1.0,
            receiver: Vec3::new(1.0, 0.0, 0.0),
            capture_radius: DEFAULT_CAPTURE_RADIUS,
            scattering: 0.0,
            seed: 0,
            render: RenderSettings::default(),
        }
    }
}

/// An annotated mesh with per-facet, per-band absorption resolved.
#[derive(Debug, Clone)]
pub struct SimulationScene {
    pub mesh: AnnotatedMesh,
    pub config: SceneConfig,
    /// `alphas[facet][band]`.
    pub(crate) alphas: Vec<Vec<f64>>,
    pub(crate) query: MeshQuery,
}

impl SimulationScene {
    /// Checks watertightness, annotation and that source and receiver are
    /// strictly inside, then resolves facet spectra at the simulation bands.
    pub fn new(mesh: AnnotatedMesh, config: SceneConfig) -> Result<Self, AcousticsError> {
        config.render.validate()?;
        if !(config.capture_radius > 0.0) {
            return Err(AcousticsError::InvalidParameter("capture radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.scattering) {
            return Err(AcousticsError::InvalidParameter("scattering must lie in [0, 1]".into()));
        }
        if !(config.source_power > 0.0) {
            return Err(AcousticsError::InvalidParameter("source power must be positive".into()));
        }
        let report = validate_mesh(&mesh);
        if !report.watertight {
            return Err(AcousticsError::OpenMesh);
        }
        if !report.unannotated_facets.is_empty() {
            return Err(AcousticsError::Unannotated(report.unannotated_facets));
        }
        let alphas = (0..mesh.facet_count())
            .map(|f| {
                let s = mesh.facet_spectrum(f).expect("annotated");
                config.render.bands.iter().map(|b| band_lookup(s, *b)).collect()
            })
            .collect();
        let query = MeshQuery::new(&mesh);
        if !query.contains(&config.source) {
            return Err(AcousticsError::OutsideRoom("source"));
        }
        if !query.contains(&config.receiver) {
            return Err(AcousticsError::OutsideRoom("receiver"));
        }
        if (config.source - config.receiver).norm() == 0.0 {
            return Err(AcousticsError::ZeroDistance);
        }
        Ok(Self {
            mesh,
            config,
            alphas,
            query,
        })
    }

    pub fn facet_alphas(&self, facet: usize) -> &[f64] {
        &self.alphas[facet]
    }

    pub fn volume(&self) -> f64 {
        self.mesh.signed_volume()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.mesh.facet_count()).map(|f| self.mesh.facet_area(f)).sum()
    }
}

/// Band-resolved impulse response. `band_energies[b][k]` is the energy
/// arriving in `[k bin_width, (k + 1) bin_width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
    pub bands: Vec<f64>,
    pub bin_width: f64,
    pub band_energies: Vec<Vec<f64>>,
}

impl ImpulseResponse {
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> Option<(usize, f64)> {
        self.samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, v)| (i, *v))
    }
}

/// Listener placed at a photo's camera center, looking along its optical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverPose {
    pub image: ImageId,
    pub position: Vec3,
    /// World-frame viewing direction; kept for future directivity use.
    pub view_direction: Vec3,
}

pub fn receiver_from_photo(db: &ReprojectionDatabase, image: ImageId) -> Result<ReceiverPose, AcousticsError> {
    let photo = db.photo(image)?;
    let r = photo.rotation_matrix();
    Ok(ReceiverPose {
        image,
        position: -(r.transpose() * photo.translation),
        view_direction: r.row(2).transpose(),
    })
}
