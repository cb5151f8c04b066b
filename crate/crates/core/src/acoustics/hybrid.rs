use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::filters::OctaveFilterBank;
use super::ism::{polyhedral_sources, render_sources, ImageSource, DEFAULT_ORDER_GUARD};
use super::raytrace::{ray_trace, RayTraceParams, RayTraceResult};
use super::{AcousticsError, ImpulseResponse, SimulationScene};

/// Stream reserved for the late-tail pulse sequence; ray streams count up from 0.
const TAIL_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridParams {
    pub ism_order: usize,
    pub allow_beyond_guard: bool,
    pub rays: RayTraceParams,
    /// Seconds; `None` uses [`default_crossover`].
    pub crossover: Option<f64>,
}

impl Default for HybridParams {
    fn default() -> Self {
        Self {
            ism_order: 2,
            allow_beyond_guard: false,
            rays: RayTraceParams::default(),
            crossover: None,
        }
    }
}

/// `4 V / (c S)` (the mean free path time) times the reflection order.
pub fn default_crossover(scene: &SimulationScene, order: usize) -> f64 {
    4.0 * scene.volume() / (scene.config.render.speed_of_sound * scene.surface_area()) * order as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridResult {
    pub ir: ImpulseResponse,
    /// Crossover rounded up to a histogram bin boundary.
    pub crossover: f64,
    pub early_sources: Vec<ImageSource>,
    pub rays: Option<RayTraceResult>,
    /// Per band: histogram energy after the crossover, converted to squared
    /// pressure, and the energy actually placed in the band's late signal.
    pub target_late_energy: Vec<f64>,
    pub late_energy: Vec<f64>,
}

/// Poisson arrival times in `[start, end)` with rate `4 pi c^3 t^2 / V`,
/// capped at the sample rate.
fn poisson_arrivals(rng: &mut ChaCha8Rng, start: f64, end: f64, c: f64, volume: f64, fs: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = start;
    while t < end {
        let rate = (4.0 * std::f64::consts::PI * c.powi(3) * t * t / volume).clamp(1.0, fs);
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / rate;
        if t < end {
            out.push(t);
        }
    }
    out
}

/// Image sources before the crossover and a band-shaped noise tail after
/// it. Each band's tail is a filtered random-sign Poisson pulse train scaled
/// bin by bin to the ray-traced energy converted to squared pressure by
/// `1 / (4 pi^2 r^2)` for capture radius `r`.
pub fn hybrid_rir(scene: &SimulationScene, params: &HybridParams) -> Result<HybridResult, AcousticsError> {
    let cfg = &scene.config;
    let render = &cfg.render;
    if params.ism_order > DEFAULT_ORDER_GUARD && !params.allow_beyond_guard {
        return Err(AcousticsError::OrderGuard {
            order: params.ism_order,
            guard: DEFAULT_ORDER_GUARD,
        });
    }
    let direct = (cfg.source - cfg.receiver).norm() / render.speed_of_sound;
    let crossover = params.crossover.unwrap_or_else(|| default_crossover(scene, params.ism_order));
    if crossover < direct {
        return Err(AcousticsError::InvalidParameter(format!(
            "crossover {crossover:.4} s precedes the direct sound at {direct:.4} s"
        )));
    }
    let dt = params.rays.bin_width;
    let first_bin = (crossover / dt).ceil() as usize;
    let crossover = first_bin as f64 * dt;
    let nb = render.bands.len();
    let sources = polyhedral_sources(scene, params.ism_order);
    if crossover >= params.rays.t_max {
        let ir = render_sources(&sources, render, cfg.source_power);
        return Ok(HybridResult {
            ir,
            crossover,
            early_sources: sources,
            rays: None,
            target_late_energy: vec![0.0; nb],
            late_energy: vec![0.0; nb],
        });
    }
    let early_sources: Vec<ImageSource> = sources
        .into_iter()
        .filter(|s| s.distance / render.speed_of_sound < crossover)
        .collect();
    let early = render_sources(&early_sources, render, cfg.source_power);
    let rays = ray_trace(scene, &params.rays)?;

    let fs = render.sample_rate as f64;
    let bins = rays.histograms[0].len();
    let len = (bins as f64 * dt * fs).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TAIL_STREAM);
    let mut train = vec![0.0; len];
    for t in poisson_arrivals(&mut rng, crossover, bins as f64 * dt, render.speed_of_sound, scene.volume(), fs) {
        let n = ((t * fs).round() as usize).min(len - 1);
        train[n] += if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let bank = OctaveFilterBank::new(&render.bands, render.sample_rate);
    let to_pressure = 1.0 / (4.0 * std::f64::consts::PI.powi(2) * cfg.capture_radius.powi(2));
    let mut late = vec![0.0; len];
    let mut target_late_energy = vec![0.0; nb];
    let mut late_energy = vec![0.0; nb];
    let mut band_energies = vec![vec![0.0; bins]; nb];
    for b in 0..nb {
        let noise = bank.filter(b, &train);
        for k in first_bin..bins {
            let target = rays.histograms[b][k] * to_pressure;
            target_late_energy[b] += target;
            let (lo, hi) = (((k as f64 * dt) * fs).round() as usize, (((k + 1) as f64 * dt) * fs).round() as usize);
            let hi = hi.min(len);
            let have: f64 = noise[lo..hi].iter().map(|v| v * v).sum();
            if have <= 0.0 || target <= 0.0 {
                continue;
            }
            let g = (target / have).sqrt();
            for n in lo..hi {
                late[n] += noise[n] * g;
            }
            late_energy[b] += target;
            band_energies[b][k] = target;
        }
    }

    let mut samples = early.samples.clone();
    samples.resize(samples.len().max(len), 0.0);
    for (s, l) in samples.iter_mut().zip(&late) {
        *s += l;
    }
    // early histogram bins use the same width as the ray histograms
    for s in &early_sources {
        let k = (s.distance / render.speed_of_sound / dt) as usize;
        if k < bins {
            let amp = cfg.source_power.sqrt() / (4.0 * std::f64::consts::PI * s.distance);
            let air = render.air_gain(s.distance);
            for b in 0..nb {
                band_energies[b][k] += (amp * s.reflection_gain[b]).powi(2) * air[b];
            }
        }
    }
    Ok(HybridResult {
        ir: ImpulseResponse {
            sample_rate: render.sample_rate,
            samples,
            bands: render.bands.clone(),
            bin_width: dt,
            band_energies,
        },
        crossover,
        early_sources,
        rays: Some(rays),
        target_late_energy,
        late_energy,
    })
}
