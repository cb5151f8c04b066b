use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AcousticsError, SimulationScene};
use crate::Vec3;

/// Rays per work unit. Chunks are reduced in index order, so results do not
/// depend on the worker count.
pub const RAY_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RayTraceParams {
    pub ray_count: usize,
    /// Seconds.
    pub t_max: f64,
    /// Histogram bin width in seconds.
    pub bin_width: f64,
    /// Rays stop once every band is below this fraction of its start energy.
    pub energy_floor: f64,
}

impl Default for RayTraceParams {
    fn default() -> Self {
        Self {
            ray_count: 20_000,
            t_max: 1.0,
            bin_width: 1e-3,
            energy_floor: 1e-6,
        }
    }
}

/// Per-band energy totals over all rays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub initial: Vec<f64>,
    /// At walls and in air.
    pub absorbed: Vec<f64>,
    /// Collected by the receiver sphere.
    pub deposited: Vec<f64>,
    /// Left in rays stopped by the time limit or the energy floor.
    pub residual: Vec<f64>,
    /// Largest `|initial - absorbed - deposited - residual|` of any single ray
    /// and band.
    pub max_ray_imbalance: f64,
}

impl EnergyLedger {
    fn zeros(nb: usize) -> Self {
        Self {
            initial: vec![0.0; nb],
            absorbed: vec![0.0; nb],
            deposited: vec![0.0; nb],
            residual: vec![0.0; nb],
            max_ray_imbalance: 0.0,
        }
    }

    fn add(&mut self, other: &EnergyLedger) {
        for (mine, theirs) in [
            (&mut self.initial, &other.initial),
            (&mut self.absorbed, &other.absorbed),
            (&mut self.deposited, &other.deposited),
            (&mut self.residual, &other.residual),
        ] {
            mine.iter_mut().zip(theirs).for_each(|(a, b)| *a += b);
        }
        self.max_ray_imbalance = self.max_ray_imbalance.max(other.max_ray_imbalance);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayTraceResult {
    pub bands: Vec<f64>,
    pub bin_width: f64,
    /// `histograms[band][bin]`: energy collected per bin, as a fraction of
    /// the emitted power.
    pub histograms: Vec<Vec<f64>>,
    pub ledger: EnergyLedger,
    pub ray_count: usize,
}

fn unit_sphere(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Cosine-weighted direction about `n`.
fn lambertian(n: &Vec3, rng: &mut ChaCha8Rng) -> Vec3 {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    let u: f64 = rng.random();
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let r = u.sqrt();
    (e1 * (r * phi.cos()) + e2 * (r * phi.sin()) + n * (1.0 - u).max(0.0).sqrt()).normalize()
}

/// Distance along the unit ray to where it enters the sphere, if within `limit`.
fn sphere_entry(origin: &Vec3, dir: &Vec3, center: &Vec3, radius: f64, limit: f64) -> Option<f64> {
    let oc = origin - center;
    let c = oc.norm_squared() - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = dir.dot(&oc);
    let disc = b * b - c;
    if disc < 0.0 || b > 0.0 {
        return None;
    }
    let s = -b - disc.sqrt();
    (s <= limit).then_some(s)
}

struct ChunkOutput {
    histograms: Vec<Vec<f64>>,
    ledger: EnergyLedger,
}

fn trace_chunk(
    scene: &SimulationScene,
    params: &RayTraceParams,
    chunk: usize,
    bins: usize,
) -> Result<ChunkOutput, AcousticsError> {
    let cfg = &scene.config;
    let q = &scene.query;
    let nb = cfg.render.bands.len();
    let c = cfg.render.speed_of_sound;
    let e0 = cfg.source_power / params.ray_count as f64;
    let air = cfg.render.air_absorption.clone().unwrap_or_else(|| vec![0.0; nb]);
    let t_min = 1e-9 * q.scale();
    let mut out = ChunkOutput {
        histograms: vec![vec![0.0; bins]; nb],
        ledger: EnergyLedger::zeros(nb),
    };
    let first = chunk * RAY_CHUNK;
    let last = (first + RAY_CHUNK).min(params.ray_count);
    for ray in first..last {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(ray as u64);
        let mut dir = unit_sphere(&mut rng);
        let mut pos = cfg.source;
        let mut t = 0.0;
        let mut skip = None;
        let mut e = vec![e0; nb];
        let mut absorbed = vec![0.0; nb];
        let mut deposited = vec![0.0; nb];
        let mut residual = vec![0.0; nb];
        let attenuate = |e: &mut [f64], absorbed: &mut [f64], dist: f64| {
            for b in 0..nb {
                if air[b] > 0.0 {
                    let kept = e[b] * (-air[b] * dist).exp();
                    absorbed[b] += e[b] - kept;
                    e[b] = kept;
                }
            }
        };
        loop {
            let Some(hit) = q.first_hit(&pos, &dir, t_min, skip) else {
                return Err(AcousticsError::RayEscaped { ray, time: t });
            };
            if let Some(s) = sphere_entry(&pos, &dir, &cfg.receiver, cfg.capture_radius, hit.t) {
                let arrival = t + s / c;
                attenuate(&mut e, &mut absorbed, s);
                let k = (arrival / params.bin_width) as usize;
                if arrival <= params.t_max && k < bins {
                    for b in 0..nb {
                        out.histograms[b][k] += e[b];
                        deposited[b] += e[b];
                    }
                } else {
                    residual.iter_mut().zip(&e).for_each(|(r, v)| *r += v);
                }
                break;
            }
            attenuate(&mut e, &mut absorbed, hit.t);
            t += hit.t / c;
            if t > params.t_max {
                residual.iter_mut().zip(&e).for_each(|(r, v)| *r += v);
                break;
            }
            let alphas = scene.facet_alphas(hit.triangle);
            for b in 0..nb {
                let lost = e[b] * alphas[b];
                absorbed[b] += lost;
                e[b] -= lost;
            }
            if e.iter().all(|v| *v < params.energy_floor * e0) {
                residual.iter_mut().zip(&e).for_each(|(r, v)| *r += v);
                break;
            }
            let n = q.normal(hit.triangle);
            let inward = if n.dot(&dir) > 0.0 { -n } else { n };
            pos += dir * hit.t;
            dir = if cfg.scattering > 0.0 && rng.random::<f64>() < cfg.scattering {
                lambertian(&inward, &mut rng)
            } else {
                (dir - inward * (2.0 * dir.dot(&inward))).normalize()
            };
            skip = Some(hit.triangle);
        }
        for b in 0..nb {
            let imbalance = (e0 - absorbed[b] - deposited[b] - residual[b]).abs();
            out.ledger.max_ray_imbalance = out.ledger.max_ray_imbalance.max(imbalance);
            out.ledger.initial[b] += e0;
            out.ledger.absorbed[b] += absorbed[b];
            out.ledger.deposited[b] += deposited[b];
            out.ledger.residual[b] += residual[b];
        }
    }
    Ok(out)
}

/// Stochastic ray tracing with an energy-collecting receiver sphere. A ray
/// that reaches the sphere deposits its energy and ends there.
pub fn ray_trace(scene: &SimulationScene, params: &RayTraceParams) -> Result<RayTraceResult, AcousticsError> {
    if params.ray_count == 0 {
        return Err(AcousticsError::InvalidParameter("ray count must be at least 1".into()));
    }
    if !(params.t_max > 0.0) || !(params.bin_width > 0.0) {
        return Err(AcousticsError::InvalidParameter("t_max and bin width must be positive".into()));
    }
    let cfg = &scene.config;
    if (cfg.source - cfg.receiver).norm() <= cfg.capture_radius {
        return Err(AcousticsError::InvalidParameter("source lies inside the receiver sphere".into()));
    }
    let bins = (params.t_max / params.bin_width).ceil() as usize;
    let chunks = params.ray_count.div_ceil(RAY_CHUNK);
    let outputs: Vec<Result<ChunkOutput, AcousticsError>> =
        (0..chunks).into_par_iter().map(|k| trace_chunk(scene, params, k, bins)).collect();
    let nb = cfg.render.bands.len();
    let mut histograms = vec![vec![0.0; bins]; nb];
    let mut ledger = EnergyLedger::zeros(nb);
    for out in outputs {
        let out = out?;
        for (h, o) in histograms.iter_mut().zip(&out.histograms) {
            h.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
        ledger.add(&out.ledger);
    }
    Ok(RayTraceResult {
        bands: cfg.render.bands.clone(),
        bin_width: params.bin_width,
        histograms,
        ledger,
        ray_count: params.ray_count,
    })
}
