use serde::{Deserialize, Serialize};

use super::filters::OctaveFilterBank;
use super::ism::ShoeboxRoom;
use super::{AcousticsError, ImpulseResponse, SimulationScene};
use crate::materials::band_lookup;

/// Fit range in dB below the initial level, upper end first.
pub const DEFAULT_DECAY_RANGE: (f64, f64) = (-5.0, -25.0);
pub const T30_RANGE: (f64, f64) = (-5.0, -35.0);

/// Backward-integrated energy decay in dB relative to the total.
pub fn schroeder_curve(energy: &[f64]) -> Vec<f64> {
    let mut tail = 0.0;
    let mut edc = vec![0.0; energy.len()];
    for i in (0..energy.len()).rev() {
        tail += energy[i];
        edc[i] = tail;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|e| 10.0 * (e / total).log10()).collect()
}

/// Reverberation time from energy samples spaced `dt` apart: least-squares
/// line through the decay curve between the two levels, extrapolated to 60 dB.
pub fn decay_time(energy: &[f64], dt: f64, range: (f64, f64)) -> Result<f64, AcousticsError> {
    if !energy.iter().any(|e| *e > 0.0) {
        return Err(AcousticsError::Silent);
    }
    let (hi, lo) = range;
    if !(lo < hi && hi <= 0.0) {
        return Err(AcousticsError::InvalidParameter(format!("decay range {range:?} must be descending and non-positive")));
    }
    let edc = schroeder_curve(energy);
    let start = edc.iter().position(|l| *l <= hi).ok_or(AcousticsError::DecayRangeNotReached(range))?;
    let end = edc.iter().position(|l| *l <= lo).ok_or(AcousticsError::DecayRangeNotReached(range))?;
    let pts: Vec<(f64, f64)> = (start..end)
        .filter(|&i| edc[i].is_finite())
        .map(|i| (i as f64 * dt, edc[i]))
        .collect();
    if pts.len() < 2 {
        return Err(AcousticsError::DecayRangeNotReached(range));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(AcousticsError::DecayRangeNotReached(range));
    }
    Ok(-60.0 / slope)
}

/// Schroeder T60 of the broadband response, or of one octave band after
/// filtering.
pub fn schroeder_rt(ir: &ImpulseResponse, range: (f64, f64), band: Option<usize>) -> Result<f64, AcousticsError> {
    let samples = match band {
        None => ir.samples.clone(),
        Some(b) if b < ir.bands.len() => OctaveFilterBank::new(&ir.bands, ir.sample_rate).filter(b, &ir.samples),
        Some(b) => return Err(AcousticsError::InvalidParameter(format!("no band {b}"))),
    };
    let energy: Vec<f64> = samples.iter().map(|s| s * s).collect();
    decay_time(&energy, 1.0 / ir.sample_rate as f64, range)
}

pub fn t30(ir: &ImpulseResponse, band: Option<usize>) -> Result<f64, AcousticsError> {
    schroeder_rt(ir, T30_RANGE, band)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverbPrediction {
    pub band_hz: f64,
    pub sabine: f64,
    /// `None` when the mean absorption reaches 1, where the formula has no
    /// finite logarithm; the limit is 0 s.
    pub eyring: Option<f64>,
    pub mean_alpha: f64,
}

/// Sabine `0.161 V / sum(S a)` and Eyring `0.161 V / (-S ln(1 - mean a))` per
/// band. `surfaces` holds `(area, alphas per band)`.
pub fn sabine_eyring(volume: f64, surfaces: &[(f64, Vec<f64>)], bands: &[f64]) -> Result<Vec<ReverbPrediction>, AcousticsError> {
    let total: f64 = surfaces.iter().map(|s| s.0).sum();
    if !(volume > 0.0) || !(total > 0.0) {
        return Err(AcousticsError::InvalidParameter("volume and surface area must be positive".into()));
    }
    Ok(bands
        .iter()
        .enumerate()
        .map(|(b, band_hz)| {
            let absorption: f64 = surfaces.iter().map(|(s, a)| s * a[b]).sum();
            let mean_alpha = absorption / total;
            ReverbPrediction {
                band_hz: *band_hz,
                sabine: 0.161 * volume / absorption,
                eyring: (mean_alpha < 1.0).then(|| 0.161 * volume / (-total * (1.0 - mean_alpha).ln())),
                mean_alpha,
            }
        })
        .collect())
}

impl ReverbPrediction {
    pub fn for_scene(scene: &SimulationScene) -> Result<Vec<Self>, AcousticsError> {
        let surfaces: Vec<(f64, Vec<f64>)> = (0..scene.mesh.facet_count())
            .map(|f| (scene.mesh.facet_area(f), scene.facet_alphas(f).to_vec()))
            .collect();
        sabine_eyring(scene.volume(), &surfaces, &scene.config.render.bands)
    }

    pub fn for_shoebox(room: &ShoeboxRoom, bands: &[f64]) -> Result<Vec<Self>, AcousticsError> {
        let surfaces: Vec<(f64, Vec<f64>)> = room
            .wall_areas()
            .iter()
            .zip(&room.walls)
            .map(|(area, s)| (*area, bands.iter().map(|b| band_lookup(s, *b)).collect()))
            .collect();
        sabine_eyring(room.volume(), &surfaces, bands)
    }
}
