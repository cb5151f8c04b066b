use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::AcousticsError;

/// Filter length at 48 kHz; other rates scale it proportionally (kept odd).
pub const BASE_FILTER_TAPS: usize = 1023;

/// Impulse responses with at most this many non-zero taps are convolved by
/// direct summation, which keeps identity and shift cases exact.
const SPARSE_TAPS: usize = 32;

/// Linear-phase octave bands built as differences of windowed-sinc lowpass
/// filters at the geometric midpoints between band centers. The lowest band
/// extends to DC and the highest to Nyquist, so the bands sum to a unit
/// impulse.
#[derive(Debug, Clone, PartialEq)]
pub struct OctaveFilterBank {
    pub sample_rate: u32,
    pub bands: Vec<f64>,
    kernels: Vec<Vec<f64>>,
}

fn lowpass(cutoff: f64, sample_rate: f64, taps: usize) -> Vec<f64> {
    let m = (taps - 1) as f64 / 2.0;
    let mut h = vec![0.0; taps];
    if cutoff >= sample_rate / 2.0 {
        h[taps / 2] = 1.0;
        return h;
    }
    let wc = 2.0 * cutoff / sample_rate;
    for (n, v) in h.iter_mut().enumerate() {
        let x = n as f64 - m;
        let sinc = if x == 0.0 { 1.0 } else { (std::f64::consts::PI * wc * x).sin() / (std::f64::consts::PI * wc * x) };
        let phase = 2.0 * std::f64::consts::PI * n as f64 / (taps - 1) as f64;
        let blackman = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
        *v = wc * sinc * blackman;
    }
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

impl OctaveFilterBank {
    pub fn new(bands: &[f64], sample_rate: u32) -> Self {
        let taps = {
            let t = (BASE_FILTER_TAPS as f64 * sample_rate as f64 / 48_000.0).round() as usize;
            (t.max(3)) | 1
        };
        let fs = sample_rate as f64;
        let lowpasses: Vec<Vec<f64>> = bands.windows(2).map(|w| lowpass((w[0] * w[1]).sqrt(), fs, taps)).collect();
        let mut delta = vec![0.0; taps];
        delta[taps / 2] = 1.0;
        let mut kernels = Vec::with_capacity(bands.len());
        let mut below = vec![0.0; taps];
        for upper in lowpasses.iter().chain(std::iter::once(&delta)) {
            kernels.push(upper.iter().zip(&below).map(|(u, b)| u - b).collect());
            below = upper.clone();
        }
        Self {
            sample_rate,
            bands: bands.to_vec(),
            kernels,
        }
    }

    pub fn taps(&self) -> usize {
        self.kernels[0].len()
    }

    pub fn kernel(&self, band: usize) -> &[f64] {
        &self.kernels[band]
    }

    /// Zero-phase band filtering: output is aligned with and as long as `x`.
    pub fn filter(&self, band: usize, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let half = self.taps() / 2;
        let full = fft_convolve(x, &self.kernels[band]);
        full[half..half + x.len()].to_vec()
    }

    /// Filters each band's signal and sums them.
    pub fn synthesize(&self, per_band: &[Vec<f64>]) -> Vec<f64> {
        let len = per_band.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = vec![0.0; len];
        for (b, x) in per_band.iter().enumerate() {
            if x.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.filter(b, x)) {
                *o += v;
            }
        }
        out
    }
}

/// Full linear convolution by O(N M) summation.
pub fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Full linear convolution through zero-padded FFTs.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let n = a.len() + b.len() - 1;
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|r| Complex::new(*r, 0.0)).collect();
        v.resize(size, Complex::new(0.0, 0.0));
        v
    };
    let (mut fa, mut fb) = (pad(a), pad(b));
    forward.process(&mut fa);
    forward.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inverse.process(&mut fa);
    fa[..n].iter().map(|c| c.re / size as f64).collect()
}

/// Scales so the largest magnitude sits at -1 dBFS. Silence is returned
/// unchanged.
pub fn normalize_peak(samples: &mut [f64]) {
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let g = 10f64.powf(-1.0 / 20.0) / peak;
        samples.iter_mut().for_each(|s| *s *= g);
    }
}

/// Auralization: `signal * ir`, length N + M - 1, optionally peak-normalized.
/// Sparse responses are summed directly, dense ones go through the FFT.
pub fn convolve(
    ir: &[f64],
    ir_rate: u32,
    signal: &[f64],
    signal_rate: u32,
    normalize: bool,
) -> Result<Vec<f64>, AcousticsError> {
    if ir_rate != signal_rate {
        return Err(AcousticsError::SampleRateMismatch(ir_rate, signal_rate));
    }
    let nonzero = ir.iter().filter(|v| **v != 0.0).count();
    let mut out = if nonzero <= SPARSE_TAPS {
        convolve_direct(ir, signal)
    } else {
        fft_convolve(ir, signal)
    };
    if normalize {
        normalize_peak(&mut out);
    }
    Ok(out)
}
