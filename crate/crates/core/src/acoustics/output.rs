use std::fmt::Write as _;
use std::io::{Cursor, Read};

use super::AcousticsError;

/// Mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WavSignal {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

/// RIFF WAV, mono, 32-bit float PCM.
pub fn write_wav(signal: &WavSignal) -> Result<Vec<u8>, AcousticsError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec)?;
        for s in &signal.samples {
            w.write_sample(*s as f32)?;
        }
        w.finalize()?;
    }
    Ok(cursor.into_inner())
}

/// Reads integer or float PCM; channels are averaged to mono and integer
/// samples scaled to [-1, 1).
pub fn read_wav<R: Read>(reader: R) -> Result<WavSignal, AcousticsError> {
    let mut r = hound::WavReader::new(reader)?;
    let spec = r.spec();
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>().map(|s| s.map(|v| v as f64 / full)).collect::<Result<_, _>>()?
        }
    };
    let ch = spec.channels.max(1) as usize;
    let samples = interleaved.chunks(ch).map(|c| c.iter().sum::<f64>() / ch as f64).collect();
    Ok(WavSignal {
        sample_rate: spec.sample_rate,
        samples,
    })
}

/// `band_hz,bin_start_s,energy` rows, band-major.
pub fn histogram_csv(bands: &[f64], bin_width: f64, histograms: &[Vec<f64>]) -> String {
    let mut s = String::from("band_hz,bin_start_s,energy\n");
    for (band, hist) in bands.iter().zip(histograms) {
        for (k, e) in hist.iter().enumerate() {
            writeln!(s, "{band},{},{e}", k as f64 * bin_width).expect("string write");
        }
    }
    s
}
