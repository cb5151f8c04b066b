//! Absorption measurements, material assignments and text-similarity
//! suggestion of measurements for a material name.

mod tfidf;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::masking::MaskId;

pub use tfidf::{cosine, tokenize, Idf, SparseVector, TfIdfIndex};

pub const DEFAULT_BANDS: [f64; 6] = [125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0];
const REQUIRED_COLUMNS: [&str; 3] = ["name", "description", "source"];
const OPTIONAL_BANDS: [f64; 2] = [63.0, 8000.0];

/// Curated sample of classic absorption-table values, one citation per row.
pub const BUNDLED_SAMPLE_CSV: &str = include_str!("../../data/absorption_sample.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementId(pub u32);

impl fmt::Display for MeasurementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "measurement {}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum MaterialsError {
    #[error("missing CSV column(s): {0}")]
    MissingHeader(String),
    #[error("row {row}: non-numeric value {value:?} in column {column}")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("unknown {0}")]
    UnknownMeasurement(MeasurementId),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Absorption coefficients per octave band, bands strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumRepr", into = "SpectrumRepr")]
pub struct AbsorptionSpectrum {
    bands: Vec<f64>,
    alphas: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SpectrumRepr {
    bands: Vec<f64>,
    alphas: Vec<f64>,
}

impl TryFrom<SpectrumRepr> for AbsorptionSpectrum {
    type Error = MaterialsError;
    fn try_from(r: SpectrumRepr) -> Result<Self, Self::Error> {
        Self::new(r.bands, r.alphas)
    }
}

impl From<AbsorptionSpectrum> for SpectrumRepr {
    fn from(s: AbsorptionSpectrum) -> Self {
        Self {
            bands: s.bands,
            alphas: s.alphas,
        }
    }
}

impl AbsorptionSpectrum {
    pub fn new(bands: Vec<f64>, alphas: Vec<f64>) -> Result<Self, MaterialsError> {
        if bands.is_empty() || bands.len() != alphas.len() {
            return Err(MaterialsError::InvalidSpectrum(format!(
                "{} bands for {} coefficients",
                bands.len(),
                alphas.len()
            )));
        }
        if bands[0] <= 0.0 || bands.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(MaterialsError::InvalidSpectrum(
                "bands must be positive and strictly increasing".into(),
            ));
        }
        if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(MaterialsError::InvalidSpectrum(format!(
                "absorption coefficient {a} outside [0, 1]"
            )));
        }
        Ok(Self { bands, alphas })
    }

    /// Same coefficient in every default band.
    pub fn uniform(alpha: f64) -> Result<Self, MaterialsError> {
        Self::new(DEFAULT_BANDS.to_vec(), vec![alpha; DEFAULT_BANDS.len()])
    }

    pub fn bands(&self) -> &[f64] {
        &self.bands
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn at(&self, frequency: f64) -> f64 {
        band_lookup(self, frequency)
    }
}

/// Coefficient of the band nearest to `frequency` on a linear scale,
/// clamped to the edge bands; an exact midpoint resolves to the lower band.
pub fn band_lookup(spectrum: &AbsorptionSpectrum, frequency: f64) -> f64 {
    let bands = &spectrum.bands;
    let mut best = 0;
    for (i, b) in bands.iter().enumerate().skip(1) {
        if (frequency - b).abs() < (frequency - bands[best]).abs() {
            best = i;
        }
    }
    spectrum.alphas[best]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialMeasurement {
    pub id: MeasurementId,
    pub name: String,
    pub description: String,
    pub spectrum: AbsorptionSpectrum,
    pub source: String,
}

/// Choice of a measurement for a mask, with the classifier-style labels
/// that produced the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialAssignment {
    pub mask_ref: MaskId,
    pub category_label: String,
    pub texture_attribute: Option<String>,
    pub measurement_ref: MeasurementId,
}

/// Query text for a material label optionally refined by a texture attribute.
pub fn fuse_query(material: Option<&str>, texture: Option<&str>) -> String {
    [material, texture]
        .into_iter()
        .flatten()
        .filter(|s| !s.trim().is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRejection {
    /// 1-based data row, header excluded.
    pub row: usize,
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub id: MeasurementId,
    pub score: f64,
}

/// Immutable measurement database with its suggestion index.
#[derive(Debug, Clone)]
pub struct MeasurementDatabase {
    entries: Vec<MaterialMeasurement>,
    by_id: BTreeMap<MeasurementId, usize>,
    index: TfIdfIndex,
    embeddings: Option<BTreeMap<MeasurementId, Vec<f64>>>,
}

impl MeasurementDatabase {
    /// IDF over names with descriptions; entry vectors over names.
    pub fn new(entries: Vec<MaterialMeasurement>) -> Self {
        let corpus: Vec<String> = entries.iter().map(|m| format!("{} {}", m.name, m.description)).collect();
        let idf = Idf::from_documents(corpus.iter().map(|s| s.as_str()));
        Self::with_idf(entries, idf)
    }

    /// Builds the index under an existing IDF table.
    pub fn with_idf(entries: Vec<MaterialMeasurement>, idf: Idf) -> Self {
        let names: Vec<&str> = entries.iter().map(|m| m.name.as_str()).collect();
        let index = TfIdfIndex::with_idf(idf, &names);
        let by_id = entries.iter().enumerate().map(|(i, m)| (m.id, i)).collect();
        Self {
            entries,
            by_id,
            index,
            embeddings: None,
        }
    }

    pub fn bundled() -> Self {
        load_measurements(BUNDLED_SAMPLE_CSV.as_bytes())
            .expect("bundled sample is well formed")
            .database
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MaterialMeasurement> {
        self.entries.iter()
    }

    pub fn get(&self, id: MeasurementId) -> Result<&MaterialMeasurement, MaterialsError> {
        self.by_id
            .get(&id)
            .map(|&i| &self.entries[i])
            .ok_or(MaterialsError::UnknownMeasurement(id))
    }

    pub fn idf(&self) -> &Idf {
        self.index.idf()
    }

    /// Top `k` measurements by cosine similarity to `query`, score descending
    /// then name ascending. A query without tokens yields nothing.
    pub fn suggest_measurements(&self, query: &str, k: usize) -> Result<Vec<Ranked>, MaterialsError> {
        if k == 0 {
            return Err(MaterialsError::InvalidParameter("k must be at least 1".into()));
        }
        let Some(scores) = self.index.scores(query) else {
            return Ok(Vec::new());
        };
        Ok(self.rank(scores, k))
    }

    fn rank(&self, scores: Vec<f64>, k: usize) -> Vec<Ranked> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.entries[a].name.cmp(&self.entries[b].name))
                .then(self.entries[a].id.cmp(&self.entries[b].id))
        });
        order
            .into_iter()
            .take(k)
            .map(|i| Ranked {
                id: self.entries[i].id,
                score: scores[i],
            })
            .collect()
    }

    /// Installs externally computed vectors, one per measurement, all of equal dimension.
    pub fn set_embeddings(&mut self, vectors: BTreeMap<MeasurementId, Vec<f64>>) -> Result<(), MaterialsError> {
        let dim = vectors.values().next().map(|v| v.len()).unwrap_or(0);
        for m in &self.entries {
            match vectors.get(&m.id) {
                Some(v) if v.len() == dim && dim > 0 => {}
                Some(_) => {
                    return Err(MaterialsError::InvalidParameter(format!(
                        "embedding of {} has the wrong dimension",
                        m.id
                    )))
                }
                None => return Err(MaterialsError::UnknownMeasurement(m.id)),
            }
        }
        self.embeddings = Some(vectors);
        Ok(())
    }

    /// Ranks by cosine between `query` and the installed embeddings.
    pub fn suggest_by_embedding(&self, query: &[f64], k: usize) -> Result<Vec<Ranked>, MaterialsError> {
        let embeddings = self
            .embeddings
            .as_ref()
            .ok_or_else(|| MaterialsError::InvalidParameter("no embeddings installed".into()))?;
        if k == 0 {
            return Err(MaterialsError::InvalidParameter("k must be at least 1".into()));
        }
        let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scores = self
            .entries
            .iter()
            .map(|m| {
                let v = &embeddings[&m.id];
                if v.len() != query.len() {
                    return 0.0;
                }
                let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if qn == 0.0 || vn == 0.0 {
                    return 0.0;
                }
                let dot: f64 = v.iter().zip(query).map(|(a, b)| a * b).sum();
                (dot / (qn * vn)).clamp(0.0, 1.0)
            })
            .collect();
        Ok(self.rank(scores, k))
    }
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub database: MeasurementDatabase,
    pub rejected: Vec<RowRejection>,
}

/// Parses the measurement CSV. Rows with a coefficient outside [0, 1] or an
/// empty name are rejected and reported; a non-numeric coefficient fails the load.
/// Measurement ids are 1-based data row numbers.
pub fn load_measurements<R: Read>(reader: R) -> Result<LoadReport, MaterialsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut missing: Vec<String> = Vec::new();
    let mut fixed = Vec::new();
    for name in REQUIRED_COLUMNS {
        match column(name) {
            Some(i) => fixed.push(i),
            None => missing.push(name.to_string()),
        }
    }
    let mut bands: Vec<(f64, usize, String)> = Vec::new();
    for f in DEFAULT_BANDS {
        let name = format!("a{f}");
        match column(&name) {
            Some(i) => bands.push((f, i, name)),
            None => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(MaterialsError::MissingHeader(missing.join(", ")));
    }
    for f in OPTIONAL_BANDS {
        let name = format!("a{f}");
        if let Some(i) = column(&name) {
            bands.push((f, i, name));
        }
    }
    bands.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let name = field(fixed[0]);
        let mut alphas = Vec::with_capacity(bands.len());
        for (_, i, col) in &bands {
            let raw = field(*i);
            let value: f64 = raw.parse().map_err(|_| MaterialsError::NonNumeric {
                row,
                column: col.clone(),
                value: raw.clone(),
            })?;
            if !value.is_finite() {
                return Err(MaterialsError::NonNumeric {
                    row,
                    column: col.clone(),
                    value: raw,
                });
            }
            alphas.push(value);
        }
        if name.is_empty() {
            rejected.push(RowRejection {
                row,
                name,
                reason: "empty name".into(),
            });
            continue;
        }
        if let Some((k, a)) = alphas.iter().enumerate().find(|(_, a)| !(0.0..=1.0).contains(*a)) {
            rejected.push(RowRejection {
                row,
                name,
                reason: format!("{} = {a} outside [0, 1]", bands[k].2),
            });
            continue;
        }
        let spectrum = AbsorptionSpectrum::new(bands.iter().map(|b| b.0).collect(), alphas)?;
        entries.push(MaterialMeasurement {
            id: MeasurementId(row as u32),
            name,
            description: field(fixed[1]),
            spectrum,
            source: field(fixed[2]),
        });
    }
    Ok(LoadReport {
        database: MeasurementDatabase::new(entries),
        rejected,
    })
}
