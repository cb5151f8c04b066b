use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub type SparseVector = BTreeMap<String, f64>;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Document frequencies of a corpus. Weights use the smoothed form
/// `ln((1 + N) / (1 + df)) + 1`, so unseen tokens get the largest weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Idf {
    documents: usize,
    df: BTreeMap<String, usize>,
}

impl Idf {
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut documents = 0;
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            documents += 1;
            let mut tokens = tokenize(doc);
            tokens.sort();
            tokens.dedup();
            for t in tokens {
                *df.entry(t).or_default() += 1;
            }
        }
        Self { documents, df }
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    pub fn document_frequency(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    pub fn weight(&self, token: &str) -> f64 {
        let n = self.documents as f64;
        ((1.0 + n) / (1.0 + self.document_frequency(token) as f64)).ln() + 1.0
    }

    /// Raw term counts scaled by IDF weight.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        let mut v = SparseVector::new();
        for t in tokenize(text) {
            *v.entry(t).or_default() += 1.0;
        }
        for (t, w) in v.iter_mut() {
            *w *= self.weight(t);
        }
        v
    }
}

pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// TF-IDF vectors of a set of target strings under a fixed IDF table.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfIndex {
    idf: Idf,
    vectors: Vec<SparseVector>,
}

impl TfIdfIndex {
    /// IDF from `corpus`, one vector per entry of `targets`.
    pub fn build<S: AsRef<str>>(corpus: &[S], targets: &[S]) -> Self {
        let idf = Idf::from_documents(corpus.iter().map(|s| s.as_ref()));
        Self::with_idf(idf, targets)
    }

    /// Reuses a frozen IDF table, so existing vectors do not move when
    /// targets are added.
    pub fn with_idf<S: AsRef<str>>(idf: Idf, targets: &[S]) -> Self {
        let vectors = targets.iter().map(|t| idf.vectorize(t.as_ref())).collect();
        Self { idf, vectors }
    }

    pub fn idf(&self) -> &Idf {
        &self.idf
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, index: usize) -> &SparseVector {
        &self.vectors[index]
    }

    /// Cosine of the query against every target, or `None` for a query
    /// without tokens.
    pub fn scores(&self, query: &str) -> Option<Vec<f64>> {
        let q = self.idf.vectorize(query);
        if q.is_empty() {
            return None;
        }
        Some(self.vectors.iter().map(|v| cosine(&q, v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_on_non_alphanumerics() {
        assert_eq!(tokenize("Plaster, smooth-on BRICK 3/8\""), vec!["plaster", "smooth", "on", "brick", "3", "8"]);
        assert!(tokenize(" ,;").is_empty());
    }

    #[test]
    fn smoothed_weight_formula() {
        let idf = Idf::from_documents(["a b", "a c", "a"]);
        assert_eq!(idf.weight("a"), 1.0);
        assert!((idf.weight("b") - (2.0f64.ln() + 1.0)).abs() < 1e-15);
        assert!((idf.weight("zzz") - (4.0f64.ln() + 1.0)).abs() < 1e-15);
    }
}
