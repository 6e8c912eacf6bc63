use serde::{Deserialize, Serialize};

use crate::error::{CcrError, Result};
use crate::linalg::{dot, norm};
use crate::numerics::l2_normalize;
use crate::scalar::Scalar;

/// Meaning-text embeddings of candidate characters, for zero-shot matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TextDictionary<T> {
    entries: Vec<(String, Vec<T>)>,
}

impl<T: Scalar> TextDictionary<T> {
    /// Entries are normalised and sorted by character id.
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<T>)>) -> Result<Self> {
        let mut entries: Vec<(String, Vec<T>)> = entries
            .into_iter()
            .map(|(c, v)| Ok((c, l2_normalize(&v)?)))
            .collect::<Result<_>>()?;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(CcrError::InvalidArgument("duplicate character in text dictionary".into()));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn characters(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.0.as_str())
    }

    pub fn scores(&self, query: &[T]) -> Result<Vec<T>> {
        if self.entries.is_empty() {
            return Err(CcrError::InvalidArgument("text dictionary is empty".into()));
        }
        let qn = norm(query);
        if !(qn > T::zero()) {
            return Err(CcrError::DegenerateInput("zero query".into()));
        }
        self.entries
            .iter()
            .map(|(_, v)| {
                if v.len() != query.len() {
                    return Err(CcrError::DimensionMismatch {
                        context: "text dictionary query",
                        expected: v.len(),
                        got: query.len(),
                    });
                }
                Ok(dot(query, v) / qn)
            })
            .collect()
    }

    /// Characters ranked by cosine, descending; ties by character id.
    pub fn rank(&self, query: &[T], top_k: usize) -> Result<Vec<(String, T)>> {
        let scores = self.scores(query)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        Ok(order
            .into_iter()
            .take(top_k)
            .map(|i| (self.entries[i].0.clone(), scores[i]))
            .collect())
    }

    pub fn position(&self, character: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.0 == character)
    }
}
