//! Frozen embedding provider: pre-insertion visual features, the frozen
//! post-insertion map, and text embeddings in the final space.

use std::collections::HashMap;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::error::{check_dim, CcrError, Result};
use crate::io::{read_embeddings, EmbeddingRecord};
use crate::linalg::{norm, orthonormalize_rows, Matrix};
use crate::numerics::{l2_normalize, l2_normalize_backward};
use crate::scalar::Scalar;
use crate::seed::rng_for;

/// Unit-norm tolerance applied to text embeddings on load.
pub const TEXT_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PostMapSpec {
    Identity,
    Orthogonal { seed: u64 },
}

impl Default for PostMapSpec {
    fn default() -> Self {
        PostMapSpec::Orthogonal { seed: 0x5eed }
    }
}

/// Fixed linear map followed by L2 normalisation. Never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct PostMap<T> {
    spec: PostMapSpec,
    dim: usize,
    matrix: Option<Matrix<T>>,
}

/// Values needed to backpropagate through [`PostMap::forward`].
#[derive(Debug, Clone)]
pub struct PostMapCache<T> {
    pub pre_norm: T,
}

impl<T: Scalar> PostMap<T> {
    pub fn new(spec: PostMapSpec, dim: usize) -> Self {
        let matrix = match spec {
            PostMapSpec::Identity => None,
            PostMapSpec::Orthogonal { seed } => {
                let mut rng = rng_for(seed, "post-map", &[dim as u64]);
                let mut m = Matrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
                orthonormalize_rows(&mut m);
                Some(Matrix {
                    rows: dim,
                    cols: dim,
                    data: m.data.iter().map(|&v| T::lit(v)).collect(),
                })
            }
        };
        Self { spec, dim, matrix }
    }

    pub fn spec(&self) -> PostMapSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The linear part only, before normalisation.
    pub fn linear(&self, v: &[T]) -> Vec<T> {
        match &self.matrix {
            Some(m) => m.matvec(v),
            None => v.to_vec(),
        }
    }

    pub fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(v)?.0)
    }

    pub fn forward(&self, v: &[T]) -> Result<(Vec<T>, PostMapCache<T>)> {
        check_dim("post_map input", self.dim, v.len())?;
        let y = self.linear(v);
        let n = norm(&y);
        let unit = l2_normalize(&y)
            .map_err(|_| CcrError::DegenerateInput("post map produced a zero vector".into()))?;
        Ok((unit, PostMapCache { pre_norm: n }))
    }

    pub fn backward(&self, unit: &[T], cache: &PostMapCache<T>, upstream: &[T]) -> Vec<T> {
        let dy = l2_normalize_backward(unit, cache.pre_norm, upstream);
        match &self.matrix {
            Some(m) => m.matvec_t(&dy),
            None => dy,
        }
    }
}

/// The frozen-backbone contract consumed by the engine.
pub trait EmbedProvider<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    /// Pre-insertion feature of an image sample.
    fn visual_features(&self, id: &str) -> Result<&[T]>;
    /// Unit-norm text embedding in the final space.
    fn text_embedding(&self, id: &str) -> Result<&[T]>;
    fn post_map(&self) -> &PostMap<T>;

    fn has_text(&self, id: &str) -> bool {
        self.text_embedding(id).is_ok()
    }
}

#[derive(Debug, Clone)]
struct StoredVector<T> {
    kind: Modality,
    values: Vec<T>,
}

/// Id-indexed vectors shared by both provider implementations.
#[derive(Debug, Clone)]
pub struct VectorStore<T> {
    dim: usize,
    vectors: HashMap<String, StoredVector<T>>,
}

impl<T: Scalar> VectorStore<T> {
    pub fn from_records(dim: usize, records: Vec<EmbeddingRecord<T>>) -> Result<Self> {
        let mut vectors = HashMap::with_capacity(records.len());
        for rec in records {
            check_dim("embedding record", dim, rec.values.len())?;
            if rec.dim != dim {
                return Err(CcrError::Parse(format!(
                    "record `{}` declares dim {} but the file uses {dim}",
                    rec.id, rec.dim
                )));
            }
            if rec.values.iter().any(|v| !v.is_finite()) {
                return Err(CcrError::Parse(format!("record `{}` has non-finite values", rec.id)));
            }
            if rec.kind != Modality::Image {
                let n = norm(&rec.values).as_f64();
                if (n - 1.0).abs() > TEXT_NORM_TOL {
                    return Err(CcrError::Parse(format!(
                        "text record `{}` is not unit-norm (|v| = {n})",
                        rec.id
                    )));
                }
            }
            let id = rec.id.clone();
            if vectors
                .insert(
                    rec.id,
                    StoredVector {
                        kind: rec.kind,
                        values: rec.values,
                    },
                )
                .is_some()
            {
                return Err(CcrError::Parse(format!("duplicate id `{id}`")));
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn get(&self, id: &str, image: bool) -> Result<&[T]> {
        match self.vectors.get(id) {
            Some(v) if (v.kind == Modality::Image) == image => Ok(&v.values),
            _ => Err(CcrError::UnknownId(id.to_string())),
        }
    }
}

/// In-memory provider backed by generated vectors.
#[derive(Debug, Clone)]
pub struct SynthProvider<T> {
    store: VectorStore<T>,
    post_map: PostMap<T>,
}

impl<T: Scalar> SynthProvider<T> {
    pub fn new(store: VectorStore<T>, post_map: PostMap<T>) -> Result<Self> {
        check_dim("provider post map", store.dim, post_map.dim())?;
        Ok(Self { store, post_map })
    }
}

impl<T: Scalar> EmbedProvider<T> for SynthProvider<T> {
    fn dim(&self) -> usize {
        self.store.dim
    }
    fn visual_features(&self, id: &str) -> Result<&[T]> {
        self.store.get(id, true)
    }
    fn text_embedding(&self, id: &str) -> Result<&[T]> {
        self.store.get(id, false)
    }
    fn post_map(&self) -> &PostMap<T> {
        &self.post_map
    }
}

/// Provider backed by an embeddings JSON-lines file.
#[derive(Debug, Clone)]
pub struct FileProvider<T> {
    store: VectorStore<T>,
    post_map: PostMap<T>,
}

impl<T: Scalar> FileProvider<T> {
    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }
}

/// Loads and validates an embeddings file. An empty file yields an empty
/// provider of dimension `0` unless `dim_hint` is given.
pub fn load_file_provider<T: Scalar>(
    path: impl AsRef<Path>,
    post_map: PostMapSpec,
    dim_hint: Option<usize>,
) -> Result<FileProvider<T>> {
    let records = read_embeddings::<T>(path)?;
    let dim = records
        .first()
        .map(|r| r.dim)
        .or(dim_hint)
        .unwrap_or(0);
    if let Some(h) = dim_hint {
        check_dim("embeddings file dimension", h, dim)?;
    }
    let store = VectorStore::from_records(dim, records)?;
    Ok(FileProvider {
        store,
        post_map: PostMap::new(post_map, dim),
    })
}

impl<T: Scalar> EmbedProvider<T> for FileProvider<T> {
    fn dim(&self) -> usize {
        self.store.dim
    }
    fn visual_features(&self, id: &str) -> Result<&[T]> {
        self.store.get(id, true)
    }
    fn text_embedding(&self, id: &str) -> Result<&[T]> {
        self.store.get(id, false)
    }
    fn post_map(&self) -> &PostMap<T> {
        &self.post_map
    }
}
