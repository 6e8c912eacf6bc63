//! Contrastive objectives and batch assembly.
//!
//! The loss is one-directional: anchor `i` is scored against every candidate
//! in the batch, with candidate `i` as its positive.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{meaning_id, shape_id, ClassKey, Modality, Record};
use crate::error::{check_dim, CcrError, Result};
use crate::linalg::{dot, norm};
use crate::numerics::{log_sum_exp, softmax};
use crate::scalar::Scalar;
use crate::seed::Rng;

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_BATCH_SIZE: usize = 128;
/// Allowed deviation from unit norm for batch members.
pub const UNIT_NORM_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ContrastiveBatch<T> {
    anchors: Vec<Vec<T>>,
    candidates: Vec<Vec<T>>,
    kinds: Vec<Modality>,
    trainable: Vec<bool>,
}

impl<T: Scalar> ContrastiveBatch<T> {
    pub fn new(
        anchors: Vec<Vec<T>>,
        candidates: Vec<Vec<T>>,
        kinds: Vec<Modality>,
        trainable: Vec<bool>,
    ) -> Result<Self> {
        let b = anchors.len();
        check_dim("batch candidates", b, candidates.len())?;
        check_dim("batch candidate kinds", b, kinds.len())?;
        check_dim("batch trainable mask", b, trainable.len())?;
        let dim = anchors.first().map_or(0, |a| a.len());
        for v in anchors.iter().chain(&candidates) {
            check_dim("batch embedding", dim, v.len())?;
            let n = norm(v).as_f64();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(CcrError::DegenerateInput(format!(
                    "batch embeddings must be unit-norm (got |v| = {n})"
                )));
            }
        }
        for (k, &t) in kinds.iter().zip(&trainable) {
            if t && *k != Modality::Image {
                return Err(CcrError::Protocol(
                    "text candidates are constants and cannot be trainable".into(),
                ));
            }
        }
        Ok(Self {
            anchors,
            candidates,
            kinds,
            trainable,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn kinds(&self) -> &[Modality] {
        &self.kinds
    }
}

#[derive(Debug, Clone)]
pub struct InfoNceOutput<T> {
    pub loss: T,
    pub anchor_grads: Vec<Vec<T>>,
    /// `None` for candidates outside the trainable mask.
    pub candidate_grads: Vec<Option<Vec<T>>>,
}

/// Mean InfoNCE over the batch with cosine similarity and temperature `tau`.
pub fn infonce_loss<T: Scalar>(batch: &ContrastiveBatch<T>, tau: f64) -> Result<InfoNceOutput<T>> {
    if !(tau > 0.0) {
        return Err(CcrError::InvalidArgument(format!("temperature must be > 0 (got {tau})")));
    }
    let b = batch.len();
    if b == 0 {
        return Err(CcrError::InvalidArgument("InfoNCE needs a non-empty batch".into()));
    }
    let dim = batch.anchors[0].len();
    let inv_tau = T::lit(1.0 / tau);
    let bt = T::from_usize(b).unwrap();
    let a_norm: Vec<T> = batch.anchors.iter().map(|v| norm(v)).collect();
    let c_norm: Vec<T> = batch.candidates.iter().map(|v| norm(v)).collect();

    let mut anchor_grads = vec![vec![T::zero(); dim]; b];
    let mut cand_grads = vec![vec![T::zero(); dim]; b];
    let mut loss = T::zero();
    let mut sims = vec![T::zero(); b];
    for i in 0..b {
        let a = &batch.anchors[i];
        for (j, c) in batch.candidates.iter().enumerate() {
            sims[j] = dot(a, c) / (a_norm[i] * c_norm[j]);
        }
        let logits: Vec<T> = sims.iter().map(|&s| s * inv_tau).collect();
        loss += log_sum_exp(&logits) - logits[i];
        let probs = softmax(&logits);
        for j in 0..b {
            let mut w = probs[j];
            if i == j {
                w -= T::one();
            }
            // d loss / d sim_ij
            let g = w * inv_tau / bt;
            if g == T::zero() {
                continue;
            }
            let c = &batch.candidates[j];
            let (na, nc, s) = (a_norm[i], c_norm[j], sims[j]);
            for k in 0..dim {
                anchor_grads[i][k] += g * (c[k] / (na * nc) - s * a[k] / (na * na));
            }
            if batch.trainable[j] {
                for k in 0..dim {
                    cand_grads[j][k] += g * (a[k] / (na * nc) - s * c[k] / (nc * nc));
                }
            }
        }
    }
    let candidate_grads = cand_grads
        .into_iter()
        .zip(&batch.trainable)
        .map(|(g, &t)| t.then_some(g))
        .collect();
    Ok(InfoNceOutput {
        loss: loss / bt,
        anchor_grads,
        candidate_grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveSource {
    SameClassImage,
    MeaningText,
    ShapeText,
}

/// Sampling weights for visual, meaning and shape positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveSpec {
    pub image: f64,
    pub meaning: f64,
    pub shape: f64,
}

impl Default for PositiveSpec {
    fn default() -> Self {
        Self {
            image: 8.0,
            meaning: 1.0,
            shape: 1.0,
        }
    }
}

impl PositiveSpec {
    pub fn image_only() -> Self {
        Self {
            image: 1.0,
            meaning: 0.0,
            shape: 0.0,
        }
    }

    fn draw(&self, rng: &mut Rng) -> PositiveSource {
        let total = self.image + self.meaning + self.shape;
        let u = rng.random::<f64>() * total;
        if u < self.image {
            PositiveSource::SameClassImage
        } else if u < self.image + self.meaning {
            PositiveSource::MeaningText
        } else {
            PositiveSource::ShapeText
        }
    }
}

/// A sampled positive for one anchor instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Positive {
    /// Source that was drawn before any fallback.
    pub drawn: PositiveSource,
    pub source: PositiveSource,
    /// Image id or text id, depending on `source`.
    pub reference: String,
}

impl Positive {
    pub fn fell_back(&self) -> bool {
        self.drawn != self.source
    }
}

/// Draws one positive per anchor from the current stage's training images.
pub struct PositiveSampler<'a> {
    records: Vec<&'a Record>,
    by_class: BTreeMap<(String, String), Vec<usize>>,
    spec: PositiveSpec,
}

impl<'a> PositiveSampler<'a> {
    pub fn new(records: Vec<&'a Record>, spec: PositiveSpec) -> Result<Self> {
        let mut by_class: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.kind != Modality::Image {
                return Err(CcrError::InvalidArgument(format!("anchor `{}` is not an image", r.id)));
            }
            let key = (
                r.script.clone().unwrap_or_default(),
                r.character.clone().unwrap_or_default(),
            );
            by_class.entry(key).or_default().push(i);
        }
        Ok(Self {
            records,
            by_class,
            spec,
        })
    }

    pub fn records(&self) -> &[&'a Record] {
        &self.records
    }

    /// `text_available` answers whether a text id can be embedded.
    pub fn sample(&self, anchor: usize, rng: &mut Rng, text_available: impl Fn(&str) -> bool) -> Positive {
        let rec = self.records[anchor];
        let drawn = self.spec.draw(rng);
        let text = match drawn {
            PositiveSource::MeaningText => rec.character.as_deref().map(meaning_id),
            PositiveSource::ShapeText => Some(shape_id(&rec.id)),
            PositiveSource::SameClassImage => None,
        };
        if let Some(id) = text {
            if text_available(&id) {
                return Positive {
                    drawn,
                    source: drawn,
                    reference: id,
                };
            }
            log::warn!("no {drawn:?} for anchor `{}`; using a visual positive", rec.id);
        }
        let key = (
            rec.script.clone().unwrap_or_default(),
            rec.character.clone().unwrap_or_default(),
        );
        let members = &self.by_class[&key];
        let others: Vec<usize> = members.iter().copied().filter(|&m| m != anchor).collect();
        let pick = if others.is_empty() {
            anchor
        } else {
            others[rng.random_range(0..others.len())]
        };
        Positive {
            drawn,
            source: PositiveSource::SameClassImage,
            reference: self.records[pick].id.clone(),
        }
    }
}

/// Replay batches of `(anchor, positive)` buffer indices sharing a class.
pub fn phase2_pair_sampler(
    classes: &[ClassKey],
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<(usize, usize)>>> {
    if classes.is_empty() {
        return Err(CcrError::Protocol("replay buffer is empty".into()));
    }
    if batch_size == 0 {
        return Err(CcrError::InvalidArgument("batch size must be > 0".into()));
    }
    let mut members: BTreeMap<&ClassKey, Vec<usize>> = BTreeMap::new();
    for (i, c) in classes.iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.shuffle(rng);
    let pairs: Vec<(usize, usize)> = order
        .into_iter()
        .map(|a| {
            let group = &members[&classes[a]];
            if group.len() == 1 {
                return (a, a);
            }
            // uniform over the other members
            let k = rng.random_range(0..group.len() - 1);
            let pos = group.iter().copied().filter(|&m| m != a).nth(k).unwrap();
            (a, pos)
        })
        .collect();
    Ok(pairs.chunks(batch_size).map(|c| c.to_vec()).collect())
}
