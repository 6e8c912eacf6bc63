use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::kmeans::{auto_k, spherical_kmeans, spherical_kmeans_restarts, AutoKConfig, DEFAULT_MAX_ITERS};
use crate::data::ClassKey;
use crate::error::{CcrError, Result};
use crate::linalg::{dot, norm};
use crate::numerics::l2_normalize;
use crate::scalar::Scalar;
use crate::seed::{derive_seed_str, rng_for};

/// How each class's prototypes are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BankStrategy {
    /// Silhouette-selected number of spherical k-means centroids.
    AutoK(AutoKConfig),
    /// One normalised class mean.
    Mean,
    /// Up to `m` uniformly sampled class embeddings.
    RandomSample { m: usize },
}

impl Default for BankStrategy {
    fn default() -> Self {
        BankStrategy::AutoK(AutoKConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankConfig {
    pub strategy: BankStrategy,
    pub seed: u64,
}

/// Flattened prototypes with a prefix-sum pointer array: class `y` owns
/// rows `pointers[y]..pointers[y + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PrototypeBank<T> {
    pub dim: usize,
    pub config: BankConfig,
    pub class_keys: Vec<ClassKey>,
    pub pointers: Vec<usize>,
    pub prototypes: Vec<T>,
}

/// Embeddings grouped by class, iterated in key order.
pub type ClassGroups<T> = BTreeMap<ClassKey, Vec<Vec<T>>>;

pub fn group_by_class<T: Scalar>(items: impl IntoIterator<Item = (ClassKey, Vec<T>)>) -> ClassGroups<T> {
    let mut groups: ClassGroups<T> = BTreeMap::new();
    for (k, v) in items {
        groups.entry(k).or_default().push(v);
    }
    groups
}

fn class_prototypes<T: Scalar>(key: &ClassKey, points: &[Vec<T>], config: &BankConfig) -> Result<Vec<Vec<T>>> {
    if points.is_empty() {
        return Err(CcrError::InvalidArgument(format!("class {key} has no embeddings")));
    }
    let class_seed = derive_seed_str(config.seed, "bank-class", &key.to_string());
    match config.strategy {
        BankStrategy::AutoK(cfg) => {
            let k = auto_k(points, &cfg, class_seed)?;
            let res = spherical_kmeans_restarts(points, k, derive_seed_str(class_seed, "final", ""), cfg.max_iters, cfg.n_init)?;
            Ok(res.centroids)
        }
        BankStrategy::Mean => {
            let res = spherical_kmeans(points, 1, class_seed, DEFAULT_MAX_ITERS)?;
            Ok(res.centroids)
        }
        BankStrategy::RandomSample { m } => {
            if m == 0 {
                return Err(CcrError::InvalidArgument("random-sample bank needs m >= 1".into()));
            }
            let take = m.min(points.len());
            let mut rng = rng_for(class_seed, "bank-rs", &[]);
            let mut idx = index::sample(&mut rng, points.len(), take).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| l2_normalize(&points[i])).collect()
        }
    }
}

impl<T: Scalar> PrototypeBank<T> {
    fn empty(dim: usize, config: BankConfig) -> Self {
        Self {
            dim,
            config,
            class_keys: Vec::new(),
            pointers: vec![0],
            prototypes: Vec::new(),
        }
    }

    fn append(&mut self, groups: &ClassGroups<T>) -> Result<()> {
        for (key, points) in groups {
            if let Some(p) = points.iter().find(|p| p.len() != self.dim) {
                return Err(CcrError::DimensionMismatch {
                    context: "bank embedding",
                    expected: self.dim,
                    got: p.len(),
                });
            }
            let protos = class_prototypes(key, points, &self.config)?;
            for p in &protos {
                self.prototypes.extend_from_slice(p);
            }
            self.class_keys.push(key.clone());
            self.pointers.push(self.pointers.last().unwrap() + protos.len());
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_keys.len()
    }

    pub fn num_prototypes(&self) -> usize {
        *self.pointers.last().unwrap_or(&0)
    }

    pub fn prototype(&self, row: usize) -> &[T] {
        &self.prototypes[row * self.dim..(row + 1) * self.dim]
    }

    pub fn class_prototypes(&self, class: usize) -> impl Iterator<Item = &[T]> {
        (self.pointers[class]..self.pointers[class + 1]).map(move |r| self.prototype(r))
    }

    pub fn class_index(&self, key: &ClassKey) -> Option<usize> {
        self.class_keys.iter().position(|k| k == key)
    }

    /// Max cosine over each class's prototypes.
    pub fn class_scores(&self, query: &[T]) -> Result<Vec<T>> {
        if self.num_classes() == 0 {
            return Err(CcrError::InvalidArgument("prototype bank is empty".into()));
        }
        if query.len() != self.dim {
            return Err(CcrError::DimensionMismatch {
                context: "bank query",
                expected: self.dim,
                got: query.len(),
            });
        }
        let qn = norm(query);
        if !(qn > T::zero()) {
            return Err(CcrError::DegenerateInput("zero query".into()));
        }
        Ok((0..self.num_classes())
            .map(|c| {
                self.class_prototypes(c)
                    .map(|p| dot(query, p) / qn)
                    .fold(T::neg_infinity(), T::max)
            })
            .collect())
    }

    /// Checks the pointer-array invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CcrError::Parse(format!("invalid prototype bank: {m}")));
        if self.pointers.first() != Some(&0) {
            return bad("pointer array must start at 0");
        }
        if self.pointers.len() != self.class_keys.len() + 1 {
            return bad("pointer array length must be #classes + 1");
        }
        if self.pointers.windows(2).any(|w| w[1] <= w[0]) {
            return bad("every class must own at least one prototype");
        }
        if self.prototypes.len() != self.num_prototypes() * self.dim {
            return bad("prototype rows do not match the pointer array");
        }
        let keys: BTreeSet<&ClassKey> = self.class_keys.iter().collect();
        if keys.len() != self.class_keys.len() {
            return bad("duplicate class key");
        }
        for r in 0..self.num_prototypes() {
            if (norm(self.prototype(r)).as_f64() - 1.0).abs() > 1e-5 {
                return bad("prototype is not unit-norm");
            }
        }
        Ok(())
    }
}

/// Builds a bank over all classes, in sorted class-key order.
pub fn build_bank<T: Scalar>(groups: &ClassGroups<T>, config: BankConfig) -> Result<PrototypeBank<T>> {
    let dim = groups
        .values()
        .flat_map(|v| v.first())
        .map(|v| v.len())
        .next()
        .ok_or_else(|| CcrError::InvalidArgument("cannot build a bank from no embeddings".into()))?;
    let mut bank = PrototypeBank::empty(dim, config);
    bank.append(groups)?;
    Ok(bank)
}

/// Appends new classes; existing rows are untouched.
pub fn bank_extend<T: Scalar>(bank: &PrototypeBank<T>, groups: &ClassGroups<T>) -> Result<PrototypeBank<T>> {
    if let Some(k) = groups.keys().find(|k| bank.class_keys.contains(k)) {
        return Err(CcrError::InvalidArgument(format!("class {k} is already in the bank")));
    }
    let mut out = bank.clone();
    out.append(groups)?;
    Ok(out)
}

/// Classes ranked by score, descending; ties keep bank order.
pub fn rank_classes<T: Scalar>(query: &[T], bank: &PrototypeBank<T>, top_k: usize) -> Result<Vec<(ClassKey, T)>> {
    let scores = bank.class_scores(query)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(top_k)
        .map(|c| (bank.class_keys[c].clone(), scores[c]))
        .collect())
}

/// 0-based position `class` would take in [`rank_classes`] output.
pub fn class_rank<T: Scalar>(scores: &[T], class: usize) -> usize {
    let s = scores[class];
    scores
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > s || (v == s && i < class))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: usize, c: &str) -> ClassKey {
        ClassKey::new(s, c)
    }

    fn cfg(strategy: BankStrategy) -> BankConfig {
        BankConfig { strategy, seed: 1 }
    }

    #[test]
    fn single_image_bank() {
        let g = group_by_class(vec![(key(0, "a"), vec![0.0, 1.0])]);
        let b = build_bank(&g, cfg(BankStrategy::default())).unwrap();
        assert_eq!(b.pointers, vec![0, 1]);
        assert_eq!(b.prototypes, vec![0.0, 1.0]);
        b.validate().unwrap();
    }

    #[test]
    fn pointer_arithmetic_with_forced_single_prototypes() {
        let mut items = vec![(key(0, "a"), vec![1.0, 0.0])];
        for i in 0..4 {
            items.push((key(0, "b"), vec![0.1 * i as f64, 1.0]));
        }
        let b = build_bank(&group_by_class(items), cfg(BankStrategy::Mean)).unwrap();
        assert_eq!(b.pointers, vec![0, 1, 2]);
        b.validate().unwrap();
    }

    #[test]
    fn empty_input_and_empty_bank_errors() {
        let g: ClassGroups<f64> = BTreeMap::new();
        assert!(build_bank(&g, cfg(BankStrategy::Mean)).is_err());
        let b = PrototypeBank::<f64>::empty(2, cfg(BankStrategy::Mean));
        assert!(rank_classes(&[1.0, 0.0], &b, 3).is_err());
    }

    #[test]
    fn ranking_examples() {
        let g = group_by_class(vec![
            (key(0, "a"), vec![0.9, (1.0f64 - 0.81).sqrt()]),
            (key(0, "b"), vec![0.1, (1.0f64 - 0.01).sqrt()]),
        ]);
        let b = build_bank(&g, cfg(BankStrategy::Mean)).unwrap();
        let r = rank_classes(&[1.0, 0.0], &b, 5).unwrap();
        assert_eq!(r.iter().map(|x| x.0.character.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        let exact = rank_classes(&b.prototype(1).to_vec(), &b, 1).unwrap();
        assert_eq!(exact[0].0, key(0, "b"));
        assert!((exact[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_sample_strategy_caps_prototypes() {
        let items: Vec<(ClassKey, Vec<f64>)> = (0..12)
            .map(|i| (key(1, "x"), vec![1.0, i as f64 * 0.1]))
            .chain((0..3).map(|i| (key(1, "y"), vec![-1.0, i as f64])))
            .collect();
        let b = build_bank(&group_by_class(items), cfg(BankStrategy::RandomSample { m: 8 })).unwrap();
        assert_eq!(b.pointers, vec![0, 8, 11]);
        b.validate().unwrap();
    }

    #[test]
    fn extend_rejects_duplicates_and_no_op_is_identity() {
        let g = group_by_class(vec![(key(0, "a"), vec![1.0, 0.0])]);
        let b = build_bank(&g, cfg(BankStrategy::default())).unwrap();
        assert!(bank_extend(&b, &g).is_err());
        assert_eq!(bank_extend(&b, &BTreeMap::new()).unwrap(), b);
    }

    #[test]
    fn class_rank_agrees_with_sorting() {
        let scores = [0.3, 0.9, 0.3, -0.1];
        assert_eq!(class_rank(&scores, 1), 0);
        assert_eq!(class_rank(&scores, 0), 1);
        assert_eq!(class_rank(&scores, 2), 2);
        assert_eq!(class_rank(&scores, 3), 3);
    }
}
