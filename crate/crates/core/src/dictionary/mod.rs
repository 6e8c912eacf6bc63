//! Retrieval dictionaries: the multi-prototype image bank and the
//! meaning-text dictionary used for zero-shot matching.

mod bank;
mod kmeans;
mod text;

pub use bank::{
    bank_extend, build_bank, class_rank, group_by_class, rank_classes, BankConfig, BankStrategy,
    ClassGroups, PrototypeBank,
};
pub use kmeans::{
    auto_k, auto_k_scores, auto_k_upper, silhouette_cos, spherical_kmeans, spherical_kmeans_restarts, AutoKConfig,
    ClusteringResult, DEFAULT_K_MAX, DEFAULT_MAX_ITERS, DEFAULT_N_INIT, DEFAULT_SAMPLE_CAP,
};
pub use text::TextDictionary;
