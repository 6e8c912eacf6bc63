//! Continual embedding-retrieval engine for script-staged character
//! recognition.
//!
//! A frozen provider supplies pre-insertion features and text embeddings.
//! Per-script low-rank adapters calibrate the features, a small router picks
//! one adapter per query, and a multi-prototype dictionary answers retrieval
//! queries by exact cosine scan. The [`engine`] module drives the staged
//! protocol and computes the accuracy matrices, AA, FGT and zero-shot scores.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for common uses.

pub mod data;
pub mod dictionary;
pub mod engine;
pub mod error;
pub mod io;
pub mod linalg;
pub mod numerics;
pub mod objectives;
pub mod provider;
pub mod router;
pub mod scalar;
pub mod seed;
pub mod sia;
pub mod synth;

pub use error::{CcrError, Result};
pub use scalar::Scalar;

pub type SiaParams32 = sia::SiaParams<f32>;
pub type SiaParams64 = sia::SiaParams<f64>;
pub type RouterParams32 = router::RouterParams<f32>;
pub type RouterParams64 = router::RouterParams<f64>;
pub type PrototypeBank32 = dictionary::PrototypeBank<f32>;
pub type PrototypeBank64 = dictionary::PrototypeBank<f64>;
pub type TextDictionary32 = dictionary::TextDictionary<f32>;
pub type EmbeddingRecord32 = io::EmbeddingRecord<f32>;
pub type SynthProvider32 = provider::SynthProvider<f32>;
pub type FileProvider32 = provider::FileProvider<f32>;
pub type StageState32 = engine::StageState<f32>;
pub type Checkpoint32 = engine::Checkpoint<f32>;
