//! Seeded multi-script benchmark generator.
//!
//! Each character has a latent direction; each script-aware class has one or
//! more style modes around it. A script applies a partial rotation to the
//! glyph, adds a script signature offset, and injects strong noise along a
//! script-specific low-rank nuisance subspace. Meaning texts are shared
//! across scripts; shape texts are per image.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    meaning_id, shape_id, DatasetManifest, Modality, Record, Split, CANONICAL_SCRIPTS,
};
use crate::error::{CcrError, Result};
use crate::io::EmbeddingRecord;
use crate::linalg::{dot, orthonormalize_rows, Matrix};
use crate::numerics::l2_normalize;
use crate::provider::{PostMap, PostMapSpec, SynthProvider, VectorStore};
use crate::scalar::Scalar;
use crate::seed::{rng_for, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dim: usize,
    pub scripts: Vec<String>,
    /// Characters available to draw from; each script uses a subset.
    pub char_pool: usize,
    /// Characters are grouped into this many families of near-duplicates;
    /// zero means every character direction is independent.
    pub char_families: usize,
    /// Distance of a character from its family centre, before normalising.
    pub family_spread: f64,
    pub chars_per_script: usize,
    pub min_style_modes: usize,
    pub max_style_modes: usize,
    pub min_images_per_class: usize,
    pub max_images_per_class: usize,
    /// Exponent of the class-size power law; larger means a longer tail.
    pub class_size_skew: f64,
    pub test_fraction: f64,
    pub feature_scale: f64,
    /// Norm of each style-mode offset around the character direction.
    pub mode_spread: f64,
    /// Dimension of the subspace each script rotates (rounded down to even).
    pub script_rotation_dim: usize,
    /// Rotation angle as a fraction of a right angle.
    pub script_rotation_strength: f64,
    pub script_signature: f64,
    pub nuisance_rank: usize,
    /// Per-coordinate std of the nuisance coefficients.
    pub nuisance_scale: f64,
    /// Per-coordinate std of isotropic feature noise.
    pub noise_scale: f64,
    /// Fraction of images that are badly degraded.
    pub degraded_fraction: f64,
    /// Noise std of a degraded image, replacing `noise_scale`.
    pub degraded_noise: f64,
    /// Cosine between a meaning text's latent and its character direction.
    pub text_alignment: f64,
    pub shape_noise: f64,
    /// Extra low-resource characters generated only for the zero-shot track.
    pub zero_shot_chars: usize,
    /// Characters with fewer images than this, over all scripts, are held out.
    pub zero_shot_threshold: usize,
    pub post_map: PostMapSpec,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            scripts: CANONICAL_SCRIPTS.iter().map(|s| s.to_string()).collect(),
            char_pool: 60,
            char_families: 12,
            family_spread: 1.0,
            chars_per_script: 40,
            min_style_modes: 1,
            max_style_modes: 3,
            min_images_per_class: 3,
            max_images_per_class: 30,
            class_size_skew: 1.2,
            test_fraction: 0.2,
            feature_scale: 3.0,
            mode_spread: 1.0,
            script_rotation_dim: 16,
            script_rotation_strength: 1.7,
            script_signature: 3.0,
            nuisance_rank: 6,
            nuisance_scale: 2.5,
            noise_scale: 0.3,
            degraded_fraction: 0.3,
            degraded_noise: 0.8,
            text_alignment: 0.8,
            shape_noise: 0.3,
            zero_shot_chars: 60,
            zero_shot_threshold: 5,
            post_map: PostMapSpec::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CcrError::InvalidArgument(format!("synthetic config: {m}")));
        if self.dim < 2 {
            return bad("dim must be >= 2".into());
        }
        if self.scripts.is_empty() {
            return bad("at least one script is required".into());
        }
        if BTreeSet::from_iter(&self.scripts).len() != self.scripts.len() {
            return bad("script names must be unique".into());
        }
        if self.chars_per_script == 0 || self.chars_per_script > self.char_pool {
            return bad(format!(
                "chars_per_script ({}) must be in 1..=char_pool ({})",
                self.chars_per_script, self.char_pool
            ));
        }
        if self.min_style_modes == 0 || self.min_style_modes > self.max_style_modes {
            return bad("style modes must satisfy 1 <= min <= max".into());
        }
        if self.min_images_per_class == 0 || self.min_images_per_class > self.max_images_per_class {
            return bad("image range must satisfy 1 <= min <= max".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must be in [0, 1)".into());
        }
        if self.test_fraction > 0.0 && self.max_images_per_class < 2 {
            return bad("test images requested but every class is a singleton".into());
        }
        if self.script_rotation_dim > self.dim || self.nuisance_rank > self.dim {
            return bad("rotation and nuisance subspaces must fit in dim".into());
        }
        if !(0.0..=1.0).contains(&self.degraded_fraction) {
            return bad("degraded_fraction must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.text_alignment) {
            return bad("text_alignment must be in [0, 1]".into());
        }
        if self.zero_shot_threshold == 0 {
            return bad("zero_shot_threshold must be >= 1".into());
        }
        if self.zero_shot_chars > 0 && self.zero_shot_threshold < 2 {
            return bad("zero-shot characters need a threshold >= 2".into());
        }
        let nonneg = [
            self.class_size_skew,
            self.feature_scale,
            self.mode_spread,
            self.family_spread,
            self.script_rotation_strength,
            self.script_signature,
            self.nuisance_scale,
            self.noise_scale,
            self.degraded_noise,
            self.shape_noise,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("scales must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Generated manifest plus the backing vectors for a provider.
#[derive(Debug, Clone)]
pub struct SynthDataset<T> {
    pub config: SynthConfig,
    pub manifest: DatasetManifest,
    pub embeddings: Vec<EmbeddingRecord<T>>,
}

impl<T: Scalar> SynthDataset<T> {
    pub fn provider(&self) -> Result<SynthProvider<T>> {
        let store = VectorStore::from_records(self.config.dim, self.embeddings.clone())?;
        SynthProvider::new(store, PostMap::new(self.config.post_map, self.config.dim))
    }
}

fn gaussian(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    l2_normalize(&gaussian(dim, rng)).expect("gaussian draw is non-zero")
}

fn orthonormal_basis(dim: usize, rank: usize, rng: &mut Rng) -> Matrix<f64> {
    let mut m = Matrix::from_fn(rank, dim, |_, _| StandardNormal.sample(rng));
    orthonormalize_rows(&mut m);
    m
}

struct ScriptModel {
    /// Rows span the rotated plane pairs.
    rot_basis: Matrix<f64>,
    angles: Vec<f64>,
    signature: Vec<f64>,
    nuisance: Matrix<f64>,
}

impl ScriptModel {
    fn new(cfg: &SynthConfig, script: usize) -> Self {
        let mut rng = rng_for(cfg.seed, "synth-script", &[script as u64]);
        let pairs = cfg.script_rotation_dim / 2;
        let rot_basis = orthonormal_basis(cfg.dim, pairs * 2, &mut rng);
        let angles = (0..pairs)
            .map(|_| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * cfg.script_rotation_strength * std::f64::consts::FRAC_PI_2 * rng.random_range(0.75..1.25)
            })
            .collect();
        let signature: Vec<f64> = unit(cfg.dim, &mut rng)
            .into_iter()
            .map(|v| v * cfg.script_signature)
            .collect();
        let nuisance = orthonormal_basis(cfg.dim, cfg.nuisance_rank, &mut rng);
        Self {
            rot_basis,
            angles,
            signature,
            nuisance,
        }
    }

    fn rotate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for (p, &theta) in self.angles.iter().enumerate() {
            let (u, v) = (self.rot_basis.row(2 * p), self.rot_basis.row(2 * p + 1));
            let (a, b) = (dot(u, x), dot(v, x));
            let (c, s) = (theta.cos(), theta.sin());
            let (na, nb) = (c * a - s * b, s * a + c * b);
            for k in 0..x.len() {
                out[k] += (na - a) * u[k] + (nb - b) * v[k];
            }
        }
        out
    }
}

struct ClassPlan {
    script: usize,
    character: String,
    images: usize,
    modes: Vec<Vec<f64>>,
}

/// Builds the manifest and vectors. Fully determined by `config.seed`.
pub fn generate<T: Scalar>(config: &SynthConfig) -> Result<SynthDataset<T>> {
    config.validate()?;
    let cfg = config;
    let dim = cfg.dim;
    let scripts: Vec<ScriptModel> = (0..cfg.scripts.len()).map(|s| ScriptModel::new(cfg, s)).collect();
    let post = PostMap::<f64>::new(cfg.post_map, dim);

    let regular: Vec<String> = (0..cfg.char_pool).map(|i| format!("c{i:03}")).collect();
    let zero: Vec<String> = (0..cfg.zero_shot_chars).map(|i| format!("z{i:03}")).collect();
    let families: Vec<Vec<f64>> = (0..cfg.char_families)
        .map(|f| unit(dim, &mut rng_for(cfg.seed, "synth-family", &[f as u64])))
        .collect();
    let latent = |name: &str, idx: usize| {
        let purpose = if name.starts_with('z') { "synth-zchar" } else { "synth-char" };
        let own = unit(dim, &mut rng_for(cfg.seed, purpose, &[idx as u64]));
        if families.is_empty() {
            return own;
        }
        let centre = &families[idx % families.len()];
        let v: Vec<f64> = centre.iter().zip(&own).map(|(c, o)| c + cfg.family_spread * o).collect();
        l2_normalize(&v).expect("family latent is non-zero")
    };
    let char_latent: BTreeMap<String, Vec<f64>> = regular
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), latent(c, i)))
        .chain(zero.iter().enumerate().map(|(i, c)| (c.clone(), latent(c, i))))
        .collect();

    let mode_offsets = |script: usize, ch: &str, count: usize| -> Vec<Vec<f64>> {
        let mut rng = rng_for(cfg.seed, "synth-modes", &[script as u64, ch.len() as u64, char_index(ch)]);
        (0..count)
            .map(|_| unit(dim, &mut rng).into_iter().map(|v| v * cfg.mode_spread).collect())
            .collect()
    };

    let mut plans = Vec::new();
    for s in 0..cfg.scripts.len() {
        let mut rng = rng_for(cfg.seed, "synth-classes", &[s as u64]);
        let mut chosen = index::sample(&mut rng, cfg.char_pool, cfg.chars_per_script).into_vec();
        chosen.sort_unstable();
        for ci in chosen {
            let ch = &regular[ci];
            let u: f64 = rng.random();
            let span = (cfg.max_images_per_class - cfg.min_images_per_class + 1) as f64;
            let images = (cfg.min_images_per_class + (span * u.powf(cfg.class_size_skew.max(1e-9))) as usize)
                .min(cfg.max_images_per_class);
            let n_modes = rng.random_range(cfg.min_style_modes..=cfg.max_style_modes).min(images);
            plans.push(ClassPlan {
                script: s,
                character: ch.clone(),
                images,
                modes: mode_offsets(s, ch, n_modes),
            });
        }
    }
    let mut zrng = rng_for(cfg.seed, "synth-zero-shot", &[]);
    for ch in &zero {
        let total = zrng.random_range(1..cfg.zero_shot_threshold.max(2));
        let mut per_script: BTreeMap<usize, usize> = BTreeMap::new();
        for _ in 0..total {
            *per_script.entry(zrng.random_range(0..cfg.scripts.len())).or_default() += 1;
        }
        for (s, images) in per_script {
            plans.push(ClassPlan {
                script: s,
                character: ch.clone(),
                images,
                modes: mode_offsets(s, ch, 1),
            });
        }
    }

    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &plans {
        *totals.entry(p.character.as_str()).or_default() += p.images;
    }
    let held_out: BTreeSet<String> = totals
        .iter()
        .filter(|(_, &n)| n < cfg.zero_shot_threshold)
        .map(|(c, _)| c.to_string())
        .collect();

    let mut records = Vec::new();
    let mut embeddings = Vec::new();
    let to_t = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    for plan in &plans {
        let script_name = &cfg.scripts[plan.script];
        let model = &scripts[plan.script];
        let zero_shot = held_out.contains(&plan.character);
        let n_test = if zero_shot || plan.images < 2 {
            0
        } else {
            ((plan.images as f64 * cfg.test_fraction).round() as usize).clamp(usize::from(cfg.test_fraction > 0.0), plan.images - 1)
        };
        let mut rng = rng_for(
            cfg.seed,
            "synth-images",
            &[plan.script as u64, char_index(&plan.character), plan.character.len() as u64],
        );
        let mut split_of: Vec<Split> = (0..plan.images)
            .map(|i| match () {
                _ if zero_shot => Split::ZeroShot,
                _ if i < n_test => Split::Test,
                _ => Split::Train,
            })
            .collect();
        split_of.shuffle(&mut rng);
        let mu = &char_latent[&plan.character];
        for (k, split) in split_of.into_iter().enumerate() {
            let mode = &plan.modes[k % plan.modes.len()];
            let clean: Vec<f64> = mu.iter().zip(mode).map(|(a, b)| a + b).collect();
            let glyph = model.rotate(&clean);
            let coeffs = gaussian(cfg.nuisance_rank, &mut rng);
            let nuisance = model.nuisance.matvec_t(&coeffs);
            let noise = gaussian(dim, &mut rng);
            let noise_scale = if rng.random::<f64>() < cfg.degraded_fraction {
                cfg.degraded_noise
            } else {
                cfg.noise_scale
            };
            let x: Vec<f64> = (0..dim)
                .map(|d| {
                    cfg.feature_scale * glyph[d]
                        + model.signature[d]
                        + cfg.nuisance_scale * nuisance[d]
                        + noise_scale * noise[d]
                })
                .collect();
            let id = format!("{script_name}/{}/{k:03}", plan.character);
            let glyph_dir = l2_normalize(&glyph)?;
            let shape_noise = gaussian(dim, &mut rng);
            let shape_latent: Vec<f64> = glyph_dir
                .iter()
                .zip(&shape_noise)
                .map(|(g, e)| g + cfg.shape_noise * e / (dim as f64).sqrt())
                .collect();
            let shape = post.apply(&shape_latent)?;

            records.push(Record {
                id: id.clone(),
                script: Some(script_name.clone()),
                character: Some(plan.character.clone()),
                kind: Modality::Image,
                split,
            });
            records.push(Record {
                id: shape_id(&id),
                script: Some(script_name.clone()),
                character: Some(plan.character.clone()),
                kind: Modality::Shape,
                split,
            });
            embeddings.push(EmbeddingRecord {
                id: id.clone(),
                script: Some(script_name.clone()),
                character: Some(plan.character.clone()),
                kind: Modality::Image,
                dim,
                values: to_t(&x),
            });
            embeddings.push(EmbeddingRecord {
                id: shape_id(&id),
                script: Some(script_name.clone()),
                character: Some(plan.character.clone()),
                kind: Modality::Shape,
                dim,
                values: to_t(&shape),
            });
        }
    }

    let mut meaning_chars: BTreeMap<&str, Split> = BTreeMap::new();
    for p in &plans {
        let split = if held_out.contains(&p.character) { Split::ZeroShot } else { Split::Train };
        meaning_chars.insert(p.character.as_str(), split);
    }
    let align = cfg.text_alignment;
    for (ch, split) in meaning_chars {
        let mut rng = rng_for(cfg.seed, "synth-meaning", &[char_index(ch), ch.len() as u64]);
        let other = unit(dim, &mut rng);
        let mu = &char_latent[ch];
        let latent: Vec<f64> = mu
            .iter()
            .zip(&other)
            .map(|(m, o)| align * m + (1.0 - align * align).sqrt() * o)
            .collect();
        let v = post.apply(&latent)?;
        let id = meaning_id(ch);
        records.push(Record {
            id: id.clone(),
            script: None,
            character: Some(ch.to_string()),
            kind: Modality::Meaning,
            split,
        });
        embeddings.push(EmbeddingRecord {
            id,
            script: None,
            character: Some(ch.to_string()),
            kind: Modality::Meaning,
            dim,
            values: to_t(&v),
        });
    }

    Ok(SynthDataset {
        config: cfg.clone(),
        manifest: DatasetManifest { records },
        embeddings,
    })
}

/// Numeric suffix of a generated character name, mixed with its prefix.
fn char_index(ch: &str) -> u64 {
    let prefix = ch.bytes().next().unwrap_or(0) as u64;
    let num: u64 = ch.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().unwrap_or(0);
    (prefix << 32) | num
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub script: String,
    pub train_images: usize,
    pub train_classes: usize,
    pub test_images: usize,
    pub test_classes: usize,
    pub zero_shot_images: usize,
    pub zero_shot_classes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: Vec<SummaryRow>,
    pub total: SummaryRow,
}

/// Per-script image and class counts for every split.
pub fn summarize(manifest: &DatasetManifest) -> DatasetSummary {
    let mut per: BTreeMap<String, [(usize, BTreeSet<String>); 3]> = BTreeMap::new();
    for r in manifest.images() {
        let script = r.script.clone().unwrap_or_default();
        let slot = match r.split {
            Split::Train => 0,
            Split::Test => 1,
            Split::ZeroShot => 2,
        };
        let entry = per.entry(script).or_default();
        entry[slot].0 += 1;
        entry[slot].1.insert(r.character.clone().unwrap_or_default());
    }
    let order = crate::data::default_script_order(per.keys());
    let rows: Vec<SummaryRow> = order
        .iter()
        .map(|s| {
            let e = &per[s];
            SummaryRow {
                script: s.clone(),
                train_images: e[0].0,
                train_classes: e[0].1.len(),
                test_images: e[1].0,
                test_classes: e[1].1.len(),
                zero_shot_images: e[2].0,
                zero_shot_classes: e[2].1.len(),
            }
        })
        .collect();
    let mut total = SummaryRow {
        script: "Total".into(),
        ..SummaryRow::default()
    };
    for r in &rows {
        total.train_images += r.train_images;
        total.train_classes += r.train_classes;
        total.test_images += r.test_images;
        total.test_classes += r.test_classes;
        total.zero_shot_images += r.zero_shot_images;
        total.zero_shot_classes += r.zero_shot_classes;
    }
    DatasetSummary { rows, total }
}

impl DatasetSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "script,train_images,train_classes,test_images,test_classes,zero_shot_images,zero_shot_classes\n",
        );
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.script,
                r.train_images,
                r.train_classes,
                r.test_images,
                r.test_classes,
                r.zero_shot_images,
                r.zero_shot_classes
            ));
        }
        out
    }
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "script", "train/img", "train/cls", "test/img", "test/cls", "zs/img", "zs/cls"
        )?;
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            writeln!(
                f,
                "{:<8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
                r.script,
                r.train_images,
                r.train_classes,
                r.test_images,
                r.test_classes,
                r.zero_shot_images,
                r.zero_shot_classes
            )?;
        }
        Ok(())
    }
}
