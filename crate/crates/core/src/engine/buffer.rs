use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{ClassKey, Record};
use crate::error::{CcrError, Result};
use crate::seed::Rng;

/// A buffered training image. `script` is the onboarding index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub id: String,
    pub script: usize,
    #[serde(rename = "char")]
    pub character: String,
}

impl BufferEntry {
    pub fn class_key(&self) -> ClassKey {
        ClassKey::new(self.script, self.character.clone())
    }
}

/// Fixed-capacity, script-balanced replay memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    pub capacity: usize,
    pub entries: Vec<BufferEntry>,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry count per script index, for `num_scripts` scripts.
    pub fn script_counts(&self, num_scripts: usize) -> Vec<usize> {
        let mut counts = vec![0; num_scripts];
        for e in &self.entries {
            if e.script < num_scripts {
                counts[e.script] += 1;
            }
        }
        counts
    }

    pub fn class_keys(&self) -> Vec<ClassKey> {
        self.entries.iter().map(BufferEntry::class_key).collect()
    }
}

/// `capacity / n` per script, the remainder going to the earliest scripts.
pub fn script_quotas(capacity: usize, num_scripts: usize) -> Vec<usize> {
    if num_scripts == 0 {
        return Vec::new();
    }
    let base = capacity / num_scripts;
    let extra = capacity % num_scripts;
    (0..num_scripts).map(|i| base + usize::from(i < extra)).collect()
}

/// Rebalances the buffer after a new script arrives. Existing scripts are
/// trimmed to their quota by uniform eviction; the new script's images are
/// sampled uniformly without replacement up to its quota.
pub fn buffer_update(
    buffer: &MemoryBuffer,
    new_images: &[&Record],
    new_script: usize,
    rng: &mut Rng,
) -> Result<MemoryBuffer> {
    let num_scripts = new_script + 1;
    if let Some(e) = buffer.entries.iter().find(|e| e.script >= new_script) {
        return Err(CcrError::Protocol(format!(
            "buffer already holds script {} while onboarding script {new_script}",
            e.script
        )));
    }
    let quotas = script_quotas(buffer.capacity, num_scripts);
    let mut by_script: BTreeMap<usize, Vec<&BufferEntry>> = BTreeMap::new();
    for e in &buffer.entries {
        by_script.entry(e.script).or_default().push(e);
    }
    let mut entries = Vec::with_capacity(buffer.capacity);
    for (script, held) in by_script {
        let keep = quotas[script].min(held.len());
        let mut idx = index::sample(rng, held.len(), keep).into_vec();
        idx.sort_unstable();
        entries.extend(idx.into_iter().map(|i| held[i].clone()));
    }
    let take = quotas[new_script].min(new_images.len());
    let mut idx = index::sample(rng, new_images.len(), take).into_vec();
    idx.sort_unstable();
    for i in idx {
        let r = new_images[i];
        entries.push(BufferEntry {
            id: r.id.clone(),
            script: new_script,
            character: r.character.clone().unwrap_or_default(),
        });
    }
    Ok(MemoryBuffer {
        capacity: buffer.capacity,
        entries,
    })
}
