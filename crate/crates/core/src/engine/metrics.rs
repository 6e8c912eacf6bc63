use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::AblationMode;
use crate::error::{CcrError, Result};

/// `rows[t][i]`: accuracy on stage `i`'s test split after stage `t`
/// (both 0-based, `i <= t`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { rows };
        m.validate()?;
        Ok(m)
    }

    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(CcrError::Protocol(format!(
                "accuracy row for stage {} must have {} entries, got {}",
                self.rows.len() + 1,
                self.rows.len() + 1,
                row.len()
            )));
        }
        self.rows.push(row);
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        for (t, row) in self.rows.iter().enumerate() {
            if row.len() != t + 1 {
                return Err(CcrError::Protocol(format!("accuracy row {} is incomplete", t + 1)));
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(CcrError::Protocol(format!("accuracy row {} leaves [0, 1]", t + 1)));
            }
        }
        Ok(())
    }
}

/// Average accuracy after stage `t` (1-based), a macro mean over the
/// observed stages' test splits.
pub fn compute_aa(matrix: &AccuracyMatrix, t: usize) -> Result<f64> {
    if t == 0 || t > matrix.rows.len() {
        return Err(CcrError::Protocol(format!("no complete accuracy row for stage {t}")));
    }
    let row = &matrix.rows[t - 1];
    if row.len() != t {
        return Err(CcrError::Protocol(format!("accuracy row {t} is incomplete")));
    }
    Ok(row.iter().sum::<f64>() / t as f64)
}

/// Forgetting after stage `T` (1-based): for each earlier stage, its best
/// accuracy before the final stage minus its final accuracy, averaged.
/// Terms are not clamped at zero.
pub fn compute_fgt(matrix: &AccuracyMatrix, big_t: usize) -> Result<f64> {
    if big_t < 2 {
        return Err(CcrError::Protocol("forgetting needs at least two stages".into()));
    }
    for t in 1..=big_t {
        compute_aa(matrix, t)?;
    }
    let last = &matrix.rows[big_t - 1];
    let mut total = 0.0;
    for i in 0..big_t - 1 {
        let best = (i..big_t - 1)
            .map(|t| matrix.rows[t][i])
            .fold(f64::NEG_INFINITY, f64::max);
        total += best - last[i];
    }
    Ok(total / (big_t - 1) as f64)
}

/// Wall-clock seconds per stage. Kept out of [`MetricsReport`] so reports
/// stay bit-identical across repeated runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: usize,
    pub script: String,
    pub phase1_s: f64,
    pub phase2_s: f64,
    pub bank_s: f64,
    pub eval_s: f64,
}

pub const METRIC_DEFINITIONS: &str = "AA_t = mean over observed stages i<=t of A[t][i] (macro over stages); \
FGT = mean over i<T of (max_{i<=t<T} A[t][i] - A[T][i]), unclamped; \
ZS@k = fraction of zero-shot queries whose character ranks in the top k of the meaning-text dictionary";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub mode: AblationMode,
    pub config_digest: String,
    pub definitions: String,
    pub stages: Vec<String>,
    pub top1: AccuracyMatrix,
    pub top10: AccuracyMatrix,
    pub aa_top1: Vec<f64>,
    pub aa_top10: Vec<f64>,
    pub fgt_top1: Option<f64>,
    pub fgt_top10: Option<f64>,
    pub zs_at1: Option<f64>,
    pub zs_at20: Option<f64>,
    pub zs_queries: usize,
    pub zs_candidates: usize,
}

impl MetricsReport {
    /// Fills AA and FGT from the matrices.
    pub fn new(
        seed: u64,
        mode: AblationMode,
        config_digest: String,
        stages: Vec<String>,
        top1: AccuracyMatrix,
        top10: AccuracyMatrix,
    ) -> Result<Self> {
        let n = top1.stages();
        let aa = |m: &AccuracyMatrix| (1..=n).map(|t| compute_aa(m, t)).collect::<Result<Vec<_>>>();
        let fgt = |m: &AccuracyMatrix| if n >= 2 { compute_fgt(m, n).map(Some) } else { Ok(None) };
        Ok(Self {
            seed,
            mode,
            config_digest,
            definitions: METRIC_DEFINITIONS.to_string(),
            stages,
            aa_top1: aa(&top1)?,
            aa_top10: aa(&top10)?,
            fgt_top1: fgt(&top1)?,
            fgt_top10: fgt(&top10)?,
            top1,
            top10,
            zs_at1: None,
            zs_at20: None,
            zs_queries: 0,
            zs_candidates: 0,
        })
    }

    pub fn final_aa_top1(&self) -> f64 {
        self.aa_top1.last().copied().unwrap_or(0.0)
    }

    /// Recomputes AA and FGT from the stored matrices and checks exact
    /// agreement, plus ZS@1 <= ZS@20.
    pub fn verify(&self) -> Result<()> {
        let fresh = Self::new(
            self.seed,
            self.mode,
            self.config_digest.clone(),
            self.stages.clone(),
            self.top1.clone(),
            self.top10.clone(),
        )?;
        let same = fresh.aa_top1 == self.aa_top1
            && fresh.aa_top10 == self.aa_top10
            && fresh.fgt_top1 == self.fgt_top1
            && fresh.fgt_top10 == self.fgt_top10;
        if !same {
            return Err(CcrError::Protocol("report scalars disagree with its matrices".into()));
        }
        if let (Some(a), Some(b)) = (self.zs_at1, self.zs_at20) {
            if a > b {
                return Err(CcrError::Protocol(format!("ZS@1 {a} exceeds ZS@20 {b}")));
            }
        }
        Ok(())
    }

    /// Long-format CSV: `metric,k,stage,split_stage,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,stage,split_stage,value\n");
        for (k, m) in [(1, &self.top1), (10, &self.top10)] {
            for (t, row) in m.rows.iter().enumerate() {
                for (i, v) in row.iter().enumerate() {
                    out.push_str(&format!("A,{k},{},{},{v}\n", t + 1, i + 1));
                }
            }
        }
        for (k, aa) in [(1, &self.aa_top1), (10, &self.aa_top10)] {
            for (t, v) in aa.iter().enumerate() {
                out.push_str(&format!("AA,{k},{},,{v}\n", t + 1));
            }
        }
        for (k, f) in [(1, self.fgt_top1), (10, self.fgt_top10)] {
            if let Some(v) = f {
                out.push_str(&format!("FGT,{k},{},,{v}\n", self.top1.stages()));
            }
        }
        for (k, z) in [(1, self.zs_at1), (20, self.zs_at20)] {
            if let Some(v) = z {
                out.push_str(&format!("ZS,{k},,,{v}\n"));
            }
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode {}  seed {}  config {}", self.mode, self.seed, &self.config_digest)?;
        writeln!(f, "stages {}", self.stages.join(" -> "))?;
        for (label, m) in [("Top-1", &self.top1), ("Top-10", &self.top10)] {
            writeln!(f, "{label} accuracy (row = after stage, column = test split)")?;
            for (t, row) in m.rows.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{:6.2}", v * 100.0)).collect();
                writeln!(f, "  {:<6} {}", self.stages.get(t).map_or("?", |s| s.as_str()), cells.join(" "))?;
            }
        }
        let pct = |v: &[f64]| v.iter().map(|x| format!("{:.2}", x * 100.0)).collect::<Vec<_>>().join(" ");
        writeln!(f, "AA (Top-1):  {}", pct(&self.aa_top1))?;
        writeln!(f, "AA (Top-10): {}", pct(&self.aa_top10))?;
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}", x * 100.0));
        writeln!(f, "FGT Top-1 {}  Top-10 {}", opt(self.fgt_top1), opt(self.fgt_top10))?;
        writeln!(
            f,
            "ZS@1 {}  ZS@20 {}  ({} queries, {} candidates)",
            opt(self.zs_at1),
            opt(self.zs_at20),
            self.zs_queries,
            self.zs_candidates
        )?;
        write!(f, "{}", self.definitions)
    }
}
