//! Per-dimension ranks and the mean-rank aggregate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::evaluate::SystemRow;

/// Values closer than this count as tied.
pub const RANK_TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    SimBest,
    Chrfpp,
    Bleu,
    External,
    Length,
    Outliers,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::SimBest,
        Dimension::Chrfpp,
        Dimension::Bleu,
        Dimension::External,
        Dimension::Length,
        Dimension::Outliers,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Dimension::SimBest => "sim",
            Dimension::Chrfpp => "chrF++",
            Dimension::Bleu => "BLEU",
            Dimension::External => "ext",
            Dimension::Length => "Length",
            Dimension::Outliers => "Outliers",
        }
    }

    /// Sort key where smaller is better.
    fn key(self, v: f64) -> f64 {
        match self {
            Dimension::SimBest | Dimension::Chrfpp | Dimension::Bleu | Dimension::External => -v,
            Dimension::Length => (v - 1.0).abs(),
            Dimension::Outliers => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankInput {
    pub system: String,
    /// Absent or non-finite values make a dimension invalid for the system.
    pub values: BTreeMap<Dimension, Option<f64>>,
}

impl RankInput {
    pub fn new(system: &str, values: [Option<f64>; 6]) -> Self {
        RankInput { system: system.into(), values: Dimension::ALL.into_iter().zip(values).collect() }
    }

    pub fn from_row(row: &SystemRow) -> Self {
        RankInput::new(
            &row.system,
            [
                Some(row.sim_best),
                Some(row.chrfpp),
                Some(row.bleu),
                row.external_avg,
                Some(row.length_ratio),
                Some(row.outlier_rate),
            ],
        )
    }

    fn valid(&self, d: Dimension) -> Option<f64> {
        self.values.get(&d).copied().flatten().filter(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSystem {
    pub system: String,
    pub ranks: BTreeMap<Dimension, Option<usize>>,
    pub mean_rank: f64,
    pub valid_dimensions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RankError {
    #[error("ranking needs at least 2 systems, got {0}")]
    TooFewSystems(usize),
    #[error("system {0} has no valid dimension")]
    NoValidDimensions(String),
    #[error("system {0} listed twice")]
    DuplicateSystem(String),
}

fn quantize(x: f64) -> i64 {
    (x / RANK_TIE_EPS).round() as i64
}

/// Competition ranks (ties share the better rank) over `keys`, smaller first.
fn competition<K: Ord + Copy>(keys: &[Option<K>]) -> Vec<Option<usize>> {
    keys.iter()
        .map(|k| k.map(|k| 1 + keys.iter().flatten().filter(|o| **o < k).count()))
        .collect()
}

/// Ranks every system on each dimension. Values tied within
/// `RANK_TIE_EPS` are ordered by sim_best rank; systems tied on both share
/// the better rank. The mean covers valid dimensions only. Output is ordered
/// by sim_best rank, then system id.
pub fn rank_systems(inputs: &[RankInput]) -> Result<Vec<RankedSystem>, RankError> {
    if inputs.len() < 2 {
        return Err(RankError::TooFewSystems(inputs.len()));
    }
    rank_unchecked(inputs)
}

pub(crate) fn rank_unchecked(inputs: &[RankInput]) -> Result<Vec<RankedSystem>, RankError> {
    let mut seen = std::collections::BTreeSet::new();
    for i in inputs {
        if !seen.insert(&i.system) {
            return Err(RankError::DuplicateSystem(i.system.clone()));
        }
    }
    let dim_keys = |d: Dimension| -> Vec<Option<i64>> {
        inputs.iter().map(|i| i.valid(d).map(|v| quantize(d.key(v)))).collect()
    };
    let sim_rank = competition(&dim_keys(Dimension::SimBest));
    let mut per_dim: BTreeMap<Dimension, Vec<Option<usize>>> = BTreeMap::new();
    for d in Dimension::ALL {
        let keys: Vec<Option<(i64, usize)>> = dim_keys(d)
            .into_iter()
            .zip(&sim_rank)
            .map(|(k, s)| k.map(|k| (k, s.unwrap_or(usize::MAX))))
            .collect();
        per_dim.insert(d, competition(&keys));
    }
    let mut out = Vec::with_capacity(inputs.len());
    for (idx, input) in inputs.iter().enumerate() {
        let ranks: BTreeMap<Dimension, Option<usize>> = per_dim.iter().map(|(d, r)| (*d, r[idx])).collect();
        let valid: Vec<usize> = ranks.values().flatten().copied().collect();
        if valid.is_empty() {
            return Err(RankError::NoValidDimensions(input.system.clone()));
        }
        out.push(RankedSystem {
            system: input.system.clone(),
            mean_rank: valid.iter().sum::<usize>() as f64 / valid.len() as f64,
            valid_dimensions: valid.len(),
            ranks,
        });
    }
    out.sort_by(|a, b| {
        let ra = a.ranks[&Dimension::SimBest].unwrap_or(usize::MAX);
        let rb = b.ranks[&Dimension::SimBest].unwrap_or(usize::MAX);
        ra.cmp(&rb).then_with(|| a.system.cmp(&b.system))
    });
    Ok(out)
}
