//! Focality metrics and tolerance search.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Preferred direction of the activation surrogate.
pub const DEFAULT_ACTIVATION_DIR: [f64; 3] = [-0.75, -0.41, 0.51];
/// Activation threshold of the surrogate in V/m.
pub const DEFAULT_ACTIVATION_THRESHOLD: f64 = 70.27;
/// Scalar grid for `p = 1`, V/m.
pub const GRID_PRESET_P1: [f64; 4] = [0.1, 0.5, 0.6, 0.7];
/// Scalar grid for `p = 2, 3`, V/m, in its published order.
pub const GRID_PRESET_P23: [f64; 4] = [0.01, 0.65, 0.55, 0.35];

/// Volume of voxels whose radial field exceeds `fraction * e_des`.
pub fn v_th(radial_field: &[f64], e_des: f64, fraction: f64, volumes: &[f64]) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    if radial_field.len() != volumes.len() {
        return Err(Error::dims("voxel volumes", radial_field.len(), volumes.len()));
    }
    let thr = fraction * e_des;
    Ok(radial_field
        .iter()
        .zip(volumes)
        .filter(|(f, _)| **f > thr)
        .map(|(_, v)| v)
        .sum())
}

/// Directional-threshold activation: voxel `i` is active iff `E_i . dir >= threshold`.
///
/// Voxels listed in `exclude` are never active; the count covers the rest.
pub fn activation_map(
    fields: &[[f64; 3]],
    preferred_dir: [f64; 3],
    threshold: f64,
    exclude: &[usize],
) -> Result<(Vec<bool>, usize)> {
    let n = (preferred_dir[0].powi(2) + preferred_dir[1].powi(2) + preferred_dir[2].powi(2)).sqrt();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "preferred direction must be a unit vector, has norm {n}"
        )));
    }
    let mut active: Vec<bool> = fields
        .iter()
        .map(|e| e[0] * preferred_dir[0] + e[1] * preferred_dir[1] + e[2] * preferred_dir[2] >= threshold)
        .collect();
    for &i in exclude {
        if let Some(a) = active.get_mut(i) {
            *a = false;
        }
    }
    let count = active.iter().filter(|a| **a).count();
    Ok((active, count))
}

/// The surrogate's published preferred direction, normalized.
pub fn default_activation_dir() -> [f64; 3] {
    let d = DEFAULT_ACTIVATION_DIR;
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0] / n, d[1] / n, d[2] / n]
}

/// `|a n b| / |a u b|`, 1 when both are empty.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let sa: BTreeSet<usize> = a.iter().copied().collect();
    let sb: BTreeSet<usize> = b.iter().copied().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// `100 (baseline - candidate) / baseline`.
pub fn relative_decrease(baseline: f64, candidate: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::InvalidParameter("relative decrease needs a nonzero baseline".into()));
    }
    Ok(100.0 * (baseline - candidate) / baseline)
}

/// How tolerance candidates are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SearchMode {
    /// Scalar values applied to all three axes, in the given order.
    Grid { values: Vec<f64> },
    /// `n` independent triplets, each axis uniform in `[lower, upper]`.
    Random { lower: f64, upper: f64, n: usize, seed: u64 },
}

impl SearchMode {
    /// Random triplets in `[0.1, 0.7] * e_des`.
    pub fn default_random(e_des: f64, seed: u64) -> Self {
        SearchMode::Random {
            lower: 0.1 * e_des,
            upper: 0.7 * e_des,
            n: 30,
            seed,
        }
    }

    pub fn candidates(&self) -> Result<Vec<[f64; 3]>> {
        match self {
            SearchMode::Grid { values } => Ok(values.iter().map(|&v| [v; 3]).collect()),
            SearchMode::Random { lower, upper, n, seed } => {
                if !(lower < upper) {
                    return Err(Error::InvalidParameter(format!(
                        "search bounds need lower < upper, got [{lower}, {upper}]"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..*n)
                    .map(|_| {
                        [
                            rng.gen_range(*lower..*upper),
                            rng.gen_range(*lower..*upper),
                            rng.gen_range(*lower..*upper),
                        ]
                    })
                    .collect())
            }
        }
    }
}

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub triplet: [f64; 3],
    pub metric: Option<f64>,
    pub error: Option<String>,
}

/// Search outcome; `best` indexes into `candidates`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Option<usize>,
    pub candidates: Vec<Candidate>,
}

impl SearchResult {
    pub fn best_triplet(&self) -> Option<[f64; 3]> {
        self.best.map(|i| self.candidates[i].triplet)
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best.and_then(|i| self.candidates[i].metric)
    }
}

/// Evaluates every candidate and returns the lowest metric (lowest index on ties).
/// Failed candidates are recorded and skipped.
pub fn tolerance_search<F>(objective: F, mode: &SearchMode) -> Result<SearchResult>
where
    F: Fn([f64; 3]) -> Result<f64> + Sync,
{
    let triplets = mode.candidates()?;
    let candidates: Vec<Candidate> = triplets
        .par_iter()
        .map(|&t| match objective(t) {
            Ok(m) if m.is_finite() => Candidate {
                triplet: t,
                metric: Some(m),
                error: None,
            },
            Ok(m) => Candidate {
                triplet: t,
                metric: None,
                error: Some(format!("non-finite metric {m}")),
            },
            Err(e) => Candidate {
                triplet: t,
                metric: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if let Some(m) = c.metric {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((i, m));
            }
        }
    }
    Ok(SearchResult {
        best: best.map(|(i, _)| i),
        candidates,
    })
}
