//! Residual computation and patch complexity ranking.

use std::fmt;
use std::str::FromStr;

use crate::linalg::{FactorTriple, LinalgError, Matrix};

/// Statistic of `|Δ|` used to rank patch complexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ScoreFunction {
    /// Population standard deviation.
    #[default]
    Std,
    Mean,
    Max,
}

impl ScoreFunction {
    pub const ALL: [ScoreFunction; 3] =
        [ScoreFunction::Std, ScoreFunction::Mean, ScoreFunction::Max];

    pub fn id(self) -> u8 {
        match self {
            ScoreFunction::Std => 0,
            ScoreFunction::Mean => 1,
            ScoreFunction::Max => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreFunction::Std => "std",
            ScoreFunction::Mean => "mean",
            ScoreFunction::Max => "max",
        }
    }
}

impl fmt::Display for ScoreFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreFunction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "std" => Ok(ScoreFunction::Std),
            "mean" => Ok(ScoreFunction::Mean),
            "max" => Ok(ScoreFunction::Max),
            other => Err(format!(
                "unknown score function `{other}` (expected std, mean or max)"
            )),
        }
    }
}

/// Patches sorted from most to least complex.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRanking {
    /// Permutation of `0..t`; highest score first, ties by ascending index.
    pub ordered_indices: Vec<usize>,
    /// Score of each patch in canonical order.
    pub scores: Vec<f64>,
}

impl PatchRanking {
    /// Marks the first `n_c` patches of the ranking as complex.
    pub fn complexity_map(&self, n_c: usize) -> Vec<bool> {
        let mut map = vec![false; self.scores.len()];
        for &i in self.ordered_indices.iter().take(n_c) {
            map[i] = true;
        }
        map
    }
}

/// `A - A_k` for the best rank-`base_rank` approximation `A_k`.
pub fn compute_delta(a: &Matrix, base_rank: usize) -> Result<Matrix, LinalgError> {
    let f = crate::linalg::svd(a)?;
    delta_from_factors(a, &f, base_rank)
}

/// Same as [`compute_delta`] but reuses an existing factorization of `a`.
pub fn delta_from_factors(
    a: &Matrix,
    factors: &FactorTriple,
    base_rank: usize,
) -> Result<Matrix, LinalgError> {
    let approx = factors.truncate(base_rank)?.reconstruct();
    a.sub(&approx)
}

pub fn score_patch(patch: &Matrix, f: ScoreFunction) -> f64 {
    let values = patch.as_slice();
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    match f {
        ScoreFunction::Max => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        ScoreFunction::Mean => values.iter().map(|v| v.abs()).sum::<f64>() / n,
        ScoreFunction::Std => {
            let mean = values.iter().map(|v| v.abs()).sum::<f64>() / n;
            let var = values
                .iter()
                .map(|v| {
                    let d = v.abs() - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            var.sqrt()
        }
    }
}

pub fn rank_patches(delta_patches: &[Matrix], f: ScoreFunction) -> PatchRanking {
    let scores: Vec<f64> = delta_patches.iter().map(|p| score_patch(p, f)).collect();
    rank_scores(scores)
}

pub fn rank_scores(scores: Vec<f64>) -> PatchRanking {
    let mut ordered_indices: Vec<usize> = (0..scores.len()).collect();
    ordered_indices.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    PatchRanking {
        ordered_indices,
        scores,
    }
}
