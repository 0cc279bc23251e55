//! Means of the smoothness constants, smoothness-proportional weights,
//! client cloning and the rare-features sparsity parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::SparsityPattern;

/// `L_AM`, `L_QM` and `L_var = L_QM² − L_AM²` of a list of constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSummary {
    pub l_list: Vec<f64>,
    pub l_am: f64,
    pub l_qm: f64,
    pub l_var: f64,
}

fn check_positive(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::domain(format!("{what} list is empty")));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::domain(format!("{what} entry {i} is {v}; all entries must be positive and finite")));
    }
    Ok(())
}

/// ```
/// let s = ef21_core::weighting::summarize(&[1.0, 1.0, 1.0, 100.0]).unwrap();
/// assert_eq!(s.l_am, 25.75);
/// assert!((s.l_qm - 2500.75f64.sqrt()).abs() < 1e-12);
/// ```
pub fn summarize(l_list: &[f64]) -> Result<SmoothnessSummary> {
    check_positive(l_list, "smoothness")?;
    let n = l_list.len() as f64;
    let l_am = l_list.iter().sum::<f64>() / n;
    let mean_sq = l_list.iter().map(|l| l * l).sum::<f64>() / n;
    let l_qm = mean_sq.sqrt();
    // Variance computed from deviations; the difference of squares loses
    // every digit when the constants are nearly equal.
    let l_var = l_list.iter().map(|l| (l - l_am) * (l - l_am)).sum::<f64>() / n;
    Ok(SmoothnessSummary { l_list: l_list.to_vec(), l_am, l_qm: l_qm.max(l_am), l_var })
}

/// Positive weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Normalizes positive scores into weights.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        check_positive(scores, "weight score")?;
        let total: f64 = scores.iter().sum();
        Ok(WeightVector(scores.iter().map(|s| s / total).collect()))
    }

    /// Weights supplied directly; must be positive and sum to one.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        check_positive(&w, "weight")?;
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("weights sum to {total}, not 1")));
        }
        Ok(WeightVector(w))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("uniform weights need n >= 1"));
        }
        Ok(WeightVector(vec![1.0 / n as f64; n]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `wᵢ = Lᵢ / Σⱼ Lⱼ`.
pub fn smoothness_weights(l_list: &[f64]) -> Result<WeightVector> {
    WeightVector::from_scores(l_list)
}

/// Clone counts `Nᵢ ≥ 1` and their total `N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloneCounts {
    pub n_list: Vec<usize>,
    pub total: usize,
}

impl CloneCounts {
    pub fn new(n_list: Vec<usize>) -> Result<Self> {
        if n_list.is_empty() || n_list.contains(&0) {
            return Err(Error::domain("clone counts must be a nonempty list of positive integers"));
        }
        let total = n_list.iter().sum();
        Ok(CloneCounts { n_list, total })
    }

    /// `wᵢ = Nᵢ / N`.
    pub fn weights(&self) -> WeightVector {
        let n = self.total as f64;
        WeightVector(self.n_list.iter().map(|&k| k as f64 / n).collect())
    }
}

/// `M(N₁, …, Nₙ) = (1/n) √(Σ Lᵢ² N/Nᵢ)`, the quadratic mean of the
/// smoothness constants after cloning.
pub fn clone_objective(l_list: &[f64], counts: &CloneCounts) -> Result<f64> {
    check_positive(l_list, "smoothness")?;
    if counts.n_list.len() != l_list.len() {
        return Err(Error::domain(format!(
            "{} clone counts for {} clients",
            counts.n_list.len(),
            l_list.len()
        )));
    }
    let total = counts.total as f64;
    let s: f64 = l_list.iter().zip(&counts.n_list).map(|(l, &k)| l * l * total / k as f64).sum();
    Ok(s.sqrt() / l_list.len() as f64)
}

/// `Nᵢ = ⌈Lᵢ / L_AM⌉`.
pub fn clone_counts(l_list: &[f64]) -> Result<CloneCounts> {
    let s = summarize(l_list)?;
    let n_list = l_list.iter().map(|l| ((l / s.l_am).ceil() as usize).max(1)).collect();
    CloneCounts::new(n_list)
}

/// Minimizer `wᵢ = aᵢ/Σa` of `Σ aᵢ²/wᵢ` over the simplex, and the minimum
/// `(Σ aᵢ)²`.
pub fn optimal_weights(a_list: &[f64]) -> Result<(WeightVector, f64)> {
    let w = WeightVector::from_scores(a_list)?;
    let s: f64 = a_list.iter().sum();
    Ok((w, s * s))
}

/// `c = n · maxⱼ Σ_{i ∈ Iⱼ} wᵢ`.
pub fn rare_feature_c(pattern: &SparsityPattern, weights: &WeightVector) -> Result<f64> {
    if pattern.n() != weights.len() {
        return Err(Error::domain(format!(
            "sparsity pattern has {} clients but {} weights were given",
            pattern.n(),
            weights.len()
        )));
    }
    let w = weights.as_slice();
    let mut per_coord = vec![0.0; pattern.dim()];
    let mut any = false;
    for (i, &wi) in w.iter().enumerate() {
        for &j in pattern.support(i) {
            per_coord[j] += wi;
            any = true;
        }
    }
    if !any {
        return Err(Error::domain("no coordinate is active on any client"));
    }
    let top = per_coord.iter().cloned().fold(0.0, f64::max);
    Ok((pattern.n() as f64 * top).min(pattern.n() as f64))
}
