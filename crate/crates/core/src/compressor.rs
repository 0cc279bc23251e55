//! Compression operators and the algebra of contraction parameters.
//!
//! A compressor `C` is *contractive* with parameter `α ∈ (0, 1]` when
//! `E‖C(x) − x‖² ≤ (1 − α)‖x‖²`. Every step size in the crate depends on `α`
//! only through
//!
//! ```text
//! θ(α) = 1 − √(1 − α)
//! β(α) = (1 − α) / (1 − √(1 − α))
//! ξ(α) = √(β/θ)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `α` together with `θ(α)`, `β(α)` and `ξ(α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionParams {
    pub alpha: f64,
    pub theta: f64,
    pub beta: f64,
    pub xi: f64,
}

/// Computes `θ`, `β` and `ξ` for a contraction parameter `α ∈ (0, 1]`.
///
/// At `α = 1` the ratio defining `β` is `0/0`; its limit `0` is used.
///
/// ```
/// let p = ef21_core::compressor::contraction_functions(0.1).unwrap();
/// assert!((p.xi - 18.4868).abs() < 1e-4);
/// assert!(ef21_core::compressor::contraction_functions(0.0).is_err());
/// ```
pub fn contraction_functions(alpha: f64) -> Result<ContractionParams> {
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(ContractionParams { alpha, theta: 1.0, beta: 0.0, xi: 0.0 });
    }
    let r = (1.0 - alpha).sqrt();
    let theta = 1.0 - r;
    // β = (1 − α)/(1 − r) = r²/(1 − r); ξ = (1 + r)/α − 1, which avoids
    // cancellation for small α.
    let beta = (1.0 - alpha) / theta;
    let xi = (1.0 + r) / alpha - 1.0;
    Ok(ContractionParams { alpha, theta, beta, xi })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!("contraction parameter alpha = {alpha} is outside (0, 1]")));
    }
    Ok(())
}

/// Young's inequality with a free coefficient `s > 0`:
/// `θ_s = 1 − (1 − α)(1 + s)` and `β_s = (1 − α)(1 + 1/s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedYoung {
    pub s: f64,
    pub theta_s: f64,
    pub beta_s: f64,
}

impl GeneralizedYoung {
    pub fn new(alpha: f64, s: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::domain(format!("Young coefficient s = {s} must be positive")));
        }
        Ok(GeneralizedYoung {
            s,
            theta_s: 1.0 - (1.0 - alpha) * (1.0 + s),
            beta_s: (1.0 - alpha) * (1.0 + 1.0 / s),
        })
    }

    /// The coefficient `s* = 1/√(1 − α) − 1` that minimizes `β_s/θ_s`.
    ///
    /// Undefined at `α = 1`, where any `s` gives `β_s = 0`.
    pub fn optimal_s(alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        if alpha == 1.0 {
            return Err(Error::domain("the optimal Young coefficient is undefined at alpha = 1"));
        }
        Ok(1.0 / (1.0 - alpha).sqrt() - 1.0)
    }
}

/// Which compression operator a client applies.
///
/// In configuration files this is written as
/// `{"kind": "topk", "k": 1}`, `{"kind": "natural"}` or `{"kind": "identity"}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CompressorKind {
    /// Keep the `k` largest-magnitude coordinates.
    Topk { k: usize },
    /// Natural compression divided by `ω + 1 = 9/8`.
    Natural,
    Identity,
}

/// Natural compression variance parameter.
pub const NATURAL_OMEGA: f64 = 0.125;

/// A compressor kind bound to a dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    pub dimension: usize,
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::domain("compressor dimension must be positive"));
        }
        if let CompressorKind::Topk { k } = kind {
            if k == 0 || k > dimension {
                return Err(Error::domain(format!("TopK needs 1 <= K <= d, got K = {k}, d = {dimension}")));
            }
        }
        Ok(CompressorSpec { kind, dimension })
    }

    pub fn top_k(k: usize, dimension: usize) -> Result<Self> {
        Self::new(CompressorKind::Topk { k }, dimension)
    }

    pub fn natural(dimension: usize) -> Result<Self> {
        Self::new(CompressorKind::Natural, dimension)
    }

    pub fn identity(dimension: usize) -> Result<Self> {
        Self::new(CompressorKind::Identity, dimension)
    }

    /// The contraction parameter `α`.
    pub fn alpha(&self) -> f64 {
        match self.kind {
            CompressorKind::Topk { k } => k as f64 / self.dimension as f64,
            CompressorKind::Natural => 1.0 - 1.0 / (NATURAL_OMEGA + 1.0),
            CompressorKind::Identity => 1.0,
        }
    }

    pub fn params(&self) -> ContractionParams {
        contraction_functions(self.alpha()).expect("alpha of a valid spec lies in (0, 1]")
    }

    /// True when the output does not depend on the random stream.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self.kind, CompressorKind::Natural)
    }
}

/// Keeps the `k` entries of largest magnitude; ties go to the smaller index.
///
/// ```
/// use ef21_core::compressor::top_k;
/// assert_eq!(top_k(&[1.0, -3.0, 2.0], 1).unwrap(), vec![0.0, -3.0, 0.0]);
/// assert_eq!(top_k(&[2.0, -2.0, 1.0], 1).unwrap(), vec![2.0, 0.0, 0.0]);
/// ```
pub fn top_k(v: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > v.len() {
        return Err(Error::domain(format!("TopK needs 1 <= K <= d, got K = {k}, d = {}", v.len())));
    }
    let mut out = vec![0.0; v.len()];
    for i in top_k_indices(v, k) {
        out[i] = v[i];
    }
    Ok(out)
}

/// Indices kept by [`top_k`], in ascending order.
pub fn top_k_indices(v: &[f64], k: usize) -> Vec<usize> {
    if k >= v.len() {
        return (0..v.len()).collect();
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    let by_mag = |&a: &usize, &b: &usize| {
        v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b))
    };
    idx.select_nth_unstable_by(k - 1, by_mag);
    let mut kept = idx[..k].to_vec();
    kept.sort_unstable();
    kept
}

/// The largest power of two not exceeding `t > 0`.
fn power_floor(t: f64) -> f64 {
    let mut low = 2f64.powf(t.log2().floor());
    if low > t {
        low /= 2.0;
    } else if 2.0 * low <= t {
        low *= 2.0;
    }
    low
}

/// Unbiased stochastic rounding of every coordinate to a neighbouring power
/// of two.
///
/// A value `t` with `2^k ≤ |t| < 2^(k+1)` becomes `sign(t)·2^(k+1)` with
/// probability `(|t| − 2^k)/2^k` and `sign(t)·2^k` otherwise.
pub fn natural_compress<R: Rng + ?Sized>(v: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(v.len());
    for (j, &t) in v.iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::domain(format!("natural compression got non-finite coordinate {j}: {t}")));
        }
        if t == 0.0 {
            out.push(0.0);
            continue;
        }
        let a = t.abs();
        let low = power_floor(a);
        let p_up = (a - low) / low;
        let u: f64 = rng.random();
        let mag = if u < p_up { 2.0 * low } else { low };
        out.push(mag.copysign(t));
    }
    Ok(out)
}

/// Applies the compressor described by `spec`.
///
/// ```
/// use ef21_core::compressor::{apply, CompressorSpec};
/// let mut rng = ef21_core::rng::stream(0, ef21_core::rng::Purpose::Compressor, &[]);
/// let spec = CompressorSpec::natural(1).unwrap();
/// assert_eq!(apply(&spec, &[4.0], &mut rng).unwrap(), vec![4.0 * 8.0 / 9.0]);
/// ```
pub fn apply<R: Rng + ?Sized>(spec: &CompressorSpec, v: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if v.len() != spec.dimension {
        return Err(Error::domain(format!(
            "compressor expects dimension {}, got a vector of length {}",
            spec.dimension,
            v.len()
        )));
    }
    match spec.kind {
        CompressorKind::Topk { k } => top_k(v, k),
        CompressorKind::Identity => Ok(v.to_vec()),
        CompressorKind::Natural => {
            let mut out = natural_compress(v, rng)?;
            let s = 1.0 / (NATURAL_OMEGA + 1.0);
            out.iter_mut().for_each(|x| *x *= s);
            Ok(out)
        }
    }
}
