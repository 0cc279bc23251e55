//! Largest step sizes allowed by each convergence theorem, and tuning of the
//! free analysis parameters `s`, `ν`, `ρ`.
//!
//! Every function returns the theoretical maximum; callers scale it by a
//! multiplier if they want a different step.

use serde::{Deserialize, Serialize};

use crate::compressor::{contraction_functions, GeneralizedYoung};
use crate::error::{Error, Result};
use crate::objective::Abc;
use crate::weighting::WeightVector;

/// Points per axis of the tuning grids.
pub const GRID: usize = 200;
/// The grids span `GRID_DECADES` decades below the feasible upper limit.
pub const GRID_DECADES: f64 = 6.0;
const BISECTION_STEPS: usize = 80;

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::domain(format!("{name} = {v} must be positive and finite")));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::domain(format!("{name} = {v} must be nonnegative and finite")));
    }
    Ok(())
}

fn inverse_sum(l: f64, penalty: f64) -> Result<f64> {
    check_positive("L", l)?;
    Ok(1.0 / (l + penalty))
}

/// `1/(L + L_QM ξ(α))`, the step size of the original EF21 analysis.
pub fn gamma_ef21_classic(l: f64, l_qm: f64, alpha: f64) -> Result<f64> {
    check_positive("L_QM", l_qm)?;
    inverse_sum(l, l_qm * contraction_functions(alpha)?.xi)
}

/// `1/(L + L_AM ξ(α))`, the step size for EF21-W and for the refined analysis
/// of EF21.
///
/// ```
/// let g = ef21_core::stepsize::gamma_ef21_w(0.781, 2.291, 1.0 / 302.0).unwrap();
/// assert!((g - 7.237e-4).abs() < 0.003 * 7.237e-4);
/// ```
pub fn gamma_ef21_w(l: f64, l_am: f64, alpha: f64) -> Result<f64> {
    check_positive("L_AM", l_am)?;
    inverse_sum(l, l_am * contraction_functions(alpha)?.xi)
}

/// `1/(L + √2 L_AM ξ(α))`, for EF21 run on the cloned problem.
pub fn gamma_clone(l: f64, l_am: f64, alpha: f64) -> Result<f64> {
    check_positive("L_AM", l_am)?;
    inverse_sum(l, std::f64::consts::SQRT_2 * l_am * contraction_functions(alpha)?.xi)
}

/// `min{1/(L + √2 L_AM ξ(α)), θ(α)/(2μ)}`, the PL-condition step size of
/// EF21-W.
pub fn gamma_pl(l: f64, l_am: f64, alpha: f64, mu: f64) -> Result<f64> {
    check_positive("mu", mu)?;
    let theta = contraction_functions(alpha)?.theta;
    Ok(gamma_clone(l, l_am, alpha)?.min(theta / (2.0 * mu)))
}

/// `min{1/(L + √2 L_AM √(2β/θ)), θ(α)/(2μ)}`, the PL-condition step size
/// stated for EF21 on the cloned problem.
pub fn gamma_pl_cloned(l: f64, l_am: f64, alpha: f64, mu: f64) -> Result<f64> {
    check_positive("mu", mu)?;
    check_positive("L_AM", l_am)?;
    let p = contraction_functions(alpha)?;
    let penalty = std::f64::consts::SQRT_2 * l_am * (2.0 * p.beta / p.theta).sqrt();
    Ok(inverse_sum(l, penalty)?.min(p.theta / (2.0 * mu)))
}

/// `1/(L + (c/n) L_AM ξ(α))`, the rare-features step size.
pub fn gamma_rare(l: f64, l_am: f64, alpha: f64, c: f64, n: usize) -> Result<f64> {
    check_positive("L_AM", l_am)?;
    let nf = n as f64;
    if !(c > 0.0 && c <= nf * (1.0 + 1e-12)) {
        return Err(Error::domain(format!("sparsity parameter c = {c} must lie in (0, n] with n = {n}")));
    }
    inverse_sum(l, c / nf * l_am * contraction_functions(alpha)?.xi)
}

/// Which stochastic-gradient analysis the parameters belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SgdVariant {
    /// Minibatch sampling with the expected-smoothness constants scaled by
    /// `1/τ`.
    #[default]
    Minibatch,
    /// The general expected-smoothness analysis.
    Abc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub alpha: f64,
    pub s: f64,
    pub nu: f64,
    pub theta_hat: f64,
    pub beta1_hat: f64,
    pub beta2_hat: f64,
    pub variant: SgdVariant,
}

/// `θ̂`, `β̂₁`, `β̂₂` for given `s, ν > 0` with `(1+s)(1+ν) < 1/(1−α)`.
pub fn sgd_params(alpha: f64, s: f64, nu: f64, variant: SgdVariant) -> Result<SgdParams> {
    contraction_functions(alpha)?;
    check_positive("s", s)?;
    check_positive("nu", nu)?;
    let q = 1.0 - alpha;
    let theta_hat = 1.0 - q * (1.0 + s) * (1.0 + nu);
    if theta_hat <= 0.0 {
        return Err(Error::domain(format!(
            "(1+s)(1+nu) = {} must be below 1/(1-alpha) = {}",
            (1.0 + s) * (1.0 + nu),
            1.0 / q
        )));
    }
    let (beta1_hat, beta2_hat) = match variant {
        SgdVariant::Minibatch => (
            2.0 * q * (1.0 + s) * (s + 1.0 / nu),
            2.0 * q * (1.0 + s) * (1.0 + 1.0 / nu) + (1.0 + 1.0 / s),
        ),
        SgdVariant::Abc => (q * (1.0 + s) * (s + 1.0 / nu), q * (1.0 + s) + (1.0 + 1.0 / s)),
    };
    Ok(SgdParams { alpha, s, nu, theta_hat, beta1_hat, beta2_hat, variant })
}

/// Log-spaced points in `(0, upper)`, descending from just below `upper`.
fn log_grid(upper: f64) -> impl Iterator<Item = f64> {
    (0..GRID).map(move |k| upper * 10f64.powf(-GRID_DECADES * (k + 1) as f64 / GRID as f64))
}

/// Minimizes a unimodal `f` on `[lo, hi]` by bisecting on the sign of the
/// local slope.
fn bisect_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let h = (hi - lo) * 1e-3;
        if f(mid - h) <= f(mid + h) {
            hi = mid + h;
        } else {
            lo = mid - h;
        }
    }
    0.5 * (lo + hi)
}

fn sgd_objective(alpha: f64, s: f64, nu: f64, variant: SgdVariant) -> f64 {
    match sgd_params(alpha, s, nu, variant) {
        Ok(p) => p.beta1_hat / p.theta_hat,
        Err(_) => f64::INFINITY,
    }
}

/// Chooses `(s, ν)` minimizing `β̂₁/θ̂`: a log grid of `GRID × GRID`
/// admissible points followed by one bisection pass along each coordinate.
pub fn tune_sgd_params(alpha: f64, variant: SgdVariant) -> Result<SgdParams> {
    contraction_functions(alpha)?;
    if alpha == 1.0 {
        return sgd_params(alpha, 1.0, 1.0, variant);
    }
    let q = 1.0 - alpha;
    let s_max = 1.0 / q - 1.0;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for s in log_grid(s_max) {
        let nu_max = 1.0 / (q * (1.0 + s)) - 1.0;
        if nu_max <= 0.0 {
            continue;
        }
        for nu in log_grid(nu_max) {
            let v = sgd_objective(alpha, s, nu, variant);
            if v < best.0 {
                best = (v, s, nu);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::domain(format!("no admissible (s, nu) found for alpha = {alpha}")));
    }
    let (v0, s0, nu0) = best;
    let step = 10f64.powf(GRID_DECADES / GRID as f64);
    let s_lo = s0 / step;
    let s_hi = (s0 * step).min(s_max);
    let s1 = bisect_min(s_lo, s_hi, |s| sgd_objective(alpha, s, nu0, variant));
    let (s1, v1) = match sgd_objective(alpha, s1, nu0, variant) {
        v if v < v0 => (s1, v),
        _ => (s0, v0),
    };
    let nu_max = 1.0 / (q * (1.0 + s1)) - 1.0;
    let nu2 = bisect_min(nu0 / step, (nu0 * step).min(nu_max), |nu| sgd_objective(alpha, s1, nu, variant));
    let nu2 = if sgd_objective(alpha, s1, nu2, variant) < v1 { nu2 } else { nu0 };
    sgd_params(alpha, s1, nu2, variant)
}

/// `1/(L + L_AM √(β̂₁/θ̂))`.
pub fn gamma_sgd(l: f64, l_am: f64, params: &SgdParams) -> Result<f64> {
    check_positive("L_AM", l_am)?;
    inverse_sum(l, l_am * (params.beta1_hat / params.theta_hat).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpParams {
    pub alpha: f64,
    pub s: f64,
    pub rho: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub theta_p: f64,
    pub b_tilde: f64,
}

fn check_probabilities(p_min: f64, p_max: f64) -> Result<()> {
    if !(p_min > 0.0 && p_min <= p_max && p_max <= 1.0) {
        return Err(Error::domain(format!(
            "participation probabilities need 0 < p_min <= p_max <= 1, got p_min = {p_min}, p_max = {p_max}"
        )));
    }
    Ok(())
}

/// `θ_p` and `B̃` for given `s, ρ > 0`.
///
/// Requires `(ρ(1 − p_min) + (p_max − p_min))/p_max < θ(α,s) ≤
/// (1 + ρ(1 − p_min) + (p_max − p_min))/p_max`.
pub fn pp_params(alpha: f64, s: f64, rho: f64, p_min: f64, p_max: f64, l_am: f64) -> Result<PpParams> {
    check_probabilities(p_min, p_max)?;
    check_positive("rho", rho)?;
    check_positive("L_AM", l_am)?;
    let y = GeneralizedYoung::new(alpha, s)?;
    let lower = (rho * (1.0 - p_min) + (p_max - p_min)) / p_max;
    let upper = (1.0 + rho * (1.0 - p_min) + (p_max - p_min)) / p_max;
    if y.theta_s <= lower {
        return Err(Error::domain(format!(
            "theta(alpha, s) = {} must exceed (rho(1-p_min) + (p_max-p_min))/p_max = {lower}",
            y.theta_s
        )));
    }
    if y.theta_s > upper {
        return Err(Error::domain(format!(
            "theta(alpha, s) = {} must not exceed (1 + rho(1-p_min) + (p_max-p_min))/p_max = {upper}",
            y.theta_s
        )));
    }
    let theta_p = p_min * rho + y.theta_s * p_max - rho - (p_max - p_min);
    let b_tilde = (y.beta_s * p_max + (1.0 - p_min) * (1.0 + 1.0 / rho)) * l_am * l_am;
    Ok(PpParams { alpha, s, rho, p_min, p_max, theta_p, b_tilde })
}

fn pp_objective(alpha: f64, s: f64, rho: f64, p_min: f64, p_max: f64) -> f64 {
    match pp_params(alpha, s, rho, p_min, p_max, 1.0) {
        Ok(p) => p.b_tilde / p.theta_p,
        Err(_) => f64::INFINITY,
    }
}

/// Chooses `(s, ρ)` maximizing `1/(L + √(B̃/θ_p))`, i.e. minimizing
/// `B̃/θ_p`, over a log grid inside the admissible region, followed by one
/// bisection pass along each coordinate.
pub fn tune_pp_params(alpha: f64, p_min: f64, p_max: f64, l_am: f64) -> Result<PpParams> {
    check_probabilities(p_min, p_max)?;
    check_positive("L_AM", l_am)?;
    contraction_functions(alpha)?;
    let q = 1.0 - alpha;
    let theta_of = |s: f64| 1.0 - q * (1.0 + s);
    let rho_max = |s: f64| {
        if p_min == 1.0 {
            1.0
        } else {
            (p_max * theta_of(s) - (p_max - p_min)) / (1.0 - p_min)
        }
    };
    let s_candidates: Vec<f64> = if alpha == 1.0 { vec![1.0] } else { log_grid(1.0 / q - 1.0).collect() };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &s in &s_candidates {
        let r_max = rho_max(s);
        if r_max <= 0.0 {
            continue;
        }
        for rho in log_grid(r_max) {
            let v = pp_objective(alpha, s, rho, p_min, p_max);
            if v < best.0 {
                best = (v, s, rho);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::domain(format!(
            "no admissible (s, rho): theta(alpha, s) < alpha = {alpha} never exceeds \
             (p_max - p_min)/p_max = {}, so the lower admissibility inequality \
             (rho(1-p_min) + (p_max-p_min))/p_max < theta(alpha, s) fails",
            (p_max - p_min) / p_max
        )));
    }
    let (v0, s0, rho0) = best;
    let step = 10f64.powf(GRID_DECADES / GRID as f64);
    let (s1, v1) = if alpha == 1.0 {
        (s0, v0)
    } else {
        let s_hi = (s0 * step).min(1.0 / q - 1.0);
        let s1 = bisect_min(s0 / step, s_hi, |s| pp_objective(alpha, s, rho0, p_min, p_max));
        match pp_objective(alpha, s1, rho0, p_min, p_max) {
            v if v < v0 => (s1, v),
            _ => (s0, v0),
        }
    };
    let r_hi = (rho0 * step).min(rho_max(s1));
    let rho2 = bisect_min(rho0 / step, r_hi, |r| pp_objective(alpha, s1, r, p_min, p_max));
    let rho2 = if pp_objective(alpha, s1, rho2, p_min, p_max) < v1 { rho2 } else { rho0 };
    pp_params(alpha, s1, rho2, p_min, p_max, l_am)
}

/// `1/(L + √(B̃/θ_p))`.
pub fn gamma_pp(l: f64, params: &PpParams) -> Result<f64> {
    check_positive("theta_p", params.theta_p)?;
    check_nonneg("B_tilde", params.b_tilde)?;
    inverse_sum(l, (params.b_tilde / params.theta_p).sqrt())
}

/// `Ã` and `C̃` of the stochastic-gradient theorem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbcAggregates {
    pub a_tilde: f64,
    pub c_tilde: f64,
}

/// `Ã = maxᵢ 2(Aᵢ + Lᵢ(Bᵢ − 1))/(τᵢ n wᵢ)` and `C̃ = maxᵢ Cᵢ/(τᵢ n wᵢ)`;
/// the `Abc` variant drops `τᵢ`.
pub fn abc_aggregates(
    abc: &[Abc],
    l_list: &[f64],
    weights: &WeightVector,
    tau_list: &[usize],
    variant: SgdVariant,
) -> Result<AbcAggregates> {
    let n = abc.len();
    if l_list.len() != n || weights.len() != n || tau_list.len() != n || n == 0 {
        return Err(Error::domain(format!(
            "length mismatch: {n} ABC triples, {} constants, {} weights, {} batch sizes",
            l_list.len(),
            weights.len(),
            tau_list.len()
        )));
    }
    let mut a_tilde: f64 = 0.0;
    let mut c_tilde: f64 = 0.0;
    for i in 0..n {
        let tau = match variant {
            SgdVariant::Minibatch => tau_list[i] as f64,
            SgdVariant::Abc => 1.0,
        };
        if tau < 1.0 {
            return Err(Error::domain("minibatch sizes must be at least 1"));
        }
        let denom = tau * n as f64 * weights.as_slice()[i];
        a_tilde = a_tilde.max(2.0 * (abc[i].a + l_list[i] * (abc[i].b - 1.0)) / denom);
        c_tilde = c_tilde.max(abc[i].c / denom);
    }
    Ok(AbcAggregates { a_tilde, c_tilde })
}

/// Ratio `r = 1 − γÃβ̂₂/(2θ̂)` of the geometric output law.
pub fn sgd_output_ratio(gamma: f64, agg: &AbcAggregates, params: &SgdParams) -> f64 {
    1.0 - gamma * agg.a_tilde * params.beta2_hat / (2.0 * params.theta_hat)
}
