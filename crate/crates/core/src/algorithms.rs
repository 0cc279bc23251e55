//! EF21-family iterations as transitions of `(x, {gᵢ}, g)`.
//!
//! One round of every variant has the same shape:
//!
//! 1. the server steps `x ← x − γ g`;
//! 2. each participating client computes a (possibly stochastic) gradient at
//!    the new point, scales it into its target, and sends the compressed
//!    correction `uᵢ = C(targetᵢ − gᵢ)`, updating `gᵢ ← gᵢ + uᵢ`;
//! 3. the server re-aggregates `g` from all `gᵢ` in ascending client order.
//!
//! Vanilla EF21 targets `∇fᵢ` and averages uniformly. EF21-W targets
//! `∇fᵢ/(n wᵢ)` and aggregates `Σ wᵢ gᵢ`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compressor::{self, CompressorSpec};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dist_sq};
use crate::objective::{stochastic_gradient_into, GlobalProblem, StochasticEstimatorSpec};
use crate::rng::{Purpose, RoundSeed, Stream};
use crate::weighting::{CloneCounts, WeightVector};

/// How client estimators are combined and what each client targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Aggregation {
    /// `g = (1/n) Σ gᵢ`, targets `∇fᵢ`.
    Uniform,
    /// `g = Σ wᵢ gᵢ`, targets `∇fᵢ/(n wᵢ)`.
    Weighted(WeightVector),
}

impl Aggregation {
    fn check(&self, n: usize) -> Result<()> {
        if let Aggregation::Weighted(w) = self {
            if w.len() != n {
                return Err(Error::domain(format!("{} weights for {n} clients", w.len())));
            }
        }
        Ok(())
    }

    /// Factor applied to `∇fᵢ` to form client `i`'s target.
    fn target_factor(&self, i: usize, n: usize) -> Option<f64> {
        match self {
            Aggregation::Uniform => None,
            Aggregation::Weighted(w) => Some(1.0 / (n as f64 * w.as_slice()[i])),
        }
    }

    /// Aggregate of the client estimators, summed in ascending client order.
    pub fn aggregate(&self, g_list: &[Vec<f64>]) -> Vec<f64> {
        let d = g_list.first().map_or(0, Vec::len);
        let mut out = vec![0.0; d];
        match self {
            Aggregation::Uniform => {
                for g in g_list {
                    axpy(1.0, g, &mut out);
                }
                let n = g_list.len() as f64;
                out.iter_mut().for_each(|v| *v /= n);
            }
            Aggregation::Weighted(w) => {
                for (g, &wi) in g_list.iter().zip(w.as_slice()) {
                    axpy(wi, g, &mut out);
                }
            }
        }
        out
    }
}

/// Iterate, client estimators and their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub x: Vec<f64>,
    pub g_list: Vec<Vec<f64>>,
    pub g_agg: Vec<f64>,
    pub round: u64,
}

impl RunState {
    /// A state at round 0 with explicit estimators.
    pub fn new(x: Vec<f64>, g_list: Vec<Vec<f64>>, aggregation: &Aggregation) -> Result<Self> {
        if g_list.is_empty() {
            return Err(Error::domain("a run needs at least one client estimator"));
        }
        if g_list.iter().any(|g| g.len() != x.len()) {
            return Err(Error::domain("estimator dimensions must match the iterate"));
        }
        aggregation.check(g_list.len())?;
        let g_agg = aggregation.aggregate(&g_list);
        Ok(RunState { x, g_list, g_agg, round: 0 })
    }

    /// The standard start `gᵢ⁰ = ∇fᵢ(x⁰)`, scaled into the target of the
    /// given aggregation so that the initial distortion is zero.
    pub fn from_gradients(problem: &GlobalProblem, x: Vec<f64>, aggregation: &Aggregation) -> Result<Self> {
        aggregation.check(problem.n())?;
        let n = problem.n();
        let mut g_list = Vec::with_capacity(n);
        for (i, c) in problem.clients().iter().enumerate() {
            let mut g = crate::objective::gradient(c, &x)?;
            if let Some(f) = aggregation.target_factor(i, n) {
                g.iter_mut().for_each(|v| *v *= f);
            }
            g_list.push(g);
        }
        Self::new(x, g_list, aggregation)
    }
}

/// Where client gradients come from.
#[derive(Debug, Clone, Copy)]
pub enum GradientOracle<'a> {
    Exact,
    /// One estimator per client.
    Stochastic(&'a [StochasticEstimatorSpec]),
}

/// Everything that defines one round except the state and the randomness.
#[derive(Debug, Clone, Copy)]
pub struct Round<'a> {
    pub problem: &'a GlobalProblem,
    pub aggregation: &'a Aggregation,
    pub compressor: &'a CompressorSpec,
    pub oracle: GradientOracle<'a>,
    /// Inclusion probabilities; `None` means every client participates.
    pub participation: Option<&'a [f64]>,
    pub gamma: f64,
    /// Evaluate clients on the rayon pool. The result is identical either way.
    pub parallel: bool,
}

impl<'a> Round<'a> {
    pub fn new(
        problem: &'a GlobalProblem,
        aggregation: &'a Aggregation,
        compressor: &'a CompressorSpec,
        gamma: f64,
    ) -> Self {
        Round {
            problem,
            aggregation,
            compressor,
            oracle: GradientOracle::Exact,
            participation: None,
            gamma,
            parallel: false,
        }
    }

    fn validate(&self, state: &RunState) -> Result<()> {
        let n = self.problem.n();
        let d = self.problem.dim();
        if state.g_list.len() != n {
            return Err(Error::domain(format!("state has {} estimators for {n} clients", state.g_list.len())));
        }
        if state.x.len() != d || state.g_agg.len() != d || state.g_list.iter().any(|g| g.len() != d) {
            return Err(Error::domain(format!("state dimensions do not match the problem dimension {d}")));
        }
        if self.compressor.dimension != d {
            return Err(Error::domain(format!(
                "compressor dimension {} does not match the problem dimension {d}",
                self.compressor.dimension
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::domain(format!("step size {} must be positive", self.gamma)));
        }
        self.aggregation.check(n)?;
        if let GradientOracle::Stochastic(specs) = self.oracle {
            if specs.len() != n {
                return Err(Error::domain(format!("{} estimators for {n} clients", specs.len())));
            }
        }
        if let Some(p) = self.participation {
            check_probabilities(p, n)?;
        }
        Ok(())
    }

    /// Advances `state` by one round and returns the participating clients.
    pub fn advance(&self, state: &mut RunState, seed: RoundSeed) -> Result<Vec<usize>> {
        self.validate(state)?;
        let n = self.problem.n();
        axpy(-self.gamma, &state.g_agg.clone(), &mut state.x);

        let active: Vec<bool> = match self.participation {
            None => vec![true; n],
            Some(p) => (0..n)
                .map(|i| {
                    let u: f64 = seed.client(i, Purpose::Participation).random();
                    u < p[i]
                })
                .collect(),
        };

        let x = &state.x;
        let work = |(i, g): (usize, &mut Vec<f64>)| -> Result<()> {
            if !active[i] {
                return Ok(());
            }
            self.update_client(i, x, g, seed)
        };
        if self.parallel {
            state.g_list.par_iter_mut().enumerate().try_for_each(work)?;
        } else {
            state.g_list.iter_mut().enumerate().try_for_each(work)?;
        }

        state.g_agg = self.aggregation.aggregate(&state.g_list);
        state.round += 1;
        Ok((0..n).filter(|&i| active[i]).collect())
    }

    fn update_client(&self, i: usize, x: &[f64], g: &mut [f64], seed: RoundSeed) -> Result<()> {
        let client = &self.problem.clients()[i];
        let mut target = vec![0.0; x.len()];
        match self.oracle {
            GradientOracle::Exact => client.gradient_into(x, &mut target),
            GradientOracle::Stochastic(specs) => {
                let mut rng: Stream = seed.client(i, Purpose::Minibatch);
                stochastic_gradient_into(client, x, &specs[i], &mut rng, &mut target);
            }
        }
        if let Some(f) = self.aggregation.target_factor(i, self.problem.n()) {
            target.iter_mut().for_each(|v| *v *= f);
        }
        for (t, gi) in target.iter_mut().zip(g.iter()) {
            *t -= gi;
        }
        let mut rng = seed.client(i, Purpose::Compressor);
        let u = compressor::apply(self.compressor, &target, &mut rng)?;
        axpy(1.0, &u, g);
        Ok(())
    }
}

fn check_probabilities(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::domain(format!("{} participation probabilities for {n} clients", p.len())));
    }
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::domain(format!("participation probability of client {i} is {v}; it must lie in (0, 1]")));
    }
    Ok(())
}

/// One round of EF21.
pub fn step_ef21(
    state: &RunState,
    problem: &GlobalProblem,
    compressor: &CompressorSpec,
    gamma: f64,
    seed: RoundSeed,
) -> Result<RunState> {
    let mut next = state.clone();
    Round::new(problem, &Aggregation::Uniform, compressor, gamma).advance(&mut next, seed)?;
    Ok(next)
}

/// One round of EF21-W.
pub fn step_ef21_w(
    state: &RunState,
    problem: &GlobalProblem,
    weights: &WeightVector,
    compressor: &CompressorSpec,
    gamma: f64,
    seed: RoundSeed,
) -> Result<RunState> {
    let mut next = state.clone();
    let agg = Aggregation::Weighted(weights.clone());
    Round::new(problem, &agg, compressor, gamma).advance(&mut next, seed)?;
    Ok(next)
}

/// One round of EF21-W with minibatch gradient estimators.
pub fn step_ef21_w_sgd(
    state: &RunState,
    problem: &GlobalProblem,
    weights: &WeightVector,
    compressor: &CompressorSpec,
    estimators: &[StochasticEstimatorSpec],
    gamma: f64,
    seed: RoundSeed,
) -> Result<RunState> {
    let mut next = state.clone();
    let agg = Aggregation::Weighted(weights.clone());
    let mut round = Round::new(problem, &agg, compressor, gamma);
    round.oracle = GradientOracle::Stochastic(estimators);
    round.advance(&mut next, seed)?;
    Ok(next)
}

/// One round with independent Bernoulli(`pᵢ`) participation. Absent clients
/// keep their estimators; the server still aggregates over all clients.
pub fn step_ef21_pp(
    state: &RunState,
    problem: &GlobalProblem,
    aggregation: &Aggregation,
    compressor: &CompressorSpec,
    gamma: f64,
    p_list: &[f64],
    seed: RoundSeed,
) -> Result<(RunState, Vec<usize>)> {
    let mut next = state.clone();
    let mut round = Round::new(problem, aggregation, compressor, gamma);
    round.participation = Some(p_list);
    let who = round.advance(&mut next, seed)?;
    Ok((next, who))
}

/// Replaces client `i` by `Nᵢ` copies of `(N/(n Nᵢ)) fᵢ`. The average of the
/// `N` clones equals the original `f`.
pub fn build_cloned_problem(problem: &GlobalProblem, counts: &CloneCounts) -> Result<GlobalProblem> {
    let n = problem.n();
    if counts.n_list.len() != n {
        return Err(Error::domain(format!("{} clone counts for {n} clients", counts.n_list.len())));
    }
    let total = counts.total as f64;
    let mut clients = Vec::with_capacity(counts.total);
    for (c, &k) in problem.clients().iter().zip(&counts.n_list) {
        if k == 0 {
            return Err(Error::domain("clone counts must be positive"));
        }
        let scaled = c.scaled(total / (n as f64 * k as f64))?;
        clients.extend(std::iter::repeat_n(scaled, k));
    }
    GlobalProblem::new(clients)
}

/// Original client index of each clone, in clone order.
pub fn clone_owners(counts: &CloneCounts) -> Vec<usize> {
    counts.n_list.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(i, k)).collect()
}

/// Law of the reported iterate `x̂ᵀ` among `x⁰, …, x^{T−1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputLaw {
    UniformRandom,
    /// `P(x̂ = xᵗ) ∝ rᵗ`.
    WeightedGeometric { ratio: f64 },
}

/// Probability of each index under `law`.
pub fn output_probabilities(len: usize, law: &OutputLaw) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::domain("cannot select an output from an empty trajectory"));
    }
    let v: Vec<f64> = match *law {
        OutputLaw::UniformRandom => vec![1.0; len],
        OutputLaw::WeightedGeometric { ratio } => {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::config(format!(
                    "geometric output ratio r = {ratio} is outside (0, 1]; the step size is too large for the stochastic-gradient law"
                )));
            }
            let mut w = 1.0;
            (0..len)
                .map(|_| {
                    let cur = w;
                    w *= ratio;
                    cur
                })
                .collect()
        }
    };
    let total: f64 = v.iter().sum();
    Ok(v.into_iter().map(|x| x / total).collect())
}

/// Index drawn from `law` over `len` iterates.
pub fn select_output_index<R: Rng + ?Sized>(len: usize, law: &OutputLaw, rng: &mut R) -> Result<usize> {
    let probs = output_probabilities(len, law)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (t, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(t);
        }
    }
    Ok(len - 1)
}

/// The iterate drawn from `law`.
pub fn select_output<R: Rng + ?Sized>(trajectory: &[Vec<f64>], law: &OutputLaw, rng: &mut R) -> Result<Vec<f64>> {
    let t = select_output_index(trajectory.len(), law, rng)?;
    Ok(trajectory[t].clone())
}

/// Both gradient-distortion measures at the current iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    /// `Σ wᵢ ‖gᵢ − ∇fᵢ/(n wᵢ)‖²`
    pub g_weighted: f64,
    /// `(1/n²) Σ (1/wᵢ) ‖gᵢ − ∇fᵢ‖²`
    pub g_unweighted: f64,
}

/// Distortion of `state.g_list` against the gradients at `state.x`.
pub fn distortion(state: &RunState, problem: &GlobalProblem, weights: &WeightVector) -> Result<DistortionReport> {
    let grads: Vec<Vec<f64>> = problem
        .clients()
        .iter()
        .map(|c| crate::objective::gradient(c, &state.x))
        .collect::<Result<_>>()?;
    distortion_from_gradients(&state.g_list, &grads, weights)
}

/// Distortion given precomputed client gradients.
pub fn distortion_from_gradients(
    g_list: &[Vec<f64>],
    grads: &[Vec<f64>],
    weights: &WeightVector,
) -> Result<DistortionReport> {
    let n = g_list.len();
    if grads.len() != n || weights.len() != n {
        return Err(Error::domain("distortion inputs have inconsistent client counts"));
    }
    let nf = n as f64;
    let mut g_weighted = 0.0;
    let mut g_unweighted = 0.0;
    for ((g, grad), &w) in g_list.iter().zip(grads).zip(weights.as_slice()) {
        let f = 1.0 / (nf * w);
        let scaled: f64 = g.iter().zip(grad).map(|(a, b)| (a - f * b).powi(2)).sum();
        g_weighted += w * scaled;
        g_unweighted += dist_sq(g, grad) / w;
    }
    Ok(DistortionReport { g_weighted, g_unweighted: g_unweighted / (nf * nf) })
}
