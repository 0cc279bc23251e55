//! Experiment orchestration: configs, the round loop with per-round metrics
//! and inline inequality monitors, bit accounting, CSV/SVG output,
//! comparisons and parameter sweeps.
//!
//! Both distortion columns are measured against the smoothness weights
//! `wᵢ = Lᵢ/ΣLⱼ` of the executed problem. `G_weighted` is the quantity the
//! EF21-W analysis tracks, `G_unweighted` the one the refined EF21 analysis
//! tracks; each run is monitored with the one that matches its algorithm.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    build_cloned_problem, distortion_from_gradients, select_output_index, Aggregation, GradientOracle,
    OutputLaw, Round, RunState,
};
use crate::compressor::{contraction_functions, CompressorKind, CompressorSpec};
use crate::datagen::{generate_synthetic, parse_libsvm, shuffle_heuristic, ShuffleAssignment, SynthConfig};
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm_sq};
use crate::objective::{
    sparsity_pattern, ClientProblem, Dataset, GlobalProblem, LossKind, Sampling, StochasticEstimatorSpec,
};
use crate::rng::{stream, Purpose, RoundSeed};
use crate::stepsize::{self, PpParams, SgdParams, SgdVariant};
use crate::weighting::{clone_counts, rare_feature_c, smoothness_weights, summarize, WeightVector};

/// Relative slack granted to the inline inequality monitors for round-off.
///
/// The magnitude scale of each check includes `√(q·q₀)` for the monitored
/// quantity `q` and its start-of-run size `q₀`: near a zero-residual
/// minimizer `f` and `G` are evaluated with absolute error of that order,
/// so the check stops resolving them only once they fall more than about
/// eighteen orders of magnitude below where they started.
pub const MONITOR_RTOL: f64 = 1e-9;

/// Where the problem comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ProblemSource {
    Synthetic(SynthConfig),
    Libsvm {
        path: PathBuf,
        clients: usize,
        #[serde(default)]
        shuffle: bool,
        loss: LossKind,
        #[serde(default)]
        lambda: f64,
        #[serde(default)]
        dim: Option<usize>,
    },
    /// A problem written by [`problem_to_json`].
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ef21,
    Ef21w,
    Ef21Cloned,
    Ef21Sgd,
    Ef21wSgd,
    Ef21Pp,
    Ef21wPp,
    Ef21Rare,
}

impl Algorithm {
    pub fn is_weighted(self) -> bool {
        matches!(self, Algorithm::Ef21w | Algorithm::Ef21wSgd | Algorithm::Ef21wPp)
    }

    pub fn is_sgd(self) -> bool {
        matches!(self, Algorithm::Ef21Sgd | Algorithm::Ef21wSgd)
    }

    pub fn is_pp(self) -> bool {
        matches!(self, Algorithm::Ef21Pp | Algorithm::Ef21wPp)
    }

    fn default_rule(self) -> StepRule {
        match self {
            Algorithm::Ef21 => StepRule::Classic,
            Algorithm::Ef21w => StepRule::Ef21w,
            Algorithm::Ef21Cloned => StepRule::Clone,
            Algorithm::Ef21Sgd | Algorithm::Ef21wSgd => StepRule::Sgd,
            Algorithm::Ef21Pp | Algorithm::Ef21wPp => StepRule::Pp,
            Algorithm::Ef21Rare => StepRule::Rare,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ef21 => "ef21",
            Algorithm::Ef21w => "ef21w",
            Algorithm::Ef21Cloned => "ef21_cloned",
            Algorithm::Ef21Sgd => "ef21_sgd",
            Algorithm::Ef21wSgd => "ef21w_sgd",
            Algorithm::Ef21Pp => "ef21_pp",
            Algorithm::Ef21wPp => "ef21w_pp",
            Algorithm::Ef21Rare => "ef21_rare",
        }
    }
}

/// Theoretical step-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// The rule that belongs to the algorithm.
    #[default]
    Auto,
    Classic,
    Ef21w,
    Clone,
    Pl,
    PlCloned,
    Rare,
    Sgd,
    Pp,
    /// The value in `gamma`.
    Fixed,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsizeConfig {
    #[serde(default)]
    pub rule: StepRule,
    #[serde(default = "one")]
    pub multiplier: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
}

impl Default for StepsizeConfig {
    fn default() -> Self {
        StepsizeConfig { rule: StepRule::Auto, multiplier: 1.0, gamma: None }
    }
}

/// One probability for every client, or one per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Participation {
    Scalar(f64),
    PerClient(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputChoice {
    #[default]
    Uniform,
    /// Geometric weights of the stochastic-gradient analysis.
    Geometric,
}

fn one_usize() -> usize {
    1
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub label: Option<String>,
    pub problem: ProblemSource,
    pub algorithm: Algorithm,
    pub compressor: CompressorKind,
    #[serde(default)]
    pub stepsize: StepsizeConfig,
    pub rounds: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub participation: Option<Participation>,
    #[serde(default = "one_usize")]
    pub tau: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub output_law: OutputChoice,
    #[serde(default)]
    pub parallel: bool,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads a JSON config; relative data paths resolve against the
    /// config's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = from_json(&read_text(path)?, path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        match &mut self.problem {
            ProblemSource::Libsvm { path, .. } | ProblemSource::File { path } => resolve(base, path),
            ProblemSource::Synthetic(_) => {}
        }
    }

    pub fn display_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algorithm.name().to_string())
    }

    fn rule(&self) -> StepRule {
        match self.stepsize.rule {
            StepRule::Auto => self.algorithm.default_rule(),
            r => r,
        }
    }

    /// Checks that need no problem data.
    pub fn validate(&self) -> Result<()> {
        let alg = self.algorithm;
        if self.rounds == 0 {
            return Err(Error::config("rounds must be at least 1"));
        }
        let m = self.stepsize.multiplier;
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::config(format!("step-size multiplier {m} must be positive")));
        }
        let rule = self.rule();
        let ok = match rule {
            StepRule::Sgd => alg.is_sgd(),
            StepRule::Pp => alg.is_pp(),
            StepRule::Rare => alg == Algorithm::Ef21Rare,
            StepRule::Clone | StepRule::PlCloned => alg == Algorithm::Ef21Cloned,
            _ => true,
        };
        if !ok {
            return Err(Error::config(format!(
                "step-size rule {rule:?} does not apply to algorithm {}",
                alg.name()
            )));
        }
        match (rule, self.stepsize.gamma) {
            (StepRule::Fixed, None) => return Err(Error::config("rule \"fixed\" needs a \"gamma\" value")),
            (StepRule::Fixed, Some(g)) if !(g > 0.0 && g.is_finite()) => {
                return Err(Error::config(format!("fixed step size {g} must be positive")))
            }
            (StepRule::Fixed, _) => {}
            (_, Some(_)) => return Err(Error::config("\"gamma\" is only used with rule \"fixed\"")),
            _ => {}
        }
        if alg.is_pp() != self.participation.is_some() {
            return Err(Error::config(if alg.is_pp() {
                format!("{} needs a \"participation\" probability", alg.name())
            } else {
                format!("\"participation\" only applies to partial-participation algorithms, not {}", alg.name())
            }));
        }
        if self.tau == 0 {
            return Err(Error::config("tau must be at least 1"));
        }
        if self.output_law == OutputChoice::Geometric && rule != StepRule::Sgd {
            return Err(Error::config("the geometric output law needs the \"sgd\" step-size rule"));
        }
        if alg == Algorithm::Ef21Rare && !matches!(self.compressor, CompressorKind::Topk { .. }) {
            return Err(Error::config("ef21_rare runs with TopK compressors only"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClientRecord {
    loss: LossKind,
    #[serde(default)]
    lambda: f64,
    #[serde(default = "one")]
    scale: f64,
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProblemFile {
    clients: Vec<ClientRecord>,
}

/// Serializes the client data of a problem; floats round-trip exactly.
pub fn problem_to_json(problem: &GlobalProblem) -> String {
    let clients = problem
        .clients()
        .iter()
        .map(|c| {
            let data = c.data();
            ClientRecord {
                loss: c.kind(),
                lambda: c.lambda(),
                scale: c.scale(),
                features: (0..data.rows()).map(|r| data.row(r).0.to_vec()).collect(),
                targets: data.targets().to_vec(),
            }
        })
        .collect();
    serde_json::to_string(&ProblemFile { clients }).expect("plain data serializes")
}

/// Rebuilds a problem written by [`problem_to_json`].
pub fn problem_from_json(text: &str, origin: &Path) -> Result<GlobalProblem> {
    let file: ProblemFile = from_json(text, origin)?;
    let clients = file
        .clients
        .into_iter()
        .map(|r| {
            let c = ClientProblem::new(r.loss, Dataset::from_rows(&r.features, r.targets)?, r.lambda)?;
            if r.scale == 1.0 {
                Ok(c)
            } else {
                c.scaled(r.scale)
            }
        })
        .collect::<Result<_>>()?;
    GlobalProblem::new(clients)
}

/// Builds the problem a config describes.
pub fn load_problem(source: &ProblemSource) -> Result<GlobalProblem> {
    match source {
        ProblemSource::Synthetic(cfg) => generate_synthetic(cfg),
        ProblemSource::Libsvm { path, clients, shuffle, loss, lambda, dim } => {
            let data = parse_libsvm(&read_text(path)?, *dim)?;
            let split = if *shuffle {
                shuffle_heuristic(&data, *clients, *loss, *lambda)?
            } else {
                ShuffleAssignment::contiguous(data.rows(), *clients)?
            };
            split.build(&data, *loss, *lambda)
        }
        ProblemSource::File { path } => problem_from_json(&read_text(path)?, path),
    }
}

/// Uplink payload of one round.
///
/// ```
/// use ef21_core::compressor::CompressorSpec;
/// use ef21_core::harness::bits_per_round;
/// assert_eq!(bits_per_round(&CompressorSpec::natural(10).unwrap(), 1), 90);
/// assert_eq!(bits_per_round(&CompressorSpec::top_k(1, 1024).unwrap(), 1), 74);
/// ```
pub fn bits_per_round(spec: &CompressorSpec, participants: usize) -> u64 {
    let d = spec.dimension as u64;
    let p = participants as u64;
    match spec.kind {
        CompressorKind::Topk { k } => {
            let index_bits = u64::from(u64::BITS - (d - 1).leading_zeros());
            p * k as u64 * (64 + index_bits)
        }
        CompressorKind::Natural => p * d * 9,
        CompressorKind::Identity => p * d * 64,
    }
}

/// Metrics at the iterate `xᵗ`; bits and participants count round `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u64,
    pub f_value: f64,
    pub grad_norm_sq: f64,
    #[serde(rename = "G_weighted")]
    pub g_weighted: f64,
    #[serde(rename = "G_unweighted")]
    pub g_unweighted: f64,
    pub lyapunov: Option<f64>,
    pub bits_uplink_total: u64,
    pub participants: usize,
}

/// Problem and compressor constants a run was configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "L_AM")]
    pub l_am: f64,
    #[serde(rename = "L_QM")]
    pub l_qm: f64,
    #[serde(rename = "L_var")]
    pub l_var: f64,
    pub alpha: f64,
    pub theta: f64,
    pub beta: f64,
    pub xi: f64,
    pub c: Option<f64>,
    pub pl_mu: Option<f64>,
    pub clone_counts: Option<Vec<usize>>,
    pub sgd: Option<SgdParams>,
    pub pp: Option<PpParams>,
    pub output_ratio: Option<f64>,
}

/// Outcome of the per-round inequality checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub descent_checks: u64,
    pub descent_violations: u64,
    pub contraction_checks: u64,
    pub contraction_violations: u64,
    /// Largest `(lhs − rhs)/scale` seen over both inequalities.
    pub worst_excess: f64,
}

impl MonitorReport {
    pub fn violations(&self) -> u64 {
        self.descent_violations + self.contraction_violations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub algorithm: Algorithm,
    pub rounds: u64,
    pub gamma: f64,
    pub min_grad_norm_sq: f64,
    pub mean_grad_norm_sq: f64,
    pub initial_f: f64,
    pub final_f: f64,
    pub f_lower: f64,
    /// `2(f(x⁰) − f_lower)/(γT) + κ G⁰/(θT)` for the deterministic methods,
    /// with `κ = c/n` for rare features and `1` otherwise.
    pub theorem_bound: Option<f64>,
    pub output_round: u64,
    pub output_grad_norm_sq: f64,
    pub constants: DerivedConstants,
    pub monitor: MonitorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
    /// `x^T`.
    pub final_x: Vec<f64>,
}

struct Snapshot {
    f: f64,
    grad: Vec<f64>,
    grad_norm_sq: f64,
    g_weighted: f64,
    g_unweighted: f64,
}

fn snapshot(problem: &GlobalProblem, state: &RunState, w: &WeightVector, parallel: bool) -> Result<Snapshot> {
    let eval = |c: &ClientProblem| -> Result<(f64, Vec<f64>)> {
        Ok((crate::objective::value(c, &state.x)?, crate::objective::gradient(c, &state.x)?))
    };
    let per: Vec<(f64, Vec<f64>)> = if parallel {
        problem.clients().par_iter().map(eval).collect::<Result<_>>()?
    } else {
        problem.clients().iter().map(eval).collect::<Result<_>>()?
    };
    let n = problem.n() as f64;
    let mut f = 0.0;
    let mut grad = vec![0.0; state.x.len()];
    for (v, g) in &per {
        f += v;
        crate::linalg::axpy(1.0, g, &mut grad);
    }
    f /= n;
    grad.iter_mut().for_each(|v| *v /= n);
    let grads: Vec<Vec<f64>> = per.into_iter().map(|p| p.1).collect();
    let dist = distortion_from_gradients(&state.g_list, &grads, w)?;
    Ok(Snapshot {
        f,
        grad_norm_sq: norm_sq(&grad),
        grad,
        g_weighted: dist.g_weighted,
        g_unweighted: dist.g_unweighted,
    })
}

/// Everything `execute` settles before the first round.
struct Plan {
    problem: GlobalProblem,
    aggregation: Aggregation,
    weights: WeightVector,
    compressor: CompressorSpec,
    gamma: f64,
    estimators: Option<Vec<StochasticEstimatorSpec>>,
    participation: Option<Vec<f64>>,
    output_law: OutputLaw,
    constants: DerivedConstants,
    /// `(θ, coefficient of ‖Δx‖²)` when the contraction inequality holds
    /// deterministically.
    contraction: Option<(f64, f64)>,
    /// Multiplier of `G⁰` in the rate bound, when the bound applies.
    bound_factor: Option<f64>,
}

fn plan(original: &GlobalProblem, cfg: &RunConfig) -> Result<Plan> {
    cfg.validate()?;
    let alg = cfg.algorithm;
    let d = original.dim();
    let compressor = CompressorSpec::new(cfg.compressor, d).map_err(|e| Error::config(e.to_string()))?;
    let orig_summary = summarize(&original.smoothness_list())?;
    let l = original.smoothness();

    let mut counts = None;
    let problem = if alg == Algorithm::Ef21Cloned {
        let c = clone_counts(&orig_summary.l_list)?;
        let p = build_cloned_problem(original, &c)?;
        counts = Some(c.n_list);
        p
    } else {
        original.clone()
    };
    let n = problem.n();
    let run_summary = summarize(&problem.smoothness_list())?;
    let weights = smoothness_weights(&run_summary.l_list)?;
    let aggregation = if alg.is_weighted() { Aggregation::Weighted(weights.clone()) } else { Aggregation::Uniform };

    let mut alpha = compressor.alpha();
    let mut c_sparse = None;
    if alg == Algorithm::Ef21Rare {
        let pattern = sparsity_pattern(&problem).map_err(|e| Error::config(e.to_string()))?;
        let CompressorKind::Topk { k } = cfg.compressor else { unreachable!("validated") };
        alpha = (0..n)
            .map(|i| pattern.support(i).len())
            .filter(|&s| s > 0)
            .map(|s| k as f64 / s as f64)
            .fold(1.0, f64::min);
        c_sparse = Some(rare_feature_c(&pattern, &weights)?);
    }
    let cp = contraction_functions(alpha)?;

    let participation = match &cfg.participation {
        None => None,
        Some(Participation::Scalar(p)) => Some(vec![*p; n]),
        Some(Participation::PerClient(v)) => {
            if alg == Algorithm::Ef21Cloned || v.len() != n {
                return Err(Error::config(format!("{} participation probabilities for {n} clients", v.len())));
            }
            Some(v.clone())
        }
    };
    if let Some(p) = &participation {
        if let Some(bad) = p.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::config(format!("participation probability {bad} must lie in (0, 1]")));
        }
    }

    let estimators = if alg.is_sgd() {
        Some(
            problem
                .clients()
                .iter()
                .map(|c| StochasticEstimatorSpec::for_client(c, cfg.tau, cfg.sampling))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    // Vanilla stochastic and partial-participation methods are analysed
    // with the quadratic mean, the weighted ones with the arithmetic mean.
    let l_mean = if alg.is_weighted() { run_summary.l_am } else { run_summary.l_qm };
    let mu = problem.pl_mu();
    let need_mu = || mu.ok_or_else(|| Error::config("PL step sizes need a strongly convex linreg_l2 problem"));
    let mut sgd = None;
    let mut pp = None;
    let rule = cfg.rule();
    let base = match rule {
        StepRule::Auto => unreachable!("resolved by RunConfig::rule"),
        StepRule::Classic => stepsize::gamma_ef21_classic(l, run_summary.l_qm, alpha)?,
        StepRule::Ef21w => stepsize::gamma_ef21_w(l, run_summary.l_am, alpha)?,
        StepRule::Clone => stepsize::gamma_clone(l, orig_summary.l_am, alpha)?,
        StepRule::Pl => stepsize::gamma_pl(l, run_summary.l_am, alpha, need_mu()?)?,
        StepRule::PlCloned => stepsize::gamma_pl_cloned(l, orig_summary.l_am, alpha, need_mu()?)?,
        StepRule::Rare => stepsize::gamma_rare(l, run_summary.l_am, alpha, c_sparse.expect("rare"), n)?,
        StepRule::Sgd => {
            let params = stepsize::tune_sgd_params(alpha, SgdVariant::Minibatch)?;
            sgd = Some(params);
            stepsize::gamma_sgd(l, l_mean, &params)?
        }
        StepRule::Pp => {
            let p = participation.as_ref().expect("validated");
            let p_min = p.iter().cloned().fold(f64::INFINITY, f64::min);
            let p_max = p.iter().cloned().fold(0.0, f64::max);
            let params = stepsize::tune_pp_params(alpha, p_min, p_max, l_mean)?;
            pp = Some(params);
            stepsize::gamma_pp(l, &params)?
        }
        StepRule::Fixed => cfg.stepsize.gamma.expect("validated"),
    };
    let gamma = base * cfg.stepsize.multiplier;

    let mut output_ratio = None;
    let output_law = match cfg.output_law {
        OutputChoice::Uniform => OutputLaw::UniformRandom,
        OutputChoice::Geometric => {
            let params = sgd.expect("validated");
            let est = estimators.as_ref().expect("sgd algorithm");
            let abc: Vec<_> = est.iter().map(|e| e.abc).collect();
            let agg_w = if alg.is_weighted() { weights.clone() } else { WeightVector::uniform(n)? };
            let agg = stepsize::abc_aggregates(&abc, &run_summary.l_list, &agg_w, &vec![cfg.tau; n], params.variant)?;
            let r = stepsize::sgd_output_ratio(gamma, &agg, &params);
            output_ratio = Some(r);
            OutputLaw::WeightedGeometric { ratio: r }
        }
    };

    let exact_full = !alg.is_sgd() && !alg.is_pp();
    let kappa = c_sparse.map_or(1.0, |c| c / n as f64);
    let contraction = (exact_full && compressor.is_deterministic())
        .then(|| (cp.theta, cp.beta * kappa * run_summary.l_am * run_summary.l_am));
    let bound_factor = exact_full.then_some(kappa);

    let constants = DerivedConstants {
        l,
        l_am: orig_summary.l_am,
        l_qm: orig_summary.l_qm,
        l_var: orig_summary.l_var,
        alpha,
        theta: cp.theta,
        beta: cp.beta,
        xi: cp.xi,
        c: c_sparse,
        pl_mu: mu,
        clone_counts: counts,
        sgd,
        pp,
        output_ratio,
    };
    Ok(Plan {
        problem,
        aggregation,
        weights,
        compressor,
        gamma,
        estimators,
        participation,
        output_law,
        constants,
        contraction,
        bound_factor,
    })
}

/// The default start: a seeded standard Gaussian scaled by `1/√d`.
pub fn initial_point(seed: u64, d: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = stream(seed, Purpose::Init, &[]);
    let s = 1.0 / (d as f64).sqrt();
    (0..d).map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect()
}

fn exceeds(lhs: f64, rhs: f64, scale: f64, report: &mut MonitorReport) -> bool {
    let excess = (lhs - rhs) / scale.max(f64::MIN_POSITIVE);
    report.worst_excess = report.worst_excess.max(excess);
    excess > MONITOR_RTOL
}

/// Loads the problem and runs the config.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let problem = load_problem(&cfg.problem)?;
    execute_on(&problem, cfg)
}

/// Runs `cfg` on an already built problem; `cfg.problem` is ignored.
pub fn execute_on(original: &GlobalProblem, cfg: &RunConfig) -> Result<RunOutput> {
    let plan = plan(original, cfg)?;
    let p = &plan.problem;
    let run_kind_weighted = cfg.algorithm.is_weighted();
    let x0 = initial_point(cfg.seed, p.dim());
    let mut state = RunState::from_gradients(p, x0, &plan.aggregation)?;

    let mut round = Round::new(p, &plan.aggregation, &plan.compressor, plan.gamma);
    round.parallel = cfg.parallel;
    round.participation = plan.participation.as_deref();
    if let Some(est) = &plan.estimators {
        round.oracle = GradientOracle::Stochastic(est);
    }

    let t_total = cfg.rounds;
    let output_round = {
        let len = usize::try_from(t_total).map_err(|_| Error::config("too many rounds"))?;
        select_output_index(len, &plan.output_law, &mut stream(cfg.seed, Purpose::Output, &[]))? as u64
    };

    let l = plan.constants.l;
    let gamma = plan.gamma;
    let theta = plan.constants.theta;
    let f_lower = p.f_lower();
    let run_g = |s: &Snapshot| if run_kind_weighted { s.g_weighted } else { s.g_unweighted };
    let lyap = |s: &Snapshot| p.pl_mu().map(|_| s.f - f_lower + gamma / theta * run_g(s));

    let mut monitor = MonitorReport::default();
    let mut rows = Vec::with_capacity(t_total as usize);
    let mut bits = 0u64;
    let mut cur = snapshot(p, &state, &plan.weights, cfg.parallel)?;
    let initial_f = cur.f;
    let g0 = run_g(&cur);
    let f_ref = initial_f.abs();
    let g_ref = cur.grad_norm_sq + g0;
    let floor = |q: f64, r: f64| (q.abs() * r).sqrt();
    let mut output_grad = f64::NAN;
    for t in 0..t_total {
        let x_prev = state.x.clone();
        let g_prev = state.g_agg.clone();
        let who = round.advance(&mut state, RoundSeed::new(cfg.seed, t))?;
        bits += bits_per_round(&plan.compressor, who.len());
        if t == output_round {
            output_grad = cur.grad_norm_sq;
        }
        rows.push(MetricsRow {
            round: t,
            f_value: cur.f,
            grad_norm_sq: cur.grad_norm_sq,
            g_weighted: cur.g_weighted,
            g_unweighted: cur.g_unweighted,
            lyapunov: lyap(&cur),
            bits_uplink_total: bits,
            participants: who.len(),
        });

        let next = snapshot(p, &state, &plan.weights, cfg.parallel)?;
        if !(next.f.is_finite() && next.grad_norm_sq.is_finite()) {
            return Err(Error::Numerical(format!("iterate diverged at round {}", t + 1)));
        }
        let step_sq = dist_sq(&state.x, &x_prev);
        let err_sq = dist_sq(&g_prev, &cur.grad);
        let rhs = cur.f - gamma / 2.0 * cur.grad_norm_sq - (1.0 / (2.0 * gamma) - l / 2.0) * step_sq
            + gamma / 2.0 * err_sq;
        let scale = cur.f.abs() + next.f.abs() + gamma * cur.grad_norm_sq + step_sq / gamma + gamma * err_sq
            + floor(cur.f, f_ref)
            + floor(next.f, f_ref);
        monitor.descent_checks += 1;
        if exceeds(next.f, rhs, scale, &mut monitor) {
            monitor.descent_violations += 1;
        }
        if let Some((th, coef)) = plan.contraction {
            let (g_t, g_next) = (run_g(&cur), run_g(&next));
            let rhs = (1.0 - th) * g_t + coef * step_sq;
            monitor.contraction_checks += 1;
            let scale = g_t + g_next + coef * step_sq + floor(g_t, g_ref) + floor(g_next, g_ref);
            if exceeds(g_next, rhs, scale, &mut monitor) {
                monitor.contraction_violations += 1;
            }
        }
        cur = next;
    }

    let n_rows = rows.len() as f64;
    let min_grad = rows.iter().map(|r| r.grad_norm_sq).fold(f64::INFINITY, f64::min);
    let mean_grad = rows.iter().map(|r| r.grad_norm_sq).sum::<f64>() / n_rows;
    let theorem_bound = plan
        .bound_factor
        .map(|k| 2.0 * (initial_f - f_lower) / (gamma * n_rows) + k * g0 / (theta * n_rows));
    let summary = RunSummary {
        label: cfg.display_label(),
        algorithm: cfg.algorithm,
        rounds: t_total,
        gamma,
        min_grad_norm_sq: min_grad,
        mean_grad_norm_sq: mean_grad,
        initial_f,
        final_f: cur.f,
        f_lower,
        theorem_bound,
        output_round,
        output_grad_norm_sq: output_grad,
        constants: plan.constants,
        monitor,
    };
    Ok(RunOutput { rows, summary, final_x: state.x })
}

/// The fixed CSV header.
pub const CSV_HEADER: &str = "round,f_value,grad_norm_sq,G_weighted,G_unweighted,lyapunov,bits_uplink_total,participants";

fn csv_line(out: &mut String, r: &MetricsRow) {
    let lyap = r.lyapunov.map(|v| format!("{v:.16e}")).unwrap_or_default();
    writeln!(
        out,
        "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
        r.round, r.f_value, r.grad_norm_sq, r.g_weighted, r.g_unweighted, lyap, r.bits_uplink_total, r.participants
    )
    .expect("writing to a String cannot fail");
}

/// One header line and one line per row; floats carry 17 significant digits.
pub fn emit_csv(rows: &[MetricsRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::domain("no metric rows to write"));
    }
    let mut out = String::with_capacity(rows.len() * 140);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        csv_line(&mut out, r);
    }
    Ok(out)
}

/// Several labelled runs in one table, with a leading `run` column.
pub fn emit_joint_csv(series: &[(String, Vec<MetricsRow>)]) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.1.is_empty()) {
        return Err(Error::domain("no metric rows to write"));
    }
    let mut out = format!("run,{CSV_HEADER}\n");
    for (label, rows) in series {
        for r in rows {
            out.push_str(&csv_field(label));
            out.push(',');
            csv_line(&mut out, r);
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Which column an SVG plots on its logarithmic axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    #[default]
    GradNormSq,
    FValue,
    GWeighted,
    GUnweighted,
    Lyapunov,
}

impl Series {
    fn pick(self, r: &MetricsRow) -> Option<f64> {
        match self {
            Series::GradNormSq => Some(r.grad_norm_sq),
            Series::FValue => Some(r.f_value),
            Series::GWeighted => Some(r.g_weighted),
            Series::GUnweighted => Some(r.g_unweighted),
            Series::Lyapunov => r.lyapunov,
        }
    }

    fn title(self) -> &'static str {
        match self {
            Series::GradNormSq => "squared gradient norm",
            Series::FValue => "f(x)",
            Series::GWeighted => "G_weighted",
            Series::GUnweighted => "G_unweighted",
            Series::Lyapunov => "Lyapunov function",
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A log-scale line chart of `series` against the round index, one polyline
/// per labelled run.
pub fn emit_svg(runs: &[(String, Vec<MetricsRow>)], series: Series) -> Result<String> {
    if runs.is_empty() || runs.iter().any(|r| r.1.is_empty()) {
        return Err(Error::domain("no metric rows to plot"));
    }
    let (w, h) = (800.0, 500.0);
    let (left, right, top, bottom) = (80.0, 170.0, 40.0, 50.0);
    let positive = runs.iter().flat_map(|r| r.1.iter().filter_map(|m| series.pick(m))).filter(|v| *v > 0.0);
    let (lo, hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (mut e_lo, mut e_hi) = if lo.is_finite() { (lo.log10().floor(), hi.log10().ceil()) } else { (0.0, 1.0) };
    if e_hi <= e_lo {
        e_lo -= 1.0;
        e_hi += 1.0;
    }
    let floor_value = 10f64.powf(e_lo);
    let max_round = runs.iter().flat_map(|r| r.1.iter().map(|m| m.round)).max().unwrap_or(0).max(1) as f64;
    let px = |t: f64| left + (w - left - right) * t / max_round;
    let py = |v: f64| top + (h - top - bottom) * (e_hi - v.max(floor_value).log10()) / (e_hi - e_lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        left + (w - left - right) / 2.0,
        series.title()
    );
    let (x0, x1, y0, y1) = (left, w - right, top, h - bottom);
    let _ = writeln!(s, r#"<g stroke="black" stroke-width="1"><line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#);
    let decades = (e_hi - e_lo) as i64;
    let stride = (decades / 10 + 1).max(1);
    for k in (0..=decades).step_by(stride as usize) {
        let e = e_lo + k as f64;
        let y = py(10f64.powf(e));
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#dddddd"/><text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">1e{}</text>"##,
            x0 - 6.0,
            y + 4.0,
            e as i64
        );
    }
    for k in 0..=4 {
        let t = (max_round * k as f64 / 4.0).round();
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            px(t),
            y1 + 18.0,
            t as u64
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">round</text>"#,
        left + (w - left - right) / 2.0,
        h - 12.0
    );
    for (i, (label, rows)) in runs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for m in rows {
            if let Some(v) = series.pick(m) {
                if v.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", px(m.round as f64), py(v));
                }
            }
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.trim_end()
        );
        let ly = top + 20.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            w - right + 12.0,
            w - right + 36.0,
            w - right + 42.0,
            ly + 4.0,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn default_threshold_factor() -> f64 {
    1e-4
}

/// Runs over one problem to be compared side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub runs: Vec<RunConfig>,
    /// Absolute threshold on `‖∇f(xᵗ)‖²`. Without it the threshold is
    /// `threshold_factor · ‖∇f(x⁰)‖²` of the first run.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "default_threshold_factor")]
    pub threshold_factor: f64,
}

impl CompareConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg: CompareConfig = from_json(&read_text(path)?, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.runs.iter_mut().for_each(|r| r.resolve_paths(base));
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub label: String,
    pub gamma: f64,
    /// `γ` of this run over `γ` of the first run.
    pub gamma_ratio: f64,
    /// First round with `‖∇f(xᵗ)‖² ≤ threshold`; `None` if never.
    pub rounds_to_threshold: Option<u64>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub threshold: f64,
    pub entries: Vec<CompareEntry>,
}

impl CompareReport {
    /// A fixed-width table; unreached thresholds read "not reached".
    pub fn table(&self) -> String {
        let mut s = format!("{:<20} {:>14} {:>10} {:>20}\n", "run", "gamma", "ratio", "rounds to threshold");
        for e in &self.entries {
            let r = e.rounds_to_threshold.map_or_else(|| "not reached".to_string(), |t| t.to_string());
            let _ = writeln!(s, "{:<20} {:>14.6e} {:>10.4} {:>20}", e.label, e.gamma, e.gamma_ratio, r);
        }
        s
    }
}

/// Runs every config on their shared problem.
pub fn compare(cfg: &CompareConfig) -> Result<(CompareReport, Vec<(String, Vec<MetricsRow>)>)> {
    let first = cfg.runs.first().ok_or_else(|| Error::config("compare needs at least one run"))?;
    for r in &cfg.runs {
        r.validate()?;
        if r.problem != first.problem {
            return Err(Error::config("all compared runs must use the same problem"));
        }
        if r.rounds != first.rounds {
            return Err(Error::config("all compared runs must use the same number of rounds"));
        }
    }
    let problem = load_problem(&first.problem)?;
    let mut outputs = Vec::with_capacity(cfg.runs.len());
    for r in &cfg.runs {
        outputs.push(execute_on(&problem, r)?);
    }
    let threshold = match cfg.threshold {
        Some(t) => t,
        None => cfg.threshold_factor * outputs[0].rows[0].grad_norm_sq,
    };
    let gamma0 = outputs[0].summary.gamma;
    let mut series = Vec::with_capacity(outputs.len());
    let mut labels: Vec<String> = Vec::new();
    let entries = outputs
        .into_iter()
        .map(|o| {
            let mut label = o.summary.label.clone();
            let mut k = 2;
            while labels.contains(&label) {
                label = format!("{} ({k})", o.summary.label);
                k += 1;
            }
            labels.push(label.clone());
            let hit = o.rows.iter().find(|r| r.grad_norm_sq <= threshold).map(|r| r.round);
            series.push((label.clone(), o.rows));
            CompareEntry { label, gamma: o.summary.gamma, gamma_ratio: o.summary.gamma / gamma0, rounds_to_threshold: hit, summary: o.summary }
        })
        .collect();
    Ok((CompareReport { threshold, entries }, series))
}

/// The swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// The synthetic generator's `q`.
    Q,
    /// The synthetic generator's `z`.
    Z,
    /// A common participation probability.
    P,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg: SweepConfig = from_json(&read_text(path)?, path)?;
        cfg.base.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// The run config for one grid value.
    pub fn at(&self, value: f64) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        match (self.param, &mut cfg.problem) {
            (SweepParam::Q, ProblemSource::Synthetic(s)) => s.q = value,
            (SweepParam::Z, ProblemSource::Synthetic(s)) => s.z = value,
            (SweepParam::P, _) if cfg.algorithm.is_pp() => cfg.participation = Some(Participation::Scalar(value)),
            (SweepParam::P, _) => return Err(Error::config("sweeping p needs a partial-participation algorithm")),
            _ => return Err(Error::config("sweeping q or z needs a synthetic problem")),
        }
        cfg.label = Some(format!("{}={value}", self.param_name()));
        Ok(cfg)
    }

    pub fn param_name(&self) -> &'static str {
        match self.param {
            SweepParam::Q => "q",
            SweepParam::Z => "z",
            SweepParam::P => "p",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub summary: RunSummary,
}

/// Runs the base config once per grid value.
pub fn sweep(cfg: &SweepConfig) -> Result<(Vec<SweepPoint>, Vec<(String, Vec<MetricsRow>)>)> {
    if cfg.values.is_empty() {
        return Err(Error::config("a sweep needs at least one value"));
    }
    let mut points = Vec::new();
    let mut series = Vec::new();
    for &v in &cfg.values {
        let run = cfg.at(v)?;
        let out = execute(&run)?;
        series.push((run.display_label(), out.rows));
        points.push(SweepPoint { value: v, summary: out.summary });
    }
    Ok((points, series))
}

/// One line per grid value with the key constants and results.
pub fn sweep_csv(name: &str, points: &[SweepPoint]) -> String {
    let mut s = format!("{name},gamma,L,L_AM,L_QM,L_var,min_grad_norm_sq,mean_grad_norm_sq,final_f\n");
    for p in points {
        let c = &p.summary.constants;
        let _ = writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p.value,
            p.summary.gamma,
            c.l,
            c.l_am,
            c.l_qm,
            c.l_var,
            p.summary.min_grad_norm_sq,
            p.summary.mean_grad_norm_sq,
            p.summary.final_f
        );
    }
    s
}
