//! Property suites behind `ef21 selfcheck`. Each suite samples seeded random
//! instances, compares the library against an independent computation and
//! reports a one-line verdict.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::algorithms::{Aggregation, Round, RunState};
use crate::compressor::{apply, contraction_functions, natural_compress, top_k, CompressorSpec, GeneralizedYoung};
use crate::error::Result;
use crate::harness::{execute_on, Algorithm, ProblemSource, RunConfig, StepsizeConfig};
use crate::linalg::{dist_sq, norm_sq};
use crate::objective::{sparsity_pattern, ClientProblem, Dataset, GlobalProblem, LossKind, Sampling};
use crate::rng::{stream, Purpose, RoundSeed};
use crate::stepsize::gamma_ef21_w;
use crate::weighting::{clone_counts, clone_objective, optimal_weights, rare_feature_c, summarize, WeightVector};

/// Verdict of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Suite = fn(u64) -> std::result::Result<String, String>;

const SUITES: [(&str, Suite); 8] = [
    ("contraction", contraction_suite),
    ("natural-compressor", natural_suite),
    ("optimal-weights", optimal_weights_suite),
    ("clone-sandwich", clone_sandwich_suite),
    ("stepsize-bound", stepsize_bound_suite),
    ("sparse-norm", sparse_norm_suite),
    ("run-monitors", monitor_suite),
    ("parallel-determinism", determinism_suite),
];

/// Runs every suite with its fixed seed.
pub fn run_all() -> Vec<SuiteResult> {
    SUITES
        .iter()
        .enumerate()
        .map(|(k, (name, suite))| {
            let (passed, detail) = match suite(1000 + k as u64) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            SuiteResult { name, passed, detail }
        })
        .collect()
}

fn gaussian<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()
}

fn fail_if(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Err(msg())
    } else {
        Ok(())
    }
}

fn lib<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn contraction_suite(seed: u64) -> std::result::Result<String, String> {
    let mut rng = stream(seed, Purpose::Check, &[]);
    let trials = 5000;
    for _ in 0..trials {
        let d = rng.random_range(1..30);
        let k = rng.random_range(1..=d);
        let x = gaussian(&mut rng, d);
        let alpha = k as f64 / d as f64;
        let err = dist_sq(&lib(top_k(&x, k))?, &x);
        fail_if(err > (1.0 - alpha) * norm_sq(&x) * (1.0 + 1e-12) + 1e-300, || {
            format!("TopK({k}) in dimension {d} exceeded 1 - K/d")
        })?;
        // ‖a + b‖² ≤ (1 + s)‖a‖² + (1 + 1/s)‖b‖²
        let s = 10f64.powf(rng.random_range(-3.0..3.0));
        let a = gaussian(&mut rng, d);
        let b = gaussian(&mut rng, d);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        let y = lib(GeneralizedYoung::new(alpha, s))?;
        fail_if(norm_sq(&sum) > ((1.0 + s) * norm_sq(&a) + (1.0 + 1.0 / s) * norm_sq(&b)) * (1.0 + 1e-12), || {
            format!("Young's inequality failed at s = {s}")
        })?;
        fail_if((y.theta_s - (1.0 - (1.0 - alpha) * (1.0 + s))).abs() > 1e-12, || "theta_s mismatch".into())?;
        let p = lib(contraction_functions(alpha))?;
        fail_if(alpha < 1.0 && (p.xi - (p.beta / p.theta).sqrt()).abs() > 1e-9 * p.xi, || {
            format!("xi != sqrt(beta/theta) at alpha = {alpha}")
        })?;
    }
    Ok(format!("{trials} random TopK and Young instances"))
}

fn natural_suite(seed: u64) -> std::result::Result<String, String> {
    let mut rng = stream(seed, Purpose::Check, &[]);
    let x = gaussian(&mut rng, 8);
    let draws = 20_000;
    let mut mean = vec![0.0; x.len()];
    let mut var = 0.0;
    for _ in 0..draws {
        let c = lib(natural_compress(&x, &mut rng))?;
        crate::linalg::axpy(1.0 / draws as f64, &c, &mut mean);
        var += dist_sq(&c, &x) / draws as f64;
    }
    // Each coordinate's rounding error is at most |xⱼ|/2, so the per-draw
    // squared error is bounded by ‖x‖²/4; a 6-sigma band on the mean.
    let band = 6.0 * (norm_sq(&x) / 4.0 / draws as f64).sqrt();
    let bias = dist_sq(&mean, &x).sqrt();
    fail_if(bias > band, || format!("empirical bias {bias:.3e} exceeds {band:.3e}"))?;
    let bound = norm_sq(&x) / 8.0;
    fail_if(var > bound * (1.0 + 0.05), || format!("variance {var:.4} above omega bound {bound:.4}"))?;
    let spec = lib(CompressorSpec::natural(x.len()))?;
    let alpha = spec.alpha();
    let mut contract = 0.0;
    for _ in 0..draws {
        contract += dist_sq(&lib(apply(&spec, &x, &mut rng))?, &x) / draws as f64;
    }
    fail_if(contract > (1.0 - alpha) * norm_sq(&x), || "scaled natural compressor failed to contract".into())?;
    Ok(format!("{draws} draws, bias {bias:.2e}, variance ratio {:.4}", var / norm_sq(&x)))
}

fn optimal_weights_suite(seed: u64) -> std::result::Result<String, String> {
    let mut rng = stream(seed, Purpose::Check, &[]);
    let instances = 100;
    for _ in 0..instances {
        let n = rng.random_range(1..10);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..10.0)).collect();
        let (w, v) = lib(optimal_weights(&a))?;
        let obj = |w: &[f64]| a.iter().zip(w).map(|(ai, wi)| ai * ai / wi).sum::<f64>();
        fail_if((obj(w.as_slice()) - v).abs() > 1e-9 * v, || "reported minimum differs from objective".into())?;
        for _ in 0..200 {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..1.0)).collect();
            let other = lib(WeightVector::from_scores(&raw))?;
            fail_if(obj(other.as_slice()) < v * (1.0 - 1e-12), || "a random simplex point beat the optimum".into())?;
        }
    }
    Ok(format!("{instances} instances against 200 random simplex points each"))
}

fn clone_sandwich_suite(seed: u64) -> std::result::Result<String, String> {
    let mut rng = stream(seed, Purpose::Check, &[]);
    let instances = 300;
    for _ in 0..instances {
        let n = rng.random_range(1..5);
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let s = lib(summarize(&l))?;
        let m = lib(clone_objective(&l, &lib(clone_counts(&l))?))?;
        fail_if(m < s.l_am * (1.0 - 1e-12) || m > std::f64::consts::SQRT_2 * s.l_am * (1.0 + 1e-12), || {
            format!("M(ceil) = {m} outside [L_AM, sqrt2 L_AM] for {l:?}")
        })?;
        // Exhaustive search over small counts never beats L_AM.
        let mut counts = vec![1usize; n];
        loop {
            let v = lib(clone_objective(&l, &lib(crate::weighting::CloneCounts::new(counts.clone()))?))?;
            fail_if(v < s.l_am * (1.0 - 1e-12), || format!("counts {counts:?} beat L_AM"))?;
            let mut i = 0;
            while i < n && counts[i] == 6 {
                counts[i] = 1;
                i += 1;
            }
            if i == n {
                break;
            }
            counts[i] += 1;
        }
    }
    Ok(format!("{instances} instances with exhaustive counts up to 6"))
}

fn stepsize_bound_suite(seed: u64) -> std::result::Result<String, String> {
    let mut rng = stream(seed, Purpose::Check, &[]);
    let trials = 10_000;
    for _ in 0..trials {
        let l = 10f64.powf(rng.random_range(-3.0..3.0));
        let l_am = 10f64.powf(rng.random_range(-3.0..3.0));
        let alpha = rng.random_range(1e-3..1.0);
        let p = lib(contraction_functions(alpha))?;
        let g = lib(gamma_ef21_w(l, l_am, alpha))?;
        // a γ² + b γ ≤ 1 with a = L_AM² β/θ and b = L.
        let lhs = l_am * l_am * p.beta / p.theta * g * g + l * g;
        fail_if(lhs > 1.0 + 1e-12, || format!("a g^2 + b g = {lhs} at L = {l}, L_AM = {l_am}, alpha = {alpha}"))?;
    }
    Ok(format!("{trials} random (L, L_AM, alpha)"))
}

/// Three clients with disjoint coordinate blocks plus a shared column.
pub(crate) fn block_problem(seed: u64) -> Result<GlobalProblem> {
    let mut rng = stream(seed, Purpose::Check, &[]);
    let d = 7;
    let blocks: [&[usize]; 3] = [&[0, 1, 6], &[2, 3], &[4, 5, 6]];
    let clients = blocks
        .iter()
        .enumerate()
        .map(|(i, cols)| {
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|_| {
                    let mut r = vec![0.0; d];
                    for &j in *cols {
                        r[j] = (1.0 + i as f64) * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                    }
                    r
                })
                .collect();
            let y = gaussian(&mut rng, rows.len());
            ClientProblem::new(LossKind::LinRegL2, Dataset::from_rows(&rows, y)?, 0.0)
        })
        .collect::<Result<_>>()?;
    GlobalProblem::new(clients)
}

fn sparse_norm_suite(seed: u64) -> std::result::Result<String, String> {
    let mut rng = stream(seed, Purpose::Check, &[]);
    let problem = lib(block_problem(seed))?;
    let pattern = lib(sparsity_pattern(&problem))?;
    let w = lib(WeightVector::from_scores(&problem.smoothness_list()))?;
    let n = pattern.n();
    let c = lib(rare_feature_c(&pattern, &w))?;
    let trials = 10_000;
    for _ in 0..trials {
        let mut lhs_vec = vec![0.0; pattern.dim()];
        let mut rhs = 0.0;
        for i in 0..n {
            let mut u = vec![0.0; pattern.dim()];
            for &j in pattern.support(i) {
                u[j] = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            }
            crate::linalg::axpy(w.as_slice()[i], &u, &mut lhs_vec);
            rhs += w.as_slice()[i] * norm_sq(&u);
        }
        let lhs = norm_sq(&lhs_vec);
        fail_if(lhs > c / n as f64 * rhs * (1.0 + 1e-12), || format!("norm lemma failed: {lhs} > c/n * {rhs}"))?;
    }
    Ok(format!("{trials} support-respecting tuples, c = {c:.4}"))
}

fn small_config(alg: Algorithm, rounds: u64) -> RunConfig {
    RunConfig {
        label: None,
        problem: ProblemSource::File { path: "in-memory".into() },
        algorithm: alg,
        compressor: crate::compressor::CompressorKind::Topk { k: 1 },
        stepsize: StepsizeConfig::default(),
        rounds,
        seed: 3,
        participation: None,
        tau: 1,
        sampling: Sampling::WithReplacement,
        output_law: Default::default(),
        parallel: false,
    }
}

fn monitor_suite(seed: u64) -> std::result::Result<String, String> {
    let synth = crate::datagen::SynthConfig {
        n: 6,
        d: 5,
        n_i: 6,
        l: 40.0,
        mu: 0.5,
        q: 1.0,
        z: 4.0,
        seed,
        loss: LossKind::LinRegL2,
        lambda: 0.0,
    };
    let dense = lib(crate::datagen::generate_synthetic(&synth))?;
    let rare = lib(block_problem(seed))?;
    let mut checked = 0;
    for (problem, alg) in [
        (&dense, Algorithm::Ef21w),
        (&dense, Algorithm::Ef21),
        (&dense, Algorithm::Ef21Cloned),
        (&rare, Algorithm::Ef21Rare),
    ] {
        let out = lib(execute_on(problem, &small_config(alg, 300)))?;
        let m = &out.summary.monitor;
        fail_if(m.violations() > 0, || format!("{}: {m:?}", alg.name()))?;
        let bound = out.summary.theorem_bound.unwrap_or(f64::INFINITY);
        fail_if(out.summary.mean_grad_norm_sq > bound, || format!("{}: rate bound violated", alg.name()))?;
        checked += m.descent_checks + m.contraction_checks;
    }
    Ok(format!("{checked} inline inequality checks, zero violations"))
}

fn determinism_suite(seed: u64) -> std::result::Result<String, String> {
    let mut rng = stream(seed, Purpose::Check, &[]);
    let problem = lib(block_problem(seed))?;
    let spec = lib(CompressorSpec::natural(problem.dim()))?;
    let agg = Aggregation::Weighted(lib(WeightVector::from_scores(&problem.smoothness_list()))?);
    let x0 = gaussian(&mut rng, problem.dim());
    let mut a = lib(RunState::from_gradients(&problem, x0, &agg))?;
    let mut b = a.clone();
    let p = vec![0.7; problem.n()];
    let mut seq = Round::new(&problem, &agg, &spec, 0.01);
    seq.participation = Some(&p);
    let mut par = seq.clone();
    par.parallel = true;
    let rounds = 200;
    for t in 0..rounds {
        let s = RoundSeed::new(seed, t);
        let wa = lib(seq.advance(&mut a, s))?;
        let wb = lib(par.advance(&mut b, s))?;
        fail_if(wa != wb || a != b, || format!("parallel and sequential runs diverged at round {t}"))?;
    }
    Ok(format!("{rounds} rounds bitwise identical"))
}
