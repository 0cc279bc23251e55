//! Client losses, gradient oracles and smoothness constants.
//!
//! Three losses are supported, each with its regularizer:
//!
//! | kind | data term | regularizer |
//! |------|-----------|-------------|
//! | `LinRegL2` | `(1/nᵢ)‖Ax − b‖²` | `(λ/2)‖x‖²` |
//! | `LinRegNonconvex` | `(1/nᵢ)‖Ax − b‖²` | `λ Σ xⱼ²/(xⱼ² + 1)` |
//! | `LogRegNonconvex` | `(1/nᵢ) Σ log(1 + exp(−y aᵀx))` | `λ Σ xⱼ²/(xⱼ² + 1)` |

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, axpy, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "linreg_l2")]
    LinRegL2,
    #[serde(rename = "linreg_nonconvex")]
    LinRegNonconvex,
    #[serde(rename = "logreg_nonconvex")]
    LogRegNonconvex,
}

impl LossKind {
    /// Curvature factor `c` such that the data-term Hessian is bounded by
    /// `c · AᵀA`.
    fn data_curvature(self, rows: usize) -> f64 {
        match self {
            LossKind::LinRegL2 | LossKind::LinRegNonconvex => 2.0 / rows as f64,
            LossKind::LogRegNonconvex => 0.25 / rows as f64,
        }
    }

    /// Bound on the spectral norm of the regularizer Hessian.
    fn reg_bound(self, lambda: f64) -> f64 {
        match self {
            LossKind::LinRegL2 => lambda,
            LossKind::LinRegNonconvex | LossKind::LogRegNonconvex => 2.0 * lambda,
        }
    }
}

/// Feature rows with their labels (`±1`) or regression targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Matrix, targets: Vec<f64>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::domain("a dataset needs at least one row"));
        }
        if features.cols() == 0 {
            return Err(Error::domain("a dataset needs a positive dimension"));
        }
        if targets.len() != features.rows() {
            return Err(Error::domain(format!(
                "{} targets for {} feature rows",
                targets.len(),
                features.rows()
            )));
        }
        if features.as_slice().iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::domain("dataset contains a non-finite value"));
        }
        Ok(Dataset { features, targets })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        Self::new(Matrix::from_rows(rows, d)?, targets)
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (self.features.row(i), self.targets[i])
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::domain(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.features.row(i));
            targets.push(self.targets[i]);
        }
        Dataset::new(Matrix::from_row_major(indices.len(), d, data)?, targets)
    }
}

/// Smoothness constant of a single-row sample function `ℓⱼ + reg`.
pub fn row_smoothness(kind: LossKind, a: &[f64], lambda: f64) -> f64 {
    let sq = linalg::norm_sq(a);
    let data = match kind {
        LossKind::LinRegL2 | LossKind::LinRegNonconvex => 2.0 * sq,
        LossKind::LogRegNonconvex => sq / 4.0,
    };
    data + kind.reg_bound(lambda)
}

/// A Lipschitz constant of `∇fᵢ` from the spectral bound on its Hessian.
///
/// Returns `0` when both the data and the regularizer vanish; such a client
/// is degenerate and [`ClientProblem::new`] rejects it.
pub fn smoothness_constant(kind: LossKind, data: &Dataset, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let top = linalg::lambda_max_gram(data.features())?;
    Ok(kind.data_curvature(data.rows()) * top + kind.reg_bound(lambda))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("regularization lambda = {lambda} must be finite and >= 0")));
    }
    Ok(())
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One client's loss `fᵢ`, possibly multiplied by a positive `scale`
/// (used by client cloning).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProblem {
    kind: LossKind,
    data: Dataset,
    lambda: f64,
    scale: f64,
    smoothness: f64,
}

impl ClientProblem {
    pub fn new(kind: LossKind, data: Dataset, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if kind == LossKind::LogRegNonconvex && data.targets().iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::domain("logistic regression labels must be -1 or +1"));
        }
        let smoothness = smoothness_constant(kind, &data, lambda)?;
        if smoothness <= 0.0 {
            return Err(Error::domain("degenerate client: zero data and zero regularization give L_i = 0"));
        }
        Ok(ClientProblem { kind, data, lambda, scale: 1.0, smoothness })
    }

    /// The same client with its loss multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::domain(format!("client scale {factor} must be positive")));
        }
        let mut c = self.clone();
        c.scale *= factor;
        c.smoothness *= factor;
        Ok(c)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// The cached constant `Lᵢ`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::domain(format!(
                "point has dimension {} but the problem has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn sample_loss(&self, i: usize, x: &[f64]) -> f64 {
        let (a, y) = self.data.row(i);
        let z = dot(a, x);
        match self.kind {
            LossKind::LinRegL2 | LossKind::LinRegNonconvex => (z - y) * (z - y),
            LossKind::LogRegNonconvex => softplus(-y * z),
        }
    }

    /// Derivative of the sample loss with respect to `aᵀx`.
    fn sample_slope(&self, i: usize, x: &[f64]) -> f64 {
        let (a, y) = self.data.row(i);
        let z = dot(a, x);
        match self.kind {
            LossKind::LinRegL2 | LossKind::LinRegNonconvex => 2.0 * (z - y),
            LossKind::LogRegNonconvex => -y * sigmoid(-y * z),
        }
    }

    fn reg_value(&self, x: &[f64]) -> f64 {
        match self.kind {
            LossKind::LinRegL2 => 0.5 * self.lambda * linalg::norm_sq(x),
            _ => self.lambda * x.iter().map(|&t| t * t / (t * t + 1.0)).sum::<f64>(),
        }
    }

    fn add_reg_gradient(&self, x: &[f64], out: &mut [f64]) {
        if self.lambda == 0.0 {
            return;
        }
        match self.kind {
            LossKind::LinRegL2 => axpy(self.lambda, x, out),
            _ => {
                for (o, &t) in out.iter_mut().zip(x) {
                    let q = t * t + 1.0;
                    *o += self.lambda * 2.0 * t / (q * q);
                }
            }
        }
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        let m = self.data.rows();
        let data: f64 = (0..m).map(|i| self.sample_loss(i, x)).sum::<f64>() / m as f64;
        self.scale * (data + self.reg_value(x))
    }

    pub(crate) fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let m = self.data.rows();
        for i in 0..m {
            let s = self.sample_slope(i, x);
            if s != 0.0 {
                axpy(s, self.data.features().row(i), out);
            }
        }
        linalg::scale(1.0 / m as f64, out);
        self.add_reg_gradient(x, out);
        if self.scale != 1.0 {
            linalg::scale(self.scale, out);
        }
    }
}

/// `fᵢ(x)`, regularizer included.
///
/// ```
/// use ef21_core::objective::{value, ClientProblem, Dataset, LossKind};
/// let data = Dataset::from_rows(&[vec![1.0, 2.0]], vec![1.0]).unwrap();
/// let c = ClientProblem::new(LossKind::LogRegNonconvex, data, 0.3).unwrap();
/// assert!((value(&c, &[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
/// ```
pub fn value(client: &ClientProblem, x: &[f64]) -> Result<f64> {
    client.check_dim(x)?;
    Ok(client.value_unchecked(x))
}

/// `∇fᵢ(x)`.
pub fn gradient(client: &ClientProblem, x: &[f64]) -> Result<Vec<f64>> {
    client.check_dim(x)?;
    let mut out = vec![0.0; x.len()];
    client.gradient_into(x, &mut out);
    Ok(out)
}

/// Constants of the expected-smoothness bound
/// `E‖∇f_ξ(x)‖² ≤ 2A(fᵢ(x) − fᵢ^inf) + B‖∇fᵢ(x)‖² + C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Abc {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// How minibatches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `τ` rows drawn uniformly with replacement.
    #[default]
    WithReplacement,
    /// Diagnostic mode: the exact gradient, ignoring `τ` and the stream.
    FullPass,
}

/// A client's minibatch gradient estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticEstimatorSpec {
    pub tau: usize,
    pub abc: Abc,
    pub f_i_inf: f64,
    #[serde(default)]
    pub sampling: Sampling,
}

impl StochasticEstimatorSpec {
    pub fn new(tau: usize, abc: Abc, f_i_inf: f64, sampling: Sampling) -> Result<Self> {
        if tau == 0 {
            return Err(Error::domain("minibatch size tau must be at least 1"));
        }
        if !(abc.a >= 0.0 && abc.b >= 1.0 && abc.c >= 0.0) {
            return Err(Error::domain(format!(
                "expected-smoothness constants need A >= 0, B >= 1, C >= 0; got A = {}, B = {}, C = {}",
                abc.a, abc.b, abc.c
            )));
        }
        Ok(StochasticEstimatorSpec { tau, abc, f_i_inf, sampling })
    }

    /// Constants valid for uniform sampling from `client`.
    ///
    /// Every sample function `ℓⱼ + reg` is nonnegative and `Lᵢⱼ`-smooth, so
    /// `‖∇(ℓⱼ + reg)‖² ≤ 2Lᵢⱼ(ℓⱼ + reg)`. Averaging gives `A = maxⱼ Lᵢⱼ`,
    /// `B = 1`, `C = 0` with the lower bound `fᵢ^inf = 0`.
    pub fn for_client(client: &ClientProblem, tau: usize, sampling: Sampling) -> Result<Self> {
        let data = client.data();
        let a = (0..data.rows())
            .map(|i| row_smoothness(client.kind(), data.row(i).0, client.lambda()))
            .fold(0.0, f64::max)
            * client.scale();
        Self::new(tau, Abc { a, b: 1.0, c: 0.0 }, 0.0, sampling)
    }
}

/// A minibatch estimate of `∇fᵢ(x)`: the average of `τ` sample-loss
/// gradients plus the exact regularizer gradient.
pub fn stochastic_gradient<R: Rng + ?Sized>(
    client: &ClientProblem,
    x: &[f64],
    spec: &StochasticEstimatorSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    client.check_dim(x)?;
    if spec.tau == 0 {
        return Err(Error::domain("minibatch size tau must be at least 1"));
    }
    let mut out = vec![0.0; x.len()];
    stochastic_gradient_into(client, x, spec, rng, &mut out);
    Ok(out)
}

pub(crate) fn stochastic_gradient_into<R: Rng + ?Sized>(
    client: &ClientProblem,
    x: &[f64],
    spec: &StochasticEstimatorSpec,
    rng: &mut R,
    out: &mut [f64],
) {
    if spec.sampling == Sampling::FullPass {
        client.gradient_into(x, out);
        return;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    let m = client.data.rows();
    for _ in 0..spec.tau {
        let i = rng.random_range(0..m);
        let s = client.sample_slope(i, x);
        if s != 0.0 {
            axpy(s, client.data.features().row(i), out);
        }
    }
    linalg::scale(1.0 / spec.tau as f64, out);
    client.add_reg_gradient(x, out);
    if client.scale != 1.0 {
        linalg::scale(client.scale, out);
    }
}

/// `f = (1/n) Σ fᵢ` with its smoothness constant, a lower bound and, for
/// strongly convex problems, the PL constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalProblem {
    clients: Vec<ClientProblem>,
    smoothness: f64,
    f_lower: f64,
    pl_mu: Option<f64>,
}

impl GlobalProblem {
    pub fn new(clients: Vec<ClientProblem>) -> Result<Self> {
        let Some(first) = clients.first() else {
            return Err(Error::domain("a problem needs at least one client"));
        };
        let d = first.dim();
        if clients.iter().any(|c| c.dim() != d) {
            return Err(Error::domain("all clients must share the same dimension"));
        }
        let smoothness = global_smoothness(&clients)?;
        let (f_lower, pl_mu) = if clients.iter().all(|c| c.kind == LossKind::LinRegL2) {
            least_squares_floor(&clients)?
        } else {
            (0.0, None)
        };
        Ok(GlobalProblem { clients, smoothness, f_lower, pl_mu })
    }

    pub fn clients(&self) -> &[ClientProblem] {
        &self.clients
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    /// Smoothness constant `L` of `f`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// A lower bound on `f`: `0` for the nonnegative losses, the exact
    /// minimum for `LinRegL2`.
    pub fn f_lower(&self) -> f64 {
        self.f_lower
    }

    /// Smallest eigenvalue of the Hessian of a strongly convex `LinRegL2`
    /// problem.
    pub fn pl_mu(&self) -> Option<f64> {
        self.pl_mu
    }

    pub fn smoothness_list(&self) -> Vec<f64> {
        self.clients.iter().map(ClientProblem::smoothness).collect()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.clients {
            total += value(c, x)?;
        }
        Ok(total / self.n() as f64)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.clients[0].check_dim(x)?;
        let mut total = vec![0.0; x.len()];
        let mut g = vec![0.0; x.len()];
        for c in &self.clients {
            c.gradient_into(x, &mut g);
            axpy(1.0, &g, &mut total);
        }
        linalg::scale(1.0 / self.n() as f64, &mut total);
        Ok(total)
    }
}

/// Smoothness constant of `f = (1/n)Σ fᵢ`.
///
/// Each data-term Hessian is bounded by `cᵢ AᵢᵀAᵢ` (`cᵢ = 2/nᵢ` for least
/// squares, exact; `1/(4nᵢ)` for logistic loss, an upper bound), so
/// `λ_max((1/n) Σ sᵢ cᵢ AᵢᵀAᵢ)` plus the averaged regularizer bound is a
/// valid constant. It never exceeds the mean of the client constants.
pub fn global_smoothness(clients: &[ClientProblem]) -> Result<f64> {
    let Some(first) = clients.first() else {
        return Err(Error::domain("a problem needs at least one client"));
    };
    let n = clients.len() as f64;
    let d = first.dim();
    let weights: Vec<f64> = clients
        .iter()
        .map(|c| c.scale * c.kind.data_curvature(c.data.rows()) / n)
        .collect();
    let mut tmp = Vec::new();
    let mut acc = vec![0.0; d];
    let top = linalg::power_iteration(d, "power iteration on the averaged Hessian", |v, out| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, &w) in clients.iter().zip(&weights) {
            let a = c.data.features();
            tmp.resize(a.rows(), 0.0);
            a.mul_vec(v, &mut tmp);
            a.mul_t_vec(&tmp, &mut acc);
            axpy(w, &acc, out);
        }
    })?;
    let reg: f64 = clients.iter().map(|c| c.scale * c.kind.reg_bound(c.lambda)).sum::<f64>() / n;
    Ok(top + reg)
}

/// Hessian `H` and linear term `c` of `f(x) = ½xᵀHx − cᵀx + const` for an
/// all-`LinRegL2` problem.
fn quadratic_form(clients: &[ClientProblem]) -> (DMatrix<f64>, DVector<f64>) {
    let n = clients.len() as f64;
    let d = clients[0].dim();
    let mut h = DMatrix::zeros(d, d);
    let mut c = DVector::zeros(d);
    for cl in clients {
        let a = cl.data.features();
        let w = cl.scale * 2.0 / (a.rows() as f64 * n);
        h += a.gram() * w;
        let mut atb = vec![0.0; d];
        a.mul_t_vec(cl.data.targets(), &mut atb);
        c += DVector::from_vec(atb) * w;
        for j in 0..d {
            h[(j, j)] += cl.scale * cl.lambda / n;
        }
    }
    (h, c)
}

fn least_squares_floor(clients: &[ClientProblem]) -> Result<(f64, Option<f64>)> {
    let (h, c) = quadratic_form(clients);
    let x = match h.clone().cholesky() {
        Some(ch) => ch.solve(&c),
        None => h
            .clone()
            .svd(true, true)
            .solve(&c, 1e-12 * h.norm())
            .map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))?,
    };
    let n = clients.len() as f64;
    let f_star = clients.iter().map(|cl| cl.value_unchecked(x.as_slice())).sum::<f64>() / n;
    let mu = linalg::lambda_min_spd(&h)?.filter(|m| *m > 0.0);
    Ok((f_star, mu))
}

/// Coordinates where each client's gradient can be nonzero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityPattern {
    dim: usize,
    support: Vec<Vec<usize>>,
}

impl SparsityPattern {
    /// Builds a pattern from explicit supports `Jᵢ ⊆ {0, …, d−1}`.
    pub fn new(dim: usize, support: Vec<Vec<usize>>) -> Result<Self> {
        let mut clean = Vec::with_capacity(support.len());
        for s in support {
            let set: BTreeSet<usize> = s.into_iter().collect();
            if set.iter().any(|&j| j >= dim) {
                return Err(Error::domain("support index out of range"));
            }
            clean.push(set.into_iter().collect());
        }
        Ok(SparsityPattern { dim, support: clean })
    }

    pub fn n(&self) -> usize {
        self.support.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Jᵢ`, ascending.
    pub fn support(&self, i: usize) -> &[usize] {
        &self.support[i]
    }

    /// `Iⱼ = {i : j ∈ Jᵢ}`, ascending.
    pub fn clients_of(&self, j: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.is_active(i, j)).collect()
    }

    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.support[i].binary_search(&j).is_ok()
    }
}

/// `Jᵢ` = union of the supports of client `i`'s feature rows.
pub fn sparsity_pattern(problem: &GlobalProblem) -> Result<SparsityPattern> {
    if let Some(i) = problem.clients.iter().position(|c| c.lambda > 0.0) {
        return Err(Error::domain(format!(
            "client {i} has lambda > 0; the regularizer makes every coordinate active, \
             so rare-feature supports require lambda = 0 on all clients"
        )));
    }
    let d = problem.dim();
    let support = problem
        .clients
        .iter()
        .map(|c| {
            let a = c.data.features();
            (0..d).filter(|&j| (0..a.rows()).any(|r| a.row(r)[j] != 0.0)).collect()
        })
        .collect();
    SparsityPattern::new(d, support)
}
