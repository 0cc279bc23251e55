//! Problem sources: the heterogeneous-smoothness synthetic generator, a
//! LIBSVM reader and the heuristic that splits a dataset across clients so
//! the spread of client smoothness constants is large.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::objective::{row_smoothness, ClientProblem, Dataset, GlobalProblem, LossKind};
use crate::rng::{stream, Purpose, Stream};

fn default_z() -> f64 {
    1.0
}

fn default_loss() -> LossKind {
    LossKind::LinRegL2
}

/// Parameters of the synthetic least-squares family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    /// Rows per client; at least `d`.
    pub n_i: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub mu: f64,
    #[serde(default)]
    pub q: f64,
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub lambda: f64,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::domain("synthetic problems need n >= 1 and d >= 1"));
        }
        if self.n_i < self.d {
            return Err(Error::domain(format!(
                "n_i = {} rows cannot carry a spectrum of d = {} eigenvalues; need n_i >= d",
                self.n_i, self.d
            )));
        }
        if !(self.mu > 0.0 && self.l > self.mu && self.l.is_finite()) {
            return Err(Error::domain(format!("need L > mu > 0, got L = {}, mu = {}", self.l, self.mu)));
        }
        if !(-1.0..=1.0).contains(&self.q) {
            return Err(Error::domain(format!("q = {} must lie in [-1, 1]", self.q)));
        }
        if !(self.z > 0.0 && self.z.is_finite()) {
            return Err(Error::domain(format!("z = {} must be positive", self.z)));
        }
        if self.loss == LossKind::LogRegNonconvex {
            return Err(Error::domain("the synthetic generator builds least-squares clients only"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain(format!("lambda = {} must be finite and >= 0", self.lambda)));
        }
        Ok(())
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a * (1.0 - t) + b * t
}

/// Spectrum endpoints `(μᵢ, Lᵢ)` of every client before the final rescale.
///
/// ```
/// use ef21_core::datagen::{spectrum_targets, SynthConfig};
/// let cfg: SynthConfig = serde_json::from_str(r#"{"n": 4, "d": 2, "n_i": 2, "L": 50, "mu": 1}"#).unwrap();
/// let l: Vec<f64> = spectrum_targets(&cfg).unwrap().iter().map(|t| t.1).collect();
/// assert_eq!(l, [13.25, 25.5, 37.75, 50.0]);
/// ```
pub fn spectrum_targets(cfg: &SynthConfig) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    let n = cfg.n;
    let (l, mu, q) = (cfg.l, cfg.mu, cfg.q);
    let mut out: Vec<(f64, f64)> = (1..=n)
        .map(|i| {
            let li = i as f64 / n as f64 * (l - mu) + mu;
            let lq = if q >= 0.0 {
                if 2 * i <= n {
                    lerp(li, mu, q)
                } else {
                    lerp(li, l, q)
                }
            } else {
                lerp(li, (l + mu) / 2.0, -q)
            };
            (mu, lq)
        })
        .collect();
    // Extra spread on the extreme clients; both spectrum endpoints move so
    // the spectrum stays ordered.
    out[0] = (out[0].0 / cfg.z, out[0].1 / cfg.z);
    out[n - 1] = (out[n - 1].0 * cfg.z, out[n - 1].1 * cfg.z);
    Ok(out)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Stream) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Design `A` with `(2/rows) AᵀA` having `d` eigenvalues equally spaced on
/// `[lo, hi]`.
fn design(rows: usize, d: usize, lo: f64, hi: f64, rng: &mut Stream) -> DMatrix<f64> {
    let q = gaussian_matrix(d, d, rng).qr().q();
    let frame = gaussian_matrix(rows, d, rng).qr().q();
    let eig = |k: usize| if d == 1 { hi } else { lo + (hi - lo) * k as f64 / (d - 1) as f64 };
    let root = DMatrix::from_fn(d, d, |r, c| if r == c { (rows as f64 * eig(r) / 2.0).sqrt() } else { 0.0 });
    let sqrt_h = &q * root * q.transpose();
    frame * sqrt_h
}

fn to_matrix(m: &DMatrix<f64>) -> Matrix {
    let data = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
    Matrix::from_row_major(m.nrows(), m.ncols(), data).expect("shape is consistent")
}

/// Builds the synthetic problem. The global `f` is rescaled so that its
/// smoothness constant is exactly `cfg.l`; targets are `bᵢ = Aᵢ x_sol`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<GlobalProblem> {
    let targets = spectrum_targets(cfg)?;
    let designs: Vec<DMatrix<f64>> = targets
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            let mut rng = stream(cfg.seed, Purpose::Frame, &[i as u64]);
            design(cfg.n_i, cfg.d, lo, hi, &mut rng)
        })
        .collect();

    let zero_b = vec![0.0; cfg.n_i];
    let raw: Vec<ClientProblem> = designs
        .iter()
        .map(|a| ClientProblem::new(cfg.loss, Dataset::new(to_matrix(a), zero_b.clone())?, 0.0))
        .collect::<Result<_>>()?;
    let data_l = GlobalProblem::new(raw)?.smoothness();
    let reg = match cfg.loss {
        LossKind::LinRegL2 => cfg.lambda,
        _ => 2.0 * cfg.lambda,
    };
    if reg >= cfg.l {
        return Err(Error::domain(format!(
            "the regularizer alone has smoothness {reg}, which leaves nothing for the data term under L = {}",
            cfg.l
        )));
    }
    let factor = ((cfg.l - reg) / data_l).sqrt();

    let mut rng = stream(cfg.seed, Purpose::Data, &[]);
    let x_sol: Vec<f64> = (0..cfg.d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let clients = designs
        .iter()
        .map(|a| {
            let mut m = to_matrix(a);
            m.scale_in_place(factor);
            let mut b = vec![0.0; cfg.n_i];
            m.mul_vec(&x_sol, &mut b);
            ClientProblem::new(cfg.loss, Dataset::new(m, b)?, cfg.lambda)
        })
        .collect::<Result<_>>()?;
    GlobalProblem::new(clients)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Reads LIBSVM text: one `label index:value …` record per line, 1-based
/// strictly increasing indices, `#` comments.
///
/// Labels map to `±1`: nonpositive to `-1`, positive to `+1`; a file whose
/// labels are exactly two positive values (such as `1`/`2`) maps the smaller
/// to `-1`. `dim` fixes the dimension; otherwise it is the largest index.
///
/// ```
/// let ds = ef21_core::datagen::parse_libsvm("+1 1:0.5 3:2\n", Some(3)).unwrap();
/// assert_eq!(ds.row(0), (&[0.5, 0.0, 2.0][..], 1.0));
/// ```
pub fn parse_libsvm(text: &str, dim: Option<usize>) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut rows: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
    let mut max_index = 0;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line_no, format!("bad label '{label_tok}'")))?;
        let mut entries = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("expected index:value, found '{tok}'")))?;
            let i: usize = i
                .parse()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| parse_err(line_no, format!("bad feature index in '{tok}'")))?;
            let v: f64 = v
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("bad feature value in '{tok}'")))?;
            if i <= last {
                return Err(parse_err(line_no, format!("feature index {i} does not increase past {last}")));
            }
            if let Some(d) = dim {
                if i > d {
                    return Err(parse_err(line_no, format!("feature index {i} exceeds the dimension {d}")));
                }
            }
            last = i;
            entries.push((i - 1, v));
        }
        max_index = max_index.max(last);
        labels.push(label);
        rows.push((line_no, entries));
    }
    if rows.is_empty() {
        return Err(parse_err(text.lines().count().max(1), "no data records"));
    }
    let d = dim.unwrap_or(max_index);
    if d == 0 {
        return Err(parse_err(rows[0].0, "every record is empty; pass the dimension explicitly"));
    }

    let mut distinct: Vec<f64> = labels.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let two_positive = distinct.len() == 2 && distinct[0] > 0.0;
    let targets = labels
        .iter()
        .map(|&y| {
            let negative = if two_positive { y == distinct[0] } else { y <= 0.0 };
            if negative {
                -1.0
            } else {
                1.0
            }
        })
        .collect();

    let mut features = Matrix::zeros(rows.len(), d);
    for (r, (_, entries)) in rows.iter().enumerate() {
        let row = features.row_mut(r);
        for &(j, v) in entries {
            row[j] = v;
        }
    }
    Dataset::new(features, targets)
}

/// Row indices held by each client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleAssignment {
    pub clients: Vec<Vec<usize>>,
}

impl ShuffleAssignment {
    /// Consecutive blocks whose sizes differ by at most one.
    pub fn contiguous(m: usize, n: usize) -> Result<Self> {
        if n == 0 || m < n {
            return Err(Error::domain(format!("cannot split {m} rows across {n} clients")));
        }
        let (base, extra) = (m / n, m % n);
        let mut start = 0;
        let clients = (0..n)
            .map(|i| {
                let len = base + usize::from(i < extra);
                let block = (start..start + len).collect();
                start += len;
                block
            })
            .collect();
        Ok(ShuffleAssignment { clients })
    }

    /// Builds one client per block of rows.
    pub fn build(&self, data: &Dataset, kind: LossKind, lambda: f64) -> Result<GlobalProblem> {
        let clients = self
            .clients
            .iter()
            .map(|rows| ClientProblem::new(kind, data.select(rows)?, lambda))
            .collect::<Result<_>>()?;
        GlobalProblem::new(clients)
    }
}

/// Running `Σ Lᵢ` and `Σ Lᵢ²` over clients whose constant is the mean of
/// their rows' constants.
struct Spread {
    sum: Vec<f64>,
    count: Vec<usize>,
    total: f64,
    total_sq: f64,
}

impl Spread {
    fn l(&self, j: usize) -> f64 {
        self.sum[j] / self.count[j] as f64
    }

    /// `L_var` after adding a row with constant `r` to client `j`.
    fn var_with(&self, j: usize, r: f64) -> f64 {
        let n = self.sum.len() as f64;
        let old = self.l(j);
        let new = (self.sum[j] + r) / (self.count[j] + 1) as f64;
        let total = self.total - old + new;
        let total_sq = self.total_sq - old * old + new * new;
        total_sq / n - (total / n) * (total / n)
    }

    fn add(&mut self, j: usize, r: f64) {
        let old = self.l(j);
        self.sum[j] += r;
        self.count[j] += 1;
        let new = self.l(j);
        self.total += new - old;
        self.total_sq += new * new - old * old;
    }
}

/// Splits rows so that the variance of client smoothness constants is large.
///
/// Rows are sorted by their single-row smoothness constant, client `i`
/// starts with the sorted row at `⌊(i + ½) m/n⌋`, and every other row, in
/// sorted order, goes to the open client that maximizes `L_var`, ties to the
/// lowest index. A client's constant during the greedy pass is the mean of
/// its rows' constants. Clients close at `⌈m/n⌉` rows, and once `m mod n` of
/// them have done so the rest close at `⌊m/n⌋`, so sizes differ by at most
/// one.
pub fn shuffle_heuristic(data: &Dataset, n: usize, kind: LossKind, lambda: f64) -> Result<ShuffleAssignment> {
    shuffle_traced(data, n, kind, lambda, |_, _, _, _| {})
}

fn shuffle_traced(
    data: &Dataset,
    n: usize,
    kind: LossKind,
    lambda: f64,
    mut trace: impl FnMut(&Spread, f64, usize, &[bool]),
) -> Result<ShuffleAssignment> {
    let m = data.rows();
    if n == 0 || m < n {
        return Err(Error::domain(format!("cannot split {m} rows across {n} clients")));
    }
    let consts: Vec<f64> = (0..m).map(|r| row_smoothness(kind, data.row(r).0, lambda)).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| consts[a].total_cmp(&consts[b]).then(a.cmp(&b)));

    let seeds: Vec<usize> = (0..n).map(|i| ((2 * i + 1) * m) / (2 * n)).collect();
    let mut clients: Vec<Vec<usize>> = seeds.iter().map(|&s| vec![order[s]]).collect();
    let mut spread = Spread {
        sum: seeds.iter().map(|&s| consts[order[s]]).collect(),
        count: vec![1; n],
        total: 0.0,
        total_sq: 0.0,
    };
    spread.total = (0..n).map(|j| spread.l(j)).sum();
    spread.total_sq = (0..n).map(|j| spread.l(j).powi(2)).sum();

    let (floor, extra) = (m / n, m % n);
    let ceil = floor + usize::from(extra > 0);
    let mut at_ceil = if ceil == 1 { n } else { 0 };
    let mut is_seed = vec![false; m];
    for &s in &seeds {
        is_seed[s] = true;
    }
    for (pos, &row) in order.iter().enumerate() {
        if is_seed[pos] {
            continue;
        }
        let cap = if extra > 0 && at_ceil >= extra { floor } else { ceil };
        let r = consts[row];
        let open: Vec<bool> = spread.count.iter().map(|&c| c < cap).collect();
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !open[j] {
                continue;
            }
            let v = spread.var_with(j, r);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        let (j, _) = best.expect("capacities always leave room for every row");
        trace(&spread, r, j, &open);
        spread.add(j, r);
        clients[j].push(row);
        if spread.count[j] == ceil {
            at_ceil += 1;
        }
    }
    for c in &mut clients {
        c.sort_unstable();
    }
    Ok(ShuffleAssignment { clients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weighting::summarize;
    use rand::Rng;

    fn cfg(n: usize, q: f64, z: f64) -> SynthConfig {
        SynthConfig { n, d: 5, n_i: 8, l: 50.0, mu: 1.0, q, z, seed: 3, loss: LossKind::LinRegL2, lambda: 0.0 }
    }

    #[test]
    fn target_examples() {
        let t = spectrum_targets(&cfg(4, 1.0, 1.0)).unwrap();
        assert_eq!(t.iter().map(|p| p.1).collect::<Vec<_>>(), vec![1.0, 1.0, 50.0, 50.0]);
        let t = spectrum_targets(&cfg(4, -1.0, 1.0)).unwrap();
        assert!(t.iter().all(|p| p.1 == 25.5));
        let t = spectrum_targets(&cfg(4, 0.0, 10.0)).unwrap();
        assert_eq!((t[0], t[3]), ((0.1, 1.325), (10.0, 500.0)));
        assert!(spectrum_targets(&cfg(4, 1.5, 1.0)).is_err());
        assert!(spectrum_targets(&cfg(4, 0.0, 0.0)).is_err());
        let mut bad = cfg(4, 0.0, 1.0);
        bad.n_i = 4;
        assert!(generate_synthetic(&bad).is_err());
        bad.n_i = 8;
        bad.mu = 60.0;
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn generated_problem_has_target_spectrum_and_smoothness() {
        for (q, z) in [(0.0, 1.0), (1.0, 10.0), (-0.5, 1.0)] {
            let c = cfg(5, q, z);
            let p = generate_synthetic(&c).unwrap();
            assert!((p.smoothness() - c.l).abs() <= 1e-8 * c.l);
            let t = spectrum_targets(&c).unwrap();
            let factor = p.clients()[0].smoothness() / t[0].1;
            for (client, &(lo, hi)) in p.clients().iter().zip(&t) {
                let h = client.data().features().gram() * (2.0 / c.n_i as f64);
                let mut eig: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
                eig.sort_by(f64::total_cmp);
                for (k, e) in eig.iter().enumerate() {
                    let want = factor * (lo + (hi - lo) * k as f64 / 4.0);
                    assert!((e - want).abs() <= 1e-9 * factor * hi);
                }
            }
            // b = A x_sol, so the floor is zero and attained.
            assert!(p.f_lower().abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&cfg(3, 0.5, 2.0)).unwrap();
        let b = generate_synthetic(&cfg(3, 0.5, 2.0)).unwrap();
        assert_eq!(a, b);
        let mut other = cfg(3, 0.5, 2.0);
        other.seed = 4;
        assert_ne!(a, generate_synthetic(&other).unwrap());
    }

    #[test]
    fn variance_grows_with_q() {
        let var = |q| summarize(&generate_synthetic(&cfg(6, q, 1.0)).unwrap().smoothness_list()).unwrap().l_var;
        let (hi, mid, lo) = (var(1.0), var(0.0), var(-1.0));
        assert!(hi >= mid && mid >= lo);
        assert!(lo < 1e-9 * hi);
    }

    #[test]
    fn regularized_generation_hits_l() {
        let mut c = cfg(3, 0.0, 1.0);
        c.lambda = 2.0;
        let p = generate_synthetic(&c).unwrap();
        assert!((p.smoothness() - 50.0).abs() <= 1e-8 * 50.0);
        c.loss = LossKind::LinRegNonconvex;
        let p = generate_synthetic(&c).unwrap();
        assert!((p.smoothness() - 50.0).abs() <= 1e-8 * 50.0);
        c.lambda = 30.0;
        assert!(generate_synthetic(&c).is_err());
    }

    #[test]
    fn libsvm_examples() {
        let ds = parse_libsvm("-1\n", Some(2)).unwrap();
        assert_eq!(ds.row(0), (&[0.0, 0.0][..], -1.0));
        let ds = parse_libsvm("1 2:1\n0 1:1\n", None).unwrap();
        assert_eq!(ds.targets(), &[1.0, -1.0]);
        assert_eq!(ds.dim(), 2);
        let ds = parse_libsvm("2 1:1\r\n1 2:3 # note\r\n\r\n# only a comment\n", None).unwrap();
        assert_eq!(ds.targets(), &[1.0, -1.0]);
        assert_eq!(ds.row(1).0, &[0.0, 3.0]);
        let ds = parse_libsvm("+1 1:1\n-1 1:2\n+1 2:1\n", None).unwrap();
        assert_eq!(ds.targets(), &[1.0, -1.0, 1.0]);
    }

    #[test]
    fn libsvm_errors_carry_line_numbers() {
        let line = |text: &str| match parse_libsvm(text, None) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected a parse error, got {other:?}"),
        };
        assert_eq!(line("1 1:1\n1 3:1 2:1\n"), 2);
        assert_eq!(line("1 1:1\n\n1 0:4\n"), 3);
        assert_eq!(line("x 1:1\n"), 1);
        assert_eq!(line("1 1:abc\n"), 1);
        assert_eq!(line("1 1\n"), 1);
        assert_eq!(line(""), 1);
        assert!(matches!(parse_libsvm("1 4:1\n", Some(3)), Err(Error::Parse { line: 1, .. })));
    }

    fn random_dataset(m: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = stream(seed, Purpose::Check, &[]);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let s = rng.random_range(0.1..5.0);
                (0..d).map(|_| s * rng.random_range(-1.0..1.0)).collect()
            })
            .collect();
        let y = (0..m).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        Dataset::from_rows(&rows, y).unwrap()
    }

    fn is_balanced_partition(a: &ShuffleAssignment, m: usize, n: usize) -> bool {
        let mut all: Vec<usize> = a.clients.iter().flatten().copied().collect();
        all.sort_unstable();
        let sizes: Vec<usize> = a.clients.iter().map(Vec::len).collect();
        all == (0..m).collect::<Vec<_>>()
            && a.clients.len() == n
            && sizes.iter().all(|&s| s == m / n || s == m.div_ceil(n))
    }

    #[test]
    fn shuffle_is_a_balanced_partition() {
        for (m, n) in [(10, 3), (12, 4), (7, 7), (9, 1), (50, 7), (31, 6)] {
            let ds = random_dataset(m, 3, m as u64);
            let a = shuffle_heuristic(&ds, n, LossKind::LogRegNonconvex, 0.1).unwrap();
            assert!(is_balanced_partition(&a, m, n), "m={m} n={n} {a:?}");
        }
        assert!(shuffle_heuristic(&random_dataset(3, 2, 1), 4, LossKind::LinRegL2, 0.0).is_err());
    }

    #[test]
    fn shuffle_small_cases() {
        let ds = random_dataset(5, 2, 9);
        let a = shuffle_heuristic(&ds, 5, LossKind::LinRegL2, 0.0).unwrap();
        assert!(a.clients.iter().all(|c| c.len() == 1));
        let a = shuffle_heuristic(&ds, 1, LossKind::LinRegL2, 0.0).unwrap();
        assert_eq!(a.clients, vec![vec![0, 1, 2, 3, 4]]);
        let same = Dataset::from_rows(&vec![vec![1.0, 2.0]; 7], vec![1.0; 7]).unwrap();
        let a = shuffle_heuristic(&same, 3, LossKind::LogRegNonconvex, 0.0).unwrap();
        assert!(is_balanced_partition(&a, 7, 3));
    }

    #[test]
    fn greedy_choice_is_locally_optimal() {
        let ds = random_dataset(40, 4, 11);
        let mut checked = 0;
        shuffle_traced(&ds, 6, LossKind::LinRegNonconvex, 0.05, |s, r, chosen, open| {
            assert!(open[chosen]);
            let picked = s.var_with(chosen, r);
            for j in (0..6).filter(|&j| open[j]) {
                let v = s.var_with(j, r);
                assert!(if j < chosen { v < picked } else { v <= picked });
            }
            checked += 1;
        })
        .unwrap();
        assert_eq!(checked, 34);
    }

    #[test]
    fn shuffle_spreads_more_than_contiguous_split() {
        let ds = random_dataset(60, 3, 13);
        let kind = LossKind::LogRegNonconvex;
        let spread = |a: &ShuffleAssignment| {
            summarize(&a.build(&ds, kind, 0.01).unwrap().smoothness_list()).unwrap().l_var
        };
        let h = shuffle_heuristic(&ds, 5, kind, 0.01).unwrap();
        let c = ShuffleAssignment::contiguous(60, 5).unwrap();
        assert!(spread(&h) > spread(&c));
    }
}
