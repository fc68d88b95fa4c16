//! Probability mass functions, kernels and information measures.
//!
//! Everything is in nats. The convention `0 ln 0 = 0` is applied explicitly,
//! and sums of exponentials are accumulated in the log domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest deviation of a total mass from one that is accepted verbatim.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Largest deviation that constructors silently renormalize away.
pub const RENORMALIZE_LIMIT: f64 = 1e-9;

/// Masses below this are clamped to zero after a multiplicative update.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// `ln Σ exp(v)`, returning `-inf` for an empty or all `-inf` input.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Compensated (Neumaier) summation.
pub fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A probability stored as its natural logarithm.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    pub fn from_prob(p: f64) -> Self {
        LogProb(p.ln())
    }

    pub fn from_ln(ln: f64) -> Self {
        LogProb(ln)
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn prob(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// Log of the sum of the two probabilities.
    pub fn ln_add(self, other: LogProb) -> LogProb {
        LogProb(logsumexp(&[self.0, other.0]))
    }
}

impl std::ops::Mul for LogProb {
    type Output = LogProb;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, rhs: LogProb) -> LogProb {
        LogProb(self.0 + rhs.0)
    }
}

fn check_entries(values: &[f64]) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidEntry { index, value });
        }
    }
    Ok(())
}

fn normalized(mut values: Vec<f64>) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    check_entries(&values)?;
    let sum = stable_sum(values.iter().copied());
    let drift = (sum - 1.0).abs();
    // Slack so that a sum written as 1 - 1e-9 in decimal is still accepted.
    if drift > RENORMALIZE_LIMIT * (1.0 + 1e-6) {
        return Err(Error::NotNormalized { sum });
    }
    if drift > 0.0 {
        values.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(values)
}

/// A probability mass function on `{0, .., n-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pmf {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Pmf {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Pmf::new(v)
    }
}

impl From<Pmf> for Vec<f64> {
    fn from(p: Pmf) -> Vec<f64> {
        p.probs
    }
}

impl Pmf {
    /// Validates the entries; a total mass off by at most `1e-9` is
    /// renormalized, anything larger is rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Ok(Pmf { probs: normalized(probs)? })
    }

    /// Normalizes arbitrary non-negative weights with positive total.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty);
        }
        check_entries(&weights)?;
        let sum = stable_sum(weights.iter().copied());
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Pmf {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    /// Normalizes `exp(log_weights)`.
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        let lse = logsumexp(log_weights);
        if !lse.is_finite() {
            return Err(Error::NotNormalized { sum: lse.exp() });
        }
        Pmf::from_weights(log_weights.iter().map(|&l| (l - lse).exp()).collect())
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform pmf needs a non-empty alphabet");
        Pmf {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        assert!(at < n, "point mass outside the alphabet");
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Pmf { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Alphabet size.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Number of symbols with positive mass.
    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
    }

    /// Natural logarithms of the masses (`-inf` off the support).
    pub fn log_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }

    /// `E[f]` under this pmf, skipping zero-mass symbols.
    pub fn mean(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.len());
        stable_sum(
            self.probs
                .iter()
                .zip(f)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, v)| p * v),
        )
    }

    pub fn variance(&self, f: &[f64]) -> f64 {
        let m = self.mean(f);
        let centred: Vec<f64> = f.iter().map(|v| (v - m) * (v - m)).collect();
        self.mean(&centred)
    }

    /// Shannon entropy.
    pub fn entropy(&self) -> f64 {
        -stable_sum(self.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()))
    }
}

/// Dense row-major real matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty);
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEntry {
                index,
                value: data[index],
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::ShapeMismatch("rows have different lengths".into()));
        }
        Matrix::new(n, m, rows.into_iter().flatten().collect())
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix::new(rows, cols, data)
    }

    /// The Hamming distortion on an `n`-letter alphabet.
    pub fn hamming(n: usize) -> Self {
        Matrix::from_fn(n, n, |r, c| if r == c { 0.0 } else { 1.0 })
            .expect("hamming matrix is well formed")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A row-stochastic matrix: row `x` is the conditional pmf given input `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    m: Matrix,
}

impl Kernel {
    /// Validates every row as a pmf (renormalizing drift below `1e-9`).
    pub fn new(m: Matrix) -> Result<Self> {
        let (rows, cols) = (m.rows, m.cols);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(normalized(m.row(r).to_vec())?);
        }
        Ok(Kernel {
            m: Matrix { rows, cols, data },
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Kernel::new(Matrix::from_rows(rows)?)
    }

    /// Every input maps to the same output pmf.
    pub fn constant(inputs: usize, row: &Pmf) -> Self {
        let data = (0..inputs).flat_map(|_| row.probs().iter().copied()).collect();
        Kernel {
            m: Matrix {
                rows: inputs,
                cols: row.len(),
                data,
            },
        }
    }

    pub fn identity(n: usize) -> Self {
        Kernel {
            m: Matrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
                .expect("identity is well formed"),
        }
    }

    /// Builds a kernel from rows that are already normalized.
    pub(crate) fn from_normalized(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Kernel {
            m: Matrix { rows, cols, data },
        }
    }

    pub fn input_size(&self) -> usize {
        self.m.rows
    }

    pub fn output_size(&self) -> usize {
        self.m.cols
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.m.get(x, y)
    }

    pub fn row(&self, x: usize) -> &[f64] {
        self.m.row(x)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    /// Output distribution when the input is drawn from `px`.
    pub fn output_marginal(&self, px: &Pmf) -> Result<Pmf> {
        if px.len() != self.input_size() {
            return Err(Error::ShapeMismatch(format!(
                "input pmf has {} entries, kernel has {} rows",
                px.len(),
                self.input_size()
            )));
        }
        let mut out = vec![0.0; self.output_size()];
        for (x, &p) in px.probs().iter().enumerate() {
            if p > 0.0 {
                for (o, k) in out.iter_mut().zip(self.row(x)) {
                    *o += p * k;
                }
            }
        }
        Pmf::from_weights(out)
    }

    /// `E[d(X, Y)]` for a cost matrix of the same shape.
    pub fn expected_cost(&self, px: &Pmf, cost: &Matrix) -> Result<f64> {
        if cost.rows() != self.input_size() || cost.cols() != self.output_size() {
            return Err(Error::ShapeMismatch("cost matrix shape differs from kernel".into()));
        }
        if px.len() != self.input_size() {
            return Err(Error::ShapeMismatch("input pmf size differs from kernel".into()));
        }
        Ok(stable_sum((0..self.input_size()).flat_map(|x| {
            let p = px.get(x);
            self.row(x)
                .iter()
                .zip(cost.row(x))
                .filter(move |(k, _)| p > 0.0 && **k > 0.0)
                .map(move |(k, c)| p * k * c)
        })))
    }
}

/// `D(p || q)`; fails when `p` is not absolutely continuous w.r.t. `q`.
pub fn relative_entropy(p: &Pmf, q: &Pmf) -> Result<f64> {
    relative_entropy_slices(p.probs(), q.probs())
}

fn relative_entropy_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "pmfs have sizes {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut terms = Vec::with_capacity(p.len());
    for (index, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::AbsoluteContinuityViolation { index });
        }
        terms.push(a * (a.ln() - b.ln()));
    }
    // Rounding can push a true zero slightly negative.
    Ok(stable_sum(terms).max(0.0))
}

/// `D(K1 || K2 | P)`, the average of row divergences weighted by `px`.
pub fn conditional_relative_entropy(k1: &Kernel, k2: &Kernel, px: &Pmf) -> Result<f64> {
    if k1.input_size() != k2.input_size()
        || k1.output_size() != k2.output_size()
        || px.len() != k1.input_size()
    {
        return Err(Error::ShapeMismatch("kernels and pmf disagree in size".into()));
    }
    let mut terms = Vec::with_capacity(px.len());
    for (x, &p) in px.probs().iter().enumerate() {
        if p > 0.0 {
            let d = relative_entropy_slices(k1.row(x), k2.row(x)).map_err(|e| match e {
                Error::AbsoluteContinuityViolation { index } => {
                    Error::AbsoluteContinuityViolation {
                        index: x * k1.output_size() + index,
                    }
                }
                other => other,
            })?;
            terms.push(p * d);
        }
    }
    Ok(stable_sum(terms))
}

/// `I(X; Y)` for `X ~ px` and `Y | X ~ kernel`.
pub fn mutual_information(px: &Pmf, kernel: &Kernel) -> Result<f64> {
    let py = kernel.output_marginal(px)?;
    conditional_relative_entropy(kernel, &Kernel::constant(px.len(), &py), px)
}

/// Gibbs tilt of `base` by the cost `rho`: returns the pmf proportional to
/// `base · exp(-rho)` and the value `-ln E_base[exp(-rho)]`, which is the
/// minimum of `D(Q || base) + E_Q[rho]` over `Q`.
pub fn gibbs_tilt(base: &Pmf, rho: &[f64]) -> Result<(Pmf, f64)> {
    if rho.len() != base.len() {
        return Err(Error::ShapeMismatch("cost and pmf sizes differ".into()));
    }
    let logw: Vec<f64> = base
        .probs()
        .iter()
        .zip(rho)
        .map(|(p, r)| p.ln() - r)
        .collect();
    let lse = logsumexp(&logw);
    Ok((Pmf::from_log_weights(&logw)?, -lse))
}
