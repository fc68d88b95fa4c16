//! Reference values for validation: closed-form rate-distortion functions
//! and exhaustive grid minimization of the dual objectives on tiny alphabets.
//!
//! The grid searches evaluate the primal objective directly with plain
//! arithmetic, sharing no code with the iterative solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::single::RdProblem;
use crate::successive::{LagrangeTriple, SrProblem};

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let xlnx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
    -(xlnx(p) + xlnx(1.0 - p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AnalyticKind {
    /// Bernoulli(`p`) source under Hamming distortion.
    BinaryHamming { p: f64 },
    /// Zero-mean Gaussian source under squared error.
    GaussianMse { variance: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Analytic,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub method: Method,
    /// Grid spacing, for grid results.
    pub resolution: Option<f64>,
}

/// Closed-form `R(d)`, clamped to zero beyond the maximal distortion.
pub fn analytic_rd(kind: AnalyticKind, d: f64) -> Result<OracleResult> {
    let value = match kind {
        AnalyticKind::BinaryHamming { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfRange(format!("bernoulli parameter {p}")));
            }
            if !(d >= 0.0) {
                return Err(Error::OutOfRange(format!("distortion {d} is negative")));
            }
            let dmax = p.min(1.0 - p);
            if d >= dmax {
                0.0
            } else {
                binary_entropy(p) - binary_entropy(d)
            }
        }
        AnalyticKind::GaussianMse { variance } => {
            if !(variance > 0.0) {
                return Err(Error::OutOfRange(format!("variance {variance}")));
            }
            if !(d > 0.0) {
                return Err(Error::OutOfRange(format!("distortion {d} must be positive")));
            }
            (0.5 * (variance / d).ln()).max(0.0)
        }
    };
    Ok(OracleResult {
        value,
        method: Method::Analytic,
        resolution: None,
    })
}

/// Slope of the supporting line at `d` (negative derivative of `R`).
pub fn analytic_slope(kind: AnalyticKind, d: f64) -> Result<f64> {
    match kind {
        AnalyticKind::BinaryHamming { p } => {
            if !(d > 0.0 && d < p.min(1.0 - p)) {
                return Err(Error::OutOfRange(format!("distortion {d} outside (0, {})", p.min(1.0 - p))));
            }
            Ok(((1.0 - d) / d).ln())
        }
        AnalyticKind::GaussianMse { variance } => {
            if !(d > 0.0 && d < variance) {
                return Err(Error::OutOfRange(format!("distortion {d} outside (0, {variance})")));
            }
            Ok(1.0 / (2.0 * d))
        }
    }
}

/// Closed-form dual value `min_d R(d) + λ d` for the binary Hamming source.
pub fn binary_hamming_dual(p: f64, lambda: f64) -> f64 {
    let q = p.min(1.0 - p);
    let d = 1.0 / (1.0 + lambda.exp());
    if d < q {
        binary_entropy(q) - binary_entropy(d) + lambda * d
    } else {
        lambda * q
    }
}

/// All compositions of `steps` into `parts` non-negative integers.
fn compositions(steps: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![steps]];
    }
    let mut out = Vec::new();
    for first in 0..=steps {
        for mut rest in compositions(steps - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// `I(X;Y) + λ E d` for the channel obtained by tilting the output marginal
/// `q` by `exp(-λ d)`.
fn tilted_objective(problem: &RdProblem, lambda: f64, q: &[f64]) -> f64 {
    let px = problem.px().probs();
    let d = problem.distortion();
    let ny = q.len();
    let mut channel = vec![0.0; px.len() * ny];
    for x in 0..px.len() {
        let row = &mut channel[x * ny..(x + 1) * ny];
        let mut z = 0.0;
        for y in 0..ny {
            row[y] = q[y] * (-lambda * d.get(x, y)).exp();
            z += row[y];
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    let mut marginal = vec![0.0; ny];
    for x in 0..px.len() {
        for y in 0..ny {
            marginal[y] += px[x] * channel[x * ny + y];
        }
    }
    let mut total = 0.0;
    for x in 0..px.len() {
        for y in 0..ny {
            let w = channel[x * ny + y];
            if px[x] > 0.0 && w > 0.0 {
                total += px[x] * w * ((w / marginal[y]).ln() + lambda * d.get(x, y));
            }
        }
    }
    total
}

/// Grid minimum of the single-stage dual objective over output marginals.
pub fn brute_force_dual(problem: &RdProblem, lambda: f64, grid_steps: usize) -> Result<OracleResult> {
    if problem.num_inputs() > 3 || problem.num_outputs() > 3 {
        return Err(Error::TooLarge("grid oracle supports at most 3 x 3 alphabets".into()));
    }
    if grid_steps == 0 {
        return Err(Error::InvalidArgument("grid_steps must be positive".into()));
    }
    let ny = problem.num_outputs();
    let grid = compositions(grid_steps, ny);
    let n = grid_steps as f64;
    let values = par::map(&grid, |c| {
        let q: Vec<f64> = c.iter().map(|&k| k as f64 / n).collect();
        tilted_objective(problem, lambda, &q)
    });
    let value = values.into_iter().fold(f64::INFINITY, f64::min);
    Ok(OracleResult {
        value,
        method: Method::Grid,
        resolution: Some(1.0 / n),
    })
}

fn xlnx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

/// Grid minimum of the successive-refinement Lagrangian
/// `(1+ν1) I(X;Y1) + I(X;Y2|Y1) + λ1 E d1 + λ2 E d2` for binary alphabets,
/// over `P(Y1=1|x)` and `P(Y2=1|x,y1)` on a uniform grid.
pub fn brute_force_sr_dual(problem: &SrProblem, triple: &LagrangeTriple, grid_steps: usize) -> Result<OracleResult> {
    if problem.nx() != 2 || problem.ny1() != 2 || problem.ny2() != 2 {
        return Err(Error::TooLarge("successive-refinement grid oracle needs binary alphabets".into()));
    }
    if grid_steps == 0 {
        return Err(Error::InvalidArgument("grid_steps must be positive".into()));
    }
    let px = problem.px().probs();
    let (d1, d2) = (problem.d1(), problem.d2());
    let n = grid_steps as f64;
    let pts: Vec<f64> = (0..=grid_steps).map(|k| k as f64 / n).collect();

    // Per second-stage kernel (b0, b1): the letter-wise part of the inner
    // objective, Σ_y2 P(y2|x) (ln P(y2|x) + λ2 d2(x,y2)), for x = 0, 1.
    let mut inner = Vec::with_capacity(pts.len() * pts.len());
    for &b0 in &pts {
        for &b1 in &pts {
            let part = |x: usize, b: f64| {
                xlnx(b) + xlnx(1.0 - b) + triple.lambda2 * ((1.0 - b) * d2.get(x, 0) + b * d2.get(x, 1))
            };
            inner.push((b0, b1, part(0, b0), part(1, b1)));
        }
    }
    // min over the inner grid for a posterior (r0, r1) of X given y1.
    let inner_min = |r0: f64, r1: f64| -> f64 {
        inner
            .iter()
            .map(|&(b0, b1, a0, a1)| {
                let m1 = r0 * b0 + r1 * b1;
                r0 * a0 + r1 * a1 - xlnx(m1) - xlnx(1.0 - m1)
            })
            .fold(f64::INFINITY, f64::min)
    };

    let outer: Vec<(f64, f64)> = pts.iter().flat_map(|&a0| pts.iter().map(move |&a1| (a0, a1))).collect();
    let s = 1.0 + triple.nu1;
    let values = par::map(&outer, |&(a0, a1)| {
        let ch = [[1.0 - a0, a0], [1.0 - a1, a1]];
        let mut total = 0.0;
        for y1 in 0..2 {
            let j = [px[0] * ch[0][y1], px[1] * ch[1][y1]];
            let py1 = j[0] + j[1];
            for x in 0..2 {
                if j[x] > 0.0 {
                    total += j[x] * (s * (ch[x][y1] / py1).ln() + triple.lambda1 * d1.get(x, y1));
                }
            }
            if py1 > 0.0 {
                total += py1 * inner_min(j[0] / py1, j[1] / py1);
            }
        }
        total
    });
    let value = values.into_iter().fold(f64::INFINITY, f64::min);
    Ok(OracleResult {
        value,
        method: Method::Grid,
        resolution: Some(1.0 / n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{Matrix, Pmf};
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_forms() {
        let g = AnalyticKind::GaussianMse { variance: 1.0 };
        assert_eq!(analytic_rd(g, 1.0).unwrap().value, 0.0);
        assert_abs_diff_eq!(analytic_rd(g, 0.25).unwrap().value, 0.693147, epsilon = 1e-6);
        let b = AnalyticKind::BinaryHamming { p: 0.2 };
        assert_abs_diff_eq!(analytic_rd(b, 0.1).unwrap().value, 0.17532, epsilon = 1e-5);
        assert_eq!(analytic_rd(b, 0.3).unwrap().value, 0.0);
        assert!(analytic_rd(g, -0.1).is_err());
    }

    #[test]
    fn binary_dual_matches_legendre_form() {
        let lambda = 9f64.ln();
        assert_abs_diff_eq!(binary_hamming_dual(0.5, lambda), 2f64.ln() - (10f64 / 9.0).ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(binary_hamming_dual(0.2, 0.5), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn grid_oracles_trivial_values() {
        let p = RdProblem::new(Pmf::uniform(2), Matrix::hamming(2)).unwrap();
        assert_abs_diff_eq!(brute_force_dual(&p, 0.0, 50).unwrap().value, 0.0, epsilon = 1e-15);
        let sr = SrProblem::new(Pmf::uniform(2), Matrix::hamming(2), Matrix::hamming(2)).unwrap();
        let t = LagrangeTriple::new(0.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(brute_force_sr_dual(&sr, &t, 30).unwrap().value, 0.0, epsilon = 1e-15);
        let big = RdProblem::new(Pmf::uniform(4), Matrix::hamming(4)).unwrap();
        assert!(matches!(brute_force_dual(&big, 1.0, 50), Err(Error::TooLarge(_))));
    }

    #[test]
    fn grid_oracles_symmetric_binary() {
        let lambda = 9f64.ln();
        let want = 2f64.ln() - (10f64 / 9.0).ln();
        let p = RdProblem::new(Pmf::uniform(2), Matrix::hamming(2)).unwrap();
        assert_abs_diff_eq!(brute_force_dual(&p, lambda, 1000).unwrap().value, want, epsilon = 1e-4);
        let sr = SrProblem::new(Pmf::uniform(2), Matrix::hamming(2), Matrix::hamming(2)).unwrap();
        let t = LagrangeTriple::new(1.0, 0.0, lambda).unwrap();
        assert_abs_diff_eq!(brute_force_sr_dual(&sr, &t, 60).unwrap().value, (9f64 / 5.0).ln(), epsilon = 2e-3);
    }
}
