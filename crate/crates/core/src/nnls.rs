//! Non-negative least squares (Lawson–Hanson active set method).

use nalgebra::{DMatrix, DVector};

/// Solution of `min ||A w - b||` subject to `w ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct NnlsSolution {
    pub weights: Vec<f64>,
    /// Euclidean norm of `A w - b`.
    pub residual: f64,
}

fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(passive);
    let svd = sub.svd(true, true);
    svd.solve(b, 1e-14).unwrap_or_else(|_| DVector::zeros(passive.len()))
}

/// `a` is given row-major with `rows × cols` entries.
pub fn nnls(a: &[f64], rows: usize, cols: usize, b: &[f64]) -> NnlsSolution {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(b.len(), rows);
    let am = DMatrix::from_row_slice(rows, cols, a);
    let bv = DVector::from_column_slice(b);
    let scale = am.amax().max(bv.amax()).max(1.0);
    let tol = 1e-13 * scale * scale * (rows.max(cols) as f64);

    let mut x = DVector::<f64>::zeros(cols);
    let mut passive = vec![false; cols];
    for _ in 0..3 * cols + 10 {
        let w = am.transpose() * (&bv - &am * &x);
        let candidate = (0..cols)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        loop {
            let idx: Vec<usize> = (0..cols).filter(|&i| passive[i]).collect();
            let zp = solve_passive(&am, &bv, &idx);
            if zp.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = zp[k];
                }
                break;
            }
            let mut step = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if zp[k] <= 0.0 {
                    let denom = x[i] - zp[k];
                    if denom > 0.0 {
                        step = step.min(x[i] / denom);
                    } else {
                        step = 0.0;
                    }
                }
            }
            let step = if step.is_finite() { step } else { 0.0 };
            for (k, &i) in idx.iter().enumerate() {
                x[i] += step * (zp[k] - x[i]);
            }
            for &i in &idx {
                if x[i] <= 1e-15 * scale {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let residual = (&am * &x - &bv).norm();
    NnlsSolution {
        weights: x.iter().copied().collect(),
        residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn recovers_nonnegative_combination() {
        let a = [1.0, 0.5, 0.2, 0.3, 1.0, 0.1, 0.0, 0.2, 1.0];
        let w = [0.3, 0.0, 0.7];
        let b: Vec<f64> = (0..3).map(|r| (0..3).map(|c| a[r * 3 + c] * w[c]).sum()).collect();
        let s = nnls(&a, 3, 3, &b);
        for (got, want) in s.weights.iter().zip(w) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn clips_to_boundary() {
        // Unconstrained solution would be negative.
        let a = [1.0, 0.0, 0.0, 1.0];
        let s = nnls(&a, 2, 2, &[-1.0, 2.0]);
        assert_eq!(s.weights[0], 0.0);
        assert_abs_diff_eq!(s.weights[1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.residual, 1.0, epsilon = 1e-14);
    }
}
