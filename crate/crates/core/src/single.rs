//! Single-stage rate-distortion via the Blahut iteration on the dual.
//!
//! For a slope `λ ≥ 0` the dual value is
//! `F(λ) = min_{P_{Y|X}} I(X;Y) + λ E d(X,Y)`, and the rate-distortion curve
//! is the upper envelope of the lines `F(λ) - λ d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::prob::{logsumexp, mutual_information, stable_sum, Kernel, Matrix, Pmf, UNDERFLOW_FLOOR};

/// A source distribution together with a distortion matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdProblem {
    px: Pmf,
    distortion: Matrix,
}

impl RdProblem {
    pub fn new(px: Pmf, distortion: Matrix) -> Result<Self> {
        if distortion.rows() != px.len() {
            return Err(Error::ShapeMismatch(format!(
                "source has {} letters but the distortion matrix has {} rows",
                px.len(),
                distortion.rows()
            )));
        }
        if let Some(index) = distortion.data().iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidEntry {
                index,
                value: distortion.data()[index],
            });
        }
        Ok(RdProblem { px, distortion })
    }

    pub fn px(&self) -> &Pmf {
        &self.px
    }

    pub fn distortion(&self) -> &Matrix {
        &self.distortion
    }

    pub fn num_inputs(&self) -> usize {
        self.px.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.distortion.cols()
    }

    /// Smallest achievable distortion, `E[min_y d(X, y)]`.
    pub fn d_min(&self) -> f64 {
        let per_x: Vec<f64> = (0..self.num_inputs())
            .map(|x| self.distortion.row(x).iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        self.px.mean(&per_x)
    }

    /// Distortion above which the rate is zero, `min_y E[d(X, y)]`.
    pub fn d_max(&self) -> f64 {
        (0..self.num_outputs())
            .map(|y| {
                let col: Vec<f64> = (0..self.num_inputs()).map(|x| self.distortion.get(x, y)).collect();
                self.px.mean(&col)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn expected_distortion(&self, kernel: &Kernel) -> Result<f64> {
        kernel.expected_cost(&self.px, &self.distortion)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("slope must be finite and non-negative, got {lambda}")));
    }
    Ok(())
}

/// `ln Σ_y P_Y(y) exp(-λ d(x, y))` for every source letter.
pub fn log_sigma_bar(problem: &RdProblem, lambda: f64, py: &Pmf) -> Result<Vec<f64>> {
    if py.len() != problem.num_outputs() {
        return Err(Error::ShapeMismatch("output pmf does not match distortion columns".into()));
    }
    let lp = py.log_probs();
    let mut buf = vec![0.0; lp.len()];
    Ok((0..problem.num_inputs())
        .map(|x| {
            for ((b, l), d) in buf.iter_mut().zip(&lp).zip(problem.distortion.row(x)) {
                *b = l - lambda * d;
            }
            logsumexp(&buf)
        })
        .collect())
}

/// `Σ_y P_Y(y) exp(-λ d(x, y))` for every source letter.
pub fn sigma_bar(problem: &RdProblem, lambda: f64, py: &Pmf) -> Result<Vec<f64>> {
    Ok(log_sigma_bar(problem, lambda, py)?.into_iter().map(f64::exp).collect())
}

/// One point of the iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct BlahutState {
    pub iteration: usize,
    pub lambda: f64,
    /// Output marginal `P_{Y_k}`.
    pub py: Pmf,
    /// Test channel `P_{Y_k | X}`.
    pub kernel: Kernel,
    /// Dual objective `F_k`; infinite for the initial state.
    pub f_value: f64,
    /// `sup ln(P_{Y_k} / P_{Y_{k-1}})` over the retained support.
    pub gap: f64,
}

impl BlahutState {
    /// Starting point with output marginal `init`, which must have full support.
    pub fn initial(problem: &RdProblem, lambda: f64, init: &Pmf) -> Result<Self> {
        check_lambda(lambda)?;
        if init.len() != problem.num_outputs() {
            return Err(Error::ShapeMismatch("initial pmf does not match the output alphabet".into()));
        }
        if init.support_size() != init.len() {
            return Err(Error::InvalidArgument("initial output pmf must have full support".into()));
        }
        Ok(BlahutState {
            iteration: 0,
            lambda,
            py: init.clone(),
            kernel: Kernel::constant(problem.num_inputs(), init),
            f_value: f64::INFINITY,
            gap: f64::INFINITY,
        })
    }
}

/// Performs one iteration from `state`.
pub fn blahut_step(problem: &RdProblem, state: &BlahutState) -> Result<BlahutState> {
    let lambda = state.lambda;
    let iteration = state.iteration + 1;
    let nx = problem.num_inputs();
    let ny = problem.num_outputs();
    let lp = state.py.log_probs();
    let px = problem.px.probs();

    let mut kernel = Vec::with_capacity(nx * ny);
    let mut f_terms = Vec::with_capacity(nx);
    let mut out = vec![0.0; ny];
    let mut row = vec![0.0; ny];
    for x in 0..nx {
        for ((r, l), d) in row.iter_mut().zip(&lp).zip(problem.distortion.row(x)) {
            *r = l - lambda * d;
        }
        let ls = logsumexp(&row);
        if !ls.is_finite() {
            return Err(Error::DegenerateMarginal { iteration });
        }
        for (y, r) in row.iter().enumerate() {
            let k = (r - ls).exp();
            kernel.push(k);
            out[y] += px[x] * k;
        }
        if px[x] > 0.0 {
            f_terms.push(-px[x] * ls);
        }
    }

    let old = state.py.probs();
    for o in out.iter_mut() {
        if *o < UNDERFLOW_FLOOR {
            *o = 0.0;
        }
    }
    let py = Pmf::from_weights(out).map_err(|_| Error::DegenerateMarginal { iteration })?;
    let gap = py
        .probs()
        .iter()
        .zip(old)
        .filter(|(n, _)| **n > 0.0)
        .map(|(n, o)| (n / o).ln())
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(BlahutState {
        iteration,
        lambda,
        py,
        kernel: Kernel::from_normalized(nx, ny, kernel),
        f_value: stable_sum(f_terms),
        gap,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub max_iters: usize,
    /// Accuracy target: on return `F_K ≤ F(λ) + delta`.
    pub delta: f64,
    /// Keep every intermediate state instead of only the last one.
    pub record_states: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_iters: 10_000,
            delta: 1e-9,
            record_states: false,
        }
    }
}

impl RunOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Summary of a finished run at one slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub lambda: f64,
    pub f_value: f64,
    pub converged: bool,
    pub iterations_used: usize,
    /// Last value of the stopping functional; `F(λ) ≥ f_value - gap_bound`.
    pub gap_bound: f64,
    pub delta: f64,
    /// `E d(X, Y)` under the final test channel.
    pub distortion: f64,
    /// `I(X; Y)` under the final test channel.
    pub rate: f64,
}

impl DualPoint {
    /// A value guaranteed not to exceed `F(λ)`.
    pub fn lower_value(&self) -> f64 {
        self.f_value - self.gap_bound.max(0.0)
    }
}

#[derive(Clone, Debug)]
pub struct BlahutRun {
    pub dual: DualPoint,
    /// `F_1, .., F_K`.
    pub f_trace: Vec<f64>,
    /// All states (including the initial one) when recording, otherwise
    /// just the final state.
    pub states: Vec<BlahutState>,
}

impl BlahutRun {
    pub fn final_state(&self) -> &BlahutState {
        self.states.last().expect("a run keeps at least its final state")
    }
}

/// Iterates until the stopping functional drops to `opts.delta` or the
/// iteration budget runs out.
pub fn run_blahut(problem: &RdProblem, lambda: f64, init: &Pmf, opts: &RunOptions) -> Result<BlahutRun> {
    opts.validate()?;
    let mut state = BlahutState::initial(problem, lambda, init)?;
    let mut states = Vec::new();
    let mut f_trace = Vec::new();
    let mut converged = false;
    while state.iteration < opts.max_iters {
        let next = blahut_step(problem, &state)?;
        if opts.record_states {
            states.push(std::mem::replace(&mut state, next));
        } else {
            state = next;
        }
        f_trace.push(state.f_value);
        if state.gap <= opts.delta {
            converged = true;
            break;
        }
    }
    let dual = DualPoint {
        lambda,
        f_value: state.f_value,
        converged,
        iterations_used: state.iteration,
        gap_bound: state.gap,
        delta: opts.delta,
        distortion: problem.expected_distortion(&state.kernel)?,
        rate: mutual_information(&problem.px, &state.kernel)?,
    };
    states.push(state);
    Ok(BlahutRun { dual, f_trace, states })
}

/// Runs every slope from a uniform start, in parallel when enabled.
pub fn sweep(problem: &RdProblem, lambdas: &[f64], opts: &RunOptions) -> Result<Vec<BlahutRun>> {
    let init = Pmf::uniform(problem.num_outputs());
    par::try_map(lambdas, |&l| run_blahut(problem, l, &init, opts))
}

/// A list of slopes, spaced linearly or geometrically between two ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub geometric: bool,
}

impl SlopeGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.count == 0 || !self.lo.is_finite() || !self.hi.is_finite() || self.lo < 0.0 || self.hi < self.lo {
            return Err(Error::InvalidArgument(format!(
                "bad slope grid {}:{}:{}",
                self.lo, self.hi, self.count
            )));
        }
        if self.geometric && self.lo <= 0.0 {
            return Err(Error::InvalidArgument("geometric grids need a positive lower end".into()));
        }
        if self.count == 1 {
            return Ok(vec![self.lo]);
        }
        let n = (self.count - 1) as f64;
        Ok((0..self.count)
            .map(|i| {
                let t = i as f64 / n;
                if self.geometric {
                    (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp()
                } else {
                    self.lo + t * (self.hi - self.lo)
                }
            })
            .collect())
    }
}

/// Upper envelope of the supporting lines `F(λ) - λ d` together with the
/// line `R = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    /// Lines `(λ, F)` on the envelope, steepest first.
    lines: Vec<(f64, f64)>,
    /// Breakpoints `(d, R(d))` of the envelope, increasing in `d`.
    pub points: Vec<(f64, f64)>,
    /// Leftmost breakpoint.
    pub d_min_estimate: f64,
    /// Distortion at which the envelope reaches zero.
    pub d_max_estimate: f64,
}

impl RdCurve {
    pub fn lines(&self) -> &[(f64, f64)] {
        &self.lines
    }

    /// Envelope value at `d`; never below zero.
    pub fn evaluate(&self, d: f64) -> f64 {
        self.lines
            .iter()
            .map(|(l, f)| f - l * d)
            .fold(0.0, f64::max)
    }

    /// Checks that the breakpoints describe a convex non-increasing curve.
    /// Checks the hull structure: slopes non-negative and strictly
    /// decreasing along the hull, breakpoints in increasing distortion, and
    /// rates nonincreasing between breakpoints. Slopes are compared on the
    /// lines themselves since nearly coincident breakpoints make finite
    /// differences meaningless.
    pub fn is_convex_nonincreasing(&self, tol: f64) -> bool {
        let slopes_ok = self.lines.iter().all(|l| l.0 >= 0.0) && self.lines.windows(2).all(|w| w[1].0 < w[0].0);
        let p = &self.points;
        let ordered = p.windows(2).all(|w| w[1].0 >= w[0].0 - tol);
        let monotone = p.windows(2).all(|w| w[1].1 <= w[0].1 + tol);
        slopes_ok && ordered && monotone
    }
}

fn crossing(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1 - b.1) / (a.0 - b.0)
}

/// Builds the envelope from dual points; each line is lowered by its run's
/// residual gap so the envelope stays below the true curve.
pub fn rd_envelope(duals: &[DualPoint]) -> Result<RdCurve> {
    if duals.len() < 2 {
        return Err(Error::InsufficientSlopes { got: duals.len() });
    }
    let mut lines: Vec<(f64, f64)> = Vec::with_capacity(duals.len() + 1);
    for d in duals {
        check_lambda(d.lambda)?;
        let f = d.lower_value();
        if !f.is_finite() {
            return Err(Error::InvalidArgument(format!("dual value at slope {} is not finite", d.lambda)));
        }
        lines.push((d.lambda, f));
    }
    lines.push((0.0, 0.0));
    lines.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    lines.dedup_by(|b, a| a.0 == b.0);

    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
    for line in lines {
        while hull.len() >= 2 {
            let n = hull.len();
            if crossing(hull[n - 2], hull[n - 1]) >= crossing(hull[n - 1], line) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(line);
    }
    let points: Vec<(f64, f64)> = hull
        .windows(2)
        .map(|w| {
            let d = crossing(w[0], w[1]);
            (d, w[1].1 - w[1].0 * d)
        })
        .collect();
    let d_min_estimate = points.first().map_or(f64::NAN, |p| p.0);
    let d_max_estimate = points.last().map_or(f64::NAN, |p| p.0);
    Ok(RdCurve {
        lines: hull,
        points,
        d_min_estimate,
        d_max_estimate,
    })
}

/// A slope whose tangent point sits at a requested distortion.
#[derive(Clone, Debug)]
pub struct SolvedPoint {
    pub lambda: f64,
    pub run: BlahutRun,
}

/// Finds the slope supporting the curve at `target` by bisection in `ln λ`.
pub fn solve_at_distortion(problem: &RdProblem, target: f64, opts: &RunOptions) -> Result<SolvedPoint> {
    let (lo_d, hi_d) = (problem.d_min(), problem.d_max());
    if !(target > lo_d && target < hi_d) {
        return Err(Error::OutOfRange(format!(
            "distortion {target} is outside the open interval ({lo_d}, {hi_d})"
        )));
    }
    let uniform = Pmf::uniform(problem.num_outputs());
    let warm = |prev: Option<&BlahutRun>| -> Pmf {
        match prev {
            Some(r) => {
                let w: Vec<f64> = r
                    .final_state()
                    .py
                    .probs()
                    .iter()
                    .zip(uniform.probs())
                    .map(|(p, u)| 0.999 * p + 0.001 * u)
                    .collect();
                Pmf::from_weights(w).expect("mixture of pmfs is a pmf")
            }
            None => uniform.clone(),
        }
    };
    let eval = |lambda: f64, prev: Option<&BlahutRun>| run_blahut(problem, lambda, &warm(prev), opts);

    let mut lo = 1.0;
    let mut lo_run = eval(lo, None)?;
    let mut hi = lo;
    let mut hi_run = lo_run.clone();
    // Distortion decreases with the slope.
    if lo_run.dual.distortion < target {
        while lo_run.dual.distortion < target {
            hi = lo;
            hi_run = lo_run;
            lo /= 2.0;
            if lo < 1e-12 {
                return Err(Error::OutOfRange(format!("no slope reaches distortion {target}")));
            }
            lo_run = eval(lo, Some(&hi_run))?;
        }
    } else {
        while hi_run.dual.distortion > target {
            lo = hi;
            lo_run = hi_run;
            hi *= 2.0;
            if hi > 1e8 {
                return Err(Error::OutOfRange(format!("no slope reaches distortion {target}")));
            }
            hi_run = eval(hi, Some(&lo_run))?;
        }
    }

    let tol = 1e-10 * target.abs().max(1.0);
    for _ in 0..200 {
        if (lo_run.dual.distortion - target).abs() <= tol {
            return Ok(SolvedPoint { lambda: lo, run: lo_run });
        }
        if (hi_run.dual.distortion - target).abs() <= tol || hi / lo - 1.0 < 1e-13 {
            break;
        }
        let mid = (lo * hi).sqrt();
        let run = eval(mid, Some(&lo_run))?;
        if run.dual.distortion > target {
            lo = mid;
            lo_run = run;
        } else {
            hi = mid;
            hi_run = run;
        }
    }
    Ok(SolvedPoint { lambda: hi, run: hi_run })
}

/// Tilted information density `j(x) = -ln α*(x) - λ* d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltedInfo {
    pub lambda: f64,
    pub d: f64,
    pub alpha: Vec<f64>,
    pub values: Vec<f64>,
}

impl TiltedInfo {
    pub fn mean(&self, px: &Pmf) -> f64 {
        px.mean(&self.values)
    }

    pub fn variance(&self, px: &Pmf) -> f64 {
        px.variance(&self.values)
    }
}

pub fn tilted_information(
    problem: &RdProblem,
    dual: &DualPoint,
    final_state: &BlahutState,
    d: f64,
) -> Result<TiltedInfo> {
    if !dual.converged {
        return Err(Error::NotConverged {
            iterations: dual.iterations_used,
        });
    }
    let log_alpha = log_sigma_bar(problem, dual.lambda, &final_state.py)?;
    Ok(TiltedInfo {
        lambda: dual.lambda,
        d,
        alpha: log_alpha.iter().map(|a| a.exp()).collect(),
        values: log_alpha.iter().map(|a| -a - dual.lambda * d).collect(),
    })
}

/// Outcome of checking the optimality conditions of a final state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub tol: f64,
    /// `c(y) = Σ_x P_X(x) exp(-λ d(x,y)) / α(x)` for every output letter.
    pub constraint: Vec<f64>,
    pub max_constraint: f64,
    /// `Σ_y P_Y(y) |c(y) - 1|`: departure from equality on the support.
    pub weighted_deviation: f64,
    pub passed: bool,
}

/// Checks `c(y) ≤ 1 + tol` everywhere and `c = 1` on the support of the
/// final output marginal, with `tol = 10 δ`.
pub fn verify_optimality(problem: &RdProblem, dual: &DualPoint, final_state: &BlahutState) -> Result<OptimalityReport> {
    let tol = 10.0 * dual.delta;
    let log_alpha = log_sigma_bar(problem, dual.lambda, &final_state.py)?;
    let px = problem.px.probs();
    let constraint: Vec<f64> = (0..problem.num_outputs())
        .map(|y| {
            stable_sum(
                (0..problem.num_inputs())
                    .filter(|&x| px[x] > 0.0)
                    .map(|x| px[x] * (-dual.lambda * problem.distortion.get(x, y) - log_alpha[x]).exp()),
            )
        })
        .collect();
    let max_constraint = constraint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weighted_deviation = stable_sum(
        final_state
            .py
            .probs()
            .iter()
            .zip(&constraint)
            .map(|(p, c)| p * (c - 1.0).abs()),
    );
    let passed = max_constraint <= 1.0 + tol && weighted_deviation <= tol;
    Ok(OptimalityReport {
        tol,
        constraint,
        max_constraint,
        weighted_deviation,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn binary(p: f64) -> RdProblem {
        RdProblem::new(Pmf::new(vec![1.0 - p, p]).unwrap(), Matrix::hamming(2)).unwrap()
    }

    #[test]
    fn zero_slope_stops_after_one_step() {
        let run = run_blahut(&binary(0.3), 0.0, &Pmf::uniform(2), &RunOptions::default()).unwrap();
        assert!(run.dual.converged);
        assert_eq!(run.dual.iterations_used, 1);
        assert_eq!(run.dual.f_value, 0.0);
    }

    #[test]
    fn uniform_hamming_value() {
        let lambda = 9f64.ln();
        let run = run_blahut(&binary(0.5), lambda, &Pmf::uniform(2), &RunOptions::default()).unwrap();
        assert_abs_diff_eq!(run.dual.f_value, 2f64.ln() - (10.0f64 / 9.0).ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(run.dual.distortion, 0.1, epsilon = 1e-9);
        let report = verify_optimality(&binary(0.5), &run.dual, run.final_state()).unwrap();
        assert!(report.passed);
        for c in &report.constraint {
            assert_abs_diff_eq!(*c, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn early_stop_is_reported() {
        let problem = binary(0.2);
        let opts = RunOptions {
            max_iters: 2,
            ..RunOptions::default()
        };
        let run = run_blahut(&problem, 2.0, &Pmf::uniform(2), &opts).unwrap();
        assert!(!run.dual.converged);
        let report = verify_optimality(&problem, &run.dual, run.final_state()).unwrap();
        assert!(!report.passed);
        assert!(matches!(
            tilted_information(&problem, &run.dual, run.final_state(), 0.1),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn record_states_keeps_initial_and_all_steps() {
        let opts = RunOptions {
            record_states: true,
            ..RunOptions::default()
        };
        let run = run_blahut(&binary(0.2), 1.5, &Pmf::uniform(2), &opts).unwrap();
        assert_eq!(run.states.len(), run.dual.iterations_used + 1);
        assert_eq!(run.f_trace.len(), run.dual.iterations_used);
        assert!(run.states[0].f_value.is_infinite());
    }

    #[test]
    fn envelope_needs_two_slopes() {
        let run = run_blahut(&binary(0.2), 1.5, &Pmf::uniform(2), &RunOptions::default()).unwrap();
        assert!(matches!(
            rd_envelope(&[run.dual]),
            Err(Error::InsufficientSlopes { got: 1 })
        ));
    }

    #[test]
    fn extreme_distortions() {
        let p = binary(0.2);
        assert_abs_diff_eq!(p.d_min(), 0.0);
        assert_abs_diff_eq!(p.d_max(), 0.2, epsilon = 1e-15);
        assert!(matches!(
            solve_at_distortion(&p, 0.3, &RunOptions::default()),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn solves_for_known_slope() {
        let s = solve_at_distortion(&binary(0.2), 0.1, &RunOptions::default()).unwrap();
        assert_abs_diff_eq!(s.lambda, 9f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn slope_grid_shapes() {
        let g = SlopeGrid {
            lo: 1.0,
            hi: 100.0,
            count: 3,
            geometric: true,
        };
        let v = g.values().unwrap();
        assert_abs_diff_eq!(v[1], 10.0, epsilon = 1e-12);
        let bad = SlopeGrid { lo: 0.0, ..g };
        assert!(bad.values().is_err());
    }
}
