//! Successive refinement: a coarse description `Y1` followed by a refinement
//! `Y2`, with rates `R1 = I(X;Y1)` and `R2 = I(X;Y1,Y2)`.
//!
//! For a triple `(ν1, λ1, λ2)` of non-negative multipliers the dual value is
//!
//! ```text
//! F = min  I(X;Y1,Y2) + ν1 I(X;Y1) + λ1 E d1(X,Y1) + λ2 E d2(X,Y2)
//! ```
//!
//! and the rate region is bounded by the planes
//! `R2 ≥ F - λ1 d1 - λ2 d2 - ν1 R1`.
//!
//! The iteration alternates between the per-letter normalizers
//!
//! ```text
//! β2(x|y1) = Σ_y2 P(y2|y1) exp(-λ2 d2(x,y2))
//! β1(x)    = Σ_y1 P(y1) [β2(x|y1) exp(-λ1 d1(x,y1))]^(1/(1+ν1))
//! ```
//!
//! and the marginal updates `P(y1) ← P(y1) Σ1(y1)`,
//! `P(y2|y1) ← P(y2|y1) Σ2(y1,y2) / Σ1(y1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnls::nnls;
use crate::par;
use crate::prob::{logsumexp, mutual_information, stable_sum, Kernel, Matrix, Pmf, UNDERFLOW_FLOOR};
use crate::single::{self, RdProblem, RunOptions};

/// A source with one distortion measure per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrProblem {
    px: Pmf,
    d1: Matrix,
    d2: Matrix,
}

impl SrProblem {
    pub fn new(px: Pmf, d1: Matrix, d2: Matrix) -> Result<Self> {
        for (name, d) in [("first", &d1), ("second", &d2)] {
            if d.rows() != px.len() {
                return Err(Error::ShapeMismatch(format!(
                    "source has {} letters but the {name}-stage distortion has {} rows",
                    px.len(),
                    d.rows()
                )));
            }
            if let Some(index) = d.data().iter().position(|&v| v < 0.0) {
                return Err(Error::InvalidEntry {
                    index,
                    value: d.data()[index],
                });
            }
        }
        Ok(SrProblem { px, d1, d2 })
    }

    pub fn px(&self) -> &Pmf {
        &self.px
    }

    pub fn d1(&self) -> &Matrix {
        &self.d1
    }

    pub fn d2(&self) -> &Matrix {
        &self.d2
    }

    pub fn nx(&self) -> usize {
        self.px.len()
    }

    pub fn ny1(&self) -> usize {
        self.d1.cols()
    }

    pub fn ny2(&self) -> usize {
        self.d2.cols()
    }

    pub fn first_stage(&self) -> RdProblem {
        RdProblem::new(self.px.clone(), self.d1.clone()).expect("validated on construction")
    }

    pub fn second_stage(&self) -> RdProblem {
        RdProblem::new(self.px.clone(), self.d2.clone()).expect("validated on construction")
    }
}

/// Multipliers `(ν1, λ1, λ2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangeTriple {
    pub nu1: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LagrangeTriple {
    pub fn new(nu1: f64, lambda1: f64, lambda2: f64) -> Result<Self> {
        for (name, v) in [("nu1", nu1), ("lambda1", lambda1), ("lambda2", lambda2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(LagrangeTriple { nu1, lambda1, lambda2 })
    }

    /// Value of the plane with dual value `f` at `(d1, d2, r1)`.
    pub fn plane(&self, f: f64, d1: f64, d2: f64, r1: f64) -> f64 {
        f - self.lambda1 * d1 - self.lambda2 * d2 - self.nu1 * r1
    }
}

/// Per-letter normalizers `β1(x)` and `β2(x|y1)`, stored as logarithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Betas {
    ny1: usize,
    log_beta1: Vec<f64>,
    log_beta2: Vec<f64>,
}

impl Betas {
    pub fn from_logs(log_beta1: Vec<f64>, ny1: usize, log_beta2: Vec<f64>) -> Result<Self> {
        if ny1 == 0 || log_beta2.len() != log_beta1.len() * ny1 {
            return Err(Error::ShapeMismatch("beta2 must have |X| x |Y1| entries".into()));
        }
        if log_beta1.iter().chain(&log_beta2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("betas must be positive and finite".into()));
        }
        Ok(Betas {
            ny1,
            log_beta1,
            log_beta2,
        })
    }

    pub fn from_values(beta1: &[f64], beta2: &Matrix) -> Result<Self> {
        if beta2.rows() != beta1.len() {
            return Err(Error::ShapeMismatch("beta2 rows must match beta1".into()));
        }
        Betas::from_logs(
            beta1.iter().map(|b| b.ln()).collect(),
            beta2.cols(),
            beta2.data().iter().map(|b| b.ln()).collect(),
        )
    }

    pub fn nx(&self) -> usize {
        self.log_beta1.len()
    }

    pub fn ny1(&self) -> usize {
        self.ny1
    }

    pub fn log_beta1(&self) -> &[f64] {
        &self.log_beta1
    }

    pub fn log_beta2(&self, x: usize, y1: usize) -> f64 {
        self.log_beta2[x * self.ny1 + y1]
    }

    pub fn beta1(&self) -> Vec<f64> {
        self.log_beta1.iter().map(|b| b.exp()).collect()
    }

    pub fn beta2(&self) -> Matrix {
        Matrix::new(self.nx(), self.ny1, self.log_beta2.iter().map(|b| b.exp()).collect())
            .expect("finite by construction")
    }

    /// Multiplies `β1` by `exp(log_factor)`.
    pub fn scale_beta1(&self, log_factor: f64) -> Betas {
        Betas {
            ny1: self.ny1,
            log_beta1: self.log_beta1.iter().map(|b| b + log_factor).collect(),
            log_beta2: self.log_beta2.clone(),
        }
    }

    /// `(1+ν1) E ln 1/β1(X)`, the dual value certified by these betas.
    pub fn value(&self, px: &Pmf, nu1: f64) -> f64 {
        let neg: Vec<f64> = self.log_beta1.iter().map(|b| -b).collect();
        (1.0 + nu1) * px.mean(&neg)
    }
}

/// The feasibility functions
/// `Σ1(y1) = E[β2(X|y1)^(1/(1+ν1)) exp(-λ1 d1/(1+ν1)) / β1(X)]` and
/// `Σ2(y1,y2) = E[β2(X|y1)^(-ν1/(1+ν1)) exp(-λ1 d1/(1+ν1) - λ2 d2) / β1(X)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sigmas {
    pub sigma1: Vec<f64>,
    /// `|Y1| × |Y2|`.
    pub sigma2: Matrix,
}

impl Sigmas {
    pub fn max_sigma1(&self) -> f64 {
        self.sigma1.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_sigma2(&self) -> f64 {
        self.sigma2.max_entry()
    }
}

fn check_betas(problem: &SrProblem, betas: &Betas) -> Result<()> {
    if betas.nx() != problem.nx() || betas.ny1() != problem.ny1() {
        return Err(Error::ShapeMismatch("betas do not match the problem".into()));
    }
    Ok(())
}

pub fn sigma_functions(problem: &SrProblem, triple: &LagrangeTriple, betas: &Betas) -> Result<Sigmas> {
    check_betas(problem, betas)?;
    let (nx, ny1, ny2) = (problem.nx(), problem.ny1(), problem.ny2());
    let s = 1.0 + triple.nu1;
    let px = problem.px.probs();
    let mut sigma1 = vec![0.0; ny1];
    let mut sigma2 = vec![0.0; ny1 * ny2];
    for x in (0..nx).filter(|&x| px[x] > 0.0) {
        for y1 in 0..ny1 {
            let lb2 = betas.log_beta2(x, y1);
            let lr1 = (lb2 - triple.lambda1 * problem.d1.get(x, y1)) / s - betas.log_beta1[x];
            sigma1[y1] += px[x] * lr1.exp();
            for y2 in 0..ny2 {
                sigma2[y1 * ny2 + y2] += px[x] * (lr1 - triple.lambda2 * problem.d2.get(x, y2) - lb2).exp();
            }
        }
    }
    Ok(Sigmas {
        sigma1,
        sigma2: Matrix::new(ny1, ny2, sigma2)?,
    })
}

/// One point of the iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SrState {
    pub iteration: usize,
    /// `P_{Y1}`.
    pub py1: Pmf,
    /// `P_{Y2|Y1}`, rows indexed by `y1`.
    pub py2_given_y1: Kernel,
    /// `P_{Y1|X}`.
    pub k1: Kernel,
    /// `P_{Y2|X,Y1}`, rows indexed by `x * |Y1| + y1`.
    pub k2: Kernel,
    /// Normalizers that produced this state (absent for the initial state).
    pub betas: Option<Betas>,
    /// Dual objective `F_k`; infinite for the initial state.
    pub f_value: f64,
    /// Stopping functional of the step that produced this state.
    pub gap: f64,
}

impl SrState {
    /// Starting point from full-support marginals.
    pub fn initial(problem: &SrProblem, init1: &Pmf, init2: &Kernel) -> Result<Self> {
        let (nx, ny1, ny2) = (problem.nx(), problem.ny1(), problem.ny2());
        if init1.len() != ny1 || init2.input_size() != ny1 || init2.output_size() != ny2 {
            return Err(Error::ShapeMismatch("initial marginals do not match the alphabets".into()));
        }
        if init1.support_size() != ny1 || init2.matrix().data().iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidArgument("initial marginals must have full support".into()));
        }
        let mut k2 = Vec::with_capacity(nx * ny1 * ny2);
        for _ in 0..nx {
            k2.extend_from_slice(init2.matrix().data());
        }
        Ok(SrState {
            iteration: 0,
            py1: init1.clone(),
            py2_given_y1: init2.clone(),
            k1: Kernel::constant(nx, init1),
            k2: Kernel::from_normalized(nx * ny1, ny2, k2),
            betas: None,
            f_value: f64::INFINITY,
            gap: f64::INFINITY,
        })
    }

    /// `P_{Y1,Y2|X}` flattened over `y1 * |Y2| + y2`.
    pub fn joint_kernel(&self) -> Kernel {
        let (nx, ny1, ny2) = (self.k1.input_size(), self.k1.output_size(), self.k2.output_size());
        let mut data = Vec::with_capacity(nx * ny1 * ny2);
        for x in 0..nx {
            for y1 in 0..ny1 {
                let a = self.k1.get(x, y1);
                data.extend(self.k2.row(x * ny1 + y1).iter().map(|b| a * b));
            }
        }
        Kernel::from_normalized(nx, ny1 * ny2, data)
    }
}

/// Normalizers computed from the marginals of `state`.
pub fn update_betas(problem: &SrProblem, triple: &LagrangeTriple, state: &SrState) -> Result<Betas> {
    let (nx, ny1, ny2) = (problem.nx(), problem.ny1(), problem.ny2());
    let s = 1.0 + triple.nu1;
    let lp1 = state.py1.log_probs();
    let lp2: Vec<f64> = state.py2_given_y1.matrix().data().iter().map(|p| p.ln()).collect();
    let mut log_beta2 = vec![0.0; nx * ny1];
    let mut log_beta1 = vec![0.0; nx];
    let mut buf2 = vec![0.0; ny2];
    let mut buf1 = vec![0.0; ny1];
    for x in 0..nx {
        for y1 in 0..ny1 {
            for (y2, b) in buf2.iter_mut().enumerate() {
                *b = lp2[y1 * ny2 + y2] - triple.lambda2 * problem.d2.get(x, y2);
            }
            let lb2 = logsumexp(&buf2);
            log_beta2[x * ny1 + y1] = lb2;
            buf1[y1] = lp1[y1] + (lb2 - triple.lambda1 * problem.d1.get(x, y1)) / s;
        }
        log_beta1[x] = logsumexp(&buf1);
    }
    if log_beta1.iter().chain(&log_beta2).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateMarginal {
            iteration: state.iteration + 1,
        });
    }
    Ok(Betas {
        ny1,
        log_beta1,
        log_beta2,
    })
}

fn clamp_floor(v: &mut [f64]) {
    for p in v.iter_mut() {
        if *p < UNDERFLOW_FLOOR {
            *p = 0.0;
        }
    }
}

/// Kernel and marginal update given the normalizers.
pub fn update_kernels(problem: &SrProblem, triple: &LagrangeTriple, state: &SrState, betas: Betas) -> Result<SrState> {
    check_betas(problem, &betas)?;
    let (nx, ny1, ny2) = (problem.nx(), problem.ny1(), problem.ny2());
    let iteration = state.iteration + 1;
    let s = 1.0 + triple.nu1;
    let px = problem.px.probs();
    let lp1 = state.py1.log_probs();
    let lp2: Vec<f64> = state.py2_given_y1.matrix().data().iter().map(|p| p.ln()).collect();

    let mut k1 = vec![0.0; nx * ny1];
    let mut k2 = vec![0.0; nx * ny1 * ny2];
    let mut sigma1 = vec![0.0; ny1];
    let mut new_py1 = vec![0.0; ny1];
    let mut post = vec![0.0; ny1 * ny2];
    for x in 0..nx {
        let lb1 = betas.log_beta1[x];
        for y1 in 0..ny1 {
            let lb2 = betas.log_beta2(x, y1);
            let lr1 = (lb2 - triple.lambda1 * problem.d1.get(x, y1)) / s - lb1;
            let r1 = lr1.exp();
            let k = (lp1[y1] + lr1).exp();
            k1[x * ny1 + y1] = k;
            sigma1[y1] += px[x] * r1;
            new_py1[y1] += px[x] * k;
            let base = (x * ny1 + y1) * ny2;
            for y2 in 0..ny2 {
                let v = (lp2[y1 * ny2 + y2] - triple.lambda2 * problem.d2.get(x, y2) - lb2).exp();
                k2[base + y2] = v;
                post[y1 * ny2 + y2] += px[x] * r1 * v;
            }
        }
    }

    clamp_floor(&mut new_py1);
    let py1 = Pmf::from_weights(new_py1).map_err(|_| Error::DegenerateMarginal { iteration })?;
    let mut rows = Vec::with_capacity(ny1 * ny2);
    for y1 in 0..ny1 {
        let mut row: Vec<f64> = post[y1 * ny2..(y1 + 1) * ny2].iter().map(|p| p / sigma1[y1]).collect();
        clamp_floor(&mut row);
        match Pmf::from_weights(row) {
            Ok(p) => rows.extend_from_slice(p.probs()),
            Err(_) => rows.extend_from_slice(state.py2_given_y1.row(y1)),
        }
    }
    let py2_given_y1 = Kernel::from_normalized(ny1, ny2, rows);

    let mut gap = f64::NEG_INFINITY;
    for y1 in py1.support() {
        let g1 = s * (py1.get(y1) / state.py1.get(y1)).ln();
        for y2 in 0..ny2 {
            let (n, o) = (py2_given_y1.get(y1, y2), state.py2_given_y1.get(y1, y2));
            if n > 0.0 && o > 0.0 {
                gap = gap.max(g1 + (n / o).ln());
            }
        }
    }

    let f_terms: Vec<f64> = (0..nx).filter(|&x| px[x] > 0.0).map(|x| -px[x] * betas.log_beta1[x]).collect();
    Ok(SrState {
        iteration,
        py1,
        py2_given_y1,
        k1: Kernel::from_normalized(nx, ny1, k1),
        k2: Kernel::from_normalized(nx * ny1, ny2, k2),
        betas: Some(betas),
        f_value: s * stable_sum(f_terms),
        gap,
    })
}

/// One full iteration: normalizers first, then kernels and marginals.
pub fn sr_step(problem: &SrProblem, triple: &LagrangeTriple, state: &SrState) -> Result<SrState> {
    let betas = update_betas(problem, triple, state)?;
    update_kernels(problem, triple, state, betas)
}

/// Summary of a finished run at one triple, with the tangent point of the
/// supporting plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrDualPoint {
    pub triple: LagrangeTriple,
    pub f_value: f64,
    pub converged: bool,
    pub iterations_used: usize,
    pub gap_bound: f64,
    pub delta: f64,
    pub d1: f64,
    pub d2: f64,
    pub r1: f64,
    pub r2: f64,
}

impl SrDualPoint {
    /// A value guaranteed not to exceed the dual optimum at this triple.
    pub fn lower_value(&self) -> f64 {
        self.f_value - self.gap_bound.max(0.0)
    }
}

#[derive(Clone, Debug)]
pub struct SrRun {
    pub dual: SrDualPoint,
    pub f_trace: Vec<f64>,
    pub states: Vec<SrState>,
}

impl SrRun {
    pub fn final_state(&self) -> &SrState {
        self.states.last().expect("a run keeps at least its final state")
    }
}

pub fn run_sr_blahut(
    problem: &SrProblem,
    triple: &LagrangeTriple,
    init1: &Pmf,
    init2: &Kernel,
    opts: &RunOptions,
) -> Result<SrRun> {
    LagrangeTriple::new(triple.nu1, triple.lambda1, triple.lambda2)?;
    if opts.max_iters == 0 || !(opts.delta > 0.0) {
        return Err(Error::InvalidArgument("max_iters and delta must be positive".into()));
    }
    let mut state = SrState::initial(problem, init1, init2)?;
    let mut states = Vec::new();
    let mut f_trace = Vec::new();
    let mut converged = false;
    while state.iteration < opts.max_iters {
        let next = sr_step(problem, triple, &state)?;
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
    let joint = state.joint_kernel();
    let mut d2_kernel = vec![0.0; problem.nx() * problem.ny2()];
    for x in 0..problem.nx() {
        for (j, p) in joint.row(x).iter().enumerate() {
            d2_kernel[x * problem.ny2() + j % problem.ny2()] += p;
        }
    }
    let k_y2 = Kernel::from_normalized(problem.nx(), problem.ny2(), d2_kernel);
    let dual = SrDualPoint {
        triple: *triple,
        f_value: state.f_value,
        converged,
        iterations_used: state.iteration,
        gap_bound: state.gap,
        delta: opts.delta,
        d1: state.k1.expected_cost(&problem.px, &problem.d1)?,
        d2: k_y2.expected_cost(&problem.px, &problem.d2)?,
        r1: mutual_information(&problem.px, &state.k1)?,
        r2: mutual_information(&problem.px, &joint)?,
    };
    states.push(state);
    Ok(SrRun { dual, f_trace, states })
}

/// Runs every triple from uniform marginals.
pub fn sr_sweep(problem: &SrProblem, triples: &[LagrangeTriple], opts: &RunOptions) -> Result<Vec<SrRun>> {
    let init1 = Pmf::uniform(problem.ny1());
    let init2 = Kernel::constant(problem.ny1(), &Pmf::uniform(problem.ny2()));
    par::try_map(triples, |t| run_sr_blahut(problem, t, &init1, &init2, opts))
}

/// Upper envelope of the supporting planes of the rate region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrSurface {
    pub planes: Vec<(LagrangeTriple, f64)>,
}

impl SrSurface {
    /// Lower bound on the minimal `R2` at `(d1, d2, R1)`; never below zero.
    pub fn evaluate(&self, d1: f64, d2: f64, r1: f64) -> f64 {
        self.planes
            .iter()
            .map(|(t, f)| t.plane(*f, d1, d2, r1))
            .fold(0.0, f64::max)
    }
}

/// Each plane is lowered by its run's residual gap.
pub fn sr_envelope(duals: &[SrDualPoint]) -> Result<SrSurface> {
    if duals.is_empty() {
        return Err(Error::InsufficientSlopes { got: duals.len() });
    }
    let planes = duals
        .iter()
        .map(|d| (d.triple, d.lower_value()))
        .collect();
    Ok(SrSurface { planes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrOptimalityReport {
    pub tol: f64,
    pub sigmas: Sigmas,
    pub max_sigma1: f64,
    pub max_sigma2: f64,
    /// `max (Σ2 - Σ1)` over `y1` in the support of `P_{Y1}`.
    pub max_excess: f64,
    /// `Σ P(y1) max(0, max_y2 Σ2(y1,y2) - Σ1(y1))`.
    pub weighted_excess: f64,
    /// `Σ P(y1) |Σ1(y1) - 1|`.
    pub deviation1: f64,
    /// `Σ P(y1) P(y2|y1) |Σ2/Σ1 - 1|`.
    pub deviation2: f64,
    pub passed: bool,
}

/// Checks `Σ1, Σ2 ≤ 1 + tol`, `Σ2 ≤ Σ1` and equality on the supports, with
/// `tol = 10 δ`. The last two are measured `P_{Y1}`-almost everywhere as
/// weighted sums, so letters whose mass is vanishing do not decide the
/// outcome.
pub fn verify_sr_optimality(problem: &SrProblem, dual: &SrDualPoint, final_state: &SrState) -> Result<SrOptimalityReport> {
    let tol = 10.0 * dual.delta;
    let betas = update_betas(problem, &dual.triple, final_state)?;
    let sigmas = sigma_functions(problem, &dual.triple, &betas)?;
    let ny2 = problem.ny2();
    let mut max_excess = f64::NEG_INFINITY;
    let mut excess = Vec::new();
    let mut dev1 = Vec::new();
    let mut dev2 = Vec::new();
    for y1 in final_state.py1.support() {
        let p1 = final_state.py1.get(y1);
        let s1 = sigmas.sigma1[y1];
        dev1.push(p1 * (s1 - 1.0).abs());
        let mut row_excess = f64::NEG_INFINITY;
        for y2 in 0..ny2 {
            let s2 = sigmas.sigma2.get(y1, y2);
            row_excess = row_excess.max(s2 - s1);
            dev2.push(p1 * final_state.py2_given_y1.get(y1, y2) * (s2 / s1 - 1.0).abs());
        }
        max_excess = max_excess.max(row_excess);
        excess.push(p1 * row_excess.max(0.0));
    }
    let weighted_excess = stable_sum(excess);
    let (max_sigma1, max_sigma2) = (sigmas.max_sigma1(), sigmas.max_sigma2());
    let (deviation1, deviation2) = (stable_sum(dev1), stable_sum(dev2));
    let passed = max_sigma1 <= 1.0 + tol
        && max_sigma2 <= 1.0 + tol
        && weighted_excess <= tol
        && deviation1 <= tol
        && deviation2 <= tol;
    Ok(SrOptimalityReport {
        tol,
        sigmas,
        max_sigma1,
        max_sigma2,
        max_excess,
        weighted_excess,
        deviation1,
        deviation2,
        passed,
    })
}

/// Tilted information for successive refinement,
/// `(1+ν1) ln 1/β1(x) - λ1 d1 - λ2 d2 - ν1 R1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrTiltedInfo {
    pub triple: LagrangeTriple,
    pub d1: f64,
    pub d2: f64,
    pub r1: f64,
    pub values: Vec<f64>,
}

impl SrTiltedInfo {
    pub fn mean(&self, px: &Pmf) -> f64 {
        px.mean(&self.values)
    }

    pub fn variance(&self, px: &Pmf) -> f64 {
        px.variance(&self.values)
    }
}

pub fn sr_tilted_information(
    problem: &SrProblem,
    dual: &SrDualPoint,
    final_state: &SrState,
    d1: f64,
    d2: f64,
    r1: f64,
) -> Result<SrTiltedInfo> {
    if !dual.converged {
        return Err(Error::NotConverged {
            iterations: dual.iterations_used,
        });
    }
    let betas = update_betas(problem, &dual.triple, final_state)?;
    Ok(tilted_from_betas(&dual.triple, &betas, d1, d2, r1))
}

pub(crate) fn tilted_from_betas(triple: &LagrangeTriple, betas: &Betas, d1: f64, d2: f64, r1: f64) -> SrTiltedInfo {
    let s = 1.0 + triple.nu1;
    SrTiltedInfo {
        triple: *triple,
        d1,
        d2,
        r1,
        values: betas
            .log_beta1
            .iter()
            .map(|lb| triple.plane(-s * lb, d1, d2, r1))
            .collect(),
    }
}

/// Diagnostics of the refinable construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinabilityReport {
    pub tol: f64,
    pub sigmas: Sigmas,
    pub max_sigma1: f64,
    pub max_sigma2: f64,
    /// `max (Σ2 - Σ1)` over first-stage letters in the support with `Σ1 ≥ 1 - tol`.
    pub max_excess: f64,
    /// Per first-stage letter on the support: how far the best non-negative
    /// mixture of second-stage tilts is from reproducing `β2(x|y1)`, as the
    /// largest relative error over source letters. `NaN` for letters that
    /// are skipped.
    pub markov_residuals: Vec<f64>,
    pub max_markov_residual: f64,
    pub passed: bool,
}

impl std::fmt::Display for RefinabilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max sigma1 {:.3e}, max sigma2 {:.3e}, max sigma2 - sigma1 {:.3e}, max mixture residual {:.3e} (tol {:.1e})",
            self.max_sigma1, self.max_sigma2, self.max_excess, self.max_markov_residual, self.tol
        )
    }
}

/// A certificate built from the two single-stage solutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinableCertificate {
    pub triple: LagrangeTriple,
    pub betas: Betas,
    pub lambda1_single: f64,
    pub lambda2_single: f64,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub d1: f64,
    pub d2: f64,
    /// `R(d1)` for the first-stage measure.
    pub r1: f64,
    /// `R(d2)` for the second-stage measure.
    pub r2: f64,
    /// Certified `R2` lower bound at `(d1, d2, R(d1))`.
    pub value: f64,
    /// Optimal first-stage output.
    pub py1: Pmf,
    /// Second-stage conditional reconstructed from the mixture weights.
    pub py2_given_y1: Kernel,
    pub report: RefinabilityReport,
}

impl RefinableCertificate {
    /// First-stage tilted information `j1(x) = -ln α1(x) - λ1 d1`.
    pub fn j1(&self) -> Vec<f64> {
        self.alpha1.iter().map(|a| -a.ln() - self.lambda1_single * self.d1).collect()
    }

    pub fn j2(&self) -> Vec<f64> {
        self.alpha2.iter().map(|a| -a.ln() - self.lambda2_single * self.d2).collect()
    }

    /// Successive-refinement tilted information at `(d1, d2, R(d1))`.
    pub fn tilted(&self) -> SrTiltedInfo {
        tilted_from_betas(&self.triple, &self.betas, self.d1, self.d2, self.r1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub run: RunOptions,
    pub tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            run: RunOptions {
                delta: 1e-11,
                ..RunOptions::default()
            },
            tol: 1e-6,
        }
    }
}

/// Builds the certificate
/// `β1 = α1^(ν1/(1+ν1)) α2^(1/(1+ν1))`,
/// `β2(x|y1) = exp(-λ1* d1(x,y1)) α2(x) / α1(x)`
/// from the single-stage solutions at `d1` and `d2`, with multipliers
/// `(ν1, ν1 λ1*, λ2*)`. Fails with [`Error::ConstraintViolated`] when the
/// feasibility functions exceed one, or when no conditional `P(y2|y1)`
/// reproduces `β2`, i.e. when the source is not successively refinable at
/// `(d1, d2)`.
pub fn refinable_construction(
    problem: &SrProblem,
    d1: f64,
    d2: f64,
    nu1: f64,
    opts: &RefineOptions,
) -> Result<RefinableCertificate> {
    if !nu1.is_finite() || nu1 < 0.0 {
        return Err(Error::InvalidArgument(format!("nu1 must be non-negative, got {nu1}")));
    }
    let (p1, p2) = (problem.first_stage(), problem.second_stage());
    let s1 = single::solve_at_distortion(&p1, d1, &opts.run)?;
    let s2 = single::solve_at_distortion(&p2, d2, &opts.run)?;
    let (l1, l2) = (s1.lambda, s2.lambda);
    let py1 = s1.run.final_state().py.clone();
    let py2 = s2.run.final_state().py.clone();
    let la1 = single::log_sigma_bar(&p1, l1, &py1)?;
    let la2 = single::log_sigma_bar(&p2, l2, &py2)?;

    let (nx, ny1, ny2) = (problem.nx(), problem.ny1(), problem.ny2());
    let s = 1.0 + nu1;
    let log_beta1: Vec<f64> = (0..nx).map(|x| (nu1 * la1[x] + la2[x]) / s).collect();
    let log_beta2: Vec<f64> = (0..nx)
        .flat_map(|x| (0..ny1).map(move |y1| (x, y1)))
        .map(|(x, y1)| -l1 * problem.d1.get(x, y1) + la2[x] - la1[x])
        .collect();
    let betas = Betas::from_logs(log_beta1, ny1, log_beta2)?;
    let triple = LagrangeTriple::new(nu1, nu1 * l1, l2)?;
    let sigmas = sigma_functions(problem, &triple, &betas)?;

    let px = problem.px.probs();
    let mut markov_residuals = vec![f64::NAN; ny1];
    let mut rows = Vec::with_capacity(ny1 * ny2);
    let mut max_excess = f64::NEG_INFINITY;
    for y1 in 0..ny1 {
        // Letters with Σ1 below one carry no optimal mass.
        if py1.get(y1) <= 0.0 || sigmas.sigma1[y1] < 1.0 - opts.tol {
            rows.extend_from_slice(py2.probs());
            continue;
        }
        for y2 in 0..ny2 {
            max_excess = max_excess.max(sigmas.sigma2.get(y1, y2) - sigmas.sigma1[y1]);
        }
        // Row x: exp(-λ2* d2(x, y2)) / β2(x|y1); target is the all-ones vector.
        let live: Vec<usize> = (0..nx).filter(|&x| px[x] > 0.0).collect();
        let a: Vec<f64> = live
            .iter()
            .flat_map(|&x| {
                let lb2 = betas.log_beta2(x, y1);
                (0..ny2).map(move |y2| (-l2 * problem.d2.get(x, y2) - lb2).exp())
            })
            .collect();
        let mut scale = vec![0.0f64; ny2];
        for r in 0..live.len() {
            for c in 0..ny2 {
                scale[c] = scale[c].max(a[r * ny2 + c]);
            }
        }
        let scaled: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, v)| if scale[i % ny2] > 0.0 { v / scale[i % ny2] } else { 0.0 })
            .collect();
        let sol = nnls(&scaled, live.len(), ny2, &vec![1.0; live.len()]);
        let weights: Vec<f64> = (0..ny2)
            .map(|c| if scale[c] > 0.0 { sol.weights[c] / scale[c] } else { 0.0 })
            .collect();
        let residual = (0..live.len())
            .map(|r| {
                let fit: f64 = (0..ny2).map(|c| a[r * ny2 + c] * weights[c]).sum();
                (fit - 1.0).abs()
            })
            .fold(0.0, f64::max);
        markov_residuals[y1] = residual;
        match Pmf::from_weights(weights) {
            Ok(w) => rows.extend_from_slice(w.probs()),
            Err(_) => rows.extend_from_slice(py2.probs()),
        }
    }
    let max_markov_residual = markov_residuals
        .iter()
        .filter(|r| !r.is_nan())
        .copied()
        .fold(0.0, f64::max);
    let (max_sigma1, max_sigma2) = (sigmas.max_sigma1(), sigmas.max_sigma2());
    let tol = opts.tol;
    let passed = max_sigma1 <= 1.0 + tol
        && max_sigma2 <= 1.0 + tol
        && max_excess <= tol
        && max_markov_residual <= tol;
    let report = RefinabilityReport {
        tol,
        sigmas,
        max_sigma1,
        max_sigma2,
        max_excess,
        markov_residuals,
        max_markov_residual,
        passed,
    };
    if !passed {
        return Err(Error::ConstraintViolated(Box::new(report)));
    }

    let r1 = s1.run.dual.f_value - l1 * d1;
    let r2 = s2.run.dual.f_value - l2 * d2;
    let value = triple.plane(betas.value(problem.px(), nu1), d1, d2, r1);
    Ok(RefinableCertificate {
        triple,
        betas,
        lambda1_single: l1,
        lambda2_single: l2,
        alpha1: la1.iter().map(|a| a.exp()).collect(),
        alpha2: la2.iter().map(|a| a.exp()).collect(),
        d1,
        d2,
        r1,
        r2,
        value,
        py1,
        py2_given_y1: Kernel::from_normalized(ny1, ny2, rows),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn binary_sr(p: f64) -> SrProblem {
        SrProblem::new(Pmf::new(vec![1.0 - p, p]).unwrap(), Matrix::hamming(2), Matrix::hamming(2)).unwrap()
    }

    fn uniform_start(p: &SrProblem) -> (Pmf, Kernel) {
        (
            Pmf::uniform(p.ny1()),
            Kernel::constant(p.ny1(), &Pmf::uniform(p.ny2())),
        )
    }

    #[test]
    fn zero_multipliers_converge_immediately() {
        let p = binary_sr(0.3);
        let (a, b) = uniform_start(&p);
        let t = LagrangeTriple::new(0.0, 0.0, 0.0).unwrap();
        let run = run_sr_blahut(&p, &t, &a, &b, &RunOptions::default()).unwrap();
        assert!(run.dual.converged);
        assert_abs_diff_eq!(run.dual.f_value, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn second_stage_only_reduces_to_single_stage() {
        let p = binary_sr(0.2);
        let (a, b) = uniform_start(&p);
        let l2 = 9f64.ln();
        let t = LagrangeTriple::new(0.0, 0.0, l2).unwrap();
        let run = run_sr_blahut(&p, &t, &a, &b, &RunOptions::default()).unwrap();
        let single = single::run_blahut(&p.second_stage(), l2, &Pmf::uniform(2), &RunOptions::default()).unwrap();
        assert_abs_diff_eq!(run.dual.f_value, single.dual.f_value, epsilon = 1e-8);
    }

    #[test]
    fn sigma_identities_hold_along_iterates() {
        let p = SrProblem::new(
            Pmf::new(vec![0.5, 0.3, 0.2]).unwrap(),
            Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap(),
            Matrix::hamming(3),
        )
        .unwrap();
        let t = LagrangeTriple::new(0.7, 1.1, 2.3).unwrap();
        let (a, b) = uniform_start(&p);
        let mut state = SrState::initial(&p, &a, &b).unwrap();
        for _ in 0..5 {
            let betas = update_betas(&p, &t, &state).unwrap();
            let sig = sigma_functions(&p, &t, &betas).unwrap();
            let m1: f64 = (0..2).map(|y| state.py1.get(y) * sig.sigma1[y]).sum();
            assert_abs_diff_eq!(m1, 1.0, epsilon = 1e-12);
            for y1 in 0..2 {
                let m2: f64 = (0..3).map(|y2| state.py2_given_y1.get(y1, y2) * sig.sigma2.get(y1, y2)).sum();
                assert_abs_diff_eq!(m2, sig.sigma1[y1], epsilon = 1e-12);
            }
            state = update_kernels(&p, &t, &state, betas).unwrap();
        }
    }

    #[test]
    fn refinable_symmetric_binary() {
        let p = binary_sr(0.5);
        let cert = refinable_construction(&p, 0.25, 0.1, 1.0, &RefineOptions::default()).unwrap();
        let h = crate::oracles::binary_entropy;
        assert_abs_diff_eq!(cert.value, 2f64.ln() - h(0.1), epsilon = 1e-7);
        assert_abs_diff_eq!(cert.r1, 2f64.ln() - h(0.25), epsilon = 1e-7);
        let q = (0.25 - 0.1) / (1.0 - 2.0 * 0.1);
        assert_abs_diff_eq!(cert.py2_given_y1.get(0, 1), q, epsilon = 1e-6);
    }

    #[test]
    fn zero_triple_surface_is_flat() {
        let p = binary_sr(0.5);
        let (a, b) = uniform_start(&p);
        let t = LagrangeTriple::new(0.0, 0.0, 0.0).unwrap();
        let run = run_sr_blahut(&p, &t, &a, &b, &RunOptions::default()).unwrap();
        let s = sr_envelope(&[run.dual]).unwrap();
        assert_eq!(s.evaluate(0.1, 0.05, 0.2), 0.0);
        assert!(matches!(sr_envelope(&[]), Err(Error::InsufficientSlopes { got: 0 })));
    }
}
