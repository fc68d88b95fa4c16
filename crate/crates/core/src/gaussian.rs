//! Successive refinement of a Gaussian source under squared error, with the
//! iteration carried out in closed form.
//!
//! Starting from Gaussian marginals `Y1 ~ N(0, v1)` and
//! `Y2 | Y1 ~ N(g Y1, w)`, every iterate of the generalized Blahut
//! iteration stays linear-Gaussian, so the whole state is a handful of
//! scalars. The second-stage conditional mean is tracked with its own gain
//! `g`, which starts at one and drifts once the posterior shrinks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::successive::{LagrangeTriple, SrDualPoint, SrSurface};

/// Scalar state of the Gaussian iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussParams {
    pub iteration: usize,
    /// `E[X²]`.
    pub source_var: f64,
    /// Variance of the first-stage output `Y1`.
    pub y1_var: f64,
    /// `E[Y2 | Y1 = y1] = y2_gain · y1`.
    pub y2_gain: f64,
    /// `Var[Y2 | Y1]`.
    pub y2_cond_var: f64,
    /// Tilt parameters of the last step.
    pub t1: f64,
    pub t2: f64,
    /// `Y1 | X = x ~ N(y1_x_gain · x, y1_x_var)`.
    pub y1_x_gain: f64,
    pub y1_x_var: f64,
    /// `X | Y1 = y ~ N(x_y1_gain · y, x_y1_var)`.
    pub x_y1_gain: f64,
    pub x_y1_var: f64,
    /// `Y2 | X = x, Y1 = y ~ N(y2_x_coef · x + y2_y1_coef · y, y2_xy1_var)`.
    pub y2_x_coef: f64,
    pub y2_y1_coef: f64,
    pub y2_xy1_var: f64,
    /// Dual objective of the last step; infinite initially.
    pub f_value: f64,
}

impl GaussParams {
    /// `Y1 ~ N(0, 1)` and `Y2 | Y1 ~ N(Y1, 1)` for a source of variance
    /// `source_var`.
    pub fn initial(source_var: f64) -> Result<Self> {
        if !(source_var > 0.0) || !source_var.is_finite() {
            return Err(Error::InvalidArgument(format!("source variance must be positive, got {source_var}")));
        }
        Ok(GaussParams {
            iteration: 0,
            source_var,
            y1_var: 1.0,
            y2_gain: 1.0,
            y2_cond_var: 1.0,
            t1: 0.0,
            t2: 0.0,
            y1_x_gain: 0.0,
            y1_x_var: 1.0,
            x_y1_gain: 0.0,
            x_y1_var: source_var,
            y2_x_coef: 0.0,
            y2_y1_coef: 1.0,
            y2_xy1_var: 1.0,
            f_value: f64::INFINITY,
        })
    }

    /// Tangency coordinates `(d1, d2, R1, R2)` of the current kernels.
    pub fn tangency(&self) -> (f64, f64, f64, f64) {
        let sx = self.source_var;
        let (h, s) = (self.y1_x_gain, self.y1_x_var);
        let (cx, cy, v2) = (self.y2_x_coef, self.y2_y1_coef, self.y2_xy1_var);
        let d1 = sx * (1.0 - h).powi(2) + s;
        let d2 = (1.0 - cx - cy * h).powi(2) * sx + cy * cy * s + v2;
        let r1 = 0.5 * ((h * h * sx + s) / s).ln();
        let post = sx * s / (h * h * sx + s);
        let r2 = r1 + 0.5 * (1.0 + cx * cx * post / v2).ln();
        (d1, d2, r1, r2)
    }
}

/// `M(a, t) = exp(-a t / (1 + 2t)) / sqrt(1 + 2t)`, the Gaussian average of
/// `exp(-t (Z - c)² / σ²)` with `a = c²/σ²`.
pub fn m_function(a: f64, t: f64) -> f64 {
    (-a * t / (1.0 + 2.0 * t)).exp() / (1.0 + 2.0 * t).sqrt()
}

/// One closed-form iteration.
pub fn gaussian_sr_step(params: &GaussParams, triple: &LagrangeTriple) -> GaussParams {
    let (nu1, l1, l2) = (triple.nu1, triple.lambda1, triple.lambda2);
    let sx = params.source_var;
    let (v1, g, w) = (params.y1_var, params.y2_gain, params.y2_cond_var);
    let s = 1.0 + nu1;

    // ln β2(x|y1) = -½ ln(1+2t2) - κ2 (x - g y1)².
    let t2 = l2 * w;
    let kappa2 = l2 / (1.0 + 2.0 * t2);
    // [β2 exp(-λ1 d1)]^(1/(1+ν1)) ∝ exp(-a (x - g y1)² - b (x - y1)²).
    let a = kappa2 / s;
    let b = l1 / s;
    let big_a = a * g * g + b;
    let t1 = big_a * v1;
    // Quadratic exponent in y1: -A (y1 - m x)² - C x².
    let (m, c) = if big_a > 0.0 {
        ((a * g + b) / big_a, a * b * (g - 1.0).powi(2) / big_a)
    } else {
        (0.0, 0.0)
    };
    // ln β1(x) = -ln(1+2t2)/(2(1+ν1)) - ½ ln(1+2t1) - q x².
    let q = c + big_a * m * m / (1.0 + 2.0 * t1);
    let f_value = 0.5 * (1.0 + 2.0 * t2).ln() + 0.5 * s * (1.0 + 2.0 * t1).ln() + s * q * sx;

    // New first-stage kernel and marginal.
    let y1_x_gain = 2.0 * v1 * (a * g + b) / (1.0 + 2.0 * t1);
    let y1_x_var = v1 / (1.0 + 2.0 * t1);
    let y1_var = y1_x_gain * y1_x_gain * sx + y1_x_var;
    let x_y1_gain = y1_x_gain * sx / y1_var;
    let x_y1_var = sx - y1_x_gain * y1_x_gain * sx * sx / y1_var;

    // Second stage: Y2 | X, Y1 ~ N((g y1 + 2 t2 x)/(1+2t2), w/(1+2t2)).
    let y2_x_coef = 2.0 * t2 / (1.0 + 2.0 * t2);
    let y2_y1_coef = g / (1.0 + 2.0 * t2);
    let y2_xy1_var = w / (1.0 + 2.0 * t2);
    let y2_gain = y2_y1_coef + y2_x_coef * x_y1_gain;
    let y2_cond_var = y2_x_coef * y2_x_coef * x_y1_var + y2_xy1_var;

    GaussParams {
        iteration: params.iteration + 1,
        source_var: sx,
        y1_var,
        y2_gain,
        y2_cond_var,
        t1,
        t2,
        y1_x_gain,
        y1_x_var,
        x_y1_gain,
        x_y1_var,
        y2_x_coef,
        y2_y1_coef,
        y2_xy1_var,
        f_value,
    }
}

/// Runs `k` closed-form iterations from [`GaussParams::initial`].
pub fn run_gaussian(source_var: f64, triple: &LagrangeTriple, k: usize) -> Result<Vec<GaussParams>> {
    let mut trace = vec![GaussParams::initial(source_var)?];
    for _ in 0..k {
        let next = gaussian_sr_step(trace.last().expect("non-empty"), triple);
        trace.push(next);
    }
    Ok(trace)
}

/// Slice of the Gaussian rate region at a fixed first stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Slice {
    pub nu1: f64,
    pub lambda1: f64,
    /// First-stage distortion matched by `λ1`, `ν1 / (2 λ1)`.
    pub d1: f64,
    /// `R(d1) = ½ ln(1/d1)`.
    pub r1: f64,
    pub surface: SrSurface,
}

/// One row of the slice table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub d2: f64,
    pub estimate: f64,
    pub analytic: f64,
    pub abs_error: f64,
}

impl Fig3Slice {
    /// Envelope estimate of `R2(d1, d2, R(d1))`.
    pub fn estimate(&self, d2: f64) -> f64 {
        self.surface.evaluate(self.d1, d2, self.r1)
    }

    pub fn rows(&self, d2_grid: &[f64]) -> Vec<SliceRow> {
        d2_grid
            .iter()
            .map(|&d2| {
                let estimate = self.estimate(d2);
                let analytic = 0.5 * (1.0 / d2).ln();
                SliceRow {
                    d2,
                    estimate,
                    analytic,
                    abs_error: (estimate - analytic).abs(),
                }
            })
            .collect()
    }
}

/// Default second-stage slopes: 31 geometric samples whose tangent points
/// cover `d2 ∈ [0.05, 0.9]` on a unit-variance source.
pub fn default_lambda2_sweep() -> Vec<f64> {
    let (lo, hi): (f64, f64) = (1.0 / (2.0 * 0.9), 1.0 / (2.0 * 0.05));
    (0..31)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / 30.0).exp())
        .collect()
}

/// Runs `k` iterations for every `λ2` on a unit-variance source and
/// collects the supporting planes.
pub fn reproduce_fig3(lambda2s: &[f64], k: usize, nu1: f64, lambda1: f64) -> Result<Fig3Slice> {
    if lambda2s.is_empty() {
        return Err(Error::InsufficientSlopes { got: 0 });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("at least one iteration is needed".into()));
    }
    if !(lambda1 > 0.0) {
        return Err(Error::InvalidArgument("lambda1 must be positive to fix d1".into()));
    }
    let triples = lambda2s
        .iter()
        .map(|&l2| LagrangeTriple::new(nu1, lambda1, l2))
        .collect::<Result<Vec<_>>>()?;
    let duals = par::try_map(&triples, |t| -> Result<SrDualPoint> {
        let trace = run_gaussian(1.0, t, k)?;
        let last = trace.last().expect("non-empty");
        let (d1, d2, r1, r2) = last.tangency();
        let prev = trace[trace.len() - 2].f_value;
        Ok(SrDualPoint {
            triple: *t,
            f_value: last.f_value,
            converged: prev - last.f_value <= 1e-6,
            iterations_used: k,
            gap_bound: 0.0,
            delta: prev - last.f_value,
            d1,
            d2,
            r1,
            r2,
        })
    })?;
    let d1 = nu1 / (2.0 * lambda1);
    Ok(Fig3Slice {
        nu1,
        lambda1,
        d1,
        r1: 0.5 * (1.0 / d1).ln(),
        surface: crate::successive::sr_envelope(&duals)?,
    })
}
