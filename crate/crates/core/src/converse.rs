//! Finite-blocklength converse bounds for successive refinement.
//!
//! A certificate `(β1, β2, ν1, λ1, λ2)` whose feasibility functions stay
//! below one yields, for any code, per-realization information estimates
//!
//! ```text
//! F1 = ln(β2(X|Y1)^(1/(1+ν1)) / β1(X)) - λ1 d1/(1+ν1)
//! F2 = ln(β2(X|Y1)^(-ν1/(1+ν1)) / β1(X)) - λ1 d1/(1+ν1) - λ2 d2
//! F  = ν1 (F1 - ln M1) + F2
//! ```
//!
//! whose tails, restricted to correct decoding, are at most `exp(-γ)`.
//! The corollaries turn this into lower bounds on the excess-distortion
//! probabilities of blocklength-`n` codes for memoryless sources.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::par;
use crate::prob::{stable_sum, Kernel, Matrix, Pmf};
use crate::successive::{sigma_functions, Betas, LagrangeTriple, RefinableCertificate, Sigmas, SrProblem};

/// Slack allowed on the feasibility functions before a certificate is
/// rejected.
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// Largest number of types enumerated exactly before switching to Monte Carlo.
pub const EXACT_TYPE_LIMIT: f64 = 1e7;

/// Normalizers and multipliers used as a lower-bound certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub triple: LagrangeTriple,
    pub betas: Betas,
}

impl Certificate {
    pub fn sigmas(&self, problem: &SrProblem) -> Result<Sigmas> {
        sigma_functions(problem, &self.triple, &self.betas)
    }

    /// Fails with [`Error::CertificateInvalid`] when some `Σ` exceeds `1 + tol`.
    pub fn check(&self, problem: &SrProblem, tol: f64) -> Result<()> {
        let s = self.sigmas(problem)?;
        let (max_sigma1, max_sigma2) = (s.max_sigma1(), s.max_sigma2());
        if max_sigma1 > 1.0 + tol || max_sigma2 > 1.0 + tol {
            return Err(Error::CertificateInvalid { max_sigma1, max_sigma2 });
        }
        Ok(())
    }

    /// Rescales `β1` so that both feasibility functions are at most one.
    pub fn made_feasible(problem: &SrProblem, triple: LagrangeTriple, betas: Betas) -> Result<Self> {
        let s = sigma_functions(problem, &triple, &betas)?;
        let worst = s.max_sigma1().max(s.max_sigma2());
        let betas = if worst > 1.0 { betas.scale_beta1(worst.ln()) } else { betas };
        Ok(Certificate { triple, betas })
    }
}

impl From<&RefinableCertificate> for Certificate {
    fn from(c: &RefinableCertificate) -> Self {
        Certificate {
            triple: c.triple,
            betas: c.betas.clone(),
        }
    }
}

/// A two-stage code: `W1 ∈ {0..M1}`, `W2 ∈ {0..⌊M2/M1⌋}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeSpec {
    pub m1: usize,
    pub m2: usize,
    /// `P(w1 | x)`.
    pub enc1: Kernel,
    /// `P(w2 | x, w1)`, rows indexed by `x * M1 + w1`.
    pub enc2: Kernel,
    /// First-stage reproduction for each `w1`.
    pub dec1: Vec<usize>,
    /// Second-stage reproduction for each `w1 * ⌊M2/M1⌋ + w2`.
    pub dec2: Vec<usize>,
}

impl CodeSpec {
    pub fn new(m1: usize, m2: usize, enc1: Kernel, enc2: Kernel, dec1: Vec<usize>, dec2: Vec<usize>) -> Result<Self> {
        if m1 == 0 || m2 < m1 {
            return Err(Error::InvalidArgument(format!("need 1 <= M1 <= M2, got M1 = {m1}, M2 = {m2}")));
        }
        let l = m2 / m1;
        let nx = enc1.input_size();
        if enc1.output_size() != m1 || enc2.input_size() != nx * m1 || enc2.output_size() != l {
            return Err(Error::ShapeMismatch("encoder shapes do not match (M1, M2)".into()));
        }
        if dec1.len() != m1 || dec2.len() != m1 * l {
            return Err(Error::ShapeMismatch("decoder tables do not cover every message".into()));
        }
        Ok(CodeSpec {
            m1,
            m2,
            enc1,
            enc2,
            dec1,
            dec2,
        })
    }

    /// A code with deterministic encoders `w1 = f1(x)`, `w2 = f2(x, w1)`.
    pub fn deterministic(
        m1: usize,
        m2: usize,
        f1: &[usize],
        f2: &[usize],
        dec1: Vec<usize>,
        dec2: Vec<usize>,
    ) -> Result<Self> {
        if m1 == 0 || m2 < m1 {
            return Err(Error::InvalidArgument(format!("need 1 <= M1 <= M2, got M1 = {m1}, M2 = {m2}")));
        }
        let l = m2 / m1;
        let nx = f1.len();
        if f2.len() != nx * m1 {
            return Err(Error::ShapeMismatch("second encoder must cover every (x, w1)".into()));
        }
        let one_hot = |n: usize, at: usize| -> Result<Vec<f64>> {
            if at >= n {
                return Err(Error::OutOfRange(format!("message {at} outside 0..{n}")));
            }
            Ok(Pmf::point_mass(n, at).probs().to_vec())
        };
        let enc1 = Kernel::from_rows(f1.iter().map(|&w| one_hot(m1, w)).collect::<Result<_>>()?)?;
        let enc2 = Kernel::from_rows(f2.iter().map(|&w| one_hot(l, w)).collect::<Result<_>>()?)?;
        CodeSpec::new(m1, m2, enc1, enc2, dec1, dec2)
    }

    pub fn second_messages(&self) -> usize {
        self.m2 / self.m1
    }
}

/// One atom of the joint distribution of the information estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FAtom {
    pub prob: f64,
    pub x: usize,
    pub y1: usize,
    pub y2: usize,
    pub f1: f64,
    pub f2: f64,
    pub f: f64,
    /// `d1(x, y1)` and `d2(x, y2)`.
    pub dist1: f64,
    pub dist2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FTerms {
    pub m1: usize,
    pub m2: usize,
    pub d1: f64,
    pub d2: f64,
    pub atoms: Vec<FAtom>,
}

/// Per-`(x, y1)` values `(F1, F2)` of a certificate at targets `(d1, d2)`.
pub fn f_pair(cert: &Certificate, x: usize, y1: usize, d1: f64, d2: f64) -> (f64, f64) {
    let t = &cert.triple;
    let s = 1.0 + t.nu1;
    let lb1 = cert.betas.log_beta1()[x];
    let lb2 = cert.betas.log_beta2(x, y1);
    let shift = t.lambda1 * d1 / s;
    let f1 = lb2 / s - lb1 - shift;
    let f2 = -t.nu1 * lb2 / s - lb1 - shift - t.lambda2 * d2;
    (f1, f2)
}

/// Enumerates `(x, w1, w2)` and records the information estimates and
/// distortions of every realization with positive probability.
pub fn evaluate_f_terms(problem: &SrProblem, cert: &Certificate, code: &CodeSpec, d1: f64, d2: f64) -> Result<FTerms> {
    cert.check(problem, CERTIFICATE_TOL)?;
    if code.enc1.input_size() != problem.nx() {
        return Err(Error::ShapeMismatch("code input alphabet differs from the source".into()));
    }
    if code.dec1.iter().any(|&y| y >= problem.ny1()) || code.dec2.iter().any(|&y| y >= problem.ny2()) {
        return Err(Error::OutOfRange("decoder output outside the reproduction alphabet".into()));
    }
    let l = code.second_messages();
    let log_m1 = (code.m1 as f64).ln();
    let mut atoms = Vec::new();
    for (x, &px) in problem.px().probs().iter().enumerate() {
        if px <= 0.0 {
            continue;
        }
        for w1 in 0..code.m1 {
            let p1 = px * code.enc1.get(x, w1);
            if p1 <= 0.0 {
                continue;
            }
            let y1 = code.dec1[w1];
            let (f1, f2) = f_pair(cert, x, y1, d1, d2);
            for w2 in 0..l {
                let prob = p1 * code.enc2.get(x * code.m1 + w1, w2);
                if prob <= 0.0 {
                    continue;
                }
                let y2 = code.dec2[w1 * l + w2];
                atoms.push(FAtom {
                    prob,
                    x,
                    y1,
                    y2,
                    f1,
                    f2,
                    f: cert.triple.nu1 * (f1 - log_m1) + f2,
                    dist1: problem.d1().get(x, y1),
                    dist2: problem.d2().get(x, y2),
                });
            }
        }
    }
    Ok(FTerms {
        m1: code.m1,
        m2: code.m2,
        d1,
        d2,
        atoms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Residuals {
    /// `P[{F1 ≥ ln M1 + γ1} ∩ {d1(X,Y1) ≤ d1}]`.
    pub lhs1: f64,
    /// `P[{F2 ≥ ln M2 + γ2} ∩ {d1(X,Y1) ≤ d1} ∩ {d2(X,Y2) ≤ d2}]`.
    pub lhs2: f64,
    pub bound1: f64,
    pub bound2: f64,
    /// `bound - lhs`; non-negative whenever the theorem holds.
    pub margin1: f64,
    pub margin2: f64,
}

impl Theorem3Residuals {
    pub fn holds(&self) -> bool {
        self.margin1 >= 0.0 && self.margin2 >= 0.0
    }
}

/// Relative slack used when comparing an estimate against a threshold, so
/// that ties are not decided by rounding.
const TIE_TOL: f64 = 1e-12;

fn at_least(v: f64, threshold: f64) -> bool {
    v >= threshold - TIE_TOL * threshold.abs().max(1.0)
}

pub fn theorem3_residuals(terms: &FTerms, gamma1: f64, gamma2: f64) -> Result<Theorem3Residuals> {
    if !(gamma1 > 0.0 && gamma2 > 0.0) {
        return Err(Error::InvalidArgument("gamma1 and gamma2 must be positive".into()));
    }
    let t1 = (terms.m1 as f64).ln() + gamma1;
    let t2 = (terms.m2 as f64).ln() + gamma2;
    let ok1 = |a: &FAtom| a.dist1 <= terms.d1 + TIE_TOL;
    let ok2 = |a: &FAtom| ok1(a) && a.dist2 <= terms.d2 + TIE_TOL;
    let lhs1 = stable_sum(terms.atoms.iter().filter(|a| ok1(a) && at_least(a.f1, t1)).map(|a| a.prob));
    let lhs2 = stable_sum(terms.atoms.iter().filter(|a| ok2(a) && at_least(a.f2, t2)).map(|a| a.prob));
    let (bound1, bound2) = ((-gamma1).exp(), (-gamma2).exp());
    Ok(Theorem3Residuals {
        lhs1,
        lhs2,
        bound1,
        bound2,
        margin1: bound1 - lhs1,
        margin2: bound2 - lhs2,
    })
}

/// Per-letter statistics defining each corollary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Corollary {
    /// Single-stage tilted informations of the two stages.
    One { j1: Vec<f64>, j2: Vec<f64> },
    /// First-stage estimate `F1` tabulated over `(x, y1)`, which must not
    /// depend on `y1`, and the per-letter part `ν1 F1 + F2` of `F`.
    Two { nu1: f64, f1: Matrix, f_base: Vec<f64> },
    /// Per-letter part `(1+ν1) ln 1/β1 - λ1 d1 - λ2 d2` of the tilted
    /// information for successive refinement.
    Three { nu1: f64, j_base: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    Cor1,
    Cor2,
    Cor3,
}

impl Corollary {
    pub fn which(&self) -> Which {
        match self {
            Corollary::One { .. } => Which::Cor1,
            Corollary::Two { .. } => Which::Cor2,
            Corollary::Three { .. } => Which::Cor3,
        }
    }

    /// The statistics induced by a refinable certificate, for which the
    /// first-stage estimate may be taken to be `j1`.
    pub fn from_refinable(cert: &RefinableCertificate, which: Which) -> Result<Self> {
        let (j1, j2) = (cert.j1(), cert.j2());
        let nu1 = cert.triple.nu1;
        let base: Vec<f64> = j1.iter().zip(&j2).map(|(a, b)| nu1 * a + b).collect();
        Ok(match which {
            Which::Cor1 => Corollary::One { j1, j2 },
            Which::Cor2 => {
                let ny1 = cert.py1.len();
                let f1 = Matrix::from_fn(j1.len(), ny1, |x, _| j1[x])?;
                Corollary::Two { nu1, f1, f_base: base }
            }
            Which::Cor3 => Corollary::Three {
                nu1,
                j_base: cert.tilted().values.iter().map(|v| v + nu1 * cert.r1).collect(),
            },
        })
    }
}

/// Blocklength, code sizes, slack parameters and sampling controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSetup {
    pub n: usize,
    pub log_m1: f64,
    pub log_m2: f64,
    /// Defaults to `ln n` (or `ln 2` when `n = 1`).
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub seed: u64,
    pub mc_samples: usize,
    /// Type counts above this switch to Monte Carlo.
    pub exact_type_limit: f64,
}

impl BoundSetup {
    pub fn new(n: usize, log_m1: f64, log_m2: f64) -> Self {
        BoundSetup {
            n,
            log_m1,
            log_m2,
            gamma1: None,
            gamma2: None,
            seed: 0,
            mc_samples: 1_000_000,
            exact_type_limit: EXACT_TYPE_LIMIT,
        }
    }

    pub fn default_gamma(n: usize) -> f64 {
        (n.max(2) as f64).ln()
    }

    fn gammas(&self) -> (f64, f64) {
        let g = Self::default_gamma(self.n);
        (self.gamma1.unwrap_or(g), self.gamma2.unwrap_or(g))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EvalMethod {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// A probability together with a 99% interval (degenerate when exact).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBound {
    /// Lower bound before flooring; lies in `[-2, 1]`.
    pub raw: f64,
    /// `max(raw, 0)`.
    pub value: f64,
    pub vacuous: bool,
    pub prob: ProbEstimate,
}

impl EpsilonBound {
    fn new(prob: ProbEstimate, penalty: f64) -> Self {
        let raw = prob.lower - penalty;
        EpsilonBound {
            raw,
            value: raw.max(0.0),
            vacuous: raw <= 0.0,
            prob,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub which: Which,
    pub n: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Bound on the first-stage excess probability (absent for `Cor3`).
    pub eps1: Option<EpsilonBound>,
    pub eps2: EpsilonBound,
    pub method: EvalMethod,
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for i in 1..=n {
        out[i] = out[i - 1] + (i as f64).ln();
    }
    out
}

/// Number of types of length-`n` sequences over `k` letters.
fn type_count(n: usize, k: usize) -> f64 {
    // C(n + k - 1, k - 1) in floating point.
    let mut c = 1.0;
    for i in 1..k {
        c *= (n + i) as f64 / i as f64;
    }
    c
}

/// Exact joint law of the per-letter score sums over `n` i.i.d. letters,
/// as `(sums, probability)` per type.
pub fn type_distribution(px: &Pmf, scores: &[&[f64]], n: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    types_up_to(px, scores, n, EXACT_TYPE_LIMIT)
}

fn types_up_to(px: &Pmf, scores: &[&[f64]], n: usize, limit: f64) -> Result<Vec<(Vec<f64>, f64)>> {
    for s in scores {
        if s.len() != px.len() {
            return Err(Error::ShapeMismatch("score vector length differs from the source".into()));
        }
    }
    let letters: Vec<usize> = px.support().collect();
    let k = letters.len();
    if type_count(n, k) > limit {
        return Err(Error::TooLarge(format!("{} types for n = {n}", type_count(n, k))));
    }
    let lf = ln_factorials(n);
    let lp: Vec<f64> = letters.iter().map(|&x| px.get(x).ln()).collect();
    let mut out = Vec::new();
    let mut counts = vec![0usize; k];

    fn rec(
        i: usize,
        left: usize,
        counts: &mut Vec<usize>,
        ctx: &(&[usize], &[f64], &[f64], &[&[f64]], usize),
        out: &mut Vec<(Vec<f64>, f64)>,
    ) {
        let (letters, lp, lf, scores, n) = *ctx;
        let k = letters.len();
        if i + 1 == k {
            counts[i] = left;
            let mut logp = lf[n];
            for j in 0..k {
                logp += counts[j] as f64 * lp[j] - lf[counts[j]];
            }
            let sums = scores
                .iter()
                .map(|s| (0..k).map(|j| counts[j] as f64 * s[letters[j]]).sum())
                .collect();
            out.push((sums, logp.exp()));
            return;
        }
        for c in 0..=left {
            counts[i] = c;
            rec(i + 1, left - c, counts, ctx, out);
        }
    }
    rec(0, n, &mut counts, &(&letters, &lp, &lf, scores, n), &mut out);
    Ok(out)
}

const MC_CHUNK: usize = 1 << 15;

fn clopper_pearson(hits: usize, trials: usize) -> (f64, f64) {
    let alpha = 0.01;
    let lower = if hits == 0 {
        0.0
    } else {
        Beta::new(hits as f64, (trials - hits + 1) as f64)
            .map(|b| b.inverse_cdf(alpha / 2.0))
            .unwrap_or(0.0)
    };
    let upper = if hits == trials {
        1.0
    } else {
        Beta::new((hits + 1) as f64, (trials - hits) as f64)
            .map(|b| b.inverse_cdf(1.0 - alpha / 2.0))
            .unwrap_or(1.0)
    };
    (lower, upper)
}

/// Probabilities of several events of the score sums. Exact by type
/// enumeration when feasible, otherwise Monte Carlo with a 99%
/// Clopper–Pearson interval.
fn event_probabilities(
    px: &Pmf,
    scores: &[&[f64]],
    setup: &BoundSetup,
    events: &[&(dyn Fn(&[f64]) -> bool + Sync)],
) -> Result<(Vec<ProbEstimate>, EvalMethod)> {
    let n = setup.n;
    match types_up_to(px, scores, n, setup.exact_type_limit) {
        Ok(types) => {
            let probs = events
                .iter()
                .map(|ev| {
                    let v = stable_sum(types.iter().filter(|(s, _)| ev(s)).map(|(_, p)| *p)).clamp(0.0, 1.0);
                    ProbEstimate {
                        value: v,
                        lower: v,
                        upper: v,
                    }
                })
                .collect();
            Ok((probs, EvalMethod::Exact))
        }
        Err(Error::TooLarge(_)) => {
            let samples = setup.mc_samples;
            if samples == 0 {
                return Err(Error::InvalidArgument("Monte Carlo needs a positive sample count".into()));
            }
            let cdf: Vec<f64> = px
                .probs()
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect();
            let chunks = samples.div_ceil(MC_CHUNK);
            let per_chunk = par::map_range(chunks, |c| {
                let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
                rng.set_stream(c as u64);
                let count = MC_CHUNK.min(samples - c * MC_CHUNK);
                let mut hits = vec![0usize; events.len()];
                let mut sums = vec![0.0; scores.len()];
                for _ in 0..count {
                    sums.iter_mut().for_each(|s| *s = 0.0);
                    for _ in 0..n {
                        let u: f64 = rng.gen();
                        let x = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                        for (s, sc) in sums.iter_mut().zip(scores) {
                            *s += sc[x];
                        }
                    }
                    for (h, ev) in hits.iter_mut().zip(events) {
                        if ev(&sums) {
                            *h += 1;
                        }
                    }
                }
                hits
            });
            let probs = (0..events.len())
                .map(|e| {
                    let hits: usize = per_chunk.iter().map(|h| h[e]).sum();
                    let (lower, upper) = clopper_pearson(hits, samples);
                    ProbEstimate {
                        value: hits as f64 / samples as f64,
                        lower,
                        upper,
                    }
                })
                .collect();
            Ok((probs, EvalMethod::MonteCarlo { samples, seed: setup.seed }))
        }
        Err(e) => Err(e),
    }
}

/// Lower bounds on the excess-distortion probabilities of any
/// blocklength-`n` code with `ln M1`, `ln M2` nats.
pub fn corollary_bounds(px: &Pmf, family: &Corollary, setup: &BoundSetup) -> Result<BoundResult> {
    if setup.n == 0 {
        return Err(Error::InvalidArgument("blocklength must be positive".into()));
    }
    let (g1, g2) = setup.gammas();
    if !(g1 > 0.0 && g2 > 0.0) {
        return Err(Error::InvalidArgument("gamma1 and gamma2 must be positive".into()));
    }
    let (lm1, lm2) = (setup.log_m1, setup.log_m2);
    let (e1, e2) = ((-g1).exp(), (-g2).exp());
    let check_len = |v: &[f64]| -> Result<()> {
        if v.len() != px.len() {
            return Err(Error::ShapeMismatch("per-letter statistic length differs from the source".into()));
        }
        Ok(())
    };
    let (eps1, eps2, method) = match family {
        Corollary::One { j1, j2 } => {
            check_len(j1)?;
            check_len(j2)?;
            let t1 = lm1 + g1;
            let t2 = lm2 + g2;
            let ev1 = move |s: &[f64]| at_least(s[0], t1);
            let ev2 = move |s: &[f64]| at_least(s[1], t2);
            let (p, m) = event_probabilities(px, &[j1, j2], setup, &[&ev1, &ev2])?;
            (Some(EpsilonBound::new(p[0], e1)), EpsilonBound::new(p[1], e2), m)
        }
        Corollary::Two { nu1, f1, f_base } => {
            check_len(f_base)?;
            if f1.rows() != px.len() {
                return Err(Error::ShapeMismatch("F1 table rows differ from the source".into()));
            }
            let spread = (0..f1.rows())
                .map(|x| {
                    let r = f1.row(x);
                    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
                    hi - lo
                })
                .fold(0.0, f64::max);
            if spread > 1e-9 * f1.data().iter().fold(1.0f64, |m, v| m.max(v.abs())) {
                return Err(Error::F1NotSourceOnly { spread });
            }
            let f1x: Vec<f64> = (0..f1.rows()).map(|x| f1.get(x, 0)).collect();
            let nu1 = *nu1;
            let t1 = lm1 + g1;
            let tf = lm2 + nu1 * g1 + g2;
            let ev1 = move |s: &[f64]| at_least(s[0], t1);
            let ev_union = move |s: &[f64]| at_least(s[1] - nu1 * lm1, tf) || at_least(s[0], t1);
            let (p, m) = event_probabilities(px, &[&f1x, f_base], setup, &[&ev1, &ev_union])?;
            (Some(EpsilonBound::new(p[0], e1)), EpsilonBound::new(p[1], e1 + e2), m)
        }
        Corollary::Three { nu1, j_base } => {
            check_len(j_base)?;
            let nu1 = *nu1;
            let tf = lm2 + nu1 * g1 + g2;
            let ev = move |s: &[f64]| at_least(s[0] - nu1 * lm1, tf);
            let (p, m) = event_probabilities(px, &[j_base], setup, &[&ev])?;
            (None, EpsilonBound::new(p[0], e1 + e2), m)
        }
    };
    Ok(BoundResult {
        which: family.which(),
        n: setup.n,
        gamma1: g1,
        gamma2: g2,
        eps1,
        eps2,
        method,
    })
}

/// Smallest `ln M` compatible with excess probability `epsilon` under the
/// single-stage bound `ε ≥ P[Σ j ≥ ln M + γ] - e^{-γ}`, maximized over the
/// supplied `γ` values. Uses the exact law of the sum.
pub fn cor1_min_log_m(px: &Pmf, j: &[f64], n: usize, epsilon: f64, gammas: &[f64]) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::OutOfRange(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let mut atoms: Vec<(f64, f64)> = type_distribution(px, &[j], n)?
        .into_iter()
        .map(|(s, p)| (s[0], p))
        .collect();
    atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = f64::NEG_INFINITY;
    for &g in gammas.iter().filter(|&&g| g > 0.0) {
        let theta = epsilon + (-g).exp();
        if theta >= 1.0 {
            continue;
        }
        // Largest atom s with P[S ≥ s] > θ.
        let mut tail = 0.0;
        for &(s, p) in &atoms {
            tail += p;
            if tail > theta {
                best = best.max(s - g);
                break;
            }
        }
    }
    Ok(best)
}

/// `n R + sqrt(n V) Q^{-1}(ε)` with `R`, `V` the mean and variance of the
/// per-letter tilted information. The `O(ln n)` term is not included.
pub fn normal_approximation(px: &Pmf, tilted: &[f64], n: usize, epsilon: f64) -> Result<f64> {
    if tilted.len() != px.len() {
        return Err(Error::ShapeMismatch("tilted information length differs from the source".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::OutOfRange(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let mean = px.mean(tilted);
    let var = px.variance(tilted);
    if var <= 1e-14 * mean.abs().max(1.0) {
        return Err(Error::ZeroVariance);
    }
    let q_inv = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - epsilon);
    let n = n as f64;
    Ok(n * mean + (n * var).sqrt() * q_inv)
}
