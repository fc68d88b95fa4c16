//! The five experiment commands.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use refine_rd::converse::{corollary_bounds, BoundSetup, Corollary, EvalMethod, Which};
use refine_rd::gaussian::{default_lambda2_sweep, reproduce_fig3};
use refine_rd::oracles::{brute_force_dual, brute_force_sr_dual};
use refine_rd::single::{sweep, RunOptions, SlopeGrid};
use refine_rd::successive::{
    refinable_construction, sr_sweep, verify_sr_optimality, LagrangeTriple, RefineOptions, SrProblem,
};

use crate::error::CliError;
use crate::output::{Cell, Table, Units};
use crate::problem_io::Problem;

/// `lo:hi:count:geom` or `lo:hi:count:lin`; the last field also accepts
/// `true`/`false` and defaults to geometric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeSpec(pub SlopeGrid);

impl FromStr for SlopeSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(format!("expected lo:hi:count[:geom|lin], got {s:?}"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
        let count = parts[2].trim().parse::<usize>().map_err(|e| format!("{:?}: {e}", parts[2]))?;
        let geometric = match parts.get(3).map(|p| p.trim()) {
            None | Some("geom") | Some("true") => true,
            Some("lin") | Some("false") => false,
            Some(other) => return Err(format!("spacing must be geom or lin, got {other:?}")),
        };
        Ok(SlopeSpec(SlopeGrid {
            lo: num(parts[0])?,
            hi: num(parts[1])?,
            count,
            geometric,
        }))
    }
}

/// Settings shared by every command.
#[derive(Clone, Debug)]
pub struct Common {
    pub max_iters: Option<usize>,
    pub delta: f64,
    pub units: Units,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Common {
    fn run_options(&self) -> RunOptions {
        RunOptions {
            max_iters: self.max_iters.unwrap_or(RunOptions::default().max_iters),
            delta: self.delta,
            record_states: false,
        }
    }

    fn table(&self, header: &[&str]) -> Result<Table, CliError> {
        Table::create(self.out.as_deref(), header)
    }
}

fn slopes(grid: &SlopeGrid) -> Result<Vec<f64>, CliError> {
    if grid.count == 0 {
        return Err(CliError::Validation("slope grid is empty".into()));
    }
    Ok(grid.values()?)
}

fn triples(nu1: f64, lambda1: f64, lambda2s: &[f64]) -> Result<Vec<LagrangeTriple>, CliError> {
    lambda2s
        .iter()
        .map(|&l2| LagrangeTriple::new(nu1, lambda1, l2).map_err(CliError::from))
        .collect()
}

/// Single-stage sweep: `lambda, F, iterations, converged, d, R`.
pub fn rd(problem: &Problem, grid: &SlopeGrid, c: &Common) -> Result<(), CliError> {
    let p = problem.first_stage();
    let runs = sweep(&p, &slopes(grid)?, &c.run_options())?;
    let mut t = c.table(&["lambda", "F", "iterations", "converged", "d", "R"])?;
    for r in &runs {
        let d = &r.dual;
        t.row(&[
            Cell::Num(d.lambda),
            Cell::Num(c.units.info(d.f_value)),
            Cell::Int(d.iterations_used as u64),
            Cell::Bool(d.converged),
            Cell::Num(d.distortion),
            Cell::Num(c.units.info(d.rate)),
        ])?;
    }
    t.finish()
}

/// Where the feasibility diagnostics of `sr` go: the explicit path, or
/// `<out>.sigma.csv`, or nowhere when the table goes to stdout.
pub fn diagnostics_path(out: Option<&Path>, explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        out.map(|o| {
            let mut s = o.as_os_str().to_owned();
            s.push(".sigma.csv");
            PathBuf::from(s)
        })
    })
}

/// Successive-refinement sweep over `λ2` at fixed `(ν1, λ1)`:
/// `nu1, lambda1, lambda2, F, d1, d2, R1, R2`.
pub fn sr(
    problem: &SrProblem,
    nu1: f64,
    lambda1: f64,
    grid: &SlopeGrid,
    diag: Option<&Path>,
    c: &Common,
) -> Result<(), CliError> {
    let ts = triples(nu1, lambda1, &slopes(grid)?)?;
    let runs = sr_sweep(problem, &ts, &c.run_options())?;
    let mut t = c.table(&["nu1", "lambda1", "lambda2", "F", "d1", "d2", "R1", "R2"])?;
    for r in &runs {
        let d = &r.dual;
        t.row(&[
            Cell::Num(d.triple.nu1),
            Cell::Num(d.triple.lambda1),
            Cell::Num(d.triple.lambda2),
            Cell::Num(c.units.info(d.f_value)),
            Cell::Num(d.d1),
            Cell::Num(d.d2),
            Cell::Num(c.units.info(d.r1)),
            Cell::Num(c.units.info(d.r2)),
        ])?;
    }
    t.finish()?;
    if let Some(path) = diagnostics_path(c.out.as_deref(), diag) {
        let mut t = Table::create(
            Some(&path),
            &[
                "lambda2",
                "converged",
                "max_sigma1",
                "max_sigma2",
                "max_excess",
                "weighted_excess",
                "deviation1",
                "deviation2",
                "passed",
            ],
        )?;
        for r in &runs {
            let rep = verify_sr_optimality(problem, &r.dual, r.final_state())?;
            t.row(&[
                Cell::Num(r.dual.triple.lambda2),
                Cell::Bool(r.dual.converged),
                Cell::Num(rep.max_sigma1),
                Cell::Num(rep.max_sigma2),
                Cell::Num(rep.max_excess),
                Cell::Num(rep.weighted_excess),
                Cell::Num(rep.deviation1),
                Cell::Num(rep.deviation2),
                Cell::Bool(rep.passed),
            ])?;
        }
        t.finish()?;
    }
    Ok(())
}

/// Default number of closed-form Gaussian iterations.
pub const GAUSS_ITERS: usize = 20;

/// Second-stage slice of the unit-variance Gaussian region at fixed
/// `(ν1, λ1)`: `d2, R2_estimate, R2_analytic, abs_error`.
pub fn gauss_demo(nu1: f64, lambda1: f64, grid: Option<&SlopeGrid>, c: &Common) -> Result<(), CliError> {
    let lambda2s = match grid {
        Some(g) => slopes(g)?,
        None => default_lambda2_sweep(),
    };
    let slice = reproduce_fig3(&lambda2s, c.max_iters.unwrap_or(GAUSS_ITERS), nu1, lambda1)?;
    let d2s: Vec<f64> = (0..50).map(|i| 0.1 + 0.8 * i as f64 / 49.0).collect();
    let mut t = c.table(&["d2", "R2_estimate", "R2_analytic", "abs_error"])?;
    for row in slice.rows(&d2s) {
        t.row(&[
            Cell::Num(row.d2),
            Cell::Num(c.units.info(row.estimate)),
            Cell::Num(c.units.info(row.analytic)),
            Cell::Num(c.units.info(row.abs_error)),
        ])?;
    }
    t.finish()
}

#[derive(Clone, Debug)]
pub struct ConverseArgs {
    pub d1: f64,
    pub d2: f64,
    pub nu1: f64,
    pub blocklengths: Vec<usize>,
    /// Per-letter `ln M1 / n` in nats; defaults to `R(d1)`.
    pub rate1: Option<f64>,
    /// Per-letter `ln M2 / n` in nats; defaults to `R(d2)`.
    pub rate2: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub which: Which,
    pub mc_samples: usize,
}

/// Converse bounds for a successively refinable source:
/// `n, M1, M2, gamma1, gamma2, eps1_lb, eps2_lb, method`, with `M1`, `M2`
/// given as log code sizes.
pub fn converse(problem: &SrProblem, a: &ConverseArgs, c: &Common) -> Result<(), CliError> {
    if a.blocklengths.is_empty() {
        return Err(CliError::Validation("no blocklengths given".into()));
    }
    let opts = RefineOptions {
        run: RunOptions {
            delta: c.delta.min(1e-11),
            ..c.run_options()
        },
        ..RefineOptions::default()
    };
    let cert = refinable_construction(problem, a.d1, a.d2, a.nu1, &opts)?;
    let family = Corollary::from_refinable(&cert, a.which)?;
    let (rate1, rate2) = (a.rate1.unwrap_or(cert.r1), a.rate2.unwrap_or(cert.r2));
    let mut t = c.table(&["n", "M1", "M2", "gamma1", "gamma2", "eps1_lb", "eps2_lb", "method"])?;
    for &n in &a.blocklengths {
        let setup = BoundSetup {
            gamma1: a.gamma1,
            gamma2: a.gamma2,
            seed: c.seed,
            mc_samples: a.mc_samples,
            ..BoundSetup::new(n, n as f64 * rate1, n as f64 * rate2)
        };
        let b = corollary_bounds(problem.px(), &family, &setup)?;
        let method = match b.method {
            EvalMethod::Exact => "exact".to_string(),
            EvalMethod::MonteCarlo { samples, .. } => format!("monte-carlo:{samples}"),
        };
        t.row(&[
            Cell::Int(n as u64),
            Cell::Num(c.units.info(setup.log_m1)),
            Cell::Num(c.units.info(setup.log_m2)),
            Cell::Num(c.units.info(b.gamma1)),
            Cell::Num(c.units.info(b.gamma2)),
            b.eps1.map_or(Cell::Empty, |e| Cell::Num(e.value)),
            Cell::Num(b.eps2.value),
            Cell::Text(method),
        ])?;
    }
    t.finish()
}

/// Iterative dual values against the grid oracles. Single-stage problems
/// sweep `λ`; two-stage problems sweep `λ2` at fixed `(ν1, λ1)`.
pub fn oracle(
    problem: &Problem,
    nu1: f64,
    lambda1: f64,
    grid: &SlopeGrid,
    grid_steps: Option<usize>,
    c: &Common,
) -> Result<(), CliError> {
    let lambdas = slopes(grid)?;
    let opts = c.run_options();
    match problem {
        Problem::Single(p) => {
            let steps = grid_steps.unwrap_or(200);
            let runs = sweep(p, &lambdas, &opts)?;
            let mut t = c.table(&["lambda", "F_iterative", "F_grid", "difference", "grid_resolution"])?;
            for r in &runs {
                let g = brute_force_dual(p, r.dual.lambda, steps)?;
                t.row(&[
                    Cell::Num(r.dual.lambda),
                    Cell::Num(c.units.info(r.dual.f_value)),
                    Cell::Num(c.units.info(g.value)),
                    Cell::Num(c.units.info(g.value - r.dual.f_value)),
                    g.resolution.map_or(Cell::Empty, Cell::Num),
                ])?;
            }
            t.finish()
        }
        Problem::Refinement(p) => {
            let steps = grid_steps.unwrap_or(60);
            let ts = triples(nu1, lambda1, &lambdas)?;
            let runs = sr_sweep(p, &ts, &opts)?;
            let mut t = c.table(&[
                "nu1",
                "lambda1",
                "lambda2",
                "F_iterative",
                "F_grid",
                "difference",
                "grid_resolution",
            ])?;
            for r in &runs {
                let g = brute_force_sr_dual(p, &r.dual.triple, steps)?;
                t.row(&[
                    Cell::Num(nu1),
                    Cell::Num(lambda1),
                    Cell::Num(r.dual.triple.lambda2),
                    Cell::Num(c.units.info(r.dual.f_value)),
                    Cell::Num(c.units.info(g.value)),
                    Cell::Num(c.units.info(g.value - r.dual.f_value)),
                    g.resolution.map_or(Cell::Empty, Cell::Num),
                ])?;
            }
            t.finish()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_specs() {
        let s: SlopeSpec = "0.5:8:31:geom".parse().unwrap();
        assert_eq!(
            s.0,
            SlopeGrid {
                lo: 0.5,
                hi: 8.0,
                count: 31,
                geometric: true
            }
        );
        assert!(!"0:1:3:lin".parse::<SlopeSpec>().unwrap().0.geometric);
        assert!("1:2:3".parse::<SlopeSpec>().unwrap().0.geometric);
        assert!("1:2".parse::<SlopeSpec>().is_err());
        assert!("1:2:x".parse::<SlopeSpec>().is_err());
        assert!("1:2:3:log".parse::<SlopeSpec>().is_err());
    }

    #[test]
    fn diagnostics_follow_the_output() {
        assert_eq!(
            diagnostics_path(Some(Path::new("out/sr.csv")), None),
            Some(PathBuf::from("out/sr.csv.sigma.csv"))
        );
        assert_eq!(diagnostics_path(None, None), None);
        assert_eq!(diagnostics_path(None, Some(Path::new("d.csv"))), Some(PathBuf::from("d.csv")));
    }
}
