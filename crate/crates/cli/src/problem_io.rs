//! JSON problem files: `{"pmf": [...], "d1": [[...]], "d2": [[...]]}`, with
//! `d2` omitted for single-stage problems.

use std::fs;
use std::path::Path;

use refine_rd::prob::{Matrix, Pmf};
use refine_rd::single::RdProblem;
use refine_rd::successive::SrProblem;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub pmf: Vec<f64>,
    pub d1: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d2: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Problem {
    Single(RdProblem),
    Refinement(SrProblem),
}

impl Problem {
    /// The first-stage problem, or the only one.
    pub fn first_stage(&self) -> RdProblem {
        match self {
            Problem::Single(p) => p.clone(),
            Problem::Refinement(p) => p.first_stage(),
        }
    }

    pub fn refinement(&self) -> Result<&SrProblem, CliError> {
        match self {
            Problem::Refinement(p) => Ok(p),
            Problem::Single(_) => Err(CliError::Validation(
                "this command needs a two-stage problem (field \"d2\")".into(),
            )),
        }
    }

    pub fn to_file(&self) -> ProblemFile {
        match self {
            Problem::Single(p) => ProblemFile {
                pmf: p.px().probs().to_vec(),
                d1: p.distortion().to_rows(),
                d2: None,
            },
            Problem::Refinement(p) => ProblemFile {
                pmf: p.px().probs().to_vec(),
                d1: p.d1().to_rows(),
                d2: Some(p.d2().to_rows()),
            },
        }
    }
}

fn distortion(name: &str, rows: Vec<Vec<f64>>, nx: usize) -> Result<Matrix, CliError> {
    if rows.len() != nx {
        return Err(CliError::Validation(format!(
            "\"{name}\" has {} rows but \"pmf\" has {nx} entries",
            rows.len()
        )));
    }
    for (x, row) in rows.iter().enumerate() {
        if let Some((y, v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(CliError::Validation(format!(
                "\"{name}\"[{x}][{y}] = {v}: distortions must be finite and non-negative"
            )));
        }
    }
    Matrix::from_rows(rows).map_err(|e| CliError::Validation(format!("\"{name}\": {e}")))
}

impl TryFrom<ProblemFile> for Problem {
    type Error = CliError;

    fn try_from(f: ProblemFile) -> Result<Self, CliError> {
        let nx = f.pmf.len();
        let px = Pmf::new(f.pmf).map_err(|e| CliError::Validation(format!("\"pmf\": {e}")))?;
        let d1 = distortion("d1", f.d1, nx)?;
        Ok(match f.d2 {
            None => Problem::Single(RdProblem::new(px, d1)?),
            Some(rows) => Problem::Refinement(SrProblem::new(px, d1, distortion("d2", rows, nx)?)?),
        })
    }
}

pub fn parse_problem(text: &str, path: &Path) -> Result<Problem, CliError> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Problem::try_from(file)
}

pub fn load_problem(path: &Path) -> Result<Problem, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_problem(&text, path)
}

pub fn save_problem(problem: &Problem, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&problem.to_file()).expect("problem files always serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Problem, CliError> {
        parse_problem(s, Path::new("test.json"))
    }

    #[test]
    fn minimal_single_stage_file() {
        let p = parse(r#"{"pmf": [0.5, 0.5], "d1": [[0, 1], [1, 0]]}"#).unwrap();
        assert!(matches!(p, Problem::Single(_)));
    }

    #[test]
    fn small_drift_is_renormalized() {
        let p = parse(r#"{"pmf": [0.4, 0.599999999], "d1": [[0, 1], [1, 0]]}"#).unwrap();
        let sum: f64 = p.first_stage().px().probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn negative_distortion_is_rejected() {
        let e = parse(r#"{"pmf": [0.5, 0.5], "d1": [[0, 1], [1, 0]], "d2": [[0, -1], [1, 0]]}"#).unwrap_err();
        assert!(matches!(e, CliError::Validation(ref m) if m.contains("d2")), "{e}");
    }

    #[test]
    fn syntax_errors_carry_a_position() {
        let e = parse("{\n  \"pmf\": [0.5, 0.5],\n  \"d1\": [[0, 1] [1, 0]]\n}").unwrap_err();
        match e {
            CliError::Parse { line, column, .. } => assert_eq!((line, column), (3, 17)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_field_is_a_parse_error() {
        assert!(matches!(parse(r#"{"pmf": [1.0]}"#), Err(CliError::Parse { .. })));
    }
}
