//! Number formatting, unit conversion and CSV writing.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use crate::error::CliError;

/// Significant digits of every float written to a CSV.
pub const SIG_DIGITS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Units {
    Nats,
    Bits,
}

impl Units {
    /// Converts an information quantity from nats.
    pub fn info(self, nats: f64) -> f64 {
        match self {
            Units::Nats => nats,
            Units::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

/// `%.12g`: fixed notation for moderate exponents, scientific otherwise,
/// trailing zeros removed.
pub fn fmt_g(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= SIG_DIGITS as i32 {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A CSV table written to a file or to stdout.
pub struct Table {
    writer: csv::Writer<Box<dyn Write>>,
    target: String,
}

impl Table {
    pub fn create(path: Option<&Path>, header: &[&str]) -> Result<Self, CliError> {
        let (sink, target): (Box<dyn Write>, String) = match path {
            Some(p) => (
                Box::new(io::BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
                p.display().to_string(),
            ),
            None => (Box::new(io::stdout().lock()), "<stdout>".into()),
        };
        let mut table = Table {
            writer: csv::Writer::from_writer(sink),
            target,
        };
        table.write_strings(header.iter().map(|s| s.to_string()))?;
        Ok(table)
    }

    pub fn row(&mut self, cells: &[Cell]) -> Result<(), CliError> {
        self.write_strings(cells.iter().map(Cell::render))
    }

    fn write_strings(&mut self, cells: impl IntoIterator<Item = String>) -> Result<(), CliError> {
        self.writer.write_record(cells).map_err(|e| self.csv_error(e))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(|e| CliError::io(&self.target, e))
    }

    fn csv_error(&self, e: csv::Error) -> CliError {
        CliError::io(&self.target, io::Error::other(e))
    }
}

pub enum Cell {
    Num(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => fmt_g(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_format() {
        assert_eq!(fmt_g(0.1), "0.1");
        assert_eq!(fmt_g(1.0), "1");
        assert_eq!(fmt_g(-2.5), "-2.5");
        assert_eq!(fmt_g(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_g(123456.789), "123456.789");
        assert_eq!(fmt_g(1e-7), "1e-07");
        assert_eq!(fmt_g(2.5e15), "2.5e+15");
        assert_eq!(fmt_g(0.000123), "0.000123");
        assert_eq!(fmt_g(std::f64::consts::PI), "3.14159265359");
    }

    #[test]
    fn bits_divide_by_ln2() {
        assert!((Units::Bits.info(std::f64::consts::LN_2) - 1.0).abs() < 1e-15);
        assert_eq!(Units::Nats.info(0.7), 0.7);
    }
}
