//! Per-round CSV files and their reader.
//!
//! Columns, in order: `round, skipped, num_available, capacity,
//! num_selected, selected, per_sample_loss, per_sample_accuracy,
//! per_user_loss, per_user_accuracy, rates`. Lists are space-separated,
//! reals carry 9 significant digits, and cells of rounds that were not
//! evaluated are empty.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fedtrain::RoundRecord;

pub const CSV_HEADER: [&str; 11] = [
    "round",
    "skipped",
    "num_available",
    "capacity",
    "num_selected",
    "selected",
    "per_sample_loss",
    "per_sample_accuracy",
    "per_user_loss",
    "per_user_accuracy",
    "rates",
];

pub const METRIC_COLUMNS: [&str; 4] = ["per_sample_accuracy", "per_sample_loss", "per_user_accuracy", "per_user_loss"];

/// Decimal rendering with 9 significant digits, switching to exponent
/// notation outside `[1e-5, 1e9)`. Trailing zeros are dropped.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(" ")
}

pub fn render_csv(records: &[RoundRecord]) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for r in records {
        let metric = |m: Option<f64>| m.map(format_sig9).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            u8::from(r.skipped),
            r.num_available,
            r.capacity,
            r.selected.len(),
            join(&r.selected, |c| c.0.to_string()),
            metric(r.per_sample.map(|m| m.loss)),
            metric(r.per_sample.map(|m| m.accuracy)),
            metric(r.per_user.map(|m| m.loss)),
            metric(r.per_user.map(|m| m.accuracy)),
            r.rates.as_deref().map(|v| join(v, |x| format_sig9(*x))).unwrap_or_default(),
        );
    }
    out
}

pub fn write_csv(path: &Path, records: &[RoundRecord]) -> Result<()> {
    std::fs::write(path, render_csv(records)).map_err(|e| Error::io(path, e))
}

/// A parsed metrics CSV, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rounds: Vec<usize>,
    pub skipped: Vec<bool>,
    pub num_available: Vec<usize>,
    /// Keyed by [`METRIC_COLUMNS`] order.
    pub metrics: [Vec<Option<f64>>; 4],
}

impl MetricsTable {
    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        METRIC_COLUMNS.iter().position(|c| *c == name).map(|i| self.metrics[i].as_slice())
    }

    /// Mean of the last `window` present values of a metric column.
    pub fn tail_mean(&self, name: &str, window: usize) -> Option<f64> {
        let vals: Vec<f64> = self.column(name)?.iter().flatten().copied().collect();
        if vals.is_empty() {
            return None;
        }
        let tail = &vals[vals.len().saturating_sub(window)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn evaluated_rounds(&self) -> usize {
        self.metrics[0].iter().filter(|v| v.is_some()).count()
    }
}

pub fn parse_csv(text: &str, path: &Path) -> Result<MetricsTable> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    if header.split(',').ne(CSV_HEADER.iter().copied()) {
        return Err(err(1, format!("unexpected header '{header}'")));
    }
    let mut table = MetricsTable {
        rounds: Vec::new(),
        skipped: Vec::new(),
        num_available: Vec::new(),
        metrics: Default::default(),
    };
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != CSV_HEADER.len() {
            return Err(err(lineno, format!("expected {} fields, found {}", CSV_HEADER.len(), cells.len())));
        }
        let int = |s: &str, what: &str| s.parse::<usize>().map_err(|_| err(lineno, format!("bad {what} '{s}'")));
        table.rounds.push(int(cells[0], "round")?);
        table.skipped.push(match cells[1] {
            "0" => false,
            "1" => true,
            other => return Err(err(lineno, format!("bad skipped flag '{other}'"))),
        });
        table.num_available.push(int(cells[2], "num_available")?);
        for (slot, name) in METRIC_COLUMNS.iter().enumerate() {
            let idx = CSV_HEADER.iter().position(|c| c == name).expect("metric column");
            let cell = cells[idx];
            let v = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| err(lineno, format!("bad {name} '{cell}'")))?)
            };
            table.metrics[slot].push(v);
        }
    }
    Ok(table)
}

pub fn read_csv(path: &Path) -> Result<MetricsTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}
