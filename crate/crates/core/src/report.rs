//! Output formats: comma-separated tables in `%.6e` notation, JSON-lines
//! records, x/y series files, and the timing/memory report.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splitting::RunMeta;

/// C-style `%.6e`: six fractional digits and at least two exponent digits.
pub fn sci(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.6e}");
    let (mant, exp) = s.split_once('e').expect("exponent form");
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    format!("{mant}e{sign}{digits:0>2}")
}

/// Marker for a cell whose run failed.
pub const FAILED: &str = "*";
/// Marker for a quantity that was not detected.
pub const MISSING: &str = "-";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Value(f64),
    Missing,
    Failed,
}

impl Cell {
    pub fn value(self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(v),
            _ => None,
        }
    }

    fn render(self) -> String {
        match self {
            Cell::Value(v) => sci(v),
            Cell::Missing => MISSING.into(),
            Cell::Failed => FAILED.into(),
        }
    }

    fn parse(s: &str) -> Result<Cell> {
        match s.trim() {
            FAILED => Ok(Cell::Failed),
            MISSING => Ok(Cell::Missing),
            t => t
                .parse()
                .map(Cell::Value)
                .map_err(|_| Error::InvalidArgument(format!("table cell '{t}' is not a number"))),
        }
    }
}

/// A refinement table: rows N, columns dt, with the consecutive differences
/// down the finest column and along the finest row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub quantity: String,
    pub ns: Vec<usize>,
    /// Column time steps, s.
    pub dts: Vec<f64>,
    pub cells: Vec<Vec<Cell>>,
}

impl SweepTable {
    pub fn values(&self) -> Vec<Vec<Option<f64>>> {
        self.cells.iter().map(|r| r.iter().map(|c| c.value()).collect()).collect()
    }

    pub fn render(&self) -> String {
        let (down, across) = crate::csd::consecutive_differences(&self.values());
        let opt = |v: Option<f64>| v.map_or(MISSING.to_string(), sci);
        let mut out = String::new();
        let _ = write!(out, "{}", self.quantity);
        for dt in &self.dts {
            let _ = write!(out, ",dt={}", sci(*dt));
        }
        out.push_str(",delta\n");
        for (i, n) in self.ns.iter().enumerate() {
            let _ = write!(out, "N={n}");
            for c in &self.cells[i] {
                let _ = write!(out, ",{}", c.render());
            }
            let d = if i == 0 { MISSING.to_string() } else { opt(down[i - 1]) };
            let _ = writeln!(out, ",{d}");
        }
        out.push_str("delta");
        for j in 0..self.dts.len() {
            let d = if j == 0 { MISSING.to_string() } else { opt(across[j - 1]) };
            let _ = write!(out, ",{d}");
        }
        out.push_str(",-\n");
        out
    }

    /// Reads back a table written by `render`; the delta row and column are
    /// recomputed, not stored.
    pub fn parse(text: &str) -> Result<SweepTable> {
        let bad = |m: &str| Error::InvalidArgument(format!("sweep table: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split(',').collect();
        if header.len() < 3 || header[header.len() - 1] != "delta" {
            return Err(bad("malformed header"));
        }
        let dts = header[1..header.len() - 1]
            .iter()
            .map(|h| h.strip_prefix("dt=").and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad dt column")))
            .collect::<Result<Vec<f64>>>()?;
        let mut ns = Vec::new();
        let mut cells = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split(',').collect();
            if parts[0] == "delta" {
                break;
            }
            if parts.len() != dts.len() + 2 {
                return Err(bad("row width"));
            }
            let n = parts[0].strip_prefix("N=").and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad row label"))?;
            ns.push(n);
            cells.push(parts[1..=dts.len()].iter().map(|c| Cell::parse(c)).collect::<Result<Vec<_>>>()?);
        }
        Ok(SweepTable {
            quantity: header[0].to_string(),
            ns,
            dts,
            cells,
        })
    }
}

/// Plain table with one header line.
pub fn render_rows(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| sci(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parses a table written by `render_rows`.
pub fn parse_rows(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty table".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| {
            let r: Vec<f64> = l
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidArgument(format!("table row '{l}' is not numeric")))?;
            if r.len() == header.len() {
                Ok(r)
            } else {
                Err(Error::InvalidArgument(format!("table row '{l}' has the wrong width")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

/// Writes an x/y series file (two columns).
pub fn write_series(path: &Path, xlabel: &str, ylabel: &str, xs: &[f64], ys: &[f64]) -> Result<()> {
    let rows: Vec<Vec<f64>> = xs.iter().zip(ys).map(|(x, y)| vec![*x, *y]).collect();
    fs::write(path, render_rows(&[xlabel, ylabel], &rows))?;
    Ok(())
}

/// Appends one JSON record per line.
pub fn append_record<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(record).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    writeln!(f, "{line}")?;
    Ok(())
}

pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display()))))
        .collect()
}

/// Resident and peak resident set size in MiB, from /proc.
pub fn memory_mib() -> Option<(f64, f64)> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let field = |name: &str| {
        status
            .lines()
            .find(|l| l.starts_with(name))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse::<f64>().ok())
            .map(|kb| kb / 1024.0)
    };
    Some((field("VmRSS:")?, field("VmHWM:")?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub n: usize,
    pub dofs: usize,
    pub steps: usize,
    /// Peak resident memory above the baseline at the start of the run, MiB.
    pub peak_mib: f64,
    pub t_assembly: f64,
    pub t_lu: f64,
    pub t_pde: f64,
    pub t_ode: f64,
    pub t_total: f64,
}

impl PerfReport {
    pub fn from_meta(n: usize, dofs: usize, meta: &RunMeta, peak_mib: f64) -> Self {
        Self {
            n,
            dofs,
            steps: meta.steps,
            peak_mib,
            t_assembly: meta.t_assembly,
            t_lu: meta.t_lu,
            t_pde: meta.t_pde,
            t_ode: meta.t_ode,
            t_total: meta.t_total,
        }
    }

    pub const HEADER: [&'static str; 9] = ["N", "dofs", "steps", "M_MiB", "T_A", "T_LU", "T_PDE", "T_ODE", "T_tot"];

    pub fn row(&self) -> Vec<f64> {
        vec![
            self.n as f64,
            self.dofs as f64,
            self.steps as f64,
            self.peak_mib,
            self.t_assembly,
            self.t_lu,
            self.t_pde,
            self.t_ode,
            self.t_total,
        ]
    }
}
