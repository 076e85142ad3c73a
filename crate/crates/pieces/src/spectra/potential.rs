use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Even, non-negative, bounded pair potential with compact support.
///
/// `range` is the support radius: `U(r) = 0` for `|r| > range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Potential {
    /// `u0 * 1{|r| <= range}`.
    Step { magnitude: f64, range: f64 },
    /// Piecewise-linear through `(r_k, u_k)`, `r_0 = 0`, zero beyond the last
    /// sample.
    Table { r: Vec<f64>, u: Vec<f64> },
}

impl Potential {
    pub fn step(magnitude: f64, range: f64) -> Result<Self> {
        if !(magnitude >= 0.0 && magnitude.is_finite()) {
            return Err(Error::invalid(
                "step magnitude must be finite and non-negative",
            ));
        }
        if !(range >= 0.0 && range.is_finite()) {
            return Err(Error::invalid("step range must be finite and non-negative"));
        }
        Ok(Potential::Step { magnitude, range })
    }

    pub fn zero() -> Self {
        Potential::Step {
            magnitude: 0.0,
            range: 0.0,
        }
    }

    pub fn table(r: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if r.len() != u.len() || r.len() < 2 {
            return Err(Error::invalid(
                "table needs matching r/u columns with at least two rows",
            ));
        }
        if r[0] != 0.0 {
            return Err(Error::invalid("table must start at r = 0"));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) || r.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(
                "table r must be finite and strictly increasing",
            ));
        }
        if u.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid(
                "table values must be finite and non-negative",
            ));
        }
        Ok(Potential::Table { r, u })
    }

    /// Two whitespace- or comma-separated columns `r U(r)`; `#` starts a comment.
    pub fn from_table_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
        let mut r = Vec::new();
        let mut u = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 2 {
                return Err(Error::invalid(format!("bad table row: {line}")));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad number: {s}")))
            };
            r.push(parse(cols[0])?);
            u.push(parse(cols[1])?);
        }
        Self::table(r, u)
    }

    /// `step:<u0>:<M>` or `table:<path>`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || {
            Error::invalid(format!(
                "potential must be step:<u0>:<M> or table:<path>, got {text}"
            ))
        };
        if let Some(rest) = text.strip_prefix("step:") {
            let mut it = rest.split(':');
            let u0 = it
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(bad)?;
            let m = it
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(bad)?;
            if it.next().is_some() {
                return Err(bad());
            }
            Self::step(u0, m)
        } else if let Some(path) = text.strip_prefix("table:") {
            Self::from_table_file(Path::new(path))
        } else if text == "zero" {
            Ok(Self::zero())
        } else {
            Err(bad())
        }
    }

    pub fn range(&self) -> f64 {
        match self {
            Potential::Step { range, .. } => *range,
            Potential::Table { r, .. } => *r.last().unwrap(),
        }
    }

    pub fn magnitude(&self) -> f64 {
        match self {
            Potential::Step { magnitude, .. } => *magnitude,
            Potential::Table { u, .. } => u.iter().copied().fold(0.0, f64::max),
        }
    }

    /// True when U vanishes identically (or has empty support).
    pub fn is_zero(&self) -> bool {
        match self {
            Potential::Step { magnitude, range } => *magnitude == 0.0 || *range == 0.0,
            Potential::Table { u, .. } => u.iter().all(|&x| x == 0.0),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let r = x.abs();
        match self {
            Potential::Step { magnitude, range } => {
                if r <= *range {
                    *magnitude
                } else {
                    0.0
                }
            }
            Potential::Table { r: rs, u } => {
                if r > *rs.last().unwrap() {
                    return 0.0;
                }
                let k = rs.partition_point(|&s| s <= r);
                if k >= rs.len() {
                    return *u.last().unwrap();
                }
                let (r0, r1) = (rs[k - 1], rs[k]);
                let t = (r - r0) / (r1 - r0);
                u[k - 1] * (1.0 - t) + u[k] * t
            }
        }
    }

    /// Points in (0, range) where U or its derivative may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Potential::Step { .. } => vec![],
            Potential::Table { r, .. } => r[1..r.len() - 1].to_vec(),
        }
    }

    /// `self` with the magnitude multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        match self {
            Potential::Step { magnitude, range } => Potential::Step {
                magnitude: magnitude * k,
                range: *range,
            },
            Potential::Table { r, u } => Potential::Table {
                r: r.clone(),
                u: u.iter().map(|x| x * k).collect(),
            },
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Potential::Step { magnitude, range } => format!("step:{magnitude}:{range}"),
            Potential::Table { r, .. } => {
                format!("table({} rows, range {})", r.len(), r.last().unwrap())
            }
        }
    }
}
