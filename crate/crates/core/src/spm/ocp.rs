//! Open-circuit potential curves.
//!
//! Tabulated `(stoichiometry, potential)` knots are turned into a monotone
//! cubic Hermite interpolant (Fritsch-Carlson slopes), which is C1 on `[0, 1]`
//! and reproduces every knot exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SpmError;

/// Tolerance on stoichiometry before `ocp_eval` refuses the query.
pub const STOICH_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpCurve {
    knots: Vec<(f64, f64)>,
    slopes: Vec<f64>,
}

impl OcpCurve {
    pub fn from_knots(knots: Vec<(f64, f64)>) -> Result<Self, SpmError> {
        if knots.len() < 2 {
            return Err(SpmError::InvalidTable("OCP curve needs at least two knots".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(SpmError::InvalidTable(format!(
                    "OCP stoichiometry must be strictly increasing (found {} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if knots.iter().any(|k| !k.0.is_finite() || !k.1.is_finite()) {
            return Err(SpmError::InvalidTable("non-finite OCP knot".into()));
        }
        let first = knots[0].0;
        let last = knots[knots.len() - 1].0;
        if first > STOICH_SLACK || last < 1.0 - STOICH_SLACK {
            return Err(SpmError::InvalidTable(format!(
                "OCP table must cover [0, 1], covers [{first}, {last}]"
            )));
        }
        let slopes = fritsch_carlson_slopes(&knots);
        Ok(Self { knots, slopes })
    }

    /// Straight line through `(x0, u0)` and `(x1, u1)`, extended over `[0, 1]`.
    pub fn linear(x0: f64, u0: f64, x1: f64, u1: f64) -> Result<Self, SpmError> {
        let slope = (u1 - u0) / (x1 - x0);
        if !slope.is_finite() {
            return Err(SpmError::InvalidTable("degenerate chord".into()));
        }
        Self::from_knots(vec![(0.0, u0 - slope * x0), (1.0, u0 + slope * (1.0 - x0))])
    }

    /// Chord of this curve between two stoichiometries.
    pub fn chord(&self, x0: f64, x1: f64) -> Result<Self, SpmError> {
        let (u0, _) = self.eval(x0)?;
        let (u1, _) = self.eval(x1)?;
        Self::linear(x0, u0, x1, u1)
    }

    pub fn read_csv(path: &Path) -> Result<Self, SpmError> {
        let rows = read_two_column_csv(path)?;
        Self::from_knots(rows)
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Potential and its derivative with respect to stoichiometry.
    pub fn eval(&self, x: f64) -> Result<(f64, f64), SpmError> {
        if !(x >= -STOICH_SLACK && x <= 1.0 + STOICH_SLACK) {
            return Err(SpmError::OutOfDomain { value: x });
        }
        Ok(self.eval_clamped(x))
    }

    /// Evaluation with the argument clamped into the table range. Used inside
    /// training losses, where iterates may stray outside `[0, 1]`.
    pub fn eval_clamped(&self, x: f64) -> (f64, f64) {
        let lo = self.knots[0].0;
        let hi = self.knots[self.knots.len() - 1].0;
        let x = if x.is_nan() { lo } else { x.clamp(lo, hi) };
        let i = match self
            .knots
            .binary_search_by(|k| k.0.partial_cmp(&x).expect("finite knots"))
        {
            Ok(i) => i.min(self.knots.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.knots.len() - 2),
        };
        let (x0, y0) = self.knots[i];
        let (x1, y1) = self.knots[i + 1];
        let h = x1 - x0;
        let s = (x - x0) / h;
        let m0 = self.slopes[i];
        let m1 = self.slopes[i + 1];
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let value = h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1;
        let dh00 = 6.0 * s2 - 6.0 * s;
        let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
        let dh01 = -6.0 * s2 + 6.0 * s;
        let dh11 = 3.0 * s2 - 2.0 * s;
        let deriv = (dh00 * y0 + dh01 * y1) / h + dh10 * m0 + dh11 * m1;
        (value, deriv)
    }
}

fn fritsch_carlson_slopes(knots: &[(f64, f64)]) -> Vec<f64> {
    let n = knots.len();
    let secants: Vec<f64> = knots
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    if n == 2 {
        return vec![secants[0]; 2];
    }
    let mut m = vec![0.0; n];
    m[0] = secants[0];
    m[n - 1] = secants[n - 2];
    for i in 1..n - 1 {
        let (a, b) = (secants[i - 1], secants[i]);
        m[i] = if a * b <= 0.0 { 0.0 } else { 0.5 * (a + b) };
    }
    for i in 0..n - 1 {
        let d = secants[i];
        if d == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let a = m[i] / d;
        let b = m[i + 1] / d;
        let r = a * a + b * b;
        if r > 9.0 {
            let t = 3.0 / r.sqrt();
            m[i] = t * a * d;
            m[i + 1] = t * b * d;
        }
    }
    m
}

/// Reads a two-column CSV with a header line and a strictly increasing first
/// column.
pub fn read_two_column_csv(path: &Path) -> Result<Vec<(f64, f64)>, SpmError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_two_column_csv(&text).map_err(|e| match e {
        SpmError::InvalidTable(msg) => SpmError::InvalidTable(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_two_column_csv(text: &str) -> Result<Vec<(f64, f64)>, SpmError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| SpmError::InvalidTable(e.to_string()))?;
        if record.len() != 2 {
            return Err(SpmError::InvalidTable(format!(
                "expected two columns, found {}",
                record.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| SpmError::InvalidTable(format!("bad number {s:?}: {e}")))
        };
        rows.push((parse(&record[0])?, parse(&record[1])?));
    }
    if rows.len() < 2 {
        return Err(SpmError::InvalidTable("table needs at least two rows".into()));
    }
    if rows.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(SpmError::InvalidTable(
            "first column must be strictly increasing".into(),
        ));
    }
    Ok(rows)
}
