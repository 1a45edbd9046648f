//! Applied-current profiles. C-rates are signed: negative discharges the cell.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ocp::parse_two_column_csv;
use super::params::CellParameters;
use super::SpmError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurrentProfile {
    Constant {
        c_rate: f64,
    },
    /// `c_rate(t) = mean - amplitude * sin(2 pi t / period)`.
    Sinusoidal {
        mean: f64,
        amplitude: f64,
        period: f64,
    },
    /// `(t, c_rate)` samples, linearly interpolated.
    Tabulated {
        samples: Vec<(f64, f64)>,
    },
}

impl CurrentProfile {
    pub fn constant(c_rate: f64) -> Self {
        CurrentProfile::Constant { c_rate }
    }

    /// 2 C mean discharge modulated over one period.
    pub fn sinusoidal_discharge(period: f64) -> Self {
        CurrentProfile::Sinusoidal {
            mean: -2.0,
            amplitude: -2.0,
            period,
        }
    }

    pub fn tabulated(samples: Vec<(f64, f64)>) -> Result<Self, SpmError> {
        if samples.len() < 2 || samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(SpmError::InvalidTable(
                "current table must have >= 2 rows with strictly increasing time".into(),
            ));
        }
        Ok(CurrentProfile::Tabulated { samples })
    }

    /// Reads a `(time_s, c_rate)` CSV. A header naming the second column
    /// `current_a_m2` is read as A/m^2 and converted with the cell's 1 C
    /// current.
    pub fn read_csv(path: &Path, cell: &CellParameters) -> Result<Self, SpmError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_csv(&text, cell)
    }

    pub fn parse_csv(text: &str, cell: &CellParameters) -> Result<Self, SpmError> {
        let header = text.lines().next().unwrap_or("").to_ascii_lowercase();
        let mut rows = parse_two_column_csv(text)?;
        if header.contains("current_a_m2") {
            let one_c = cell.one_c_current();
            for r in &mut rows {
                r.1 /= one_c;
            }
        }
        Self::tabulated(rows)
    }

    /// The shipped synthetic hybrid-vehicle drive cycle (900 s).
    pub fn default_drive_cycle() -> Self {
        let text = include_str!("../../data/drive_cycle_hev.csv");
        let rows = parse_two_column_csv(text).expect("embedded drive cycle parses");
        Self::tabulated(rows).expect("embedded drive cycle is sorted")
    }

    /// Time support; `None` means unbounded.
    pub fn support(&self) -> Option<(f64, f64)> {
        match self {
            CurrentProfile::Tabulated { samples } => Some((samples[0].0, samples[samples.len() - 1].0)),
            _ => None,
        }
    }

    pub fn c_rate_at(&self, t: f64) -> Result<f64, SpmError> {
        match self {
            CurrentProfile::Constant { c_rate } => Ok(*c_rate),
            CurrentProfile::Sinusoidal {
                mean,
                amplitude,
                period,
            } => Ok(mean - amplitude * (2.0 * PI * t / period).sin()),
            CurrentProfile::Tabulated { samples } => {
                let (t0, t1) = (samples[0].0, samples[samples.len() - 1].0);
                let slack = 1e-9 * (t1 - t0).abs().max(1.0);
                if !(t >= t0 - slack && t <= t1 + slack) {
                    return Err(SpmError::OutOfRange { t, lo: t0, hi: t1 });
                }
                let t = t.clamp(t0, t1);
                let i = samples.partition_point(|s| s.0 <= t).clamp(1, samples.len() - 1);
                let (ta, ca) = samples[i - 1];
                let (tb, cb) = samples[i];
                Ok(ca + (cb - ca) * (t - ta) / (tb - ta))
            }
        }
    }

    /// Applied current in A/m^2.
    pub fn current_at(&self, t: f64, cell: &CellParameters) -> Result<f64, SpmError> {
        Ok(self.c_rate_at(t)? * cell.one_c_current())
    }

    /// Largest |C-rate| over `[0, horizon]`; used for residual scales.
    pub fn peak_c_rate(&self, horizon: f64) -> f64 {
        match self {
            CurrentProfile::Constant { c_rate } => c_rate.abs(),
            CurrentProfile::Sinusoidal { mean, amplitude, .. } => mean.abs() + amplitude.abs(),
            CurrentProfile::Tabulated { samples } => samples
                .iter()
                .filter(|s| s.0 <= horizon)
                .map(|s| s.1.abs())
                .fold(0.0, f64::max),
        }
    }

    /// Sign of the net transfer: -1 for discharge, +1 for charge.
    pub fn direction(&self) -> f64 {
        let net = match self {
            CurrentProfile::Constant { c_rate } => *c_rate,
            CurrentProfile::Sinusoidal { mean, .. } => *mean,
            CurrentProfile::Tabulated { samples } => samples
                .windows(2)
                .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
                .sum(),
        };
        if net > 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}
