//! Error metrics against the reference solver, ensemble statistics and the
//! scripted experiment presets.

mod experiment;
mod stats;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use experiment::{
    c_rate_horizon, mirrored_for_charge, run_experiment, summarize, ExperimentPlan, ExperimentReport, GroupSummary,
    Metric, Preset, RunResult, RunSpec,
};
pub use stats::{mean, pearson, percentile, spearman, spread95};

use crate::fd::{FdError, Field, SolutionGrid};
use crate::loss::{LossError, Surrogate};
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query outside the reference solution: {0}")]
    Domain(String),
    #[error("unknown preset {name:?}; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },
    #[error("{failed} of {total} runs failed")]
    PartialFailure { failed: usize, total: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Solver(#[from] FdError),
    #[error(transparent)]
    Model(#[from] crate::spm::SpmError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Anything that predicts the four states at physical times (s) and
/// fractional radii `r / R_j`, in [`Field::ALL`] order.
pub trait Predictor {
    fn predict(&self, t: &[f64], r_frac: &[f64]) -> Result<[Vec<f64>; 4], EvalError>;
}

impl Predictor for Surrogate {
    fn predict(&self, t: &[f64], r_frac: &[f64]) -> Result<[Vec<f64>; 4], EvalError> {
        Ok(Surrogate::predict(self, t, r_frac)?)
    }
}

impl Predictor for SolutionGrid {
    fn predict(&self, t: &[f64], r_frac: &[f64]) -> Result<[Vec<f64>; 4], EvalError> {
        let mut out: [Vec<f64>; 4] = Default::default();
        for (k, f) in Field::ALL.into_iter().enumerate() {
            let radius = f.electrode().map_or(0.0, |e| *self.radii(e).last().unwrap());
            out[k] = t
                .iter()
                .zip(r_frac)
                .map(|(&t, &r)| self.sample(t, r * radius, f))
                .collect::<Result<_, _>>()?;
        }
        Ok(out)
    }
}

/// Tensor query grid: `n_t` times spanning the horizon and `n_r` radii per
/// particle for concentrations; potentials use the times only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGrid {
    pub n_t: usize,
    pub n_r: usize,
}

impl Default for QueryGrid {
    fn default() -> Self {
        Self { n_t: 101, n_r: 65 }
    }
}

impl QueryGrid {
    /// Parses `"201x129"`.
    pub fn parse(s: &str) -> Option<Self> {
        let (a, b) = s.split_once('x')?;
        let g = Self {
            n_t: a.trim().parse().ok()?,
            n_r: b.trim().parse().ok()?,
        };
        (g.n_t >= 2 && g.n_r >= 2).then_some(g)
    }

    pub fn times(&self, horizon: f64) -> Vec<f64> {
        (0..self.n_t)
            .map(|i| horizon * i as f64 / (self.n_t - 1) as f64)
            .collect()
    }

    fn radii(&self) -> Vec<f64> {
        (0..self.n_r).map(|j| j as f64 / (self.n_r - 1) as f64).collect()
    }
}

impl std::fmt::Display for QueryGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.n_t, self.n_r)
    }
}

/// Relative denominators are floored at this fraction of a variable's range.
pub const DENOMINATOR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epsilon: f64,
    /// Mean relative error per variable, [`Field::ALL`] order; sums to
    /// `epsilon`.
    pub breakdown: [f64; 4],
    pub counts: [usize; 4],
    /// Points whose denominator hit the floor.
    pub floored: [usize; 4],
    /// V
    pub epsilon_tv: f64,
    pub grid: QueryGrid,
}

/// Scaled mean absolute error summed over the four states, plus the
/// terminal-voltage error on the same time grid.
pub fn epsilon(pred: &dyn Predictor, oracle: &SolutionGrid, grid: QueryGrid) -> Result<MetricsReport, EvalError> {
    let horizon = oracle.horizon();
    let times = grid.times(horizon);
    let radii = grid.radii();
    let mut t_conc = Vec::with_capacity(grid.n_t * grid.n_r);
    let mut r_conc = Vec::with_capacity(grid.n_t * grid.n_r);
    for &t in &times {
        for &r in &radii {
            t_conc.push(t);
            r_conc.push(r);
        }
    }
    let p_conc = pred.predict(&t_conc, &r_conc)?;
    let o_conc = oracle.predict(&t_conc, &r_conc)?;
    let ones = vec![1.0; times.len()];
    let p_pot = pred.predict(&times, &ones)?;
    let o_pot = oracle.predict(&times, &ones)?;

    let mut report = MetricsReport {
        epsilon: 0.0,
        breakdown: [0.0; 4],
        counts: [0; 4],
        floored: [0; 4],
        epsilon_tv: 0.0,
        grid,
    };
    for k in 0..4 {
        let (p, o) = if k < 2 {
            (&p_conc[k], &o_conc[k])
        } else {
            (&p_pot[k], &o_pot[k])
        };
        let (lo, hi) = o
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let floor = DENOMINATOR_FLOOR * (hi - lo);
        let mut sum = 0.0;
        for (p, o) in p.iter().zip(o) {
            let den = if o.abs() < floor {
                report.floored[k] += 1;
                floor
            } else {
                o.abs()
            };
            // a constant zero field: any deviation counts in absolute terms
            let den = if den > 0.0 { den } else { 1.0 };
            sum += ((p - o) / den).abs();
        }
        report.counts[k] = p.len();
        report.breakdown[k] = sum / p.len() as f64;
    }
    report.epsilon = report.breakdown.iter().sum();
    report.epsilon_tv = mean_abs_diff(&p_pot[3], &o_pot[3]);
    Ok(report)
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).abs()).sum::<f64>() / a.len() as f64
}

/// Mean absolute cathode-potential error (V) over `n_t` evenly spaced times.
pub fn epsilon_tv(pred: &dyn Predictor, oracle: &SolutionGrid, n_t: usize) -> Result<f64, EvalError> {
    let times = QueryGrid { n_t, n_r: 2 }.times(oracle.horizon());
    let ones = vec![1.0; times.len()];
    let p = pred.predict(&times, &ones)?;
    let o = oracle.predict(&times, &ones)?;
    Ok(mean_abs_diff(&p[3], &o[3]))
}

/// Writes `variable,t,r_frac,reference,predicted` rows for `n` uniform
/// random points per variable (`4 n` rows).
pub fn correlation_dump(
    pred: &dyn Predictor,
    oracle: &SolutionGrid,
    n: usize,
    seed: u64,
    path: &Path,
) -> Result<(), EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = oracle.horizon();
    let t: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * horizon).collect();
    let r: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let p = pred.predict(&t, &r)?;
    let o = oracle.predict(&t, &r)?;
    let io = io_err(path);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(&io)?);
    writeln!(w, "variable,t,r_frac,reference,predicted").map_err(&io)?;
    for (k, f) in Field::ALL.into_iter().enumerate() {
        let uses_r = f.electrode().is_some();
        for i in 0..n {
            let rr = if uses_r { r[i] } else { 1.0 };
            writeln!(w, "{},{:e},{:e},{:e},{:e}", f.name(), t[i], rr, o[k][i], p[k][i]).map_err(&io)?;
        }
    }
    w.flush().map_err(&io)
}

/// Reads a dump written by [`correlation_dump`] and returns the Pearson
/// correlation per variable.
pub fn dump_correlations(path: &Path) -> Result<[f64; 4], EvalError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| EvalError::InvalidPlan(e.to_string()))?;
    let mut cols: [(Vec<f64>, Vec<f64>); 4] = Default::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| EvalError::InvalidPlan(e.to_string()))?;
        let k = Field::ALL.iter().position(|f| f.name() == &rec[0]).unwrap_or(0);
        let parse = |i: usize| rec[i].parse::<f64>().map_err(|e| EvalError::InvalidPlan(e.to_string()));
        cols[k].0.push(parse(3)?);
        cols[k].1.push(parse(4)?);
    }
    Ok(cols.map(|(a, b)| pearson(&a, &b)))
}
