use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::loss::{Fidelity, Term};
use crate::nn::NetworkSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Adam,
    Lbfgs,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Adam => "adam",
            Stage::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// Global step index, continuing across stages.
    pub step: usize,
    pub stage: Stage,
    /// Mini-batch loss for Adam, trial loss for L-BFGS.
    pub loss: f64,
    pub terms: [f64; 8],
    /// Learning rate (Adam) or step scale (L-BFGS).
    pub rate: f64,
    pub accepted: bool,
    pub bv_clips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// L-BFGS ended early on consecutive rejected steps; the best
    /// checkpoint is kept.
    Stalled,
    Aborted {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub collocation_seed: u64,
    pub fidelity: Fidelity,
    pub spec: NetworkSpec,
    pub config_hash: String,
    pub history: Vec<HistoryRow>,
    /// First L-BFGS step in `history` terms, i.e. the stage boundary.
    pub lbfgs_start: usize,
    pub adam_params: Vec<f64>,
    pub params: Vec<f64>,
    /// Full-batch loss of `params` on the training collocation set.
    pub final_loss: f64,
    pub bv_clips: usize,
    pub wall_time_s: f64,
    pub status: RunStatus,
    /// Adam epoch from which the regularizer acts.
    pub regularizer_activation_epoch: usize,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        matches!(self.status, RunStatus::Aborted { .. })
    }

    pub fn write_history_csv(&self, path: &Path) -> Result<(), TrainError> {
        let io = |source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        let mut header = String::from("step,stage,loss");
        for t in Term::ALL {
            header.push(',');
            header.push_str(t.name());
        }
        header.push_str(",rate,accepted,bv_clips");
        writeln!(w, "{header}").map_err(io)?;
        for r in &self.history {
            write!(w, "{},{},{:e}", r.step, r.stage.name(), r.loss).map_err(io)?;
            for v in r.terms {
                write!(w, ",{v:e}").map_err(io)?;
            }
            writeln!(w, ",{:e},{},{}", r.rate, r.accepted as u8, r.bv_clips).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}
