use serde::{Deserialize, Serialize};

use super::{mix_seed, train_level, LevelSetup, RunRecord, TrainError, TrainingConfig};
use crate::loss::{Fidelity, LossWeights, OutputTransform, PhysicsProblem, Surrogate, TrainableLevel};
use crate::nn::NetworkSpec;
use crate::spm::{CellParameters, CurrentProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub fidelity: Fidelity,
    pub spec: NetworkSpec,
    pub training: TrainingConfig,
    pub collocation_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub levels: Vec<LevelConfig>,
    /// Amplitude of every correction level.
    pub alpha2: f64,
}

fn rank(f: Fidelity) -> u8 {
    match f {
        Fidelity::Simplified => 0,
        Fidelity::LinearBv => 1,
        Fidelity::NonlinearBv => 2,
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.levels.is_empty() {
            return bad("hierarchy needs at least one level".into());
        }
        if self
            .levels
            .windows(2)
            .any(|w| rank(w[1].fidelity) < rank(w[0].fidelity))
        {
            return bad("level fidelities must be nondecreasing".into());
        }
        for (i, a) in self.levels.iter().enumerate() {
            if self.levels[..i]
                .iter()
                .any(|b| b.collocation_seed == a.collocation_seed)
            {
                return bad(format!("collocation seed {} used by two levels", a.collocation_seed));
            }
        }
        if !(self.alpha2 > 0.0 && self.alpha2 <= 1.0) {
            return bad(format!("alpha2 must be in (0, 1], got {}", self.alpha2));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HierarchyOutcome {
    pub records: Vec<RunRecord>,
    /// Every successfully trained level; evaluate it as the composite
    /// predictor.
    pub surrogate: Surrogate,
}

impl HierarchyOutcome {
    pub fn failed(&self) -> bool {
        self.records.iter().any(RunRecord::failed)
    }
}

/// Trains the levels in order, freezing each before the next. Level `k`
/// uses network seed `mix_seed(seed, k)`. Training stops after a level
/// whose run aborted.
pub fn train_hierarchy(
    cell: &CellParameters,
    profile: &CurrentProfile,
    horizon: f64,
    weights: LossWeights,
    config: &HierarchyConfig,
    seed: u64,
) -> Result<HierarchyOutcome, TrainError> {
    config.validate()?;
    let mut surrogate = Surrogate::default();
    let mut records = Vec::new();
    for (k, level) in config.levels.iter().enumerate() {
        let problem = PhysicsProblem::new(cell, level.fidelity, profile.clone(), horizon, weights)?;
        let transform = if k == 0 {
            OutputTransform::level_one(&problem.cell, problem.kinetics(), profile, horizon)
                .map_err(crate::loss::LossError::from)?
        } else {
            OutputTransform::correction(cell, problem.direction(), horizon, config.alpha2)
        };
        let setup = LevelSetup {
            problem: &problem,
            base: &surrogate,
            transform,
        };
        let rec = train_level(
            setup,
            &level.spec,
            &level.training,
            mix_seed(seed, k as u64),
            level.collocation_seed,
        )?;
        let failed = rec.failed();
        let net = crate::nn::Network::new(level.spec)?;
        if !failed {
            surrogate.levels.push(TrainableLevel {
                net,
                params: rec.params.clone(),
                transform,
            });
        }
        records.push(rec);
        if failed {
            break;
        }
    }
    Ok(HierarchyOutcome { records, surrogate })
}
