//! Physics loss: collocation sampling, hard-constraint output transforms,
//! scaled residuals of the model equations and weighted loss assembly.

mod assemble;
mod collocation;
mod residual;
mod transform;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assemble::{
    assemble_loss, evaluate_states, states_from_solution, write_residual_dump, Attention, DataPoint, Evaluation,
    LossBreakdown, StateSet, Surrogate, TrainableLevel,
};
pub use collocation::{sample_collocation, CollocationConfig, CollocationSet};
pub use residual::{
    residual_boundary_conc, residual_interior_conc, residual_potentials, Boundary, ConcPoint, PotentialResidual,
};
pub use transform::{Direction, HeadMap, OutputTransform};

use crate::nn::NnError;
use crate::spm::{flux_from_current, CellParameters, CurrentProfile, Electrode, Kinetics, SpmError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("non-finite loss in term {term}")]
    NonFiniteLoss { term: &'static str },
    #[error(transparent)]
    Model(#[from] SpmError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("{0}")]
    Shape(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Physics resolved by a training level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Linearized kinetics and straight-line open-circuit potentials.
    Simplified,
    LinearBv,
    NonlinearBv,
}

impl Fidelity {
    pub fn kinetics(self) -> Kinetics {
        match self {
            Fidelity::Simplified | Fidelity::LinearBv => Kinetics::Linearized,
            Fidelity::NonlinearBv => Kinetics::Nonlinear,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Fidelity::Simplified => "simplified",
            Fidelity::LinearBv => "linear_bv",
            Fidelity::NonlinearBv => "nonlinear_bv",
        }
    }
}

/// The eight squared-residual terms of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    AnodeInterior,
    CathodeInterior,
    PhiE,
    PhiSCathode,
    AnodeCenter,
    CathodeCenter,
    AnodeSurface,
    CathodeSurface,
}

impl Term {
    pub const ALL: [Term; 8] = [
        Term::AnodeInterior,
        Term::CathodeInterior,
        Term::PhiE,
        Term::PhiSCathode,
        Term::AnodeCenter,
        Term::CathodeCenter,
        Term::AnodeSurface,
        Term::CathodeSurface,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Term::AnodeInterior => "c_s_an_int",
            Term::CathodeInterior => "c_s_ca_int",
            Term::PhiE => "phi_e",
            Term::PhiSCathode => "phi_s_ca",
            Term::AnodeCenter => "c_s_an_rmin",
            Term::CathodeCenter => "c_s_ca_rmin",
            Term::AnodeSurface => "c_s_an_rmax",
            Term::CathodeSurface => "c_s_ca_rmax",
        }
    }

    pub fn electrode(self) -> Option<Electrode> {
        match self {
            Term::AnodeInterior | Term::AnodeCenter | Term::AnodeSurface => Some(Electrode::Anode),
            Term::CathodeInterior | Term::CathodeCenter | Term::CathodeSurface => Some(Electrode::Cathode),
            Term::PhiE | Term::PhiSCathode => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_cs_int: f64,
    pub w_cs_rmin: f64,
    pub w_cs_rmax: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_cs_int: 1.0,
            w_cs_rmin: 1.0,
            w_cs_rmax: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [
            ("w_cs_int", self.w_cs_int),
            ("w_cs_rmin", self.w_cs_rmin),
            ("w_cs_rmax", self.w_cs_rmax),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(format!("{name} must be finite and >= 0, got {w}"));
            }
        }
        Ok(())
    }

    /// Squared weight multiplying a term's mean square.
    pub fn factor(&self, term: Term) -> f64 {
        match term {
            Term::AnodeInterior | Term::CathodeInterior => self.w_cs_int.powi(2),
            Term::PhiE | Term::PhiSCathode => 1.0,
            Term::AnodeCenter | Term::CathodeCenter => self.w_cs_rmin.powi(2),
            Term::AnodeSurface | Term::CathodeSurface => self.w_cs_rmax.powi(2),
        }
    }
}

/// A-priori magnitudes dividing each residual, indexed `[anode, cathode]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualScales {
    /// kmol m^-3 s^-1
    pub interior: [f64; 2],
    /// kmol m^-2 s^-1; the centre condition is written as a flux too.
    pub boundary: [f64; 2],
    /// kmol m^-2 s^-1
    pub potential: [f64; 2],
}

impl ResidualScales {
    /// Scales built from the pore-wall flux `J` at 2 C. Fluxes are divided by
    /// `|J|`. The interior equation is divided by the radial concentration
    /// difference a steady flux sustains, `|J| R / (2 D)`, spread over the
    /// horizon.
    pub fn from_cell(cell: &CellParameters, horizon: f64) -> Self {
        let current = 2.0 * cell.one_c_current();
        let j = Electrode::BOTH.map(|e| flux_from_current(current, cell, e).abs());
        let interior = Electrode::BOTH.map(|e| {
            let p = cell.electrode(e);
            let jk = flux_from_current(current, cell, e).abs();
            jk * p.particle_radius / (2.0 * p.solid_diffusivity * horizon)
        });
        Self {
            interior,
            boundary: j,
            potential: j,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        let m = |a: [f64; 2]| [a[0] * k, a[1] * k];
        Self {
            interior: m(self.interior),
            boundary: m(self.boundary),
            potential: m(self.potential),
        }
    }
}

/// Everything the residuals need besides the network.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsProblem {
    /// Cell as seen by the residuals (straight-line OCPs when simplified).
    pub cell: CellParameters,
    pub fidelity: Fidelity,
    pub profile: CurrentProfile,
    /// s
    pub horizon: f64,
    pub scales: ResidualScales,
    pub weights: LossWeights,
}

impl PhysicsProblem {
    pub fn new(
        cell: &CellParameters,
        fidelity: Fidelity,
        profile: CurrentProfile,
        horizon: f64,
        weights: LossWeights,
    ) -> Result<Self, LossError> {
        if !(horizon > 0.0) {
            return Err(LossError::Shape(format!("horizon must be > 0, got {horizon}")));
        }
        weights.validate().map_err(LossError::Shape)?;
        let scales = ResidualScales::from_cell(cell, horizon);
        let cell = match fidelity {
            Fidelity::Simplified => cell.with_linear_ocp(moved_into_cathode(cell, &profile, horizon)?)?,
            _ => cell.clone(),
        };
        Ok(Self {
            cell,
            fidelity,
            profile,
            horizon,
            scales,
            weights,
        })
    }

    pub fn kinetics(&self) -> Kinetics {
        self.fidelity.kinetics()
    }

    pub fn direction(&self) -> Direction {
        Direction::of(&self.profile)
    }
}

/// Lithium (kmol per m^2 of cell) moved into the cathode over the horizon.
pub fn moved_into_cathode(cell: &CellParameters, profile: &CurrentProfile, horizon: f64) -> Result<f64, SpmError> {
    let n = 2000;
    let h = horizon / n as f64;
    let mut q = 0.0;
    for k in 0..n {
        let a = profile.current_at(k as f64 * h, cell)?;
        let b = profile.current_at((k + 1) as f64 * h, cell)?;
        q += 0.5 * (a + b) * h;
    }
    Ok(-q / cell.faraday_const)
}

/// Deterministic pairwise sum.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
