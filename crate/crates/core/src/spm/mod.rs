//! Single-particle model: parameters and electrochemical closures.

pub mod current;
pub mod kinetics;
pub mod ocp;
pub mod params;

use std::path::PathBuf;

pub use current::CurrentProfile;
pub use kinetics::{
    bv_flux, bv_flux_parts, bv_invert, exchange_current, exchange_current_unchecked, flux_from_current, Kinetics,
    BV_EXPONENT_LIMIT,
};
pub use ocp::OcpCurve;
pub use params::{CellParameters, Electrode, ElectrodeParameters};

#[derive(Debug, thiserror::Error)]
pub enum SpmError {
    #[error("stoichiometry {value} outside [0, 1]")]
    OutOfDomain { value: f64 },
    #[error("surface concentration {value} outside (0, {max}) kmol/m^3")]
    DomainError { value: f64, max: f64 },
    #[error("overpotential {eta} V drives the Butler-Volmer exponent past its guard")]
    OverpotentialBlowup { eta: f64 },
    #[error("Butler-Volmer inversion did not converge for J = {target}")]
    NoConvergence { target: f64 },
    #[error("time {t} s outside current profile support [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
