//! Interfacial kinetics: exchange current, Butler-Volmer flux and its
//! inverse, and the current-to-flux map.

use super::params::{CellParameters, Electrode, ElectrodeParameters};
use super::SpmError;

/// Largest admissible |F eta / RT| before the exponentials are considered
/// divergent.
pub const BV_EXPONENT_LIMIT: f64 = 80.0;

const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kinetics {
    Nonlinear,
    Linearized,
}

/// `i0 = k * c_e^a * (c_max - c)^a * c^(1 - a)` in A/m^2.
pub fn exchange_current(
    electrode: &ElectrodeParameters,
    cell: &CellParameters,
    surface_conc: f64,
) -> Result<f64, SpmError> {
    if !(surface_conc > 0.0 && surface_conc < electrode.max_conc) {
        return Err(SpmError::DomainError {
            value: surface_conc,
            max: electrode.max_conc,
        });
    }
    Ok(exchange_current_unchecked(electrode, cell, surface_conc).0)
}

/// Exchange current and its derivative with respect to surface concentration,
/// without the domain check. Callers must keep `0 < c < c_max`.
pub fn exchange_current_unchecked(electrode: &ElectrodeParameters, cell: &CellParameters, c: f64) -> (f64, f64) {
    let a = cell.anodic_transfer_coeff;
    let room = electrode.max_conc - c;
    let pre = electrode.exchange_prefactor * cell.electrolyte_conc.powf(a);
    let i0 = pre * room.powf(a) * c.powf(1.0 - a);
    let di0 = i0 * ((1.0 - a) / c - a / room);
    (i0, di0)
}

/// Butler-Volmer flux (kmol m^-2 s^-1) for overpotential `eta` (V).
pub fn bv_flux(i0: f64, eta: f64, cell: &CellParameters, kinetics: Kinetics) -> Result<f64, SpmError> {
    let x = eta / cell.thermal_voltage();
    if !x.is_finite() || x.abs() > BV_EXPONENT_LIMIT {
        return Err(SpmError::OverpotentialBlowup { eta });
    }
    Ok(bv_flux_parts(i0, x, cell, kinetics).0)
}

/// Flux, dJ/di0 and dJ/dx for the scaled overpotential `x = F eta / RT`.
pub fn bv_flux_parts(i0: f64, x: f64, cell: &CellParameters, kinetics: Kinetics) -> (f64, f64, f64) {
    let f = cell.faraday_const;
    match kinetics {
        Kinetics::Nonlinear => {
            let a = cell.anodic_transfer_coeff;
            let e1 = (a * x).exp();
            let e2 = ((a - 1.0) * x).exp();
            let bracket = e1 - e2;
            let dbracket = a * e1 - (a - 1.0) * e2;
            (i0 / f * bracket, bracket / f, i0 / f * dbracket)
        }
        // First-order Taylor expansion of the nonlinear branch.
        Kinetics::Linearized => (i0 / f * x, x / f, i0 / f),
    }
}

/// Overpotential that produces `j_target` with exchange current `i0`.
pub fn bv_invert(i0: f64, j_target: f64, cell: &CellParameters, kinetics: Kinetics) -> Result<f64, SpmError> {
    let vt = cell.thermal_voltage();
    let f = cell.faraday_const;
    let a = cell.anodic_transfer_coeff;
    match kinetics {
        Kinetics::Linearized => Ok(j_target * f / i0 * vt),
        Kinetics::Nonlinear if a == 0.5 => Ok(2.0 * vt * (f * j_target / (2.0 * i0)).asinh()),
        Kinetics::Nonlinear => {
            let scale = j_target.abs().max(i0 / f * 1e-12);
            let mut x = 0.0_f64;
            for _ in 0..NEWTON_MAX_ITER {
                let (j, _, dj) = bv_flux_parts(i0, x, cell, kinetics);
                let r = j - j_target;
                if r.abs() <= 1e-12 * scale {
                    return Ok(x * vt);
                }
                let mut step = r / dj;
                // damp steps that would push the exponentials out of range
                while (x - step).abs() > BV_EXPONENT_LIMIT {
                    step *= 0.5;
                }
                x -= step;
            }
            let (j, _, _) = bv_flux_parts(i0, x, cell, kinetics);
            if (j - j_target).abs() <= 1e-10 * scale {
                Ok(x * vt)
            } else {
                Err(SpmError::NoConvergence { target: j_target })
            }
        }
    }
}

/// Pore-wall flux imposed at the particle surface by the applied current
/// `current` (A/m^2, negative on discharge).
pub fn flux_from_current(current: f64, cell: &CellParameters, which: Electrode) -> f64 {
    let p = cell.electrode(which);
    let geom = p.particle_radius / (3.0 * p.active_volume_fraction * p.composite_volume);
    let sign = match which {
        Electrode::Cathode => 1.0,
        Electrode::Anode => -1.0,
    };
    sign * current / cell.faraday_const * geom
}
