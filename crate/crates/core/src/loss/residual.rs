//! Pointwise scaled residuals of the model equations. Each function works in
//! physical units; derivatives with respect to the scaled network inputs are
//! converted by the output transform beforehand.

use crate::spm::{
    bv_flux_parts, exchange_current_unchecked, CellParameters, Electrode, Kinetics, SpmError, BV_EXPONENT_LIMIT,
};

/// Concentration and its derivatives at a physical radius `r` (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcPoint {
    pub c: f64,
    pub c_t: f64,
    pub c_r: f64,
    pub c_rr: f64,
    pub r: f64,
}

/// `[dc/dt - D (d2c/dr2 + (2/r) dc/dr)] / scale`.
pub fn residual_interior_conc(p: &ConcPoint, diffusivity: f64, scale: f64) -> f64 {
    (p.c_t - diffusivity * (p.c_rr + 2.0 / p.r * p.c_r)) / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Center,
    Surface,
}

/// Centre: `D dc/dr / scale` (zero flux by symmetry). Surface:
/// `(D dc/dr + J) / scale`.
pub fn residual_boundary_conc(c_r: f64, which: Boundary, flux: f64, diffusivity: f64, scale: f64) -> f64 {
    match which {
        Boundary::Center => diffusivity * c_r / scale,
        Boundary::Surface => (diffusivity * c_r + flux) / scale,
    }
}

/// Potential residuals and their partial derivatives, ordered
/// `[c_an_surface, c_ca_surface, phi_e, phi_s_ca]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialResidual {
    pub phi_e: f64,
    pub phi_s_ca: f64,
    pub d_phi_e: [f64; 4],
    pub d_phi_s_ca: [f64; 4],
    /// Butler-Volmer exponents that hit the guard and were clamped.
    pub clipped: usize,
}

struct Reaction {
    flux: f64,
    d_conc: f64,
    d_x: f64,
    clipped: bool,
}

fn reaction(
    cell: &CellParameters,
    e: Electrode,
    kinetics: Kinetics,
    surface_conc: f64,
    potential_gap: f64,
    clip: bool,
) -> Result<Reaction, SpmError> {
    let p = cell.electrode(e);
    let vt = cell.thermal_voltage();
    let lo = 1e-6 * p.max_conc;
    let hi = p.max_conc - lo;
    let c = surface_conc.clamp(lo, hi);
    let inside = c == surface_conc;
    let (i0, di0) = exchange_current_unchecked(p, cell, c);
    let x_stoich = surface_conc / p.max_conc;
    let (u, du) = p.ocp.eval_clamped(x_stoich);
    let du = if (0.0..=1.0).contains(&x_stoich) { du } else { 0.0 };
    let x = (potential_gap - u) / vt;
    if !x.is_finite() || (x.abs() > BV_EXPONENT_LIMIT && !clip) {
        return Err(SpmError::OverpotentialBlowup { eta: x * vt });
    }
    let clipped = x.abs() > BV_EXPONENT_LIMIT;
    let xc = x.clamp(-BV_EXPONENT_LIMIT, BV_EXPONENT_LIMIT);
    let (flux, dj_di0, dj_dx) = bv_flux_parts(i0, xc, cell, kinetics);
    let dj_dx = if clipped { 0.0 } else { dj_dx };
    let d_conc = if inside { dj_di0 * di0 } else { 0.0 } - dj_dx * du / p.max_conc / vt;
    Ok(Reaction {
        flux,
        d_conc,
        d_x: dj_dx / vt,
        clipped,
    })
}

/// Residuals of the two Butler-Volmer closures with the anode solid
/// potential as reference:
/// `[J_bv,an(-phi_e - U_an) - J_an(t)] / scale_an` and
/// `[J_bv,ca(phi_s - phi_e - U_ca) - J_ca(t)] / scale_ca`.
///
/// With `clip` the exponent is clamped at the guard (and counted) instead of
/// failing.
#[allow(clippy::too_many_arguments)]
pub fn residual_potentials(
    cell: &CellParameters,
    kinetics: Kinetics,
    c_an_surface: f64,
    c_ca_surface: f64,
    phi_e: f64,
    phi_s_ca: f64,
    fluxes: [f64; 2],
    scales: [f64; 2],
    clip: bool,
) -> Result<PotentialResidual, SpmError> {
    let an = reaction(cell, Electrode::Anode, kinetics, c_an_surface, -phi_e, clip)?;
    let ca = reaction(cell, Electrode::Cathode, kinetics, c_ca_surface, phi_s_ca - phi_e, clip)?;
    Ok(PotentialResidual {
        phi_e: (an.flux - fluxes[0]) / scales[0],
        phi_s_ca: (ca.flux - fluxes[1]) / scales[1],
        d_phi_e: [an.d_conc / scales[0], 0.0, -an.d_x / scales[0], 0.0],
        d_phi_s_ca: [0.0, ca.d_conc / scales[1], -ca.d_x / scales[1], ca.d_x / scales[1]],
        clipped: an.clipped as usize + ca.clipped as usize,
    })
}
