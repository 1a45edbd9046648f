use serde::{Deserialize, Serialize};

use crate::fd::potentials;
use crate::nn::{EvalAdjoint, EvalResult, Head, HeadEval};
use crate::spm::{CellParameters, CurrentProfile, Electrode, Kinetics, SpmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Discharge,
    Charge,
}

impl Direction {
    pub fn of(profile: &CurrentProfile) -> Self {
        if profile.direction() > 0.0 {
            Direction::Charge
        } else {
            Direction::Discharge
        }
    }

    /// Signed excursion `alpha_j` of the concentration reconstruction: the
    /// distance from the initial value to the bound the electrode moves
    /// towards.
    pub fn alpha(self, cell: &CellParameters, e: Electrode) -> f64 {
        let p = cell.electrode(e);
        let toward_empty = matches!(
            (self, e),
            (Direction::Discharge, Electrode::Anode) | (Direction::Charge, Electrode::Cathode)
        );
        if toward_empty {
            -p.initial_conc
        } else {
            p.max_conc - p.initial_conc
        }
    }
}

/// `xi = gain * F(t) * raw + ramp_offset * F(t) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadMap {
    pub gain: f64,
    pub ramp_offset: f64,
    pub offset: f64,
}

/// Maps raw network heads to physical states with the initial condition
/// built in through the ramp `F(t) = 1 - exp(-t / tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputTransform {
    /// s
    pub tau: f64,
    /// Physical time at scaled `t = 1` (s).
    pub t_max: f64,
    /// Particle radii `[anode, cathode]` (m).
    pub radius: [f64; 2],
    pub heads: [HeadMap; 4],
}

fn radius_of(cell: &CellParameters) -> [f64; 2] {
    Electrode::BOTH.map(|e| cell.electrode(e).particle_radius)
}

fn conc_index(h: Head) -> Option<usize> {
    match h {
        Head::AnodeConc => Some(0),
        Head::CathodeConc => Some(1),
        _ => None,
    }
}

impl OutputTransform {
    pub const DEFAULT_TAU: f64 = 1.0;

    /// First-level reconstruction: sigmoid concentrations scaled by
    /// `alpha_j` and potentials offset by their consistent initial values.
    pub fn level_one(
        cell: &CellParameters,
        kinetics: Kinetics,
        profile: &CurrentProfile,
        horizon: f64,
    ) -> Result<Self, SpmError> {
        let dir = Direction::of(profile);
        let c0 = Electrode::BOTH.map(|e| cell.electrode(e).initial_conc);
        let (phi_e0, phi_s0) = potentials(cell, c0[0], c0[1], profile.current_at(0.0, cell)?, kinetics)?;
        let conc = |e: Electrode, c0: f64| HeadMap {
            gain: dir.alpha(cell, e),
            ramp_offset: 0.0,
            offset: c0,
        };
        Ok(Self {
            tau: Self::DEFAULT_TAU,
            t_max: horizon,
            radius: radius_of(cell),
            heads: [
                conc(Electrode::Anode, c0[0]),
                conc(Electrode::Cathode, c0[1]),
                HeadMap {
                    gain: 1.0,
                    ramp_offset: 0.0,
                    offset: phi_e0,
                },
                HeadMap {
                    gain: 1.0,
                    ramp_offset: 0.0,
                    offset: phi_s0,
                },
            ],
        })
    }

    /// Correction level added on top of frozen lower levels:
    /// `alpha2 * alpha_j * (2 s - 1) * F` for a sigmoid concentration head
    /// `s`, `alpha2 * raw * F` for potentials.
    pub fn correction(cell: &CellParameters, direction: Direction, horizon: f64, alpha2: f64) -> Self {
        let conc = |e: Electrode| {
            let a = direction.alpha(cell, e);
            HeadMap {
                gain: 2.0 * alpha2 * a,
                ramp_offset: -alpha2 * a,
                offset: 0.0,
            }
        };
        let pot = HeadMap {
            gain: alpha2,
            ramp_offset: 0.0,
            offset: 0.0,
        };
        Self {
            tau: Self::DEFAULT_TAU,
            t_max: horizon,
            radius: radius_of(cell),
            heads: [conc(Electrode::Anode), conc(Electrode::Cathode), pot, pot],
        }
    }

    /// `F` and `dF/dt` (per second) at scaled time `t_hat`.
    pub fn ramp(&self, t_hat: f64) -> (f64, f64) {
        let e = (-t_hat * self.t_max / self.tau).exp();
        (1.0 - e, e / self.tau)
    }

    /// Physical states and their derivatives with respect to physical `t`
    /// and `r`.
    pub fn apply(&self, raw: &EvalResult, t_hat: &[f64]) -> EvalResult {
        let mut out = EvalResult::default();
        for h in Head::ALL {
            let Some(e) = &raw.heads[h.index()] else { continue };
            let m = self.heads[h.index()];
            let rad = conc_index(h).map(|k| self.radius[k]).unwrap_or(1.0);
            let n = e.v.len();
            let mut p = HeadEval {
                v: vec![0.0; n],
                t: e.t.as_ref().map(|_| vec![0.0; n]),
                r: e.r.as_ref().map(|_| vec![0.0; n]),
                rr: e.rr.as_ref().map(|_| vec![0.0; n]),
            };
            for i in 0..n {
                let (f, df) = self.ramp(t_hat[i]);
                p.v[i] = m.gain * f * e.v[i] + m.ramp_offset * f + m.offset;
                if let (Some(pt), Some(et)) = (p.t.as_mut(), &e.t) {
                    pt[i] = m.gain * (f * et[i] / self.t_max + df * e.v[i]) + m.ramp_offset * df;
                }
                if let (Some(pr), Some(er)) = (p.r.as_mut(), &e.r) {
                    pr[i] = m.gain * f * er[i] / rad;
                }
                if let (Some(prr), Some(err)) = (p.rr.as_mut(), &e.rr) {
                    prr[i] = m.gain * f * err[i] / (rad * rad);
                }
            }
            out.heads[h.index()] = Some(p);
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply): maps sensitivities of physical
    /// states back to sensitivities of raw heads.
    pub fn pull_back(&self, adj: &EvalAdjoint, t_hat: &[f64]) -> EvalAdjoint {
        let mut out = EvalResult::default();
        for h in Head::ALL {
            let Some(g) = &adj.heads[h.index()] else { continue };
            let m = self.heads[h.index()];
            let rad = conc_index(h).map(|k| self.radius[k]).unwrap_or(1.0);
            let mut a = g.zeros_like();
            for i in 0..g.v.len() {
                let (f, df) = self.ramp(t_hat[i]);
                let gt = g.t.as_ref().map_or(0.0, |v| v[i]);
                a.v[i] = m.gain * (f * g.v[i] + df * gt);
                if let Some(at) = a.t.as_mut() {
                    at[i] = m.gain * f * gt / self.t_max;
                }
                if let (Some(ar), Some(gr)) = (a.r.as_mut(), &g.r) {
                    ar[i] = m.gain * f * gr[i] / rad;
                }
                if let (Some(arr), Some(grr)) = (a.rr.as_mut(), &g.rr) {
                    arr[i] = m.gain * f * grr[i] / (rad * rad);
                }
            }
            out.heads[h.index()] = Some(a);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_at_tau() {
        let tr = OutputTransform::correction(&CellParameters::default_cell(), Direction::Discharge, 1000.0, 0.1);
        let (f, _) = tr.ramp(1.0 / 1000.0);
        assert!((f - 0.6321205588285577).abs() < 1e-15);
    }

    #[test]
    fn charge_and_discharge_alphas() {
        let cell = CellParameters::default_cell();
        assert_eq!(
            Direction::Discharge.alpha(&cell, Electrode::Anode),
            -cell.anode.initial_conc
        );
        assert_eq!(
            Direction::Discharge.alpha(&cell, Electrode::Cathode),
            cell.cathode.max_conc - cell.cathode.initial_conc
        );
        assert_eq!(
            Direction::Charge.alpha(&cell, Electrode::Anode),
            cell.anode.max_conc - cell.anode.initial_conc
        );
        assert_eq!(
            Direction::Charge.alpha(&cell, Electrode::Cathode),
            -cell.cathode.initial_conc
        );
    }
}
