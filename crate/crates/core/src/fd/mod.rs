//! Implicit-Euler finite-volume reference solver for the single-particle
//! model. Used as the accuracy oracle for every surrogate.

mod export;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use export::{read_solution_dir, write_solution_dir, SolutionMetadata};

use crate::spm::{
    bv_invert, exchange_current, flux_from_current, CellParameters, CurrentProfile, Electrode, Kinetics, SpmError,
};

#[derive(Debug, thiserror::Error)]
pub enum FdError {
    #[error("singular tridiagonal system (pivot {pivot} at row {row})")]
    SingularMatrix { row: usize, pivot: f64 },
    #[error("concentration {value} left (0, {max}) at node {node}")]
    BoundsViolation { node: usize, value: f64, max: f64 },
    #[error("invalid solver setting: {0}")]
    InvalidConfig(String),
    #[error("step {step} (t = {t} s): {source}")]
    AtStep {
        step: usize,
        t: f64,
        #[source]
        source: Box<FdError>,
    },
    #[error(transparent)]
    Model(#[from] SpmError),
    #[error("query ({t} s, {r} m) outside the solution grid")]
    OutOfHull { t: f64, r: f64 },
    #[error("{0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Uniform radial grid including both the centre and the surface node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub n_points: usize,
    pub radius: f64,
}

impl RadialGrid {
    pub fn new(n_points: usize, radius: f64) -> Result<Self, FdError> {
        if n_points < 3 {
            return Err(FdError::InvalidConfig(format!(
                "need at least 3 radial points, got {n_points}"
            )));
        }
        if !(radius > 0.0) {
            return Err(FdError::InvalidConfig(format!("radius must be > 0, got {radius}")));
        }
        Ok(Self { n_points, radius })
    }

    pub fn spacing(&self) -> f64 {
        self.radius / (self.n_points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_points - 1 {
            self.radius
        } else {
            i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }

    fn face(&self, i: usize) -> f64 {
        // face between node i and i+1
        ((i as f64 + 0.5) * self.spacing()).min(self.radius)
    }

    /// Control-volume sizes `(r_out^3 - r_in^3) / 3`, i.e. shell volumes
    /// divided by 4 pi.
    pub fn shell_volumes(&self) -> Vec<f64> {
        let n = self.n_points;
        (0..n)
            .map(|i| {
                let inner = if i == 0 { 0.0 } else { self.face(i - 1) };
                let outer = if i == n - 1 { self.radius } else { self.face(i) };
                (outer.powi(3) - inner.powi(3)) / 3.0
            })
            .collect()
    }
}

/// Lithium content of a radial profile (per 4 pi), kmol.
pub fn shell_content(state: &[f64], grid: &RadialGrid) -> f64 {
    grid.shell_volumes().iter().zip(state).map(|(v, c)| v * c).sum()
}

/// One implicit-Euler step of spherical diffusion with zero flux at the
/// centre and `D dc/dr = -j_surf` at the surface.
pub fn step_concentration(
    state: &[f64],
    j_surf: f64,
    dt: f64,
    grid: &RadialGrid,
    diffusivity: f64,
    max_conc: f64,
) -> Result<Vec<f64>, FdError> {
    let n = grid.n_points;
    if state.len() != n {
        return Err(FdError::InvalidConfig(format!(
            "state has {} nodes, grid {}",
            state.len(),
            n
        )));
    }
    if !(dt > 0.0) {
        return Err(FdError::InvalidConfig(format!("dt must be > 0, got {dt}")));
    }
    let h = grid.spacing();
    let vols = grid.shell_volumes();
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    // solved for the increment, so a uniform state at zero flux stays
    // bit-for-bit unchanged
    for i in 0..n {
        diag[i] = vols[i] / dt;
        if i + 1 < n {
            let g = diffusivity * grid.face(i).powi(2) / h;
            diag[i] += g;
            sup[i] = -g;
            rhs[i] -= g * (state[i] - state[i + 1]);
        }
        if i > 0 {
            let g = diffusivity * grid.face(i - 1).powi(2) / h;
            diag[i] += g;
            sub[i] = -g;
            rhs[i] -= g * (state[i] - state[i - 1]);
        }
    }
    rhs[n - 1] -= j_surf * grid.radius.powi(2);
    let delta = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
    let out: Vec<f64> = state.iter().zip(&delta).map(|(c, d)| c + d).collect();
    for (node, &value) in out.iter().enumerate() {
        if !(value > 0.0 && value < max_conc) {
            return Err(FdError::BoundsViolation {
                node,
                value,
                max: max_conc,
            });
        }
    }
    Ok(out)
}

/// Thomas algorithm. `sub[0]` and `sup[n-1]` are ignored.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>, FdError> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() < f64::MIN_POSITIVE || !pivot.is_finite() {
        return Err(FdError::SingularMatrix { row: 0, pivot });
    }
    c[0] = sup[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i] * c[i - 1];
        if pivot.abs() < f64::MIN_POSITIVE || !pivot.is_finite() {
            return Err(FdError::SingularMatrix { row: i, pivot });
        }
        c[i] = if i + 1 < n { sup[i] / pivot } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    /// s
    pub dt: f64,
    pub anode_points: usize,
    pub cathode_points: usize,
    pub kinetics: Kinetics,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            anode_points: 64,
            cathode_points: 64,
            kinetics: Kinetics::Nonlinear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    AnodeConc,
    CathodeConc,
    PhiE,
    PhiSCathode,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::AnodeConc, Field::CathodeConc, Field::PhiE, Field::PhiSCathode];

    pub fn name(self) -> &'static str {
        match self {
            Field::AnodeConc => "c_s_an",
            Field::CathodeConc => "c_s_ca",
            Field::PhiE => "phi_e",
            Field::PhiSCathode => "phi_s_ca",
        }
    }

    pub fn electrode(self) -> Option<Electrode> {
        match self {
            Field::AnodeConc => Some(Electrode::Anode),
            Field::CathodeConc => Some(Electrode::Cathode),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionGrid {
    pub times: Vec<f64>,
    pub anode_radii: Vec<f64>,
    pub cathode_radii: Vec<f64>,
    /// `[time, radius]`
    pub anode_conc: Array2<f64>,
    pub cathode_conc: Array2<f64>,
    pub phi_e: Vec<f64>,
    pub phi_s_ca: Vec<f64>,
    /// Applied current at each stored time (A/m^2).
    pub current: Vec<f64>,
}

impl SolutionGrid {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty solution")
    }

    pub fn voltage(&self) -> &[f64] {
        &self.phi_s_ca
    }

    pub fn radii(&self, e: Electrode) -> &[f64] {
        match e {
            Electrode::Anode => &self.anode_radii,
            Electrode::Cathode => &self.cathode_radii,
        }
    }

    pub fn conc(&self, e: Electrode) -> &Array2<f64> {
        match e {
            Electrode::Anode => &self.anode_conc,
            Electrode::Cathode => &self.cathode_conc,
        }
    }

    /// Bilinear (time x radius) interpolation; `r` in metres, ignored for
    /// potentials.
    pub fn sample(&self, t: f64, r: f64, field: Field) -> Result<f64, FdError> {
        let (it, wt) = bracket(&self.times, t).ok_or(FdError::OutOfHull { t, r })?;
        match field.electrode() {
            None => {
                let v = match field {
                    Field::PhiE => &self.phi_e,
                    _ => &self.phi_s_ca,
                };
                Ok(lerp(v[it], v[it + 1], wt))
            }
            Some(e) => {
                let (ir, wr) = bracket(self.radii(e), r).ok_or(FdError::OutOfHull { t, r })?;
                let c = self.conc(e);
                let a = lerp(c[[it, ir]], c[[it, ir + 1]], wr);
                let b = lerp(c[[it + 1, ir]], c[[it + 1, ir + 1]], wr);
                Ok(lerp(a, b, wt))
            }
        }
    }
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else if w == 1.0 {
        b
    } else {
        a + (b - a) * w
    }
}

/// Index `i` and weight `w` such that `x = (1-w) xs[i] + w xs[i+1]`.
fn bracket(xs: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = xs.len();
    let (lo, hi) = (xs[0], xs[n - 1]);
    let slack = 1e-12 * (hi - lo).abs().max(f64::MIN_POSITIVE);
    if !(x >= lo - slack && x <= hi + slack) {
        return None;
    }
    let x = x.clamp(lo, hi);
    let i = xs.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    Some((i, w.clamp(0.0, 1.0)))
}

/// Potentials `(phi_e, phi_s_ca)` for given surface concentrations and
/// applied current, with the anode solid potential as reference.
pub fn potentials(
    cell: &CellParameters,
    surf_an: f64,
    surf_ca: f64,
    current: f64,
    kinetics: Kinetics,
) -> Result<(f64, f64), SpmError> {
    let j_an = flux_from_current(current, cell, Electrode::Anode);
    let j_ca = flux_from_current(current, cell, Electrode::Cathode);
    let i0_an = exchange_current(&cell.anode, cell, surf_an)?;
    let i0_ca = exchange_current(&cell.cathode, cell, surf_ca)?;
    let eta_an = bv_invert(i0_an, j_an, cell, kinetics)?;
    let eta_ca = bv_invert(i0_ca, j_ca, cell, kinetics)?;
    let (u_an, _) = cell.anode.ocp.eval(surf_an / cell.anode.max_conc)?;
    let (u_ca, _) = cell.cathode.ocp.eval(surf_ca / cell.cathode.max_conc)?;
    let phi_e = -eta_an - u_an;
    let phi_s_ca = eta_ca + phi_e + u_ca;
    Ok((phi_e, phi_s_ca))
}

/// Number of steps covering `horizon`; a trailing partial step is kept.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    let raw = horizon / dt;
    let n = raw.round();
    if (raw - n).abs() <= 1e-9 * raw.max(1.0) {
        n as usize
    } else {
        raw.ceil() as usize
    }
}

/// Integrates the model over `[0, horizon]`.
pub fn solve(
    cell: &CellParameters,
    profile: &CurrentProfile,
    horizon: f64,
    config: &FdConfig,
) -> Result<SolutionGrid, FdError> {
    if !(config.dt > 0.0) || !(horizon > 0.0) {
        return Err(FdError::InvalidConfig(format!(
            "need dt > 0 and horizon > 0, got {} and {horizon}",
            config.dt
        )));
    }
    let g_an = RadialGrid::new(config.anode_points, cell.anode.particle_radius)?;
    let g_ca = RadialGrid::new(config.cathode_points, cell.cathode.particle_radius)?;
    let n_steps = step_count(horizon, config.dt);
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut an = vec![cell.anode.initial_conc; g_an.n_points];
    let mut ca = vec![cell.cathode.initial_conc; g_ca.n_points];
    let mut anode_conc = Array2::zeros((n_steps + 1, g_an.n_points));
    let mut cathode_conc = Array2::zeros((n_steps + 1, g_ca.n_points));
    let mut phi_e = Vec::with_capacity(n_steps + 1);
    let mut phi_s_ca = Vec::with_capacity(n_steps + 1);
    let mut currents = Vec::with_capacity(n_steps + 1);

    let mut record = |k: usize, t: f64, an: &[f64], ca: &[f64]| -> Result<(), FdError> {
        let current = profile.current_at(t, cell)?;
        let (pe, ps) = potentials(cell, an[an.len() - 1], ca[ca.len() - 1], current, config.kinetics)?;
        anode_conc.row_mut(k).assign(&ndarray::ArrayView1::from(an));
        cathode_conc.row_mut(k).assign(&ndarray::ArrayView1::from(ca));
        times.push(t);
        phi_e.push(pe);
        phi_s_ca.push(ps);
        currents.push(current);
        Ok(())
    };
    let at = |step: usize, t: f64| {
        move |e: FdError| FdError::AtStep {
            step,
            t,
            source: Box::new(e),
        }
    };

    record(0, 0.0, &an, &ca).map_err(at(0, 0.0))?;
    for k in 1..=n_steps {
        let t = if k == n_steps { horizon } else { k as f64 * config.dt };
        let t_prev = (k - 1) as f64 * config.dt;
        let dt = t - t_prev;
        let step = || -> Result<(Vec<f64>, Vec<f64>), FdError> {
            let current = profile.current_at(t, cell)?;
            let j_an = flux_from_current(current, cell, Electrode::Anode);
            let j_ca = flux_from_current(current, cell, Electrode::Cathode);
            let an_next = step_concentration(&an, j_an, dt, &g_an, cell.anode.solid_diffusivity, cell.anode.max_conc)?;
            let ca_next = step_concentration(
                &ca,
                j_ca,
                dt,
                &g_ca,
                cell.cathode.solid_diffusivity,
                cell.cathode.max_conc,
            )?;
            Ok((an_next, ca_next))
        };
        let (an_next, ca_next) = step().map_err(at(k, t))?;
        an = an_next;
        ca = ca_next;
        record(k, t, &an, &ca).map_err(at(k, t))?;
    }
    Ok(SolutionGrid {
        times,
        anode_radii: g_an.nodes(),
        cathode_radii: g_ca.nodes(),
        anode_conc,
        cathode_conc,
        phi_e,
        phi_s_ca,
        current: currents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> RadialGrid {
        RadialGrid::new(32, 2e-6).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(RadialGrid::new(2, 1.0).is_err());
        let g = RadialGrid::new(5, 4.0).unwrap();
        assert_eq!(g.spacing(), 1.0);
        let total: f64 = g.shell_volumes().iter().sum();
        assert!((total - 64.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_state_is_steady_without_flux() {
        let g = grid();
        let state = vec![12.5; g.n_points];
        let next = step_concentration(&state, 0.0, 0.1, &g, 1e-14, 30.0).unwrap();
        for v in next {
            assert!(((v - 12.5) / 12.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_conserves_lithium() {
        let g = grid();
        let state: Vec<f64> = (0..g.n_points).map(|i| 10.0 + 0.01 * i as f64).collect();
        let j = 3e-8;
        let dt = 0.5;
        let next = step_concentration(&state, j, dt, &g, 2e-14, 30.0).unwrap();
        let vols = g.shell_volumes();
        let change: f64 = vols
            .iter()
            .zip(next.iter().zip(&state))
            .map(|(v, (a, b))| v * (a - b))
            .sum();
        let expected = -j * g.radius.powi(2) * dt;
        assert!(((change - expected) / expected).abs() < 1e-10);
    }

    #[test]
    fn bounds_violation_is_reported() {
        let g = grid();
        let state = vec![1e-3; g.n_points];
        let err = step_concentration(&state, 1e-3, 10.0, &g, 1e-14, 30.0).unwrap_err();
        assert!(matches!(err, FdError::BoundsViolation { .. }));
    }

    #[test]
    fn thomas_matches_dense_solve() {
        let sub = [0.0, -1.0, -2.0, -0.5];
        let diag = [4.0, 5.0, 6.0, 3.0];
        let sup = [1.0, 1.5, -1.0, 0.0];
        let rhs = [1.0, 2.0, 3.0, 4.0];
        let x = solve_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();
        for i in 0..4 {
            let mut lhs = diag[i] * x[i];
            if i > 0 {
                lhs += sub[i] * x[i - 1];
            }
            if i < 3 {
                lhs += sup[i] * x[i + 1];
            }
            assert!((lhs - rhs[i]).abs() < 1e-13);
        }
        assert!(solve_tridiagonal(&[0.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn step_count_rounding() {
        assert_eq!(step_count(1350.0, 0.1), 13500);
        assert_eq!(step_count(1.05, 0.1), 11);
        assert_eq!(step_count(1.0, 0.3), 4);
    }

    #[test]
    fn sample_is_exact_at_nodes_and_bilinear() {
        let cell = CellParameters::default_cell();
        let cfg = FdConfig {
            dt: 1.0,
            anode_points: 8,
            cathode_points: 8,
            ..FdConfig::default()
        };
        let sol = solve(&cell, &CurrentProfile::constant(-2.0), 20.0, &cfg).unwrap();
        let r = sol.anode_radii[3];
        assert_eq!(sol.sample(5.0, r, Field::AnodeConc).unwrap(), sol.anode_conc[[5, 3]]);
        assert_eq!(sol.sample(7.0, 0.0, Field::PhiE).unwrap(), sol.phi_e[7]);
        let mid = sol.sample(5.5, 0.0, Field::PhiSCathode).unwrap();
        assert!((mid - 0.5 * (sol.phi_s_ca[5] + sol.phi_s_ca[6])).abs() < 1e-15);
        assert!(matches!(
            sol.sample(21.0, r, Field::AnodeConc),
            Err(FdError::OutOfHull { .. })
        ));
        assert!(sol.sample(5.0, 1.0, Field::AnodeConc).is_err());
    }
}
