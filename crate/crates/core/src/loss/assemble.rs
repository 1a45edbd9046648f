use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::residual::{residual_boundary_conc, residual_interior_conc, residual_potentials, Boundary, ConcPoint};
use super::{pairwise_sum, CollocationSet, LossError, OutputTransform, PhysicsProblem, Term};
use crate::nn::{Batch, Channels, EvalAdjoint, EvalResult, Head, HeadEval, Network, Tape};
use crate::spm::{flux_from_current, Electrode};

/// A network, its weights and the transform turning raw heads into states.
#[derive(Debug, Clone)]
pub struct TrainableLevel {
    pub net: Network,
    pub params: Vec<f64>,
    pub transform: OutputTransform,
}

/// Sum of frozen levels; evaluates physical states at scaled inputs.
#[derive(Debug, Clone, Default)]
pub struct Surrogate {
    pub levels: Vec<TrainableLevel>,
}

fn add_into(acc: &mut EvalResult, other: &EvalResult) {
    for h in Head::ALL {
        let (Some(a), Some(b)) = (acc.heads[h.index()].as_mut(), other.heads[h.index()].as_ref()) else {
            continue;
        };
        let add = |x: &mut [f64], y: &[f64]| x.iter_mut().zip(y).for_each(|(x, y)| *x += y);
        add(&mut a.v, &b.v);
        for (x, y) in [(&mut a.t, &b.t), (&mut a.r, &b.r), (&mut a.rr, &b.rr)] {
            if let (Some(x), Some(y)) = (x.as_mut(), y.as_ref()) {
                add(x, y);
            }
        }
    }
}

impl Surrogate {
    pub fn new(levels: Vec<TrainableLevel>) -> Self {
        Self { levels }
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Physical states (summed over levels) for a batch of scaled inputs.
    /// Returns `None` when there are no levels.
    pub fn states(&self, batch: &Batch) -> Result<Option<EvalResult>, LossError> {
        let mut acc: Option<EvalResult> = None;
        for l in &self.levels {
            let raw = l.net.evaluate(&l.params, batch)?;
            let phys = l.transform.apply(&raw, &batch.t);
            match &mut acc {
                None => acc = Some(phys),
                Some(a) => add_into(a, &phys),
            }
        }
        Ok(acc)
    }

    /// Horizon of the first level (s).
    pub fn horizon(&self) -> f64 {
        self.levels.first().map_or(0.0, |l| l.transform.t_max)
    }

    /// State values at physical times `t` (s) and fractional radii
    /// `r / R_j`, ordered like [`Head::ALL`].
    pub fn predict(&self, t: &[f64], r_frac: &[f64]) -> Result<[Vec<f64>; 4], LossError> {
        let t_max = self.horizon();
        let batch = Batch::new(t.iter().map(|x| x / t_max).collect(), r_frac.to_vec());
        let s = self
            .states(&batch)?
            .ok_or_else(|| LossError::Shape("surrogate has no levels".into()))?;
        Ok(Head::ALL.map(|h| s.head(h).v.clone()))
    }
}

/// Per-point non-negative multipliers of the squared residuals, one vector
/// per term aligned with that term's points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub multipliers: [Vec<f64>; 8],
}

impl Attention {
    pub fn ones(colloc: &CollocationSet) -> Self {
        Self {
            multipliers: Term::ALL.map(|t| vec![1.0; term_len(colloc, t)]),
        }
    }
}

fn term_len(colloc: &CollocationSet, t: Term) -> usize {
    match t {
        Term::AnodeInterior | Term::CathodeInterior | Term::PhiE | Term::PhiSCathode => colloc.n_interior(),
        Term::AnodeCenter | Term::CathodeCenter => colloc.center_t.len(),
        Term::AnodeSurface | Term::CathodeSurface => colloc.surface_t.len(),
    }
}

/// Observation for the optional data term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub t_hat: f64,
    pub r_hat: f64,
    pub head: Head,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Weighted contribution of each term, ordered like [`Term::ALL`].
    pub terms: [f64; 8],
    pub data: f64,
    pub total: f64,
    pub bv_clips: usize,
}

impl LossBreakdown {
    pub fn term(&self, t: Term) -> f64 {
        self.terms[t.index()]
    }
}

enum BatchKind {
    Interior,
    Potential,
    Center,
    Surface,
    Data,
}

struct Recorded<'a> {
    kind: BatchKind,
    tape: Tape<'a>,
    t_hat: Vec<f64>,
    layout: EvalResult,
}

/// Residuals of one parameter vector on one collocation set, with the
/// recorded forward passes needed for gradients.
pub struct Evaluation<'a> {
    transform: OutputTransform,
    recorded: Vec<Recorded<'a>>,
    colloc: CollocationSet,
    residuals: [Vec<f64>; 8],
    attention: [Vec<f64>; 8],
    factors: [f64; 8],
    /// d residual / d(c_t, c_r, c_rr) at interior points per electrode.
    interior_partials: [Vec<[f64; 3]>; 2],
    /// d residual / d c_r at centre and surface points.
    center_partial: [f64; 2],
    surface_partial: [f64; 2],
    potential_partials: Vec<([f64; 4], [f64; 4])>,
    data_points: Vec<DataPoint>,
    data_residuals: Vec<f64>,
    data_weight: f64,
    bv_clips: usize,
    n_params: usize,
}

fn conc_heads() -> [Head; 2] {
    [Head::AnodeConc, Head::CathodeConc]
}

/// Physical states at the four point families of a collocation set.
/// `interior` needs concentration values with t, r and rr derivatives,
/// `potential` all four heads at `r = 1`, `center` and `surface` the
/// concentration r-derivatives.
#[derive(Debug, Clone, Default)]
pub struct StateSet {
    pub interior: Option<EvalResult>,
    pub potential: Option<EvalResult>,
    pub center: Option<EvalResult>,
    pub surface: Option<EvalResult>,
}

#[derive(Default)]
struct ResidualSet {
    residuals: [Vec<f64>; 8],
    interior_partials: [Vec<[f64; 3]>; 2],
    center_partial: [f64; 2],
    surface_partial: [f64; 2],
    potential_partials: Vec<([f64; 4], [f64; 4])>,
    bv_clips: usize,
}

fn missing(what: &str) -> LossError {
    LossError::Shape(format!("missing {what} states"))
}

fn residuals_from_states(
    problem: &PhysicsProblem,
    colloc: &CollocationSet,
    states: &StateSet,
) -> Result<ResidualSet, LossError> {
    let cell = &problem.cell;
    let scales = &problem.scales;
    let kinetics = problem.kinetics();
    let horizon = problem.horizon;
    let ni = colloc.n_interior();
    let mut out = ResidualSet::default();

    if ni > 0 {
        let phys = states.interior.as_ref().ok_or_else(|| missing("interior"))?;
        for (k, e) in Electrode::BOTH.into_iter().enumerate() {
            let p = cell.electrode(e);
            let h = phys.head(conc_heads()[k]);
            let (Some(ht), Some(hr), Some(hrr)) = (h.t.as_ref(), h.r.as_ref(), h.rr.as_ref()) else {
                return Err(missing("interior derivative"));
            };
            let s = scales.interior[k];
            let d = p.solid_diffusivity;
            let term = if k == 0 {
                Term::AnodeInterior
            } else {
                Term::CathodeInterior
            };
            for i in 0..ni {
                let r = colloc.interior_r[i] * p.particle_radius;
                let pt = ConcPoint {
                    c: h.v[i],
                    c_t: ht[i],
                    c_r: hr[i],
                    c_rr: hrr[i],
                    r,
                };
                out.residuals[term.index()].push(residual_interior_conc(&pt, d, s));
                out.interior_partials[k].push([1.0 / s, -2.0 * d / (r * s), -d / s]);
            }
        }

        // Potentials are enforced at the interior times, using the surface
        // concentrations at those times.
        let phys = states.potential.as_ref().ok_or_else(|| missing("potential"))?;
        for i in 0..ni {
            let t = colloc.interior_t[i] * horizon;
            let current = problem.profile.current_at(t, cell)?;
            let fluxes = Electrode::BOTH.map(|e| flux_from_current(current, cell, e));
            let res = residual_potentials(
                cell,
                kinetics,
                phys.head(Head::AnodeConc).v[i],
                phys.head(Head::CathodeConc).v[i],
                phys.head(Head::PhiE).v[i],
                phys.head(Head::PhiSCathode).v[i],
                fluxes,
                scales.potential,
                true,
            )?;
            out.residuals[Term::PhiE.index()].push(res.phi_e);
            out.residuals[Term::PhiSCathode.index()].push(res.phi_s_ca);
            out.potential_partials.push((res.d_phi_e, res.d_phi_s_ca));
            out.bv_clips += res.clipped;
        }
    }

    for (which, ts, phys) in [
        (Boundary::Center, &colloc.center_t, &states.center),
        (Boundary::Surface, &colloc.surface_t, &states.surface),
    ] {
        if ts.is_empty() {
            continue;
        }
        let phys = phys.as_ref().ok_or_else(|| missing("boundary"))?;
        for (k, e) in Electrode::BOTH.into_iter().enumerate() {
            let p = cell.electrode(e);
            let s = scales.boundary[k];
            let hr = phys
                .head(conc_heads()[k])
                .r
                .as_ref()
                .ok_or_else(|| missing("boundary derivative"))?;
            let term = match (which, k) {
                (Boundary::Center, 0) => Term::AnodeCenter,
                (Boundary::Center, _) => Term::CathodeCenter,
                (Boundary::Surface, 0) => Term::AnodeSurface,
                (Boundary::Surface, _) => Term::CathodeSurface,
            };
            for (i, &t_hat) in ts.iter().enumerate() {
                let flux = match which {
                    Boundary::Center => 0.0,
                    Boundary::Surface => flux_from_current(problem.profile.current_at(t_hat * horizon, cell)?, cell, e),
                };
                out.residuals[term.index()].push(residual_boundary_conc(hr[i], which, flux, p.solid_diffusivity, s));
            }
            let partial = p.solid_diffusivity / s;
            match which {
                Boundary::Center => out.center_partial[k] = partial,
                Boundary::Surface => out.surface_partial[k] = partial,
            }
        }
    }
    Ok(out)
}

fn check_attention(attention: Option<&Attention>, residuals: &[Vec<f64>; 8]) -> Result<[Vec<f64>; 8], LossError> {
    let Some(a) = attention else {
        return Ok(Term::ALL.map(|t| vec![1.0; residuals[t.index()].len()]));
    };
    for t in Term::ALL {
        if a.multipliers[t.index()].len() != residuals[t.index()].len() {
            return Err(LossError::Shape(format!(
                "attention for {} has {} entries, term has {} points",
                t.name(),
                a.multipliers[t.index()].len(),
                residuals[t.index()].len()
            )));
        }
    }
    Ok(a.multipliers.clone())
}

/// Evaluates every residual for the network `net` with weights `params`,
/// stacked on top of the frozen `base` levels.
#[allow(clippy::too_many_arguments)]
pub fn assemble_loss<'a>(
    problem: &PhysicsProblem,
    base: &Surrogate,
    net: &'a Network,
    params: &[f64],
    transform: &OutputTransform,
    colloc: &CollocationSet,
    attention: Option<&Attention>,
    data: &[DataPoint],
    data_weight: f64,
) -> Result<Evaluation<'a>, LossError> {
    let ni = colloc.n_interior();
    let mut recorded = Vec::new();
    let mut record = |kind: BatchKind, batch: Batch| -> Result<EvalResult, LossError> {
        let tape = net.record(params, &batch)?;
        let raw = tape.outputs();
        let mut phys = transform.apply(&raw, &batch.t);
        if let Some(b) = base.states(&batch)? {
            add_into(&mut phys, &b);
        }
        recorded.push(Recorded {
            kind,
            tape,
            t_hat: batch.t,
            layout: raw,
        });
        Ok(phys)
    };

    let mut states = StateSet::default();
    if ni > 0 {
        let batch = Batch::new(colloc.interior_t.clone(), colloc.interior_r.clone())
            .with_channels(Channels::ALL)
            .with_heads(&conc_heads());
        states.interior = Some(record(BatchKind::Interior, batch)?);
        let batch = Batch::new(colloc.interior_t.clone(), vec![1.0; ni]);
        states.potential = Some(record(BatchKind::Potential, batch)?);
    }
    for (ts, r_hat, kind) in [
        (&colloc.center_t, 0.0, BatchKind::Center),
        (&colloc.surface_t, 1.0, BatchKind::Surface),
    ] {
        if ts.is_empty() {
            continue;
        }
        let center = matches!(kind, BatchKind::Center);
        let batch = Batch::new(ts.clone(), vec![r_hat; ts.len()])
            .with_channels(Channels::R)
            .with_heads(&conc_heads());
        let phys = Some(record(kind, batch)?);
        if center {
            states.center = phys;
        } else {
            states.surface = phys;
        }
    }

    let mut data_residuals = Vec::new();
    if data_weight > 0.0 && !data.is_empty() {
        let batch = Batch::new(
            data.iter().map(|d| d.t_hat).collect(),
            data.iter().map(|d| d.r_hat).collect(),
        );
        let phys = record(BatchKind::Data, batch)?;
        data_residuals = data
            .iter()
            .enumerate()
            .map(|(i, d)| phys.head(d.head).v[i] - d.value)
            .collect();
    }

    let set = residuals_from_states(problem, colloc, &states)?;
    let attention = check_attention(attention, &set.residuals)?;
    Ok(Evaluation {
        transform: *transform,
        recorded,
        colloc: colloc.clone(),
        residuals: set.residuals,
        attention,
        factors: Term::ALL.map(|t| problem.weights.factor(t)),
        interior_partials: set.interior_partials,
        center_partial: set.center_partial,
        surface_partial: set.surface_partial,
        potential_partials: set.potential_partials,
        data_points: data.to_vec(),
        data_residuals,
        data_weight,
        bv_clips: set.bv_clips,
        n_params: net.n_params(),
    })
}

/// Residuals of externally supplied states (for instance fields
/// interpolated from the reference solver). The result has no parameter
/// gradient.
pub fn evaluate_states(
    problem: &PhysicsProblem,
    colloc: &CollocationSet,
    states: &StateSet,
    attention: Option<&Attention>,
) -> Result<Evaluation<'static>, LossError> {
    let set = residuals_from_states(problem, colloc, states)?;
    let attention = check_attention(attention, &set.residuals)?;
    Ok(Evaluation {
        transform: OutputTransform::correction(&problem.cell, problem.direction(), problem.horizon, 1.0),
        recorded: Vec::new(),
        colloc: colloc.clone(),
        residuals: set.residuals,
        attention,
        factors: Term::ALL.map(|t| problem.weights.factor(t)),
        interior_partials: set.interior_partials,
        center_partial: set.center_partial,
        surface_partial: set.surface_partial,
        potential_partials: set.potential_partials,
        data_points: Vec::new(),
        data_residuals: Vec::new(),
        data_weight: 0.0,
        bv_clips: set.bv_clips,
        n_params: 0,
    })
}

/// States sampled from a reference solution, with derivatives taken by
/// second-order differences on the solution's own grid spacing.
pub fn states_from_solution(
    grid: &crate::fd::SolutionGrid,
    colloc: &CollocationSet,
    horizon: f64,
) -> Result<StateSet, LossError> {
    use crate::fd::Field;
    let fd = |e: crate::fd::FdError| LossError::Shape(format!("reference sample failed: {e}"));
    let t_end = grid.horizon();
    let dt = grid.times[1] - grid.times[0];
    let conc_fields = [Field::AnodeConc, Field::CathodeConc];
    let radius = |k: usize| *grid.radii(Electrode::BOTH[k]).last().unwrap();
    let dr = |k: usize| {
        let r = grid.radii(Electrode::BOTH[k]);
        r[1] - r[0]
    };
    let sample = |t: f64, r: f64, f: Field| grid.sample(t.clamp(0.0, t_end), r, f).map_err(fd);
    let empty = |n: usize, t: bool, r: bool, rr: bool| HeadEval {
        v: vec![0.0; n],
        t: t.then(|| vec![0.0; n]),
        r: r.then(|| vec![0.0; n]),
        rr: rr.then(|| vec![0.0; n]),
    };

    let ni = colloc.n_interior();
    let mut interior = EvalResult::default();
    let mut potential = EvalResult::default();
    for (k, f) in conc_fields.into_iter().enumerate() {
        let mut h = empty(ni, true, true, true);
        let (rad, hr) = (radius(k), dr(k));
        for i in 0..ni {
            let t = colloc.interior_t[i] * horizon;
            // the profile is even in r, so differences near the centre reflect
            let r = (colloc.interior_r[i] * rad).min(rad - hr);
            let (tm, tp) = ((t - dt).max(0.0), (t + dt).min(t_end));
            let c = sample(t, r, f)?;
            let (cm, cp) = (sample(t, (r - hr).abs(), f)?, sample(t, r + hr, f)?);
            h.v[i] = sample(t, colloc.interior_r[i] * rad, f)?;
            h.t.as_mut().unwrap()[i] = (sample(tp, r, f)? - sample(tm, r, f)?) / (tp - tm);
            h.r.as_mut().unwrap()[i] = (cp - cm) / (2.0 * hr);
            h.rr.as_mut().unwrap()[i] = (cp - 2.0 * c + cm) / (hr * hr);
        }
        interior.heads[conc_heads()[k].index()] = Some(h);
    }
    for (j, f) in Field::ALL.into_iter().enumerate() {
        let mut h = empty(ni, false, false, false);
        for i in 0..ni {
            let t = colloc.interior_t[i] * horizon;
            let r = if j < 2 { radius(j) } else { 0.0 };
            h.v[i] = sample(t, r, f)?;
        }
        potential.heads[j] = Some(h);
    }
    let boundary = |ts: &[f64], center: bool| -> Result<EvalResult, LossError> {
        let mut out = EvalResult::default();
        for (k, f) in conc_fields.into_iter().enumerate() {
            let mut h = empty(ts.len(), false, true, false);
            let (rad, hr) = (radius(k), dr(k));
            for (i, &th) in ts.iter().enumerate() {
                let t = th * horizon;
                let (r0, s) = if center { (0.0, 1.0) } else { (rad, -1.0) };
                let c0 = sample(t, r0, f)?;
                let c1 = sample(t, r0 + s * hr, f)?;
                let c2 = sample(t, r0 + s * 2.0 * hr, f)?;
                h.v[i] = c0;
                h.r.as_mut().unwrap()[i] = s * (-3.0 * c0 + 4.0 * c1 - c2) / (2.0 * hr);
            }
            out.heads[conc_heads()[k].index()] = Some(h);
        }
        Ok(out)
    };
    Ok(StateSet {
        interior: (ni > 0).then_some(interior),
        potential: (ni > 0).then_some(potential),
        center: Some(boundary(&colloc.center_t, true)?),
        surface: Some(boundary(&colloc.surface_t, false)?),
    })
}

impl Evaluation<'_> {
    pub fn residuals(&self, t: Term) -> &[f64] {
        &self.residuals[t.index()]
    }

    pub fn bv_clips(&self) -> usize {
        self.bv_clips
    }

    /// Loss with every term additionally multiplied by `coeffs` (all ones
    /// for the plain loss).
    pub fn breakdown(&self, coeffs: &[f64; 8]) -> Result<LossBreakdown, LossError> {
        let mut terms = [0.0; 8];
        for t in Term::ALL {
            let k = t.index();
            let r = &self.residuals[k];
            if r.is_empty() {
                continue;
            }
            let sq: Vec<f64> = r.iter().zip(&self.attention[k]).map(|(r, l)| l * r * r).collect();
            terms[k] = coeffs[k] * self.factors[k] * pairwise_sum(&sq) / r.len() as f64;
            if !terms[k].is_finite() {
                return Err(LossError::NonFiniteLoss { term: t.name() });
            }
        }
        let data = if self.data_residuals.is_empty() {
            0.0
        } else {
            let sq: Vec<f64> = self.data_residuals.iter().map(|r| r * r).collect();
            self.data_weight * pairwise_sum(&sq) / sq.len() as f64
        };
        if !data.is_finite() {
            return Err(LossError::NonFiniteLoss { term: "data" });
        }
        let total = pairwise_sum(&terms) + data;
        Ok(LossBreakdown {
            terms,
            data,
            total,
            bv_clips: self.bv_clips,
        })
    }

    /// `d loss / d lambda_i` for every attention multiplier.
    pub fn attention_gradient(&self, coeffs: &[f64; 8]) -> [Vec<f64>; 8] {
        Term::ALL.map(|t| {
            let k = t.index();
            let n = self.residuals[k].len().max(1) as f64;
            self.residuals[k]
                .iter()
                .map(|r| coeffs[k] * self.factors[k] * r * r / n)
                .collect()
        })
    }

    /// Parameter gradient of the loss built with `coeffs`.
    pub fn gradient(&self, coeffs: &[f64; 8]) -> Result<Vec<f64>, LossError> {
        let mut grad = vec![0.0; self.n_params];
        // dL/dres for every point of every term
        let dres: [Vec<f64>; 8] = Term::ALL.map(|t| {
            let k = t.index();
            let n = self.residuals[k].len().max(1) as f64;
            self.residuals[k]
                .iter()
                .zip(&self.attention[k])
                .map(|(r, l)| coeffs[k] * self.factors[k] * l * 2.0 * r / n)
                .collect()
        });
        for rec in &self.recorded {
            let mut adj: EvalAdjoint = rec.layout.zeros_like();
            match rec.kind {
                BatchKind::Interior => {
                    for (k, term) in [Term::AnodeInterior, Term::CathodeInterior].into_iter().enumerate() {
                        let a = adj.head_mut(conc_heads()[k]);
                        let g = &dres[term.index()];
                        let (at, ar, arr) = (a.t.as_mut().unwrap(), a.r.as_mut().unwrap(), a.rr.as_mut().unwrap());
                        for (i, p) in self.interior_partials[k].iter().enumerate() {
                            at[i] = g[i] * p[0];
                            ar[i] = g[i] * p[1];
                            arr[i] = g[i] * p[2];
                        }
                    }
                }
                BatchKind::Potential => {
                    let ge = &dres[Term::PhiE.index()];
                    let gs = &dres[Term::PhiSCathode.index()];
                    for (j, h) in Head::ALL.into_iter().enumerate() {
                        let a = &mut adj.head_mut(h).v;
                        for (i, (pe, ps)) in self.potential_partials.iter().enumerate() {
                            a[i] = ge[i] * pe[j] + gs[i] * ps[j];
                        }
                    }
                }
                BatchKind::Center | BatchKind::Surface => {
                    let center = matches!(rec.kind, BatchKind::Center);
                    for (k, h) in conc_heads().into_iter().enumerate() {
                        let term = match (center, k) {
                            (true, 0) => Term::AnodeCenter,
                            (true, _) => Term::CathodeCenter,
                            (false, 0) => Term::AnodeSurface,
                            (false, _) => Term::CathodeSurface,
                        };
                        let partial = if center {
                            self.center_partial[k]
                        } else {
                            self.surface_partial[k]
                        };
                        let a = adj.head_mut(h).r.as_mut().unwrap();
                        for (ai, g) in a.iter_mut().zip(&dres[term.index()]) {
                            *ai = g * partial;
                        }
                    }
                }
                BatchKind::Data => {
                    let n = self.data_residuals.len() as f64;
                    for (i, (d, r)) in self.data_points.iter().zip(&self.data_residuals).enumerate() {
                        adj.head_mut(d.head).v[i] += self.data_weight * 2.0 * r / n;
                    }
                }
            }
            let raw_adj = self.transform.pull_back(&adj, &rec.t_hat);
            rec.tape.backward(&raw_adj, &mut grad)?;
        }
        Ok(grad)
    }

    /// Writes one row per (term, point): coordinates, residual, attention
    /// multiplier, term weight and the point's contribution to the loss.
    pub fn write_dump(&self, path: &Path, coeffs: &[f64; 8]) -> Result<(), LossError> {
        write_residual_dump(path, self, coeffs)
    }
}

/// CSV dump of every residual, see [`Evaluation::write_dump`].
pub fn write_residual_dump(path: &Path, ev: &Evaluation<'_>, coeffs: &[f64; 8]) -> Result<(), LossError> {
    let io = |source| LossError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "term,index,t_hat,r_hat,residual,attention,weight,contribution").map_err(io)?;
    let c = &ev.colloc;
    for t in Term::ALL {
        let k = t.index();
        let n = ev.residuals[k].len() as f64;
        for (i, r) in ev.residuals[k].iter().enumerate() {
            let (th, rh) = match t {
                Term::AnodeInterior | Term::CathodeInterior => (c.interior_t[i], c.interior_r[i]),
                Term::PhiE | Term::PhiSCathode => (c.interior_t[i], 1.0),
                Term::AnodeCenter | Term::CathodeCenter => (c.center_t[i], 0.0),
                Term::AnodeSurface | Term::CathodeSurface => (c.surface_t[i], 1.0),
            };
            let lam = ev.attention[k][i];
            let weight = coeffs[k] * ev.factors[k];
            writeln!(
                w,
                "{},{i},{th:e},{rh:e},{r:e},{lam:e},{weight:e},{:e}",
                t.name(),
                weight * lam * r * r / n
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}
