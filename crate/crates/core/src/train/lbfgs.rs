use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub steps: usize,
    /// Curvature pairs kept.
    pub history_size: usize,
    /// Initial steps taken with the reduced scale below.
    pub warm_start: usize,
    pub warm_start_scale: f64,
    /// Consecutive rejected steps that end the stage.
    pub stall_limit: usize,
    /// Stop once the gradient infinity norm falls below this.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            history_size: 50,
            warm_start: 50,
            warm_start_scale: 0.1,
            stall_limit: 50,
            grad_tol: 0.0,
        }
    }
}

/// One attempted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsStep {
    pub step: usize,
    /// Loss at the trial point (may be non-finite for rejected steps).
    pub trial_loss: f64,
    /// Best accepted loss after this step.
    pub best_loss: f64,
    pub scale: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub loss: f64,
    pub steps_taken: usize,
    pub rejected: usize,
    pub stalled: bool,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn two_loop(grad: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(q, y)| *q -= a * y);
        alphas.push(a);
    }
    let gamma = match hist.back() {
        Some((s, y, _)) => dot(s, y) / dot(y, y),
        None => 1.0 / grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1.0),
    };
    q.iter_mut().for_each(|q| *q *= gamma);
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(q, s)| *q += (a - b) * s);
    }
    q.iter_mut().for_each(|q| *q = -*q);
    q
}

/// Full-batch L-BFGS with a checkpoint guard instead of a line search: a
/// step that does not lower the loss is undone and the step scale halved;
/// accepted steps double the scale back towards one.
///
/// `objective` returns loss and gradient; errors from it count as rejected
/// steps. The accepted loss never increases.
pub fn lbfgs_stage<F, G>(
    params: &mut [f64],
    config: &LbfgsConfig,
    mut objective: F,
    mut on_step: G,
) -> Result<LbfgsOutcome, TrainError>
where
    F: FnMut(usize, &[f64]) -> Result<(f64, Vec<f64>), TrainError>,
    G: FnMut(&LbfgsStep),
{
    let (mut loss, mut grad) = objective(0, params)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteLoss {
            stage: "lbfgs",
            step: 0,
        });
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.history_size);
    let mut scale: f64 = 1.0;
    let mut consecutive = 0;
    let mut out = LbfgsOutcome {
        loss,
        steps_taken: 0,
        rejected: 0,
        stalled: false,
        converged: false,
    };
    let mut trial = params.to_vec();
    for step in 0..config.steps {
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) <= config.grad_tol {
            out.converged = true;
            break;
        }
        let cap = if step < config.warm_start {
            config.warm_start_scale
        } else {
            1.0
        };
        let eff = scale.min(cap);
        let mut dir = two_loop(&grad, &hist);
        if dot(&dir, &grad) >= 0.0 {
            // curvature information went stale: fall back to steepest descent
            hist.clear();
            dir = two_loop(&grad, &hist);
        }
        for i in 0..params.len() {
            trial[i] = params[i] + eff * dir[i];
        }
        let eval = objective(step + 1, &trial);
        out.steps_taken = step + 1;
        let accepted = match eval {
            Ok((f, g)) if f.is_finite() && f <= loss && g.iter().all(|x| x.is_finite()) => {
                let s: Vec<f64> = trial.iter().zip(params.iter()).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    if hist.len() == config.history_size {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, 1.0 / sy));
                }
                params.copy_from_slice(&trial);
                loss = f;
                grad = g;
                scale = (scale * 2.0).min(1.0);
                consecutive = 0;
                on_step(&LbfgsStep {
                    step,
                    trial_loss: f,
                    best_loss: loss,
                    scale: eff,
                    accepted: true,
                });
                true
            }
            other => {
                let f = other.map(|(f, _)| f).unwrap_or(f64::NAN);
                scale *= 0.5;
                consecutive += 1;
                out.rejected += 1;
                on_step(&LbfgsStep {
                    step,
                    trial_loss: f,
                    best_loss: loss,
                    scale: eff,
                    accepted: false,
                });
                false
            }
        };
        if !accepted && consecutive >= config.stall_limit {
            out.stalled = true;
            break;
        }
    }
    out.loss = loss;
    Ok(out)
}
