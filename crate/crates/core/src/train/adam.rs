use serde::{Deserialize, Serialize};

use super::TrainError;

/// Geometric decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start * (self.end / self.start).powf(frac)
    }
}

/// Adam with the usual defaults `beta1 = 0.9`, `beta2 = 0.999`,
/// `eps = 1e-8`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t);
        let b2t = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Runs `steps` Adam updates. `objective(step, params)` returns the loss and
/// gradient of the mini-batch used at that step; `on_step` sees every
/// evaluated loss with the rate used.
pub fn adam_stage<F, G>(
    params: &mut [f64],
    steps: usize,
    schedule: &LrSchedule,
    mut objective: F,
    mut on_step: G,
) -> Result<(), TrainError>
where
    F: FnMut(usize, &[f64]) -> Result<(f64, Vec<f64>), TrainError>,
    G: FnMut(usize, f64, f64),
{
    let mut opt = Adam::new(params.len());
    for step in 0..steps {
        let (loss, grad) = objective(step, params)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteLoss { stage: "adam", step });
        }
        let lr = schedule.at(step);
        on_step(step, loss, lr);
        opt.step(params, &grad, lr);
    }
    Ok(())
}
