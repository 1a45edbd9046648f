use serde::{Deserialize, Serialize};

use super::adam::Adam;
use crate::loss::{Attention, CollocationSet, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    None,
    /// Time domain grown during the Adam stage.
    GradualSgd,
    /// Time domain grown during the L-BFGS stage.
    GradualLbfgs,
    /// Fresh collocation points every Adam epoch.
    RandomCollocation,
    /// Trainable per-point residual multipliers.
    SelfAttention,
    /// Per-term weights balancing gradient magnitudes.
    GradientAnnealing,
}

impl Regularizer {
    pub const ALL: [Regularizer; 6] = [
        Regularizer::None,
        Regularizer::GradualSgd,
        Regularizer::GradualLbfgs,
        Regularizer::RandomCollocation,
        Regularizer::SelfAttention,
        Regularizer::GradientAnnealing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::GradualSgd => "gradual_sgd",
            Regularizer::GradualLbfgs => "gradual_lbfgs",
            Regularizer::RandomCollocation => "random_collocation",
            Regularizer::SelfAttention => "self_attention",
            Regularizer::GradientAnnealing => "gradient_annealing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }

    /// First Adam epoch at which the strategy changes anything.
    pub fn activation_epoch(self, epochs: usize) -> usize {
        match self {
            Regularizer::SelfAttention => epochs / 2,
            _ => 0,
        }
    }
}

/// Time-domain fraction after `progress` of `total` schedule units: linear
/// from `start` to one over the first half, then one.
pub fn gradual_fraction(progress: usize, total: usize, start: f64) -> f64 {
    let half = total / 2;
    if half == 0 || progress >= half {
        return 1.0;
    }
    start + (1.0 - start) * progress as f64 / half as f64
}

/// One moving-average step of gradient annealing. `norms[k]` is the
/// gradient norm of term `k` at unit weight; the target weight of a term is
/// the reference norm over its own norm.
pub fn anneal_update(weights: &mut [f64], norms: &[f64], reference: usize, momentum: f64) {
    let r = norms[reference];
    for (k, (w, &n)) in weights.iter_mut().zip(norms).enumerate() {
        if k == reference || !(n > 0.0) || !r.is_finite() {
            continue;
        }
        *w = momentum * *w + (1.0 - momentum) * (r / n);
    }
}

fn softplus(a: f64) -> f64 {
    if a > 30.0 {
        a
    } else {
        a.exp().ln_1p()
    }
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Positive multipliers `softplus(a)` per collocation point, trained by
/// gradient ascent on the loss.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    raw: [Vec<f64>; 8],
    opt: [Adam; 8],
    pub lr: f64,
}

impl SelfAttention {
    /// All multipliers start at one.
    pub fn new(colloc: &CollocationSet, lr: f64) -> Self {
        let a0 = (1.0f64.exp() - 1.0).ln();
        let ones = Attention::ones(colloc);
        Self {
            raw: ones.multipliers.clone().map(|v| vec![a0; v.len()]),
            opt: ones.multipliers.map(|v| Adam::new(v.len())),
            lr,
        }
    }

    pub fn attention(&self) -> Attention {
        Attention {
            multipliers: self.raw.clone().map(|v| v.into_iter().map(softplus).collect()),
        }
    }

    /// Multipliers of a subset of the points, index lists as in
    /// [`CollocationSet::subset`].
    pub fn subset(&self, interior: &[usize], center: &[usize], surface: &[usize]) -> Attention {
        let full = self.attention();
        Attention {
            multipliers: Term::ALL.map(|t| {
                let idx = match t {
                    Term::AnodeInterior | Term::CathodeInterior | Term::PhiE | Term::PhiSCathode => interior,
                    Term::AnodeCenter | Term::CathodeCenter => center,
                    Term::AnodeSurface | Term::CathodeSurface => surface,
                };
                idx.iter().map(|&i| full.multipliers[t.index()][i]).collect()
            }),
        }
    }

    /// Ascent step from `dl_dlambda` of a subset (same index convention).
    pub fn ascend(&mut self, dl_dlambda: &[Vec<f64>; 8], interior: &[usize], center: &[usize], surface: &[usize]) {
        for t in Term::ALL {
            let k = t.index();
            let idx = match t {
                Term::AnodeInterior | Term::CathodeInterior | Term::PhiE | Term::PhiSCathode => interior,
                Term::AnodeCenter | Term::CathodeCenter => center,
                Term::AnodeSurface | Term::CathodeSurface => surface,
            };
            // negated gradient in raw coordinates, so the descent step ascends
            let mut g = vec![0.0; self.raw[k].len()];
            for (j, &i) in idx.iter().enumerate() {
                g[i] = -dl_dlambda[k][j] * sigmoid(self.raw[k][i]);
            }
            self.opt[k].step(&mut self.raw[k], &g, self.lr);
        }
    }
}
