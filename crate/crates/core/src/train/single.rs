use std::cell::RefCell;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::regularize::{anneal_update, gradual_fraction, Regularizer, SelfAttention};
use super::{
    adam_stage, lbfgs_stage, mix_seed, HistoryRow, LbfgsConfig, RunRecord, RunStatus, Stage, TrainError, TrainingConfig,
};
use crate::loss::{
    assemble_loss, sample_collocation, Attention, CollocationSet, LossBreakdown, OutputTransform, PhysicsProblem,
    Surrogate, Term,
};
use crate::nn::{init_weights, Network, NetworkSpec};
use crate::spm::params::content_hash;

/// What a level is trained against: physics, frozen lower levels and the
/// output reconstruction of the new network.
#[derive(Debug, Clone, Copy)]
pub struct LevelSetup<'a> {
    pub problem: &'a PhysicsProblem,
    pub base: &'a Surrogate,
    pub transform: OutputTransform,
}

/// Learning rate of the self-attention multipliers (in softplus
/// pre-activation units).
const ATTENTION_LR: f64 = 1e-2;

struct Partition {
    interior: Vec<Vec<usize>>,
    center: Vec<Vec<usize>>,
    surface: Vec<Vec<usize>>,
}

fn chunks(n: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    (0..parts)
        .map(|b| idx[b * n / parts..(b + 1) * n / parts].to_vec())
        .collect()
}

fn partition(colloc: &CollocationSet, parts: usize, rng: &mut ChaCha8Rng) -> Partition {
    Partition {
        interior: chunks(colloc.n_interior(), parts, rng),
        center: chunks(colloc.center_t.len(), parts, rng),
        surface: chunks(colloc.surface_t.len(), parts, rng),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Hash identifying the training inputs of a run.
pub(crate) fn config_hash(problem: &PhysicsProblem, spec: &NetworkSpec, config: &TrainingConfig) -> String {
    let text = format!(
        "{:?}|{:?}|{:?}|{:?}|{:?}|{}",
        problem.fidelity, problem.weights, problem.profile, spec, config, problem.horizon
    );
    content_hash(text.as_bytes())
}

/// Trains one network: Adam on mini-batches, then full-batch L-BFGS.
///
/// A non-finite loss during Adam aborts the run; the record is still
/// returned, with [`RunStatus::Aborted`] and the initial parameters.
pub fn train_level(
    setup: LevelSetup<'_>,
    spec: &NetworkSpec,
    config: &TrainingConfig,
    seed: u64,
    collocation_seed: u64,
) -> Result<RunRecord, TrainError> {
    config.validate()?;
    spec.validate()?;
    let started = Instant::now();
    let problem = setup.problem;
    let net = Network::new(*spec)?;
    let mut params = init_weights(spec, config.init, seed).values;
    let colloc = sample_collocation(&config.collocation, collocation_seed);
    let reg = config.regularizer;
    let batches = config.batches_per_epoch;
    let epochs = config.epochs();

    let history = RefCell::new(Vec::<HistoryRow>::new());
    let last = RefCell::new(None::<LossBreakdown>);
    let mut coeffs = [1.0; 8];
    let mut attention = (reg == Regularizer::SelfAttention).then(|| SelfAttention::new(&colloc, ATTENTION_LR));
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xADA));
    let mut epoch_colloc = colloc.clone();
    let mut parts = partition(&colloc, batches, &mut rng);

    let objective = |step: usize, w: &[f64]| -> Result<(f64, Vec<f64>), TrainError> {
        let (epoch, b) = (step / batches, step % batches);
        if b == 0 {
            epoch_colloc = match reg {
                Regularizer::GradualSgd => colloc.stretched(gradual_fraction(epoch, epochs, config.gradual_start)),
                Regularizer::RandomCollocation if epoch > 0 => {
                    sample_collocation(&config.collocation, mix_seed(collocation_seed, epoch as u64))
                }
                _ => colloc.clone(),
            };
            parts = partition(&epoch_colloc, batches, &mut rng);
            if reg == Regularizer::GradientAnnealing {
                let ev = assemble_loss(
                    problem,
                    setup.base,
                    &net,
                    w,
                    &setup.transform,
                    &epoch_colloc,
                    None,
                    &[],
                    0.0,
                )?;
                let mut norms = [0.0; 8];
                for t in Term::ALL {
                    let mut one = [0.0; 8];
                    one[t.index()] = 1.0;
                    norms[t.index()] = norm(&ev.gradient(&one)?);
                }
                anneal_update(
                    &mut coeffs,
                    &norms,
                    Term::AnodeInterior.index(),
                    config.annealing_momentum,
                );
            }
        }
        let (ii, ci, si) = (&parts.interior[b], &parts.center[b], &parts.surface[b]);
        let sub = epoch_colloc.subset(ii, ci, si);
        let active = attention.as_ref().filter(|_| epoch >= reg.activation_epoch(epochs));
        let att = active.map(|a| a.subset(ii, ci, si));
        let ev = assemble_loss(
            problem,
            setup.base,
            &net,
            w,
            &setup.transform,
            &sub,
            att.as_ref(),
            &[],
            0.0,
        )?;
        let bd = ev.breakdown(&coeffs)?;
        let grad = ev.gradient(&coeffs)?;
        if active.is_some() {
            let dl = ev.attention_gradient(&coeffs);
            attention.as_mut().unwrap().ascend(&dl, ii, ci, si);
        }
        let total = bd.total;
        *last.borrow_mut() = Some(bd);
        Ok((total, grad))
    };
    let on_adam = |step: usize, loss: f64, lr: f64| {
        let bd = last.borrow();
        let bd = bd.as_ref().unwrap();
        history.borrow_mut().push(HistoryRow {
            step,
            stage: Stage::Adam,
            loss,
            terms: bd.terms,
            rate: lr,
            accepted: true,
            bv_clips: bd.bv_clips,
        });
    };

    let mut status = RunStatus::Completed;
    let mut adam_params = params.clone();
    let adam_result = adam_stage(
        &mut adam_params,
        config.adam_steps,
        &config.schedule(),
        objective,
        on_adam,
    );
    match adam_result {
        Ok(()) => params = adam_params.clone(),
        Err(TrainError::NonFiniteLoss { stage, step }) => {
            status = RunStatus::Aborted {
                reason: format!("non-finite loss at {stage} step {step}"),
            };
        }
        Err(TrainError::Loss(crate::loss::LossError::NonFiniteLoss { term })) => {
            status = RunStatus::Aborted {
                reason: format!("non-finite loss in {term} during adam"),
            };
        }
        Err(e) => return Err(e),
    }
    if status != RunStatus::Completed {
        adam_params = params.clone();
    }

    let lbfgs_start = config.adam_steps;
    let final_attention: Option<Attention> = attention.as_ref().map(|a| a.attention());
    if status == RunStatus::Completed && config.lbfgs_steps > 0 {
        let n_sub = if reg == Regularizer::GradualLbfgs {
            10.min(config.lbfgs_steps)
        } else {
            1
        };
        let mut offset = lbfgs_start;
        for k in 0..n_sub {
            let steps = config.lbfgs_steps * (k + 1) / n_sub - config.lbfgs_steps * k / n_sub;
            let set = if reg == Regularizer::GradualLbfgs {
                let frac = if n_sub == 1 {
                    1.0
                } else {
                    config.gradual_start + (1.0 - config.gradual_start) * k as f64 / (n_sub - 1) as f64
                };
                colloc.stretched(frac)
            } else {
                colloc.clone()
            };
            let lcfg = LbfgsConfig {
                steps,
                history_size: config.history_size,
                warm_start: if k == 0 { config.lbfgs_warm_start } else { 0 },
                ..LbfgsConfig::default()
            };
            let objective = |_: usize, w: &[f64]| -> Result<(f64, Vec<f64>), TrainError> {
                let ev = assemble_loss(
                    problem,
                    setup.base,
                    &net,
                    w,
                    &setup.transform,
                    &set,
                    final_attention.as_ref(),
                    &[],
                    0.0,
                )?;
                let bd = ev.breakdown(&coeffs)?;
                let grad = ev.gradient(&coeffs)?;
                let total = bd.total;
                *last.borrow_mut() = Some(bd);
                Ok((total, grad))
            };
            let on_step = |s: &super::LbfgsStep| {
                let bd = last.borrow();
                let (terms, clips) = bd.as_ref().map_or(([f64::NAN; 8], 0), |b| (b.terms, b.bv_clips));
                history.borrow_mut().push(HistoryRow {
                    step: offset + s.step,
                    stage: Stage::Lbfgs,
                    loss: s.trial_loss,
                    terms: if s.accepted { terms } else { [f64::NAN; 8] },
                    rate: s.scale,
                    accepted: s.accepted,
                    bv_clips: clips,
                });
            };
            // a failing first evaluation is an abort, later failures are rejections
            match lbfgs_stage(&mut params, &lcfg, objective, on_step) {
                Ok(out) => {
                    offset += out.steps_taken;
                    if out.stalled && k + 1 == n_sub {
                        status = RunStatus::Stalled;
                    }
                }
                Err(TrainError::NonFiniteLoss { .. }) | Err(TrainError::Loss(_)) => {
                    status = RunStatus::Aborted {
                        reason: "non-finite loss at lbfgs start".into(),
                    };
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }

    let final_loss = assemble_loss(
        problem,
        setup.base,
        &net,
        &params,
        &setup.transform,
        &colloc,
        None,
        &[],
        0.0,
    )
    .and_then(|ev| ev.breakdown(&[1.0; 8]))
    .map_or(f64::NAN, |b| b.total);
    let history = history.into_inner();
    let bv_clips = history.iter().map(|r| r.bv_clips).sum();
    Ok(RunRecord {
        seed,
        collocation_seed,
        fidelity: problem.fidelity,
        spec: *spec,
        config_hash: config_hash(problem, spec, config),
        history,
        lbfgs_start,
        adam_params,
        params,
        final_loss,
        bv_clips,
        wall_time_s: started.elapsed().as_secs_f64(),
        status,
        regularizer_activation_epoch: reg.activation_epoch(epochs),
    })
}
