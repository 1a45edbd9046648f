use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spm_pinn::loss::{
    CollocationConfig, Fidelity, LossWeights, OutputTransform, PhysicsProblem, Surrogate, TrainableLevel,
};
use spm_pinn::nn::{init_weights, InitScheme, Network, NetworkSpec};
use spm_pinn::spm::{CellParameters, CurrentProfile};
use spm_pinn::train::*;

fn bowl<'a>(center: &'a [f64], curv: &'a [f64]) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + 'a {
    move |w: &[f64]| {
        let mut loss = 0.0;
        let mut g = vec![0.0; w.len()];
        for i in 0..w.len() {
            let d = w[i] - center[i];
            loss += 0.5 * curv[i] * d * d;
            g[i] = curv[i] * d;
        }
        (loss, g)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn lr_schedule_endpoints() {
    let s = TrainingConfig::default().schedule();
    assert_eq!(s.at(0), 1e-3);
    assert!((s.at(1500) - 1e-4).abs() < 1e-18);
    assert!((s.at(2999) - 1e-4).abs() < 1e-18);
    assert!((s.at(750) - 10f64.powf(-3.5)).abs() < 1e-12);
}

#[test]
fn adam_reaches_bowl_minimum() {
    let center = [0.3, -0.2, 0.1, 0.25];
    let curv = [1.0, 3.0, 10.0, 0.5];
    let f = bowl(&center, &curv);
    let mut w = vec![0.0; 4];
    adam_stage(
        &mut w,
        3000,
        &TrainingConfig::default().schedule(),
        |_, w| Ok(f(w)),
        |_, _, _| {},
    )
    .unwrap();
    assert!(dist(&w, &center) < 1e-3, "{w:?}");
}

#[test]
fn adam_stops_on_non_finite_loss() {
    let mut w = vec![1.0];
    let err = adam_stage(
        &mut w,
        10,
        &TrainingConfig::default().schedule(),
        |k, w| Ok((if k == 3 { f64::NAN } else { w[0] * w[0] }, vec![2.0 * w[0]])),
        |_, _, _| {},
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::NonFiniteLoss { stage: "adam", step: 3 }));
}

#[test]
fn lbfgs_solves_quadratic() {
    let center: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
    let curv: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
    let f = bowl(&center, &curv);
    let mut w = vec![0.0; 10];
    let cfg = LbfgsConfig {
        steps: 200,
        ..LbfgsConfig::default()
    };
    let out = lbfgs_stage(&mut w, &cfg, |_, w| Ok(f(w)), |_| {}).unwrap();
    assert!(out.loss <= 1e-10, "{out:?}");
}

fn rosenbrock(w: &[f64]) -> (f64, Vec<f64>) {
    let (x, y) = (w[0], w[1]);
    let loss = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
    let gx = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
    let gy = 200.0 * (y - x * x);
    (loss, vec![gx, gy])
}

#[test]
fn lbfgs_finds_rosenbrock_minimum() {
    let mut w = vec![-1.2, 1.0];
    let cfg = LbfgsConfig {
        steps: 2000,
        stall_limit: 2000,
        ..LbfgsConfig::default()
    };
    let out = lbfgs_stage(&mut w, &cfg, |_, w| Ok(rosenbrock(w)), |_| {}).unwrap();
    assert!(out.steps_taken <= 2000);
    assert!(dist(&w, &[1.0, 1.0]) < 1e-6, "{w:?} {out:?}");
}

#[test]
fn guard_restores_checkpoint_on_spike() {
    // the spike hits the last trial of the stage, so the stage must end on
    // the checkpoint taken before it
    for spike in [1, 7, 30, 80] {
        let mut trials: Vec<Vec<f64>> = Vec::new();
        let mut accepted = Vec::new();
        let mut w = vec![-1.2, 1.0];
        let cfg = LbfgsConfig {
            steps: spike,
            ..LbfgsConfig::default()
        };
        lbfgs_stage(
            &mut w,
            &cfg,
            |k, w| {
                trials.push(w.to_vec());
                Ok(if k == spike {
                    (1e30, vec![0.0; 2])
                } else {
                    rosenbrock(w)
                })
            },
            |s| accepted.push(s.accepted),
        )
        .unwrap();
        assert_eq!(accepted.last(), Some(&false));
        let checkpoint = (0..spike).rev().find(|&k| k == 0 || accepted[k - 1]).unwrap();
        assert_eq!(w, trials[checkpoint], "spike at {spike}");
    }
}

#[test]
fn guard_keeps_best_loss_nonincreasing_under_hostile_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hostile: Vec<u8> = (0..300).map(|_| rng.gen_range(0..4)).collect();
    let mut w = vec![-1.2, 1.0];
    let mut best = Vec::new();
    let cfg = LbfgsConfig {
        steps: 300,
        stall_limit: 300,
        ..LbfgsConfig::default()
    };
    lbfgs_stage(
        &mut w,
        &cfg,
        |k, w| match hostile[k % hostile.len()] {
            0 if k > 0 => Ok((f64::NAN, vec![f64::NAN; 2])),
            1 if k > 0 => Err(TrainError::InvalidConfig("hostile".into())),
            _ => Ok(rosenbrock(w)),
        },
        |s| best.push(s.best_loss),
    )
    .unwrap();
    assert!(best.windows(2).all(|p| p[1] <= p[0]));
    assert!(rosenbrock(&w).0 <= rosenbrock(&[-1.2, 1.0]).0);
}

#[test]
fn lbfgs_stalls_after_consecutive_rejections() {
    let mut w = vec![1.0, 2.0];
    let start = w.clone();
    let out = lbfgs_stage(
        &mut w,
        &LbfgsConfig::default(),
        |k, _| Ok((if k == 0 { 1.0 } else { 2.0 }, vec![1.0, 1.0])),
        |_| {},
    )
    .unwrap();
    assert!(out.stalled);
    assert_eq!(out.steps_taken, 50);
    assert_eq!(w, start);
}

#[test]
fn gradual_schedule_endpoints() {
    assert_eq!(gradual_fraction(0, 300, 0.1), 0.1);
    assert_eq!(gradual_fraction(150, 300, 0.1), 1.0);
    assert_eq!(gradual_fraction(299, 300, 0.1), 1.0);
    assert!((gradual_fraction(75, 300, 0.1) - 0.55).abs() < 1e-12);
}

#[test]
fn annealing_moves_toward_gradient_balance() {
    // two terms with gradient norms 10 and 1: the second weight tends to 10
    let mut w = [1.0, 1.0];
    let mut prev = 1.0;
    for _ in 0..200 {
        anneal_update(&mut w, &[10.0, 1.0], 0, 0.9);
        assert!(w[1] > prev || (w[1] - 10.0).abs() < 1e-9);
        prev = w[1];
    }
    assert_eq!(w[0], 1.0);
    assert!((w[1] / w[0] - 10.0).abs() < 1e-6);
    let mut once = [1.0, 1.0];
    anneal_update(&mut once, &[10.0, 1.0], 0, 0.9);
    assert!((once[1] - 1.9).abs() < 1e-12);
}

fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        width: 6,
        branch_layers: 1,
        ..NetworkSpec::default()
    }
}

fn tiny_config(adam: usize, lbfgs: usize) -> TrainingConfig {
    TrainingConfig {
        adam_steps: adam,
        lbfgs_steps: lbfgs,
        lr_decay_steps: adam / 2,
        collocation: CollocationConfig {
            n_interior: 60,
            n_boundary: 20,
        },
        ..TrainingConfig::default()
    }
}

fn problem(profile: &CurrentProfile, fidelity: Fidelity) -> (PhysicsProblem, OutputTransform) {
    let cell = CellParameters::default_cell();
    let p = PhysicsProblem::new(&cell, fidelity, profile.clone(), 1350.0, LossWeights::default()).unwrap();
    let tr = OutputTransform::level_one(&p.cell, p.kinetics(), profile, 1350.0).unwrap();
    (p, tr)
}

fn run(config: &TrainingConfig, seed: u64) -> RunRecord {
    let profile = CurrentProfile::constant(-2.0);
    let (p, tr) = problem(&profile, Fidelity::LinearBv);
    let base = Surrogate::default();
    train_level(
        LevelSetup {
            problem: &p,
            base: &base,
            transform: tr,
        },
        &tiny_spec(),
        config,
        seed,
        77,
    )
    .unwrap()
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_config(40, 15);
    let a = run(&cfg, 3);
    let b = run(&cfg, 3);
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    assert_eq!(a.config_hash, b.config_hash);
    let c = run(&cfg, 4);
    assert_ne!(a.params, c.params);
}

#[test]
fn record_marks_stage_boundary_and_counts_no_clips() {
    let cfg = tiny_config(30, 10);
    let r = run(&cfg, 1);
    assert_eq!(r.lbfgs_start, 30);
    assert!(r.history.iter().take(30).all(|h| h.stage == Stage::Adam));
    assert!(r.history.iter().skip(30).all(|h| h.stage == Stage::Lbfgs));
    assert!(r.history.windows(2).all(|w| w[1].step > w[0].step));
    assert_eq!(r.bv_clips, 0);
    assert_eq!(r.status, RunStatus::Completed);
    assert!(r.final_loss.is_finite());
}

#[test]
fn self_attention_is_inert_before_half_the_epochs() {
    let plain = tiny_config(60, 0);
    let att = TrainingConfig {
        regularizer: Regularizer::SelfAttention,
        ..plain
    };
    let a = run(&plain, 9);
    let b = run(&att, 9);
    assert_eq!(b.regularizer_activation_epoch, 3);
    let half = 3 * plain.batches_per_epoch;
    assert_eq!(a.history[..half], b.history[..half]);
    assert_ne!(a.history[half + 1..], b.history[half + 1..]);
}

#[test]
fn regularizers_run_to_completion() {
    for reg in Regularizer::ALL {
        let cfg = TrainingConfig {
            regularizer: reg,
            ..tiny_config(40, 20)
        };
        let r = run(&cfg, 2);
        assert!(!r.failed(), "{reg:?}");
        assert!(r.final_loss.is_finite(), "{reg:?}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = TrainingConfig {
        lr_end: 1e-2,
        ..TrainingConfig::default()
    };
    assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))));
    let bad = TrainingConfig {
        batches_per_epoch: 0,
        ..TrainingConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(TrainingConfig::default().validate().is_ok());
}

fn random_level(spec: NetworkSpec, transform: OutputTransform, seed: u64) -> TrainableLevel {
    TrainableLevel {
        net: Network::new(spec).unwrap(),
        params: init_weights(&spec, InitScheme::HeNormal, seed).values,
        transform,
    }
}

#[test]
fn zero_alpha2_correction_is_identity() {
    let cell = CellParameters::default_cell();
    let profile = CurrentProfile::constant(-2.0);
    let (_, tr) = problem(&profile, Fidelity::LinearBv);
    let spec = NetworkSpec::default();
    let one = Surrogate::new(vec![random_level(spec, tr, 1)]);
    let corr = OutputTransform::correction(&cell, tr_direction(&profile), 1350.0, 0.0);
    let two = Surrogate::new(vec![random_level(spec, tr, 1), random_level(spec, corr, 2)]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>() * 1350.0).collect();
    let r: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
    let a = one.predict(&t, &r).unwrap();
    let b = two.predict(&t, &r).unwrap();
    for k in 0..4 {
        for (x, y) in a[k].iter().zip(&b[k]) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300), "{x} {y}");
        }
    }
}

fn tr_direction(profile: &CurrentProfile) -> spm_pinn::loss::Direction {
    spm_pinn::loss::Direction::of(profile)
}

#[test]
fn hierarchy_initial_condition_is_exact() {
    let cell = CellParameters::default_cell();
    for profile in [CurrentProfile::constant(-2.0), CurrentProfile::constant(1.0)] {
        let (_, tr) = problem(&profile, Fidelity::LinearBv);
        let corr = OutputTransform::correction(&cell, tr_direction(&profile), 1350.0, 0.1);
        let s = Surrogate::new(vec![
            random_level(NetworkSpec::default(), tr, 3),
            random_level(NetworkSpec::default(), corr, 4),
        ]);
        let r: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let pred = s.predict(&vec![0.0; r.len()], &r).unwrap();
        for k in 0..4 {
            let want = tr.heads[k].offset;
            assert!(pred[k].iter().all(|&v| v == want), "head {k}");
        }
    }
}

#[test]
fn hierarchy_validation() {
    let level = |fidelity, seed| LevelConfig {
        fidelity,
        spec: tiny_spec(),
        training: tiny_config(20, 5),
        collocation_seed: seed,
    };
    let ok = HierarchyConfig {
        levels: vec![level(Fidelity::LinearBv, 1), level(Fidelity::NonlinearBv, 2)],
        alpha2: 0.1,
    };
    assert!(ok.validate().is_ok());
    let backwards = HierarchyConfig {
        levels: vec![level(Fidelity::NonlinearBv, 1), level(Fidelity::LinearBv, 2)],
        ..ok.clone()
    };
    assert!(backwards.validate().is_err());
    let shared = HierarchyConfig {
        levels: vec![level(Fidelity::LinearBv, 1), level(Fidelity::NonlinearBv, 1)],
        ..ok.clone()
    };
    assert!(shared.validate().is_err());
    for a in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(HierarchyConfig {
            alpha2: a,
            ..ok.clone()
        }
        .validate()
        .is_err());
    }
}

#[test]
fn hierarchy_trains_every_level() {
    let level = |fidelity, seed| LevelConfig {
        fidelity,
        spec: tiny_spec(),
        training: tiny_config(20, 5),
        collocation_seed: seed,
    };
    let cfg = HierarchyConfig {
        levels: vec![level(Fidelity::LinearBv, 1), level(Fidelity::NonlinearBv, 2)],
        alpha2: 0.1,
    };
    let cell = CellParameters::default_cell();
    let out = train_hierarchy(
        &cell,
        &CurrentProfile::constant(-2.0),
        1350.0,
        LossWeights::default(),
        &cfg,
        5,
    )
    .unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.surrogate.levels.len(), 2);
    assert_eq!(out.records[1].seed, mix_seed(5, 1));
    assert!(!out.failed());
}

#[test]
// A uniform concentration shift satisfies the equations at rest; only the
// points in the first seconds pin it, so this needs the full point count.
fn zero_current_surrogate_holds_voltage() {
    let profile = CurrentProfile::constant(0.0);
    let (p, tr) = problem(&profile, Fidelity::LinearBv);
    let base = Surrogate::default();
    let spec = NetworkSpec {
        width: 10,
        ..NetworkSpec::default()
    };
    let cfg = TrainingConfig {
        collocation: CollocationConfig::default(),
        ..tiny_config(600, 600)
    };
    let rec = train_level(
        LevelSetup {
            problem: &p,
            base: &base,
            transform: tr,
        },
        &spec,
        &cfg,
        0,
        1,
    )
    .unwrap();
    let s = Surrogate::new(vec![TrainableLevel {
        net: Network::new(spec).unwrap(),
        params: rec.params,
        transform: tr,
    }]);
    let t: Vec<f64> = (0..200).map(|i| 1350.0 * i as f64 / 199.0).collect();
    let v = s.predict(&t, &vec![1.0; t.len()]).unwrap()[3].clone();
    let spread = v.iter().fold(0.0f64, |m, x| m.max((x - v[0]).abs()));
    assert!(spread < 1e-3, "voltage drifts by {spread} V");
}
