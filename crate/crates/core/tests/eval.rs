use proptest::prelude::*;
use spm_pinn::eval::{
    correlation_dump, dump_correlations, epsilon, epsilon_tv, mean, mirrored_for_charge, percentile, run_experiment,
    spearman, spread95, summarize, EvalError, ExperimentPlan, Metric, MetricsReport, Predictor, Preset, QueryGrid,
    RunResult,
};
use spm_pinn::fd::{self, FdConfig, SolutionGrid};
use spm_pinn::loss::{CollocationConfig, LossWeights};
use spm_pinn::nn::NetworkSpec;
use spm_pinn::spm::{CellParameters, CurrentProfile};
use spm_pinn::train::TrainingConfig;
use std::sync::OnceLock;

fn oracle() -> &'static SolutionGrid {
    static SOL: OnceLock<SolutionGrid> = OnceLock::new();
    SOL.get_or_init(|| {
        fd::solve(
            &CellParameters::default_cell(),
            &CurrentProfile::constant(-2.0),
            1350.0,
            &FdConfig::default(),
        )
        .unwrap()
    })
}

/// The oracle with every field multiplied by `scale` and shifted by
/// `offset[k]`.
struct Distorted<'a> {
    base: &'a SolutionGrid,
    scale: [f64; 4],
    offset: [f64; 4],
}

impl Predictor for Distorted<'_> {
    fn predict(&self, t: &[f64], r: &[f64]) -> Result<[Vec<f64>; 4], EvalError> {
        let mut out = Predictor::predict(self.base, t, r)?;
        for k in 0..4 {
            out[k].iter_mut().for_each(|x| *x = *x * self.scale[k] + self.offset[k]);
        }
        Ok(out)
    }
}

fn distorted(scale: [f64; 4], offset: [f64; 4]) -> Distorted<'static> {
    Distorted {
        base: oracle(),
        scale,
        offset,
    }
}

#[test]
fn identical_fields_score_zero() {
    let r = epsilon(oracle(), oracle(), QueryGrid::default()).unwrap();
    assert_eq!(r.epsilon, 0.0);
    assert_eq!(r.epsilon_tv, 0.0);
    assert_eq!(r.counts, [101 * 65, 101 * 65, 101, 101]);
}

#[test]
fn ten_percent_scaling_scores_point_four() {
    let r = epsilon(&distorted([1.1; 4], [0.0; 4]), oracle(), QueryGrid::default()).unwrap();
    // floored points would break the exact 0.1 per variable
    assert_eq!(r.floored, [0; 4]);
    assert!((r.epsilon - 0.4).abs() < 1e-12, "{}", r.epsilon);
    for b in r.breakdown {
        assert!((b - 0.1).abs() < 1e-12);
    }
}

#[test]
fn five_millivolt_offset_is_the_voltage_error() {
    let p = distorted([1.0; 4], [0.0, 0.0, 0.0, 5e-3]);
    assert!((epsilon_tv(&p, oracle(), 101).unwrap() - 5e-3).abs() < 1e-12);
    let r = epsilon(&p, oracle(), QueryGrid::default()).unwrap();
    assert!((r.epsilon_tv - 5e-3).abs() < 1e-12);
}

#[test]
fn floor_guards_a_field_crossing_zero() {
    // shift phi_e so it is exactly zero at t = 0 and changes sign later
    let mut shifted = oracle().clone();
    let first = shifted.phi_e[0];
    shifted.phi_e.iter_mut().for_each(|x| *x -= first);
    let p = Distorted {
        base: &shifted,
        scale: [1.0, 1.0, 1.1, 1.0],
        offset: [0.0, 0.0, 1e-4, 0.0],
    };
    let r = epsilon(&p, &shifted, QueryGrid::default()).unwrap();
    assert!(r.floored[2] >= 1);
    assert_eq!(r.floored[..2], [0, 0]);
    assert!(r.epsilon.is_finite() && r.breakdown[2] > 0.0);
}

#[test]
fn grid_parsing() {
    assert_eq!(QueryGrid::parse("201x129"), Some(QueryGrid { n_t: 201, n_r: 129 }));
    assert_eq!(QueryGrid::parse("1x5"), None);
    assert_eq!(QueryGrid::parse("abc"), None);
    assert_eq!(QueryGrid { n_t: 3, n_r: 2 }.times(10.0), vec![0.0, 5.0, 10.0]);
}

#[test]
fn correlation_dump_of_the_oracle_is_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.csv");
    correlation_dump(oracle(), oracle(), 500, 3, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 500);
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let a: f64 = rec[3].parse().unwrap();
        let b: f64 = rec[4].parse().unwrap();
        assert_eq!(a, b);
    }
    for r in dump_correlations(&path).unwrap() {
        assert!((r - 1.0).abs() < 1e-12);
    }
}

#[test]
fn spread_of_known_sample() {
    let xs: Vec<f64> = (0..=40).map(|i| i as f64).collect();
    let (lo, hi) = spread95(&xs);
    assert!((lo - 1.0).abs() < 1e-12 && (hi - 39.0).abs() < 1e-12);
    assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
    assert!(mean(&[]).is_nan());
    assert!(percentile(&[f64::NAN, 2.0], 50.0) == 2.0);
}

proptest! {
    #[test]
    fn breakdown_sums_to_epsilon(s in prop::array::uniform4(0.5f64..1.5), o in prop::array::uniform4(-1e-2f64..1e-2)) {
        let r = epsilon(&distorted(s, o), oracle(), QueryGrid { n_t: 21, n_r: 9 }).unwrap();
        prop_assert!(r.epsilon >= 0.0 && r.epsilon_tv >= 0.0);
        let sum: f64 = r.breakdown.iter().sum();
        prop_assert!((sum - r.epsilon).abs() <= 1e-15 * r.epsilon.max(1.0));
    }

    #[test]
    fn spearman_is_invariant_under_monotone_maps(xs in prop::collection::vec(-10.0f64..10.0, 3..30)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let zs: Vec<f64> = xs.iter().map(|x| -x * x * x).collect();
        let distinct = xs.iter().enumerate().all(|(i, a)| xs[..i].iter().all(|b| b != a));
        prop_assume!(distinct);
        prop_assert!((spearman(&xs, &ys) - 1.0).abs() < 1e-12);
        prop_assert!((spearman(&xs, &zs) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spread_is_ordered_and_deterministic(xs in prop::collection::vec(0.0f64..1.0, 1..50)) {
        let (lo, hi) = spread95(&xs);
        prop_assert!(lo <= hi);
        prop_assert_eq!(spread95(&xs), (lo, hi));
        let m = mean(&xs);
        let (mn, mx) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        prop_assert!(mn <= lo && hi <= mx && mn <= m && m <= mx);
    }
}

#[test]
fn unknown_preset_lists_valid_names() {
    let err = Preset::parse("bogus").unwrap_err();
    let msg = err.to_string();
    for p in Preset::ALL {
        assert!(msg.contains(p.name()), "{msg}");
        assert_eq!(Preset::parse(p.name()).unwrap(), p);
    }
}

fn plan(preset: Preset, n: usize) -> ExperimentPlan {
    ExperimentPlan::new(preset, n, 10, TrainingConfig::default(), NetworkSpec::default()).unwrap()
}

#[test]
fn preset_groups() {
    assert_eq!(plan(Preset::Variability, 5).groups(), ["default"]);
    assert_eq!(plan(Preset::Variability, 5).runs.len(), 5);
    let arch = plan(Preset::Architectures, 2).groups();
    for g in ["split_dense", "split_gp", "merged_dense", "merged_gp"] {
        assert!(arch.contains(&g.to_string()), "{arch:?}");
    }
    assert_eq!(plan(Preset::Regularizers, 1).groups().len(), 6);
    assert_eq!(plan(Preset::Precision, 1).groups(), ["f64", "f32"]);
    assert_eq!(
        plan(Preset::Hierarchy, 1).groups(),
        ["hnn_lin", "hnn_simp", "double", "nonlinear"]
    );
    assert_eq!(
        plan(Preset::CRates, 1).groups(),
        ["-3C", "-2C", "-1C", "+1C", "+2C", "+3C"]
    );
    assert_eq!(plan(Preset::DriveCycle, 3).groups(), ["base", "col", "col_par"]);
}

#[test]
fn architecture_groups_have_comparable_size() {
    let p = plan(Preset::Architectures, 1);
    let target = NetworkSpec::default().param_count() as f64;
    for r in &p.runs {
        let n = r.hierarchy.levels[0].spec.param_count() as f64;
        assert!((n / target - 1.0).abs() < 0.5, "{} has {n} parameters", r.group);
    }
}

#[test]
fn c_rate_runs_scale_the_horizon_and_mirror_charges() {
    let p = plan(Preset::CRates, 1);
    for r in &p.runs {
        let rate = match &r.profile {
            CurrentProfile::Constant { c_rate } => *c_rate,
            other => panic!("{other:?}"),
        };
        assert_eq!(r.horizon * rate.abs(), 2700.0);
        assert_eq!(r.charge_start, rate > 0.0);
    }
    let cell = CellParameters::default_cell();
    let m = mirrored_for_charge(&cell);
    assert!((m.anode.initial_stoich() - (1.0 - cell.anode.initial_stoich())).abs() < 1e-12);
    assert!((m.cathode.initial_stoich() - (1.0 - cell.cathode.initial_stoich())).abs() < 1e-12);
    // a 3 C charge from the mirrored state stays in bounds
    fd::solve(&m, &CurrentProfile::constant(3.0), 900.0, &FdConfig::default()).unwrap();
}

#[test]
fn drive_cycle_configurations() {
    let p = plan(Preset::DriveCycle, 1);
    let base = &p.runs[0].hierarchy.levels[0];
    let col = &p.runs[1].hierarchy.levels[0];
    let big = &p.runs[2].hierarchy.levels[0];
    assert_eq!(
        col.training.collocation.n_interior,
        5 * base.training.collocation.n_interior
    );
    assert_eq!(col.spec, base.spec);
    assert_eq!(big.spec.width, 40);
    assert_eq!(big.spec.branch_layers, 4);
    assert_eq!(p.runs[0].horizon, 900.0);
}

#[test]
fn weight_sweep_samples_the_box() {
    let p = plan(Preset::WeightSweep, 20);
    assert_eq!(p.runs.len(), 20);
    let mut below = 0;
    for r in &p.runs {
        for w in [r.weights.w_cs_int, r.weights.w_cs_rmin, r.weights.w_cs_rmax] {
            assert!((0.1..=1000.0).contains(&w));
            below += (w < 10.0) as usize;
        }
    }
    // log-uniform: half the mass lies below the geometric midpoint 10
    assert!((15..=45).contains(&below), "{below}");
}

#[test]
fn plans_reject_repeated_seeds_and_zero_realizations() {
    assert!(ExperimentPlan::new(
        Preset::Variability,
        0,
        0,
        TrainingConfig::default(),
        NetworkSpec::default()
    )
    .is_err());
    let mut p = plan(Preset::Variability, 2);
    p.runs[1].seed = p.runs[0].seed;
    assert!(matches!(p.validate(), Err(EvalError::InvalidPlan(_))));
}

fn fake(group: &str, seed: u64, eps: Option<f64>, loss: f64) -> RunResult {
    RunResult {
        group: group.into(),
        seed,
        weights: LossWeights {
            w_cs_int: seed as f64 + 1.0,
            w_cs_rmin: 1.0,
            w_cs_rmax: 100.0 / (seed as f64 + 1.0),
        },
        metrics: eps.map(|e| MetricsReport {
            epsilon: e,
            breakdown: [e, 0.0, 0.0, 0.0],
            counts: [1; 4],
            floored: [0; 4],
            epsilon_tv: e / 10.0,
            grid: QueryGrid::default(),
        }),
        final_loss: loss,
        status: if eps.is_some() {
            "completed".into()
        } else {
            "aborted: test".into()
        },
        error: None,
        wall_time_s: 0.0,
    }
}

#[test]
fn summary_counts_failures_and_converged_runs() {
    let runs = vec![
        fake("a", 0, Some(0.1), 1e-3),
        fake("a", 1, Some(0.3), 1e-1),
        fake("a", 2, None, f64::NAN),
        fake("b", 0, Some(0.2), 1e-2),
    ];
    let rep = summarize(Preset::Variability, Metric::Epsilon, runs);
    let a = rep.group("a").unwrap();
    assert_eq!((a.n_runs, a.n_failed), (3, 1));
    assert!((a.mean - 0.2).abs() < 1e-15);
    // the 1e-1 loss run is 100x worse than the best
    assert!((a.mean_converged - 0.1).abs() < 1e-15);
    assert!(matches!(
        rep.partial_failure(),
        Some(EvalError::PartialFailure { failed: 1, total: 4 })
    ));
    assert_eq!(rep.values("a"), vec![0.1, 0.3]);

    let dir = tempfile::tempdir().unwrap();
    rep.write(dir.path()).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("group,mean,p2_5,p97_5,n_runs,n_failed"));
    assert_eq!(summary.lines().count(), 3);
    assert!(dir.path().join("plot_variability.csv").exists());
    assert!(dir.path().join("runs.csv").exists());
    assert!(dir.path().join("report.toml").exists());
}

#[test]
fn sweep_trends_follow_the_weights() {
    // epsilon rises with w_cs_int and falls with w_cs_rmax by construction
    let runs = (0..6)
        .map(|s| fake("sweep", s, Some(0.01 * (s + 1) as f64), 1.0))
        .collect();
    let rep = summarize(Preset::WeightSweep, Metric::Epsilon, runs);
    assert!((rep.trends["w_cs_int"] - 1.0).abs() < 1e-12);
    assert!((rep.trends["w_cs_rmax"] + 1.0).abs() < 1e-12);
    let tv = summarize(
        Preset::DriveCycle,
        Metric::EpsilonTv,
        vec![fake("base", 0, Some(0.05), 1.0)],
    );
    assert!((tv.groups[0].mean - 0.005).abs() < 1e-15);
}

#[test]
fn tiny_variability_experiment_runs_end_to_end() {
    let training = TrainingConfig {
        adam_steps: 20,
        lbfgs_steps: 10,
        lr_decay_steps: 10,
        collocation: CollocationConfig {
            n_interior: 40,
            n_boundary: 20,
        },
        ..TrainingConfig::default()
    };
    let spec = NetworkSpec {
        width: 4,
        branch_layers: 1,
        ..NetworkSpec::default()
    };
    let mut p = ExperimentPlan::new(Preset::Variability, 2, 0, training, spec).unwrap();
    p.grid = QueryGrid { n_t: 11, n_r: 5 };
    p.jobs = 2;
    let rep = run_experiment(&p, &CellParameters::default_cell()).unwrap();
    assert!(rep.partial_failure().is_none());
    let v = rep.values("default");
    assert_eq!(v.len(), 2);
    assert!(v[0] != v[1] && v.iter().all(|x| x.is_finite() && *x > 0.0));
    // concurrency does not change results
    p.jobs = 1;
    let again = run_experiment(&p, &CellParameters::default_cell()).unwrap();
    assert_eq!(again.values("default"), v);
}
