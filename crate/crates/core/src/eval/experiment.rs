use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{epsilon, io_err, mean, spearman, spread95, EvalError, MetricsReport, QueryGrid};
use crate::fd::{self, FdConfig, SolutionGrid};
use crate::loss::{CollocationConfig, Fidelity, LossWeights};
use crate::nn::{BlockKind, NetworkSpec, Precision};
use crate::spm::{CellParameters, CurrentProfile, Electrode};
use crate::train::{mix_seed, train_hierarchy, HierarchyConfig, LevelConfig, Regularizer, RunStatus, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Variability,
    WeightSweep,
    Architectures,
    Regularizers,
    Precision,
    Hierarchy,
    CRates,
    DriveCycle,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Variability,
        Preset::WeightSweep,
        Preset::Architectures,
        Preset::Regularizers,
        Preset::Precision,
        Preset::Hierarchy,
        Preset::CRates,
        Preset::DriveCycle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Variability => "variability",
            Preset::WeightSweep => "weight_sweep",
            Preset::Architectures => "architectures",
            Preset::Regularizers => "regularizers",
            Preset::Precision => "precision",
            Preset::Hierarchy => "hierarchy",
            Preset::CRates => "c_rates",
            Preset::DriveCycle => "drive_cycle",
        }
    }

    pub fn parse(s: &str) -> Result<Self, EvalError> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| EvalError::UnknownPreset {
                name: s.to_string(),
                valid: Self::ALL.map(Preset::name).join(", "),
            })
    }

    /// Realizations per group when none are requested.
    pub fn default_realizations(self) -> usize {
        match self {
            Preset::WeightSweep => 20,
            Preset::CRates | Preset::DriveCycle => 3,
            _ => 5,
        }
    }

    /// The metric the group summaries are built from.
    pub fn metric(self) -> Metric {
        match self {
            Preset::DriveCycle => Metric::EpsilonTv,
            _ => Metric::Epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Epsilon,
    /// V
    EpsilonTv,
}

impl Metric {
    pub fn of(self, m: &MetricsReport) -> f64 {
        match self {
            Metric::Epsilon => m.epsilon,
            Metric::EpsilonTv => m.epsilon_tv,
        }
    }
}

/// One seeded training run and the physics it is scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub group: String,
    pub seed: u64,
    pub profile: CurrentProfile,
    /// s
    pub horizon: f64,
    /// Start from the mirrored (charge) initial state.
    pub charge_start: bool,
    pub weights: LossWeights,
    /// Single-network runs are one-level hierarchies.
    pub hierarchy: HierarchyConfig,
}

/// Presets expand into an explicit run list; edit `runs` to restrict a
/// plan before executing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub preset: Preset,
    pub realizations: usize,
    pub base_seed: u64,
    pub grid: QueryGrid,
    /// Concurrent runs; 0 uses every core.
    pub jobs: usize,
    pub runs: Vec<RunSpec>,
}

/// Cell with each electrode's stoichiometry reflected, `x -> 1 - x`, so a
/// charge starts from the state a discharge would start from.
pub fn mirrored_for_charge(cell: &CellParameters) -> CellParameters {
    let mut out = cell.clone();
    for e in Electrode::BOTH {
        let p = out.electrode_mut(e);
        p.initial_conc = p.max_conc - p.initial_conc;
    }
    out
}

/// Horizon of a constant-rate run: 1350 s at 2 C, scaled inversely.
pub fn c_rate_horizon(c_rate: f64) -> f64 {
    2700.0 / c_rate.abs()
}

fn level(fidelity: Fidelity, spec: NetworkSpec, training: TrainingConfig, seed: u64, k: u64) -> LevelConfig {
    LevelConfig {
        fidelity,
        spec,
        training,
        collocation_seed: mix_seed(seed, 0xC0 + k),
    }
}

fn single(fidelity: Fidelity, spec: NetworkSpec, training: TrainingConfig, seed: u64) -> HierarchyConfig {
    HierarchyConfig {
        levels: vec![level(fidelity, spec, training, seed, 0)],
        alpha2: 0.1,
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
}

impl ExperimentPlan {
    /// Expands `preset` with `realizations` seeds per group (samples for the
    /// weight sweep). Groups share seeds, so comparisons are paired.
    /// `training` and `spec` are the per-run budget and the base network.
    pub fn new(
        preset: Preset,
        realizations: usize,
        base_seed: u64,
        training: TrainingConfig,
        spec: NetworkSpec,
    ) -> Result<Self, EvalError> {
        if realizations == 0 {
            return Err(EvalError::InvalidPlan("realizations must be >= 1".into()));
        }
        let seeds: Vec<u64> = (0..realizations as u64).map(|i| base_seed + i).collect();
        let horizon = CellParameters::default_cell().discharge_time_horizon;
        let constant = CurrentProfile::constant(-2.0);
        let lin = Fidelity::LinearBv;
        let mut runs = Vec::new();
        let mk = |group: &str, seed: u64, hierarchy: HierarchyConfig| RunSpec {
            group: group.to_string(),
            seed,
            profile: constant.clone(),
            horizon,
            charge_start: false,
            weights: LossWeights::default(),
            hierarchy,
        };
        match preset {
            Preset::Variability => {
                for &s in &seeds {
                    runs.push(mk("default", s, single(lin, spec, training, s)));
                }
            }
            Preset::WeightSweep => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(base_seed, 0x5EE9));
                for &s in &seeds {
                    let weights = LossWeights {
                        w_cs_int: log_uniform(&mut rng, 0.1, 1000.0),
                        w_cs_rmin: log_uniform(&mut rng, 0.1, 1000.0),
                        w_cs_rmax: log_uniform(&mut rng, 0.1, 1000.0),
                    };
                    runs.push(RunSpec {
                        weights,
                        ..mk("sweep", s, single(lin, spec, training, s))
                    });
                }
            }
            Preset::Architectures => {
                let target = spec.param_count();
                for arch in [crate::nn::Architecture::Split, crate::nn::Architecture::Merged] {
                    for block in [BlockKind::Dense, BlockKind::Residual, BlockKind::GradientPathology] {
                        let s = NetworkSpec {
                            architecture: arch,
                            block_kind: block,
                            ..spec
                        }
                        .balanced(target);
                        let name = format!("{}_{}", arch_name(arch), block_name(block));
                        for &seed in &seeds {
                            runs.push(mk(&name, seed, single(lin, s, training, seed)));
                        }
                    }
                }
            }
            Preset::Regularizers => {
                for reg in Regularizer::ALL {
                    let t = TrainingConfig {
                        regularizer: reg,
                        ..training
                    };
                    for &s in &seeds {
                        runs.push(mk(reg.name(), s, single(lin, spec, t, s)));
                    }
                }
            }
            Preset::Precision => {
                for (name, p) in [("f64", Precision::F64), ("f32", Precision::F32)] {
                    let sp = NetworkSpec { precision: p, ..spec };
                    for &s in &seeds {
                        runs.push(mk(name, s, single(lin, sp, training, s)));
                    }
                }
            }
            Preset::Hierarchy => {
                let nl = Fidelity::NonlinearBv;
                for &s in &seeds {
                    let two = |first: Fidelity| HierarchyConfig {
                        levels: vec![level(first, spec, training, s, 0), level(nl, spec, training, s, 1)],
                        alpha2: 0.1,
                    };
                    runs.push(mk("hnn_lin", s, two(lin)));
                    runs.push(mk("hnn_simp", s, two(Fidelity::Simplified)));
                    let deep = NetworkSpec {
                        branch_layers: 2 * spec.branch_layers,
                        ..spec
                    };
                    runs.push(mk("double", s, single(nl, deep, training.doubled(), s)));
                    runs.push(mk("nonlinear", s, single(nl, spec, training, s)));
                }
            }
            Preset::CRates => {
                for rate in [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0] {
                    for &s in &seeds {
                        runs.push(RunSpec {
                            profile: CurrentProfile::constant(rate),
                            horizon: c_rate_horizon(rate),
                            charge_start: rate > 0.0,
                            ..mk(&format!("{rate:+}C"), s, single(lin, spec, training, s))
                        });
                    }
                }
            }
            Preset::DriveCycle => {
                let profile = CurrentProfile::default_drive_cycle();
                let end = profile.support().map_or(horizon, |s| s.1);
                let dense = CollocationConfig {
                    n_interior: 5 * training.collocation.n_interior,
                    n_boundary: 5 * training.collocation.n_boundary,
                };
                let col = TrainingConfig {
                    collocation: dense,
                    ..training
                };
                let big = NetworkSpec {
                    width: 2 * spec.width,
                    branch_layers: 2 * spec.branch_layers,
                    ..spec
                };
                for &s in &seeds {
                    for (name, sp, t) in [("base", spec, training), ("col", spec, col), ("col_par", big, col)] {
                        runs.push(RunSpec {
                            profile: profile.clone(),
                            horizon: end,
                            ..mk(name, s, single(lin, sp, t, s))
                        });
                    }
                }
            }
        }
        let plan = Self {
            preset,
            realizations,
            base_seed,
            grid: QueryGrid::default(),
            jobs: 0,
            runs,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.realizations == 0 {
            return Err(EvalError::InvalidPlan("realizations must be >= 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &self.runs {
            if !seen.insert((r.group.as_str(), r.seed)) {
                return Err(EvalError::InvalidPlan(format!(
                    "seed {} repeated in group {}",
                    r.seed, r.group
                )));
            }
            r.hierarchy.validate()?;
        }
        Ok(())
    }

    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.group) {
                out.push(r.group.clone());
            }
        }
        out
    }

    /// Keeps only the runs of the named groups.
    pub fn retain_groups(&mut self, groups: &[&str]) {
        self.runs.retain(|r| groups.contains(&r.group.as_str()));
    }
}

fn arch_name(a: crate::nn::Architecture) -> &'static str {
    match a {
        crate::nn::Architecture::Split => "split",
        crate::nn::Architecture::Merged => "merged",
    }
}

fn block_name(b: BlockKind) -> &'static str {
    match b {
        BlockKind::Dense => "dense",
        BlockKind::Residual => "residual",
        BlockKind::GradientPathology => "gp",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub group: String,
    pub seed: u64,
    pub weights: LossWeights,
    /// `None` when the run failed.
    pub metrics: Option<MetricsReport>,
    /// Final loss of the last trained level.
    pub final_loss: f64,
    pub status: String,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.metrics.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub mean: f64,
    pub p2_5: f64,
    pub p97_5: f64,
    /// Mean over runs whose final loss is within a factor 10 of the best
    /// run of the group.
    pub mean_converged: f64,
    pub n_runs: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub preset: Preset,
    pub metric: Metric,
    pub groups: Vec<GroupSummary>,
    /// Spearman correlation of the metric with each loss weight (weight
    /// sweep only), keyed by weight name.
    pub trends: BTreeMap<String, f64>,
    pub runs: Vec<RunResult>,
}

fn oracle_key(r: &RunSpec) -> String {
    format!("{:?}|{}|{}", r.profile, r.horizon, r.charge_start)
}

fn run_cell(cell: &CellParameters, r: &RunSpec) -> CellParameters {
    if r.charge_start {
        mirrored_for_charge(cell)
    } else {
        cell.clone()
    }
}

fn execute(cell: &CellParameters, r: &RunSpec, oracle: &SolutionGrid, grid: QueryGrid) -> RunResult {
    let started = std::time::Instant::now();
    let mut res = RunResult {
        group: r.group.clone(),
        seed: r.seed,
        weights: r.weights,
        metrics: None,
        final_loss: f64::NAN,
        status: "error".into(),
        error: None,
        wall_time_s: 0.0,
    };
    let cell = run_cell(cell, r);
    match train_hierarchy(&cell, &r.profile, r.horizon, r.weights, &r.hierarchy, r.seed) {
        Ok(out) => {
            let last = out.records.last();
            res.final_loss = last.map_or(f64::NAN, |x| x.final_loss);
            res.status = match last.map(|x| &x.status) {
                Some(RunStatus::Completed) => "completed".into(),
                Some(RunStatus::Stalled) => "stalled".into(),
                Some(RunStatus::Aborted { reason }) => format!("aborted: {reason}"),
                None => "empty".into(),
            };
            if !out.failed() {
                match epsilon(&out.surrogate, oracle, grid) {
                    Ok(m) => res.metrics = Some(m),
                    Err(e) => res.error = Some(e.to_string()),
                }
            }
        }
        Err(e) => res.error = Some(e.to_string()),
    }
    res.wall_time_s = started.elapsed().as_secs_f64();
    res
}

/// Trains every run of the plan (concurrently, `plan.jobs` at a time) and
/// scores it against the nonlinear reference solution. Failed runs are
/// counted, not fatal; see [`ExperimentReport::partial_failure`].
pub fn run_experiment(plan: &ExperimentPlan, cell: &CellParameters) -> Result<ExperimentReport, EvalError> {
    plan.validate()?;
    let mut oracles: HashMap<String, SolutionGrid> = HashMap::new();
    for r in &plan.runs {
        let key = oracle_key(r);
        if !oracles.contains_key(&key) {
            let sol = fd::solve(&run_cell(cell, r), &r.profile, r.horizon, &FdConfig::default())?;
            oracles.insert(key, sol);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs)
        .build()
        .map_err(|e| EvalError::InvalidPlan(e.to_string()))?;
    let runs: Vec<RunResult> = pool.install(|| {
        plan.runs
            .par_iter()
            .map(|r| execute(cell, r, &oracles[&oracle_key(r)], plan.grid))
            .collect()
    });
    Ok(summarize(plan.preset, plan.preset.metric(), runs))
}

/// Group statistics of a finished run set, in first-appearance order.
pub fn summarize(preset: Preset, metric: Metric, runs: Vec<RunResult>) -> ExperimentReport {
    let mut names: Vec<String> = Vec::new();
    for r in &runs {
        if !names.contains(&r.group) {
            names.push(r.group.clone());
        }
    }
    let groups = names
        .into_iter()
        .map(|g| {
            let members: Vec<&RunResult> = runs.iter().filter(|r| r.group == g).collect();
            let ok: Vec<&RunResult> = members.iter().copied().filter(|r| !r.failed()).collect();
            let vals: Vec<f64> = ok.iter().map(|r| metric.of(r.metrics.as_ref().unwrap())).collect();
            let best = ok.iter().map(|r| r.final_loss).fold(f64::INFINITY, f64::min);
            let conv: Vec<f64> = ok
                .iter()
                .zip(&vals)
                .filter(|(r, _)| r.final_loss <= 10.0 * best)
                .map(|(_, v)| *v)
                .collect();
            let (lo, hi) = spread95(&vals);
            GroupSummary {
                group: g,
                mean: mean(&vals),
                p2_5: lo,
                p97_5: hi,
                mean_converged: mean(&conv),
                n_runs: members.len(),
                n_failed: members.len() - ok.len(),
            }
        })
        .collect();
    let mut trends = BTreeMap::new();
    if preset == Preset::WeightSweep {
        let ok: Vec<&RunResult> = runs.iter().filter(|r| !r.failed()).collect();
        let y: Vec<f64> = ok.iter().map(|r| metric.of(r.metrics.as_ref().unwrap())).collect();
        let pick: [(&str, fn(&LossWeights) -> f64); 3] = [
            ("w_cs_int", |w| w.w_cs_int),
            ("w_cs_rmin", |w| w.w_cs_rmin),
            ("w_cs_rmax", |w| w.w_cs_rmax),
        ];
        for (name, f) in pick {
            let x: Vec<f64> = ok.iter().map(|r| f(&r.weights)).collect();
            trends.insert(name.to_string(), spearman(&x, &y));
        }
    }
    ExperimentReport {
        preset,
        metric,
        groups,
        trends,
        runs,
    }
}

impl ExperimentReport {
    pub fn n_failed(&self) -> usize {
        self.runs.iter().filter(|r| r.failed()).count()
    }

    pub fn partial_failure(&self) -> Option<EvalError> {
        let failed = self.n_failed();
        (failed > 0).then(|| EvalError::PartialFailure {
            failed,
            total: self.runs.len(),
        })
    }

    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == name)
    }

    /// Metric values of a group's successful runs, in seed order.
    pub fn values(&self, group: &str) -> Vec<f64> {
        let mut v: Vec<(u64, f64)> = self
            .runs
            .iter()
            .filter(|r| r.group == group)
            .filter_map(|r| r.metrics.as_ref().map(|m| (r.seed, self.metric.of(m))))
            .collect();
        v.sort_by_key(|x| x.0);
        v.into_iter().map(|x| x.1).collect()
    }

    /// Writes `summary.csv`, `runs.csv`, `plot_<preset>.csv` and
    /// `report.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("summary.csv");
        let io = io_err(&path);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(&io)?);
        writeln!(w, "group,mean,p2_5,p97_5,n_runs,n_failed,mean_converged").map_err(&io)?;
        for g in &self.groups {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{},{},{:e}",
                g.group, g.mean, g.p2_5, g.p97_5, g.n_runs, g.n_failed, g.mean_converged
            )
            .map_err(&io)?;
        }
        w.flush().map_err(&io)?;

        let path = dir.join("runs.csv");
        let io = io_err(&path);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(&io)?);
        writeln!(
            w,
            "group,seed,w_cs_int,w_cs_rmin,w_cs_rmax,epsilon,epsilon_tv,final_loss,status,wall_time_s"
        )
        .map_err(&io)?;
        for r in &self.runs {
            let (e, tv) = r
                .metrics
                .as_ref()
                .map_or((f64::NAN, f64::NAN), |m| (m.epsilon, m.epsilon_tv));
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{:.3}",
                r.group,
                r.seed,
                r.weights.w_cs_int,
                r.weights.w_cs_rmin,
                r.weights.w_cs_rmax,
                e,
                tv,
                r.final_loss,
                r.status.replace(',', ";"),
                r.wall_time_s
            )
            .map_err(&io)?;
        }
        w.flush().map_err(&io)?;

        // bar height with asymmetric error bars; the sweep is a scatter instead
        let path = dir.join(format!("plot_{}.csv", self.preset.name()));
        let io = io_err(&path);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(&io)?);
        if self.preset == Preset::WeightSweep {
            writeln!(w, "w_cs_int,w_cs_rmin,w_cs_rmax,value").map_err(&io)?;
            for r in self.runs.iter().filter(|r| !r.failed()) {
                let v = self.metric.of(r.metrics.as_ref().unwrap());
                writeln!(
                    w,
                    "{:e},{:e},{:e},{:e}",
                    r.weights.w_cs_int, r.weights.w_cs_rmin, r.weights.w_cs_rmax, v
                )
                .map_err(&io)?;
            }
        } else {
            writeln!(w, "group,height,err_low,err_high").map_err(&io)?;
            for g in &self.groups {
                writeln!(
                    w,
                    "{},{:e},{:e},{:e}",
                    g.group,
                    g.mean,
                    g.mean - g.p2_5,
                    g.p97_5 - g.mean
                )
                .map_err(&io)?;
            }
        }
        w.flush().map_err(&io)?;

        let path = dir.join("report.toml");
        let text = toml::to_string(&ReportFile {
            preset: self.preset,
            metric: self.metric,
            groups: &self.groups,
            trends: &self.trends,
        })
        .map_err(|e| EvalError::InvalidPlan(e.to_string()))?;
        std::fs::write(&path, text).map_err(io_err(&path))
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    preset: Preset,
    metric: Metric,
    trends: &'a BTreeMap<String, f64>,
    groups: &'a [GroupSummary],
}
