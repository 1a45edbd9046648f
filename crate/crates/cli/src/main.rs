mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use spm_pinn::eval::{correlation_dump, dump_correlations, epsilon, run_experiment, ExperimentPlan, Preset};
use spm_pinn::fd::{self, read_solution_dir, write_solution_dir, FdError, SolutionMetadata};
use spm_pinn::loss::{Fidelity, OutputTransform, Surrogate, TrainableLevel};
use spm_pinn::nn::{Checkpoint, Network, Precision};
use spm_pinn::spm::CurrentProfile;
use spm_pinn::train::{mix_seed, train_hierarchy, HierarchyConfig, LevelConfig, Regularizer, TrainError};

use config::RunConfig;

/// Default root for outputs when `--output` is not given.
const OUTPUT_ROOT_VAR: &str = "SPM_PINN_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "spm-pinn",
    version,
    about = "Single-particle-model PINN surrogates and their reference solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration (or a manifest from an earlier run).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `$SPM_PINN_OUTPUT_ROOT/<command>`.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_parser = ["f32", "f64"])]
    precision: Option<String>,
    #[arg(long)]
    regularizer: Option<String>,
    /// Query grid, e.g. 201x129.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the reference model and write the solution grid.
    Solve(Common),
    /// Train a surrogate (one network or a hierarchy).
    Train(Common),
    /// Score a trained surrogate against the reference solution.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory written by `solve`; solved on demand when absent.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment preset.
    Experiment {
        preset: Option<String>,
        #[arg(long = "preset", conflicts_with = "preset")]
        preset_flag: Option<String>,
        /// Runs per group.
        #[arg(long)]
        seeds: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

/// An error paired with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Code<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

const CONFIG: u8 = 2;
const SOLVER: u8 = 3;
const TRAINING: u8 = 4;
const INCOMPATIBLE: u8 = 5;
const PRESET: u8 = 6;

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tool_version: String,
    command: String,
    started_unix_s: u64,
    finished_unix_s: u64,
    seeds: Vec<u64>,
    /// Input file path to SHA-256 of its content.
    inputs: BTreeMap<String, String>,
    /// Flags given on the command line, which override the config file.
    flags: BTreeMap<String, String>,
    notes: BTreeMap<String, String>,
    config: RunConfig,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct Ctx {
    command: &'static str,
    cfg: RunConfig,
    inputs: BTreeMap<String, String>,
    flags: BTreeMap<String, String>,
    output: PathBuf,
    started: u64,
}

impl Ctx {
    fn new(command: &'static str, common: &Common) -> Result<Self, Failure> {
        let (mut cfg, inputs) = config::load(common.config.as_deref()).code(CONFIG)?;
        let mut flags = BTreeMap::new();
        if let Some(s) = common.seed {
            cfg.seed = s;
            flags.insert("seed".into(), s.to_string());
        }
        if let Some(p) = &common.precision {
            cfg.network.precision = if p == "f32" { Precision::F32 } else { Precision::F64 };
            flags.insert("precision".into(), p.clone());
        }
        if let Some(r) = &common.regularizer {
            cfg.training.regularizer = Regularizer::parse(r)
                .ok_or_else(|| {
                    let valid: Vec<_> = Regularizer::ALL.iter().map(|r| r.name()).collect();
                    anyhow!("unknown regularizer {r:?}; valid: {}", valid.join(", "))
                })
                .code(CONFIG)?;
            flags.insert("regularizer".into(), r.clone());
        }
        if let Some(g) = &common.grid {
            cfg.grid = g.clone();
            flags.insert("grid".into(), g.clone());
        }
        if let Some(j) = common.jobs {
            cfg.jobs = j;
            flags.insert("jobs".into(), j.to_string());
        }
        config::grid(&cfg).code(CONFIG)?;
        let output = common.output.clone().unwrap_or_else(|| {
            let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(command)
        });
        std::fs::create_dir_all(&output)
            .with_context(|| format!("cannot create {}", output.display()))
            .code(CONFIG)?;
        Ok(Self {
            command,
            cfg,
            inputs,
            flags,
            output,
            started: now(),
        })
    }

    fn physics(&mut self) -> Result<config::Physics, Failure> {
        config::physics(&self.cfg, &mut self.inputs).code(CONFIG)
    }

    fn write_manifest(&self, seeds: Vec<u64>, notes: BTreeMap<String, String>) -> Result<(), Failure> {
        let m = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            started_unix_s: self.started,
            finished_unix_s: now(),
            seeds,
            inputs: self.inputs.clone(),
            flags: self.flags.clone(),
            notes,
            config: self.cfg.clone(),
        };
        let path = self.output.join("manifest.toml");
        let text = toml::to_string(&m).code(CONFIG)?;
        std::fs::write(&path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .code(CONFIG)
    }
}

fn solver_code(e: &FdError) -> u8 {
    if matches!(e, FdError::InvalidConfig(_)) {
        CONFIG
    } else {
        SOLVER
    }
}

fn solve(common: Common) -> Result<(), Failure> {
    let mut ctx = Ctx::new("solve", &common)?;
    let ph = ctx.physics()?;
    let sol = fd::solve(&ph.cell, &ph.profile, ph.horizon, &ctx.cfg.solver).map_err(|e| Failure {
        code: solver_code(&e),
        error: e.into(),
    })?;
    let meta = SolutionMetadata {
        params_hash: ph.params_hash,
        horizon: ph.horizon,
        solver: ctx.cfg.solver,
        profile: ph.profile,
        parameters: ph.cell,
    };
    write_solution_dir(&ctx.output, &sol, &meta).code(SOLVER)?;
    println!("{} time rows written to {}", sol.times.len(), ctx.output.display());
    ctx.write_manifest(vec![], BTreeMap::new())
}

/// `surrogate.toml`: what `eval` needs to rebuild the composite predictor.
#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    params_hash: String,
    horizon: f64,
    profile: CurrentProfile,
    alpha2: f64,
    levels: Vec<DescriptorLevel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DescriptorLevel {
    fidelity: Fidelity,
    checkpoint: String,
    transform: OutputTransform,
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), Failure> {
    ck.save(path).code(TRAINING)
}

fn train(common: Common) -> Result<(), Failure> {
    let mut ctx = Ctx::new("train", &common)?;
    let ph = ctx.physics()?;
    let cfg = ctx.cfg.clone();
    let hc = HierarchyConfig {
        levels: cfg
            .levels
            .iter()
            .enumerate()
            .map(|(k, &fidelity)| LevelConfig {
                fidelity,
                spec: cfg.network,
                training: cfg.training,
                collocation_seed: mix_seed(cfg.seed, 0xC0 + k as u64),
            })
            .collect(),
        alpha2: cfg.alpha2,
    };
    let out = train_hierarchy(&ph.cell, &ph.profile, ph.horizon, cfg.weights, &hc, cfg.seed).map_err(|e| {
        let code = if matches!(e, TrainError::InvalidConfig(_)) {
            CONFIG
        } else {
            TRAINING
        };
        Failure { code, error: e.into() }
    })?;

    let mut notes = BTreeMap::new();
    notes.insert("regularizer".into(), cfg.training.regularizer.name().into());
    let mut levels = Vec::new();
    for (k, rec) in out.records.iter().enumerate() {
        let dir = ctx.output.join(format!("level_{k}"));
        std::fs::create_dir_all(&dir).code(TRAINING)?;
        rec.write_history_csv(&dir.join("loss.csv")).code(TRAINING)?;
        for (stage, weights) in [("adam", &rec.adam_params), ("final", &rec.params)] {
            let mut context = toml::Table::new();
            context.insert("stage".into(), stage.into());
            context.insert("fidelity".into(), rec.fidelity.name().into());
            context.insert("params_hash".into(), ph.params_hash.clone().into());
            context.insert("config_hash".into(), rec.config_hash.clone().into());
            let ck = Checkpoint {
                spec: rec.spec,
                seed: rec.seed,
                context,
                weights: weights.clone(),
            };
            save_checkpoint(&dir.join(format!("{stage}.ckpt.toml")), &ck)?;
        }
        let status = toml::to_string(&rec.status).code(TRAINING)?;
        let summary = format!(
            "{status}final_loss = {:e}\nwall_time_s = {:.3}\nbv_clips = {}\nlbfgs_start = {}\nregularizer_activation_epoch = {}\n",
            rec.final_loss, rec.wall_time_s, rec.bv_clips, rec.lbfgs_start, rec.regularizer_activation_epoch
        );
        std::fs::write(dir.join("record.toml"), summary).code(TRAINING)?;
        notes.insert(format!("level_{k}.status"), format!("{:?}", rec.status));
        notes.insert(
            format!("level_{k}.regularizer_activation_epoch"),
            rec.regularizer_activation_epoch.to_string(),
        );
        println!(
            "level {k} ({}): {:?}, final loss {:.3e}",
            rec.fidelity.name(),
            rec.status,
            rec.final_loss
        );
        if let Some(l) = out.surrogate.levels.get(k) {
            levels.push(DescriptorLevel {
                fidelity: rec.fidelity,
                checkpoint: format!("level_{k}/final.ckpt.toml"),
                transform: l.transform,
            });
        }
    }
    let desc = Descriptor {
        params_hash: ph.params_hash,
        horizon: ph.horizon,
        profile: ph.profile,
        alpha2: cfg.alpha2,
        levels,
    };
    std::fs::write(
        ctx.output.join("surrogate.toml"),
        toml::to_string(&desc).code(TRAINING)?,
    )
    .code(TRAINING)?;
    for (k, rec) in out.records.iter().enumerate() {
        notes.insert(format!("level_{k}.seed"), rec.seed.to_string());
    }
    ctx.write_manifest(vec![cfg.seed], notes)?;
    if out.failed() {
        return Err(Failure {
            code: TRAINING,
            error: anyhow!("training aborted; partial artifacts kept"),
        });
    }
    Ok(())
}

fn load_surrogate(dir: &Path) -> Result<(Descriptor, Surrogate), Failure> {
    let path = dir.join("surrogate.toml");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))
        .code(CONFIG)?;
    let desc: Descriptor = toml::from_str(&text)
        .with_context(|| format!("bad {}", path.display()))
        .code(CONFIG)?;
    let mut levels = Vec::new();
    for l in &desc.levels {
        let ck = Checkpoint::load(&dir.join(&l.checkpoint)).code(CONFIG)?;
        let net = Network::new(ck.spec).code(CONFIG)?;
        levels.push(TrainableLevel {
            net,
            params: ck.weights,
            transform: l.transform,
        });
    }
    if levels.is_empty() {
        return Err(Failure {
            code: CONFIG,
            error: anyhow!("{} holds no trained level", path.display()),
        });
    }
    Ok((desc, Surrogate::new(levels)))
}

fn incompatible(what: &str, a: impl std::fmt::Debug, b: impl std::fmt::Debug) -> Failure {
    Failure {
        code: INCOMPATIBLE,
        error: anyhow!("{what} mismatch: checkpoint {a:?}, oracle {b:?}"),
    }
}

fn eval(checkpoint: PathBuf, oracle: Option<PathBuf>, common: Common) -> Result<(), Failure> {
    let mut ctx = Ctx::new("eval", &common)?;
    let (desc, surrogate) = load_surrogate(&checkpoint)?;
    let (sol, meta_hash, profile, horizon) = match &oracle {
        Some(dir) => {
            let (sol, meta) = read_solution_dir(dir).code(CONFIG)?;
            ctx.inputs.insert(dir.display().to_string(), meta.params_hash.clone());
            (sol, meta.params_hash, meta.profile, meta.horizon)
        }
        None => {
            let ph = ctx.physics()?;
            if ph.params_hash != desc.params_hash {
                return Err(incompatible("parameter hash", &desc.params_hash, &ph.params_hash));
            }
            let sol = fd::solve(&ph.cell, &desc.profile, desc.horizon, &ctx.cfg.solver).map_err(|e| Failure {
                code: solver_code(&e),
                error: e.into(),
            })?;
            (sol, ph.params_hash, desc.profile.clone(), desc.horizon)
        }
    };
    if meta_hash != desc.params_hash {
        return Err(incompatible("parameter hash", &desc.params_hash, &meta_hash));
    }
    if profile != desc.profile || (horizon - desc.horizon).abs() > 1e-9 * horizon {
        return Err(incompatible(
            "current profile or horizon",
            (&desc.profile, desc.horizon),
            (&profile, horizon),
        ));
    }
    let grid = config::grid(&ctx.cfg).code(CONFIG)?;
    let report = epsilon(&surrogate, &sol, grid).code(INCOMPATIBLE)?;
    let dump = ctx.output.join("correlation.csv");
    correlation_dump(&surrogate, &sol, ctx.cfg.samples, ctx.cfg.seed, &dump).code(CONFIG)?;
    let r = dump_correlations(&dump).code(CONFIG)?;
    let mut text = toml::to_string(&report).code(CONFIG)?;
    text.push_str(&format!("pearson = {r:?}\n"));
    std::fs::write(ctx.output.join("metrics.toml"), text).code(CONFIG)?;
    println!(
        "epsilon {:.4e}  epsilon_tv {:.3} mV  grid {}",
        report.epsilon,
        1e3 * report.epsilon_tv,
        report.grid
    );
    ctx.inputs
        .insert(checkpoint.display().to_string(), desc.params_hash.clone());
    ctx.write_manifest(vec![ctx.cfg.seed], BTreeMap::new())
}

fn experiment(name: String, seeds: Option<usize>, common: Common) -> Result<(), Failure> {
    let preset = Preset::parse(&name).code(PRESET)?;
    let mut ctx = Ctx::new("experiment", &common)?;
    let ph = ctx.physics()?;
    let cfg = &ctx.cfg;
    let n = seeds
        .or((cfg.realizations > 0).then_some(cfg.realizations))
        .unwrap_or(preset.default_realizations());
    let mut plan = ExperimentPlan::new(preset, n, cfg.seed, cfg.training, cfg.network).code(CONFIG)?;
    plan.grid = config::grid(cfg).code(CONFIG)?;
    plan.jobs = cfg.jobs;
    let report = run_experiment(&plan, &ph.cell).map_err(|e| {
        let code = match e {
            spm_pinn::eval::EvalError::Solver(_) => SOLVER,
            _ => CONFIG,
        };
        Failure { code, error: e.into() }
    })?;
    report.write(&ctx.output).code(CONFIG)?;
    for g in &report.groups {
        println!(
            "{:<20} mean {:.4e}  95% [{:.4e}, {:.4e}]  runs {}  failed {}",
            g.group, g.mean, g.p2_5, g.p97_5, g.n_runs, g.n_failed
        );
    }
    for (k, v) in &report.trends {
        println!("spearman(metric, {k}) = {v:+.3}");
    }
    let mut notes = BTreeMap::new();
    notes.insert("preset".into(), preset.name().into());
    notes.insert("realizations".into(), n.to_string());
    let seeds = plan
        .runs
        .iter()
        .map(|r| r.seed)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    ctx.write_manifest(seeds, notes)?;
    match report.partial_failure() {
        Some(e) => Err(Failure {
            code: TRAINING,
            error: e.into(),
        }),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(c) => solve(c),
        Command::Train(c) => train(c),
        Command::Eval {
            checkpoint,
            oracle,
            common,
        } => eval(checkpoint, oracle, common),
        Command::Experiment {
            preset,
            preset_flag,
            seeds,
            common,
        } => match preset.or(preset_flag) {
            Some(p) => experiment(p, seeds, common),
            None => Err(Failure {
                code: PRESET,
                error: anyhow!(
                    "no preset given; valid presets: {}",
                    Preset::ALL.map(Preset::name).join(", ")
                ),
            }),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
