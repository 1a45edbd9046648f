//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid
//! by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spm_pinn::eval::QueryGrid;
use spm_pinn::fd::FdConfig;
use spm_pinn::loss::{Fidelity, LossWeights};
use spm_pinn::nn::NetworkSpec;
use spm_pinn::spm::params::content_hash;
use spm_pinn::spm::{CellParameters, CurrentProfile};
use spm_pinn::train::TrainingConfig;

/// Every key, with defaults filled in. Paths are empty when unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Cell parameter file; the built-in cell when empty.
    pub params: String,
    pub profile: CurrentProfile,
    /// Two-column current table, replaces `profile` when set.
    pub current_file: String,
    /// s; 0 takes the table's end time or the cell's discharge horizon.
    pub horizon: f64,
    /// Start from reflected stoichiometries (for charging runs).
    pub charge_start: bool,
    pub seed: u64,
    /// Fidelity of each trained level; one entry trains a single network.
    pub levels: Vec<Fidelity>,
    pub alpha2: f64,
    /// Query grid, `<times>x<radii>`.
    pub grid: String,
    /// Points per variable in the correlation dump.
    pub samples: usize,
    /// Runs per experiment group; 0 takes the preset's default.
    pub realizations: usize,
    /// Concurrent experiment runs; 0 uses every core.
    pub jobs: usize,
    pub solver: FdConfig,
    pub network: NetworkSpec,
    pub training: TrainingConfig,
    pub weights: LossWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: String::new(),
            profile: CurrentProfile::constant(-2.0),
            current_file: String::new(),
            horizon: 0.0,
            charge_start: false,
            seed: 0,
            levels: vec![Fidelity::LinearBv],
            alpha2: 0.1,
            grid: QueryGrid::default().to_string(),
            samples: 10_000,
            realizations: 0,
            jobs: 0,
            solver: FdConfig::default(),
            network: NetworkSpec::default(),
            training: TrainingConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

fn merge(base: &mut toml::Table, user: toml::Table, at: &str) -> Result<()> {
    for (k, v) in user {
        let key = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
        let Some(slot) = base.get_mut(&k) else {
            bail!("unknown configuration key `{key}`");
        };
        match (slot, v) {
            // tagged enums are replaced whole, other tables merged key by key
            (toml::Value::Table(b), toml::Value::Table(u)) if !u.contains_key("kind") => merge(b, u, &key)?,
            (slot, v) => *slot = v,
        }
    }
    Ok(())
}

/// Reads a config file, or the `config` table of a manifest written by an
/// earlier run. Relative paths are resolved against the file's directory.
pub fn load(path: Option<&Path>) -> Result<(RunConfig, BTreeMap<String, String>)> {
    let mut inputs = BTreeMap::new();
    let mut table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        inputs.insert(path.display().to_string(), content_hash(text.as_bytes()));
        let mut user: toml::Table = text
            .parse()
            .with_context(|| format!("cannot parse {}", path.display()))?;
        if user.contains_key("tool_version") {
            user = match user.remove("config") {
                Some(toml::Value::Table(t)) => t,
                _ => bail!("manifest {} has no [config] table", path.display()),
            };
        }
        let dir = path.parent().unwrap_or(Path::new(""));
        for key in ["params", "current_file"] {
            if let Some(toml::Value::String(s)) = user.get_mut(key) {
                if !s.is_empty() && Path::new(s.as_str()).is_relative() {
                    *s = dir.join(&*s).display().to_string();
                }
            }
        }
        merge(&mut table, user, "")?;
    }
    let cfg: RunConfig = table.try_into().context("invalid configuration")?;
    Ok((cfg, inputs))
}

/// Cell, current and horizon resolved from a config.
pub struct Physics {
    pub cell: CellParameters,
    pub params_hash: String,
    pub profile: CurrentProfile,
    pub horizon: f64,
}

pub fn physics(cfg: &RunConfig, inputs: &mut BTreeMap<String, String>) -> Result<Physics> {
    let (mut cell, mut params_hash) = if cfg.params.is_empty() {
        (CellParameters::default_cell(), CellParameters::default_content_hash())
    } else {
        let path = PathBuf::from(&cfg.params);
        let (cell, hash) = CellParameters::load(&path)?;
        inputs.insert(cfg.params.clone(), hash.clone());
        (cell, hash)
    };
    if cfg.charge_start {
        cell = spm_pinn::eval::mirrored_for_charge(&cell);
        params_hash = content_hash(format!("{params_hash}|charge_start").as_bytes());
    }
    let profile = if cfg.current_file.is_empty() {
        cfg.profile.clone()
    } else {
        let path = Path::new(&cfg.current_file);
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        inputs.insert(cfg.current_file.clone(), content_hash(text.as_bytes()));
        CurrentProfile::parse_csv(&text, &cell)?
    };
    let horizon = if cfg.horizon > 0.0 {
        cfg.horizon
    } else {
        profile.support().map_or(cell.discharge_time_horizon, |s| s.1)
    };
    Ok(Physics {
        cell,
        params_hash,
        profile,
        horizon,
    })
}

pub fn grid(cfg: &RunConfig) -> Result<QueryGrid> {
    QueryGrid::parse(&cfg.grid).with_context(|| format!("bad grid {:?}, expected e.g. 101x65", cfg.grid))
}
