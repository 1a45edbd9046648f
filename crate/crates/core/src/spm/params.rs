use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ocp::{parse_two_column_csv, OcpCurve};
use super::SpmError;

const DEFAULT_PARAMS: &str = include_str!("../../data/default_params.toml");
const DEFAULT_ANODE_OCP: &str = include_str!("../../data/ocp_anode_graphite.csv");
const DEFAULT_CATHODE_OCP: &str = include_str!("../../data/ocp_cathode_nmc.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Electrode {
    Anode,
    Cathode,
}

impl Electrode {
    pub const BOTH: [Electrode; 2] = [Electrode::Anode, Electrode::Cathode];

    pub fn name(self) -> &'static str {
        match self {
            Electrode::Anode => "anode",
            Electrode::Cathode => "cathode",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeParameters {
    /// m
    pub particle_radius: f64,
    /// m^2/s
    pub solid_diffusivity: f64,
    pub active_volume_fraction: f64,
    /// Electrode volume per m^2 of cell cross-section (m^3).
    pub composite_volume: f64,
    /// kmol/m^3
    pub max_conc: f64,
    /// kmol/m^3
    pub initial_conc: f64,
    /// Prefactor of the exchange current density.
    pub exchange_prefactor: f64,
    pub ocp: OcpCurve,
}

impl ElectrodeParameters {
    pub fn initial_stoich(&self) -> f64 {
        self.initial_conc / self.max_conc
    }

    fn validate(&self, which: &str) -> Result<(), SpmError> {
        let bad = |msg: String| Err(SpmError::InvalidParameter(format!("{which}: {msg}")));
        if !(self.particle_radius > 0.0) {
            return bad(format!("particle_radius must be > 0, got {}", self.particle_radius));
        }
        if !(self.solid_diffusivity > 0.0) {
            return bad(format!("solid_diffusivity must be > 0, got {}", self.solid_diffusivity));
        }
        if !(self.active_volume_fraction > 0.0 && self.active_volume_fraction < 1.0) {
            return bad(format!(
                "active_volume_fraction must lie in (0, 1), got {}",
                self.active_volume_fraction
            ));
        }
        if !(self.composite_volume > 0.0) {
            return bad(format!("composite_volume must be > 0, got {}", self.composite_volume));
        }
        if !(self.initial_conc > 0.0 && self.initial_conc < self.max_conc) {
            return bad(format!(
                "need 0 < initial_conc < max_conc, got {} and {}",
                self.initial_conc, self.max_conc
            ));
        }
        if !(self.exchange_prefactor > 0.0) {
            return bad(format!(
                "exchange_prefactor must be > 0, got {}",
                self.exchange_prefactor
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParameters {
    /// C/kmol
    pub faraday_const: f64,
    /// J/(kmol K)
    pub gas_const: f64,
    /// K
    pub temperature: f64,
    /// kmol/m^3
    pub electrolyte_conc: f64,
    pub anodic_transfer_coeff: f64,
    /// s
    pub discharge_time_horizon: f64,
    pub anode: ElectrodeParameters,
    pub cathode: ElectrodeParameters,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    faraday_const: f64,
    gas_const: f64,
    temperature: f64,
    electrolyte_conc: f64,
    #[serde(default = "default_alpha")]
    anodic_transfer_coeff: f64,
    #[serde(default = "default_horizon")]
    discharge_time_horizon: f64,
}

fn default_alpha() -> f64 {
    0.5
}

fn default_horizon() -> f64 {
    1350.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawElectrode {
    particle_radius: f64,
    solid_diffusivity: f64,
    active_volume_fraction: f64,
    composite_volume: f64,
    max_conc: f64,
    initial_conc: f64,
    exchange_prefactor: f64,
    ocp_table: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    cell: RawCell,
    anode: RawElectrode,
    cathode: RawElectrode,
}

impl CellParameters {
    /// Shipped parameter set (see `data/default_params.toml`).
    pub fn default_cell() -> Self {
        Self::from_toml_str(DEFAULT_PARAMS, |name| match name.to_str() {
            Some("ocp_anode_graphite.csv") => Ok(DEFAULT_ANODE_OCP.to_string()),
            Some("ocp_cathode_nmc.csv") => Ok(DEFAULT_CATHODE_OCP.to_string()),
            _ => Err(SpmError::InvalidParameter(format!(
                "unknown embedded table {}",
                name.display()
            ))),
        })
        .expect("embedded default parameters are valid")
    }

    /// Content hash of the embedded default inputs.
    pub fn default_content_hash() -> String {
        hash_chunks([
            DEFAULT_PARAMS.as_bytes(),
            DEFAULT_ANODE_OCP.as_bytes(),
            DEFAULT_CATHODE_OCP.as_bytes(),
        ])
    }

    /// Loads a parameter file; OCP table paths are resolved relative to the
    /// file's directory. Returns the parameters together with a SHA-256 hash
    /// over the parameter file and both tables.
    pub fn load(path: &Path) -> Result<(Self, String), SpmError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut tables: Vec<String> = Vec::new();
        let params = Self::from_toml_str(&text, |name| {
            let full = if name.is_absolute() {
                name.to_path_buf()
            } else {
                base.join(name)
            };
            let body = std::fs::read_to_string(&full).map_err(|source| SpmError::Io {
                path: full.clone(),
                source,
            })?;
            tables.push(body.clone());
            Ok(body)
        })?;
        let mut chunks: Vec<&[u8]> = vec![text.as_bytes()];
        chunks.extend(tables.iter().map(|t| t.as_bytes()));
        Ok((params, hash_chunks(chunks)))
    }

    fn from_toml_str(
        text: &str,
        mut read_table: impl FnMut(&Path) -> Result<String, SpmError>,
    ) -> Result<Self, SpmError> {
        let raw: RawParams = toml::from_str(text).map_err(|e| SpmError::InvalidParameter(e.to_string()))?;
        let mut electrode = |e: RawElectrode| -> Result<ElectrodeParameters, SpmError> {
            let body = read_table(&e.ocp_table)?;
            let knots = parse_two_column_csv(&body)
                .map_err(|err| SpmError::InvalidTable(format!("{}: {err}", e.ocp_table.display())))?;
            Ok(ElectrodeParameters {
                particle_radius: e.particle_radius,
                solid_diffusivity: e.solid_diffusivity,
                active_volume_fraction: e.active_volume_fraction,
                composite_volume: e.composite_volume,
                max_conc: e.max_conc,
                initial_conc: e.initial_conc,
                exchange_prefactor: e.exchange_prefactor,
                ocp: OcpCurve::from_knots(knots)?,
            })
        };
        let anode = electrode(raw.anode)?;
        let cathode = electrode(raw.cathode)?;
        let params = CellParameters {
            faraday_const: raw.cell.faraday_const,
            gas_const: raw.cell.gas_const,
            temperature: raw.cell.temperature,
            electrolyte_conc: raw.cell.electrolyte_conc,
            anodic_transfer_coeff: raw.cell.anodic_transfer_coeff,
            discharge_time_horizon: raw.cell.discharge_time_horizon,
            anode,
            cathode,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), SpmError> {
        let a = self.anodic_transfer_coeff;
        if !(a > 0.0 && a < 1.0) {
            return Err(SpmError::InvalidParameter(format!(
                "anodic_transfer_coeff must lie in (0, 1), got {a}"
            )));
        }
        for (name, v) in [
            ("temperature", self.temperature),
            ("electrolyte_conc", self.electrolyte_conc),
            ("faraday_const", self.faraday_const),
            ("gas_const", self.gas_const),
            ("discharge_time_horizon", self.discharge_time_horizon),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SpmError::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        self.anode.validate("anode")?;
        self.cathode.validate("cathode")
    }

    pub fn electrode(&self, which: Electrode) -> &ElectrodeParameters {
        match which {
            Electrode::Anode => &self.anode,
            Electrode::Cathode => &self.cathode,
        }
    }

    pub fn electrode_mut(&mut self, which: Electrode) -> &mut ElectrodeParameters {
        match which {
            Electrode::Anode => &mut self.anode,
            Electrode::Cathode => &mut self.cathode,
        }
    }

    /// RT/F in volts.
    pub fn thermal_voltage(&self) -> f64 {
        self.gas_const * self.temperature / self.faraday_const
    }

    /// Current (A/m^2) that discharges the cathode's theoretical capacity in
    /// one hour.
    pub fn one_c_current(&self) -> f64 {
        let ca = &self.cathode;
        ca.active_volume_fraction * ca.composite_volume * ca.max_conc * self.faraday_const / 3600.0
    }

    /// Open-circuit voltage at the initial stoichiometries.
    pub fn initial_ocv(&self) -> Result<f64, SpmError> {
        let (u_ca, _) = self.cathode.ocp.eval(self.cathode.initial_stoich())?;
        let (u_an, _) = self.anode.ocp.eval(self.anode.initial_stoich())?;
        Ok(u_ca - u_an)
    }

    /// Same cell with both OCP curves replaced by their chords between the
    /// initial stoichiometry and the stoichiometry reached after `charge`
    /// (kmol per m^2 of cell, positive into the cathode) has moved.
    pub fn with_linear_ocp(&self, moved_kmol: f64) -> Result<Self, SpmError> {
        let mut out = self.clone();
        for e in Electrode::BOTH {
            let p = self.electrode(e);
            let cap = p.active_volume_fraction * p.composite_volume * p.max_conc;
            let sign = match e {
                Electrode::Anode => -1.0,
                Electrode::Cathode => 1.0,
            };
            let x0 = p.initial_stoich();
            let x1 = (x0 + sign * moved_kmol / cap).clamp(0.0, 1.0);
            let x1 = if (x1 - x0).abs() < 1e-6 {
                (x0 + 0.1 * sign).clamp(0.0, 1.0)
            } else {
                x1
            };
            out.electrode_mut(e).ocp = p.ocp.chord(x0, x1)?;
        }
        Ok(out)
    }
}

fn hash_chunks<'a>(chunks: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut hasher = Sha256::new();
    for c in chunks {
        hasher.update((c.len() as u64).to_le_bytes());
        hasher.update(c);
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of arbitrary bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    hash_chunks([bytes])
}
