use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkSpec, NnError};

/// Text checkpoint: TOML header describing the network plus the flat weight
/// array, every value written with 17 significant digits so that a reload
/// is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    /// Stored as text: TOML integers stop at `i64::MAX`.
    #[serde(with = "seed_text")]
    pub seed: u64,
    /// Free-form context owned by the caller (training stage, transform,
    /// parameter hash, ...).
    #[serde(default)]
    pub context: toml::Table,
    pub weights: Vec<f64>,
}

#[derive(Serialize)]
struct Header<'a> {
    spec: &'a NetworkSpec,
    #[serde(with = "seed_text")]
    seed: u64,
    context: &'a toml::Table,
}

impl Checkpoint {
    pub fn to_text(&self) -> Result<String, NnError> {
        let header = Header {
            spec: &self.spec,
            seed: self.seed,
            context: &self.context,
        };
        let mut text = String::from("# spm-pinn network checkpoint\n");
        // Plain keys have to precede tables in TOML.
        text.push_str("weights = [\n");
        for w in &self.weights {
            if !w.is_finite() {
                return Err(NnError::Format(format!("non-finite weight {w}")));
            }
            writeln!(text, "  {w:.16e},").expect("string write");
        }
        text.push_str("]\n");
        text.push_str(&toml::to_string(&header).map_err(|e| NnError::Format(e.to_string()))?);
        Ok(text)
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let ck: Checkpoint = toml::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
        let n = ck.spec.param_count();
        if ck.weights.len() != n {
            return Err(NnError::ShapeMismatch(format!(
                "checkpoint holds {} weights, spec needs {n}",
                ck.weights.len()
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_text()?).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }
}

mod seed_text {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&seed.to_string())
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Either::deserialize(d)? {
            Either::Int(i) => u64::try_from(i).map_err(de::Error::custom),
            Either::Text(t) => t.parse().map_err(de::Error::custom),
        }
    }
}
