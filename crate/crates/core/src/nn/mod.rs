//! Small fully-connected networks over scaled `(t, r)` inputs with exact
//! input derivatives and reverse-mode parameter gradients.

mod checkpoint;
mod engine;
mod init;
pub mod jet;
mod spec;

use std::fmt::{Debug, Display};

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use engine::{Batch, Channels, EvalAdjoint, EvalResult, HeadEval, Network, Tape};
pub use init::{init_weights, InitScheme};
pub use spec::{Architecture, BlockKind, Head, LayerShape, NetworkSpec, OutputActivation, Precision, Program};

/// Floating-point element type of the network arithmetic.
pub trait Real:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + num_traits::Float
    + num_traits::FromPrimitive
    + std::ops::AddAssign
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    fn from_f64_lossy(x: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64_lossy(x: f64) -> Self {
        x
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient entry at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Flat trainable-parameter storage plus the layer layout that indexes it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Splits the flat vector into per-layer `(weights, bias)` copies.
    pub fn unpack(&self, layers: &[LayerShape]) -> Result<Vec<(Vec<f64>, Vec<f64>)>, NnError> {
        let needed = layers.iter().map(|l| l.offset + l.len()).max().unwrap_or(0);
        if needed > self.values.len() {
            return Err(NnError::ShapeMismatch(format!(
                "layout needs {needed} values, vector has {}",
                self.values.len()
            )));
        }
        Ok(layers
            .iter()
            .map(|l| {
                let w = self.values[l.offset..l.bias_offset()].to_vec();
                let b = self.values[l.bias_offset()..l.offset + l.len()].to_vec();
                (w, b)
            })
            .collect())
    }

    pub fn pack(layers: &[LayerShape], parts: &[(Vec<f64>, Vec<f64>)]) -> Result<Self, NnError> {
        if layers.len() != parts.len() {
            return Err(NnError::ShapeMismatch("layer count".into()));
        }
        let n = layers.iter().map(|l| l.offset + l.len()).max().unwrap_or(0);
        let mut values = vec![0.0; n];
        for (l, (w, b)) in layers.iter().zip(parts) {
            if w.len() != l.weight_len() || b.len() != l.fan_out {
                return Err(NnError::ShapeMismatch(format!("layer {}", l.name)));
            }
            values[l.offset..l.bias_offset()].copy_from_slice(w);
            values[l.bias_offset()..l.offset + l.len()].copy_from_slice(b);
        }
        Ok(Self { values })
    }
}
