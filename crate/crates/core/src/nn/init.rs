use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{NetworkSpec, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Variance `2 / (fan_in + fan_out)`.
    GlorotNormal,
    /// Variance `2 / fan_in`.
    HeNormal,
}

impl InitScheme {
    pub fn variance(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::GlorotNormal => 2.0 / (fan_in + fan_out) as f64,
            InitScheme::HeNormal => 2.0 / fan_in as f64,
        }
    }
}

/// Zero-mean normal weights with the scheme's variance, zero biases.
pub fn init_weights(spec: &NetworkSpec, scheme: InitScheme, seed: u64) -> ParameterVector {
    let program = spec.program();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterVector::zeros(program.n_params);
    for l in &program.layers {
        let normal = Normal::new(0.0, scheme.variance(l.fan_in, l.fan_out).sqrt()).expect("positive variance");
        for w in &mut p.values[l.offset..l.bias_offset()] {
            *w = normal.sample(&mut rng);
        }
    }
    p
}
