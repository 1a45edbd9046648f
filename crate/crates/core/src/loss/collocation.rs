use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollocationConfig {
    pub n_interior: usize,
    /// Split evenly between the centre and the surface.
    pub n_boundary: usize,
}

impl Default for CollocationConfig {
    fn default() -> Self {
        Self {
            n_interior: 1280,
            n_boundary: 640,
        }
    }
}

/// Collocation points in scaled coordinates `t, r in [0, 1]`.
///
/// Both particles share the same scaled points: every interior `(t, r)` is
/// used for the anode and for the cathode equation, and likewise for the
/// boundary times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub interior_t: Vec<f64>,
    /// Strictly inside `(0, 1)`.
    pub interior_r: Vec<f64>,
    /// Times of the `r = 0` points.
    pub center_t: Vec<f64>,
    /// Times of the `r = 1` points.
    pub surface_t: Vec<f64>,
    pub seed: u64,
}

pub fn sample_collocation(config: &CollocationConfig, seed: u64) -> CollocationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_center = config.n_boundary / 2;
    let n_surface = config.n_boundary - n_center;
    let mut interior_t = Vec::with_capacity(config.n_interior);
    let mut interior_r = Vec::with_capacity(config.n_interior);
    for _ in 0..config.n_interior {
        interior_t.push(rng.gen::<f64>());
        let mut r = rng.gen::<f64>();
        while r == 0.0 {
            r = rng.gen::<f64>();
        }
        interior_r.push(r);
    }
    let center_t = (0..n_center).map(|_| rng.gen::<f64>()).collect();
    let surface_t = (0..n_surface).map(|_| rng.gen::<f64>()).collect();
    CollocationSet {
        interior_t,
        interior_r,
        center_t,
        surface_t,
        seed,
    }
}

impl CollocationSet {
    pub fn n_interior(&self) -> usize {
        self.interior_t.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.center_t.len() + self.surface_t.len()
    }

    /// Same points with time compressed into `[0, frac]`.
    pub fn stretched(&self, frac: f64) -> Self {
        let s = |v: &[f64]| v.iter().map(|t| t * frac).collect();
        Self {
            interior_t: s(&self.interior_t),
            interior_r: self.interior_r.clone(),
            center_t: s(&self.center_t),
            surface_t: s(&self.surface_t),
            seed: self.seed,
        }
    }

    pub fn subset(&self, interior: &[usize], center: &[usize], surface: &[usize]) -> Self {
        let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect();
        Self {
            interior_t: pick(&self.interior_t, interior),
            interior_r: pick(&self.interior_r, interior),
            center_t: pick(&self.center_t, center),
            surface_t: pick(&self.surface_t, surface),
            seed: self.seed,
        }
    }
}
