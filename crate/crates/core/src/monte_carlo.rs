//! Euler–Maruyama cell-count estimates of scalar transition densities, used
//! as an oracle where no closed form exists.

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Paths simulated per independently seeded chunk.
const CHUNK: usize = 10_000;

const LANES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellEstimate {
    pub center: f64,
    pub width: f64,
    /// Fraction of paths ending in the cell, divided by its width.
    pub density: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone)]
pub struct MonteCarloSpec {
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    /// Cell centers; every cell has width `cell_width`.
    pub centers: Vec<f64>,
    pub cell_width: f64,
}

/// Simulates `dX = f_I(X) dt + g(X) dB` in the Itô sense with Euler–Maruyama
/// and counts terminal states per cell.
///
/// Results are deterministic for a given seed regardless of thread count:
/// each chunk of paths has its own seed derived from `seed` and its index.
pub fn euler_maruyama_cells<F, G>(ito_drift: F, diffusion: G, spec: &MonteCarloSpec) -> Result<Vec<CellEstimate>>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64 + Sync,
{
    if !(spec.dt > 0.0 && spec.horizon > 0.0 && spec.cell_width > 0.0) || spec.paths == 0 {
        return Err(Error::invalid("Monte Carlo needs positive step, horizon, cell width and path count"));
    }
    let steps = (spec.horizon / spec.dt).round() as usize;
    if steps == 0 {
        return Err(Error::invalid("Monte Carlo step exceeds the horizon"));
    }
    let dt = spec.horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let half = 0.5 * spec.cell_width;
    let chunks = spec.paths.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = SmallRng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c as u64);
            let n = CHUNK.min(spec.paths - c * CHUNK);
            let mut counts = vec![0u64; spec.centers.len()];
            // paths advance in interleaved blocks: one path's update is a
            // serial dependency chain, several hide each other's latency
            let mut done = 0;
            while done < n {
                let lanes = LANES.min(n - done);
                let mut xs = [spec.x0; LANES];
                for _ in 0..steps {
                    for x in xs.iter_mut().take(lanes) {
                        let z: f64 = rng.sample(StandardNormal);
                        *x += ito_drift(*x) * dt + diffusion(*x) * sqrt_dt * z;
                    }
                }
                for &x in &xs[..lanes] {
                    for (k, &center) in spec.centers.iter().enumerate() {
                        if x >= center - half && x < center + half {
                            counts[k] += 1;
                        }
                    }
                }
                done += lanes;
            }
            counts
        })
        .reduce(
            || vec![0u64; spec.centers.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let total = spec.paths as f64;
    Ok(spec
        .centers
        .iter()
        .zip(counts)
        .map(|(&center, k)| {
            let p = k as f64 / total;
            CellEstimate {
                center,
                width: spec.cell_width,
                density: p / spec.cell_width,
                std_err: (p * (1.0 - p) / total).sqrt() / spec.cell_width,
            }
        })
        .collect())
}
