//! Finite-dimensional check of the weak-noise limit: for `Z ~ N(0, Σ)` in
//! `ℝⁿ` and `X = h(Z)` in `ℝᵐ` with `h(0) = 0`, the Laplace approximation of
//! the mollified density of `X` at 0 tends to `|2πHΣHᵀ|^{-1/2}`, `H = ∇h(0)`.
//!
//! Not part of the density pipeline; it backs the use of the linearized
//! covariance `Σ_T` there.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type VectorMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
pub struct PushforwardInstance {
    pub n: usize,
    pub m: usize,
    pub h: VectorMap,
    /// Covariance of `Z`.
    pub sigma: DMatrix<f64>,
    /// `∇h(0)`, `m × n`.
    pub h0: DMatrix<f64>,
}

impl std::fmt::Debug for PushforwardInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PushforwardInstance")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("sigma", &self.sigma)
            .field("h0", &self.h0)
            .finish()
    }
}

impl PushforwardInstance {
    /// Validates `h(0) = 0`, surjectivity of `h0` and positive definiteness of `Σ`.
    pub fn new(h: VectorMap, h0: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let (m, n) = h0.shape();
        if m == 0 || m > n || sigma.shape() != (n, n) {
            return Err(Error::invalid(format!("need 1 ≤ m ≤ n and n×n Σ (m={m}, n={n})")));
        }
        let at0 = h(&DVector::zeros(n));
        if at0.len() != m || at0.amax() > 1e-12 {
            return Err(Error::invalid("h must map 0 to 0 in ℝᵐ"));
        }
        let smin = h0.singular_values().min();
        if !(smin > 1e-8) {
            return Err(Error::singular(format!("∇h(0) is not surjective (σ_min = {smin:.3e})")));
        }
        if sigma.clone().cholesky().is_none() {
            return Err(Error::singular("Σ is not positive definite"));
        }
        Ok(Self { n, m, h, sigma, h0 })
    }

    /// `h(z) = Hz`.
    pub fn linear(h0: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let hm = h0.clone();
        Self::new(Arc::new(move |z| &hm * z), h0, sigma)
    }

    fn sqrt_cov(&self) -> DMatrix<f64> {
        self.sigma.clone().cholesky().expect("validated at construction").unpack()
    }

    /// Nonzero singular values of `HΣ^{1/2}`, in decreasing order.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut sv: Vec<f64> = (&self.h0 * self.sqrt_cov()).singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }
}

/// `|2πHΣHᵀ|^{-1/2}`.
pub fn weak_noise_density(inst: &PushforwardInstance) -> Result<f64> {
    let s = &inst.h0 * &inst.sigma * inst.h0.transpose() * (2.0 * PI);
    let det = s.determinant();
    if !(det > 0.0) {
        return Err(Error::singular("HΣHᵀ"));
    }
    Ok(det.powf(-0.5))
}

/// `|2π|^{-m/2} δ^{-m} |I + δ^{-2}Σ^{1/2}HᵀHΣ^{1/2}|^{-1/2}`, through the
/// singular values `σ_i` of `HΣ^{1/2}`.
pub fn laplace_density_delta(inst: &PushforwardInstance, delta: f64) -> f64 {
    let m = inst.m as f64;
    let log = inst
        .singular_values()
        .iter()
        .map(|s| -0.5 * (1.0 + s * s / (delta * delta)).ln())
        .sum::<f64>()
        - 0.5 * m * (2.0 * PI).ln()
        - m * delta.ln();
    log.exp()
}

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    /// Half-width of the grid in standard deviations of `Z`.
    pub half_width: f64,
    /// Grid points per mollifier width along the directions `H` sees.
    pub band_resolution: f64,
    /// Half-width of the band window, in mollifier widths.
    pub band_window: f64,
    /// Spacing along directions that `H` does not see.
    pub smooth_spacing: f64,
    /// Accepted relative gap between the grid and its every-other-point subgrid.
    pub tolerance: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_width: 6.0,
            band_resolution: 2.0,
            band_window: 12.0,
            smooth_spacing: 0.2,
            tolerance: 1e-4,
        }
    }
}

/// `∫ f_Z(z) φ(h(z)/δ) δ^{-m} dz` by tensor-grid quadrature, `n ≤ 3`.
///
/// Works in whitened coordinates `v`, rotated so the first `m` axes are the
/// right singular directions of `HΣ^{1/2}`. The remaining `n − m` axes span
/// `±half_width` with a coarse spacing. For each point on those axes the
/// integrand is confined to a thin band around `h = 0`, so the first `m`
/// axes are gridded on a window of `band_window` mollifier widths centred on
/// that zero. The quadrature error is estimated from the subgrid of every
/// other point.
pub fn brute_force_density(inst: &PushforwardInstance, delta: f64, grid: &GridSpec) -> Result<f64> {
    if inst.n > 3 {
        return Err(Error::invalid("tensor-grid quadrature is limited to n ≤ 3"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("δ must be positive"));
    }
    let n = inst.n;
    let m = inst.m;
    let l = inst.sqrt_cov();
    let a = &inst.h0 * &l;
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let rot = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let to_z = &l * &rot;

    // (half point count, spacing, half-width) per axis
    let axes: Vec<(usize, f64)> = (0..n)
        .map(|k| {
            let (spacing, width) = if k < m {
                let width = eig.eigenvalues[order[k]].max(0.0).sqrt();
                let spacing = grid.smooth_spacing.min(delta / (grid.band_resolution * width));
                (spacing, (grid.band_window * delta / width).min(grid.half_width))
            } else {
                (grid.smooth_spacing, grid.half_width)
            };
            let half_count = (width / spacing).ceil() as usize;
            (half_count, width / half_count as f64)
        })
        .collect();

    let norm_n = (2.0 * PI).powf(-0.5 * n as f64);
    let norm_m = (2.0 * PI).powf(-0.5 * m as f64) * delta.powi(-(m as i32));
    let h_of = |v: &DVector<f64>| (inst.h)(&(&to_z * v));
    let integrand = |v: &DVector<f64>| {
        let x = h_of(v);
        norm_n * (-0.5 * v.norm_squared()).exp() * norm_m * (-0.5 * x.norm_squared() / (delta * delta)).exp()
    };

    let smooth_counts: Vec<usize> = axes[m..].iter().map(|(hc, _)| 2 * hc + 1).collect();
    let slices: usize = smooth_counts.iter().product();
    let band_cells: usize = axes[..m].iter().map(|(hc, _)| 2 * hc + 1).product();
    if slices.saturating_mul(band_cells) > 200_000_000 {
        return Err(Error::invalid("quadrature grid exceeds 2e8 points; increase δ"));
    }

    let (fine, coarse) = (0..slices)
        .into_par_iter()
        .map(|s| {
            let mut v = DVector::zeros(n);
            let mut rem = s;
            let mut slice_even = true;
            for k in m..n {
                let cnt = smooth_counts[k - m];
                let i = rem % cnt;
                rem /= cnt;
                slice_even &= i % 2 == 0;
                v[k] = -grid.half_width + i as f64 * axes[k].1;
            }
            let center = band_center(&h_of, &v, m).unwrap_or_else(|| DVector::zeros(m));
            let mut fine = 0.0;
            let mut coarse = 0.0;
            let mut idx = vec![0usize; m];
            loop {
                for k in 0..m {
                    let (hc, sp) = axes[k];
                    v[k] = center[k] + (idx[k] as f64 - hc as f64) * sp;
                }
                let val = integrand(&v);
                fine += val;
                if slice_even && idx.iter().all(|i| i % 2 == 0) {
                    coarse += val;
                }
                let mut k = 0;
                while k < m {
                    idx[k] += 1;
                    if idx[k] <= 2 * axes[k].0 {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k >= m {
                    break;
                }
            }
            (fine, coarse)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let vol: f64 = axes.iter().map(|(_, s)| s).product();
    let fine = fine * vol;
    let coarse = coarse * vol * 2f64.powi(n as i32);
    let estimate = ((fine - coarse) / fine).abs();
    if !(estimate <= grid.tolerance) {
        return Err(Error::GridTooCoarse { estimate });
    }
    Ok(fine)
}

/// Solves `h(v) = 0` for the first `m` coordinates of `v`, others held fixed.
fn band_center(h_of: &dyn Fn(&DVector<f64>) -> DVector<f64>, v: &DVector<f64>, m: usize) -> Option<DVector<f64>> {
    let mut w = v.clone();
    w.rows_mut(0, m).fill(0.0);
    for _ in 0..50 {
        let r = h_of(&w);
        if r.norm() < 1e-13 {
            return Some(w.rows(0, m).into_owned());
        }
        let mut jac = DMatrix::zeros(m, m);
        for k in 0..m {
            let step = 1e-7 * (1.0 + w[k].abs());
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += step;
            wm[k] -= step;
            jac.set_column(k, &((h_of(&wp) - h_of(&wm)) / (2.0 * step)));
        }
        let dv = jac.lu().solve(&(-&r))?;
        let mut t = 1.0;
        loop {
            let mut trial = w.clone();
            for k in 0..m {
                trial[k] += t * dv[k];
            }
            if h_of(&trial).norm() < r.norm() || t < 1e-6 {
                w = trial;
                break;
            }
            t *= 0.5;
        }
        if w.rows(0, m).amax() > 1e3 {
            return None;
        }
    }
    (h_of(&w).norm() < 1e-8).then(|| w.rows(0, m).into_owned())
}

/// Random valid instance with `n ≤ 3`, `m ≤ 2`: standard normal `H`,
/// `Σ = BBᵀ/n + ¼I`, redrawn until `HΣ^{1/2}` has `σ_min ≥ 0.1`.
///
/// With `nonlinear`, `h(z) = H(z + c·z∘z/√diag Σ)` with `c = 0.05`, a mild
/// quadratic perturbation of relative size `c` per standard deviation.
pub fn random_instance(rng: &mut impl Rng, nonlinear: bool) -> PushforwardInstance {
    loop {
        let n = rng.random_range(1..=3usize);
        let m = rng.random_range(1..=n.min(2));
        let h0 = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma = &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * 0.25;
        let inst = if nonlinear {
            let scale = sigma.diagonal().map(|s| NONLINEAR_COEF / s.sqrt());
            let hm = h0.clone();
            let h: VectorMap = Arc::new(move |z: &DVector<f64>| &hm * (z + z.component_mul(z).component_mul(&scale)));
            PushforwardInstance::new(h, h0, sigma)
        } else {
            PushforwardInstance::linear(h0, sigma)
        };
        if let Ok(inst) = inst {
            if inst.singular_values().last().is_some_and(|&s| s >= 0.1) {
                return inst;
            }
        }
    }
}

const NONLINEAR_COEF: f64 = 0.05;

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(h0: &[f64], m: usize, n: usize) -> PushforwardInstance {
        PushforwardInstance::linear(DMatrix::from_row_slice(m, n, h0), DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn weak_noise_examples() {
        let c = (2.0 * PI).powf(-0.5);
        assert!((weak_noise_density(&inst(&[1.0], 1, 1)).unwrap() - c).abs() < 1e-15);
        assert!((weak_noise_density(&inst(&[1.0, 0.0], 1, 2)).unwrap() - c).abs() < 1e-15);
        assert!((weak_noise_density(&inst(&[1.0, 1.0], 1, 2)).unwrap() - (4.0 * PI).powf(-0.5)).abs() < 1e-15);
    }

    #[test]
    fn laplace_examples() {
        let one = inst(&[1.0], 1, 1);
        assert!((laplace_density_delta(&one, 1.0) - 0.282_094_791_773_878_1).abs() < 1e-15);
        // orthogonal H, Σ = I: the limit is the standard normal density at 0;
        // the relative gap at δ is ½Σδ²/σ_i² ≈ 1e-12
        let (c, s) = (0.6, 0.8);
        let rot = inst(&[c, -s, s, c], 2, 2);
        let want = 1.0 / (2.0 * PI);
        assert!((laplace_density_delta(&rot, 1e-6) - want).abs() < 1e-11 * want);
        assert!((weak_noise_density(&rot).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn gap_shrinks_like_delta_squared() {
        let i = inst(&[1.0, 0.5, -0.3], 1, 3);
        let w = weak_noise_density(&i).unwrap();
        let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4].iter().map(|&d| (laplace_density_delta(&i, d) - w).abs() / w).collect();
        for g in gaps.windows(2) {
            assert!((g[0] / g[1] / 100.0 - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn brute_force_linear_is_exact() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let i = PushforwardInstance::linear(DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), sigma).unwrap();
        for delta in [0.2, 0.05] {
            let bf = brute_force_density(&i, delta, &GridSpec::default()).unwrap();
            let want = laplace_density_delta(&i, delta);
            assert!(((bf - want) / want).abs() < 1e-5, "{bf} vs {want}");
        }
    }

    #[test]
    fn brute_force_nonlinear_is_bracketed() {
        let h: VectorMap = Arc::new(|z: &DVector<f64>| DVector::from_element(1, z[0] + 0.1 * z[1] * z[1]));
        let i = PushforwardInstance::new(h, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let delta = 0.05;
        let bf = brute_force_density(&i, delta, &GridSpec::default()).unwrap();
        let lap = laplace_density_delta(&i, delta);
        let weak = weak_noise_density(&i).unwrap();
        let (lo, hi) = (lap.min(weak), lap.max(weak));
        assert!(bf > 0.95 * lo && bf < 1.05 * hi, "{bf} not near [{lo}, {hi}]");
        // limit stabilization
        let half = brute_force_density(&i, 0.01, &GridSpec::default()).unwrap();
        let quarter = brute_force_density(&i, 0.005, &GridSpec::default()).unwrap();
        assert!(((half - quarter) / half).abs() < 1e-4);
    }

    #[test]
    fn invalid_instances() {
        let h: VectorMap = Arc::new(|z: &DVector<f64>| DVector::from_element(1, z[0] + 1.0));
        assert!(PushforwardInstance::new(h, DMatrix::from_row_slice(1, 1, &[1.0]), DMatrix::identity(1, 1)).is_err());
        assert!(PushforwardInstance::linear(DMatrix::from_row_slice(1, 2, &[0.0, 0.0]), DMatrix::identity(2, 2)).is_err());
        assert!(PushforwardInstance::linear(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]), DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn orthogonal_invariance() {
        let (c, s) = (0.8f64, 0.6f64);
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let h0 = DMatrix::from_row_slice(1, 2, &[1.3, -0.4]);
        let a = inst(h0.as_slice(), 1, 2);
        let b = PushforwardInstance::linear(&h0 * &r, DMatrix::identity(2, 2)).unwrap();
        let (wa, wb) = (weak_noise_density(&a).unwrap(), weak_noise_density(&b).unwrap());
        assert!(((wa - wb) / wa).abs() < 1e-10);
        let (la, lb) = (laplace_density_delta(&a, 0.1), laplace_density_delta(&b, 0.1));
        assert!(((la - lb) / la).abs() < 1e-10);
    }

    #[test]
    fn brute_force_two_constraints() {
        use rand::SeedableRng;
        let mut rng = rand::rngs::SmallRng::seed_from_u64(11);
        let mut seen = 0;
        while seen < 3 {
            let i = random_instance(&mut rng, true);
            if i.m != 2 {
                continue;
            }
            seen += 1;
            let delta = 0.05 * i.singular_values()[1];
            let bf = brute_force_density(&i, delta, &GridSpec::default()).unwrap();
            let weak = weak_noise_density(&i).unwrap();
            assert!(((bf - weak) / weak).abs() < 0.01, "n={} {bf} vs {weak}", i.n);
        }
    }
}
