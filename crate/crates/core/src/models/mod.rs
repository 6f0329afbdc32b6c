//! SDE model interface, Itô/Stratonovich conversion, builtin benchmark
//! models, coordinate transforms and closed-form reference densities.
//!
//! Models are written in the Stratonovich convention
//! `dX = f(X) dt + g(X) ∘ dB` with square, invertible `g`. Itô-specified
//! models are converted when they are constructed.

mod builtin;
mod exact;
mod transform;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use builtin::{Cir, DoubleWell, Gbm, Linear};
pub use exact::{
    cir_exact_density, cir_exact_density_ito, gbm_exact_density, linear_exact_density,
    linear_mean_covariance,
};
pub use transform::{
    pushforward_model, validate_transform, AffineTransform, DiffeoTransform, LogTransform,
    PushforwardModel,
};

/// A time-homogeneous Stratonovich SDE with `n` states and `n` noise channels.
///
/// Implementations must be pure: the same state always yields the same
/// coefficients, and evaluation must be safe from several threads.
pub trait SdeModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Stratonovich drift `f(x)`.
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Noise intensity `g(x)`; column `k` is `g_k`.
    fn diffusion(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Jacobian `∇f(x)`, entry `(i, j) = ∂f_i/∂x_j`.
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Jacobians `∇g_k(x)` of the diffusion columns, entry `(i, j) = ∂g_{ik}/∂x_j`.
    fn diffusion_jacobians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>>;
}

macro_rules! forward_model {
    ($ty:ty) => {
        impl<M: SdeModel + ?Sized> SdeModel for $ty {
            fn dim(&self) -> usize {
                (**self).dim()
            }
            fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
                (**self).drift(x)
            }
            fn diffusion(&self, x: &DVector<f64>) -> DMatrix<f64> {
                (**self).diffusion(x)
            }
            fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
                (**self).drift_jacobian(x)
            }
            fn diffusion_jacobians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
                (**self).diffusion_jacobians(x)
            }
        }
    };
}

forward_model!(&M);
forward_model!(Box<M>);
forward_model!(Arc<M>);

/// `Σ_k ∇g_k(x) g_k(x)`, twice the Itô-Stratonovich drift correction.
pub fn noise_induced_drift(model: &(impl SdeModel + ?Sized), x: &DVector<f64>) -> DVector<f64> {
    let g = model.diffusion(x);
    model
        .diffusion_jacobians(x)
        .iter()
        .enumerate()
        .fold(DVector::zeros(model.dim()), |acc, (k, dgk)| acc + dgk * g.column(k))
}

/// Itô drift `f_I = f + ½ Σ_k ∇g_k g_k` of a Stratonovich model.
pub fn ito_drift(model: &(impl SdeModel + ?Sized), x: &DVector<f64>) -> DVector<f64> {
    model.drift(x) + noise_induced_drift(model, x) * 0.5
}

/// Turns an Itô drift into the Stratonovich drift `x ↦ f_I(x) − ½ Σ_k ∇g_k g_k`.
pub fn ito_to_stratonovich<F, G, DG>(
    f_ito: F,
    g: G,
    dg: DG,
) -> impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
    G: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
    DG: Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync,
{
    move |x| {
        let gx = g(x);
        let corr = dg(x)
            .iter()
            .enumerate()
            .fold(DVector::zeros(x.len()), |acc, (k, dgk)| acc + dgk * gx.column(k));
        f_ito(x) - corr * 0.5
    }
}

type VecFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type MatListFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// A model assembled from closures.
#[derive(Clone)]
pub struct FnModel {
    dim: usize,
    drift: VecFn,
    diffusion: MatFn,
    drift_jacobian: MatFn,
    diffusion_jacobians: MatListFn,
}

impl FnModel {
    pub fn new(
        dim: usize,
        drift: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        diffusion: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        drift_jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        diffusion_jacobians: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            drift_jacobian: Arc::new(drift_jacobian),
            diffusion_jacobians: Arc::new(diffusion_jacobians),
        }
    }

    /// Builds a Stratonovich model from an Itô drift and its Jacobian.
    ///
    /// The Jacobian of the correction term needs second derivatives of `g`,
    /// which are taken by central differences of `diffusion_jacobians`.
    pub fn from_ito(
        dim: usize,
        drift_ito: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        drift_ito_jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        diffusion: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        diffusion_jacobians: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        let g: MatFn = Arc::new(diffusion);
        let dg: MatListFn = Arc::new(diffusion_jacobians);
        let (g1, dg1) = (g.clone(), dg.clone());
        let drift = ito_to_stratonovich(drift_ito, move |x| g1(x), move |x| dg1(x));
        let (g2, dg2) = (g.clone(), dg.clone());
        let correction = move |x: &DVector<f64>| {
            let gx = g2(x);
            dg2(x)
                .iter()
                .enumerate()
                .fold(DVector::zeros(x.len()), |acc, (k, dgk)| acc + dgk * gx.column(k))
        };
        let jac = move |x: &DVector<f64>| {
            drift_ito_jacobian(x) - central_jacobian(&correction, x, 1e-6) * 0.5
        };
        Self {
            dim,
            drift: Arc::new(drift),
            diffusion: g,
            drift_jacobian: Arc::new(jac),
            diffusion_jacobians: dg,
        }
    }
}

impl SdeModel for FnModel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }
    fn diffusion(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.diffusion)(x)
    }
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.drift_jacobian)(x)
    }
    fn diffusion_jacobians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.diffusion_jacobians)(x)
    }
}

/// Central-difference Jacobian of `f` at `x` with step `rel·(1+|x_j|)`.
pub(crate) fn central_jacobian(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    rel: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let h = rel * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        cols.push((f(&xp) - f(&xm)) / (2.0 * h));
    }
    let m = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, n, |i, j| cols[j][i])
}

/// Central-difference Jacobians of the columns of a matrix field.
pub(crate) fn central_column_jacobians(
    f: &dyn Fn(&DVector<f64>) -> DMatrix<f64>,
    x: &DVector<f64>,
    rel: f64,
) -> Vec<DMatrix<f64>> {
    let n = x.len();
    let cols = f(x).ncols();
    let mut out = vec![DMatrix::zeros(n, n); cols];
    for j in 0..n {
        let h = rel * (1.0 + x[j].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let d = (f(&xp) - f(&xm)) / (2.0 * h);
        for (k, jac) in out.iter_mut().enumerate() {
            jac.set_column(j, &d.column(k));
        }
    }
    out
}

/// Errors unless `g` is numerically invertible (finite, bounded condition number).
pub fn check_invertible(g: &DMatrix<f64>, context: &str) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::singular(format!("{context}: non-finite noise intensity")));
    }
    let sv = g.singular_values();
    let max = sv.max();
    let min = sv.min();
    let cond = max / min;
    if !(min > 0.0) || !cond.is_finite() || cond > 1e14 {
        return Err(Error::singular(format!("{context}: condition estimate {cond:.3e}")));
    }
    Ok(())
}

/// Outcome of comparing a model's analytic derivatives with finite differences.
#[derive(Debug, Clone)]
pub struct DerivativeCheck {
    /// Worst relative mismatch of `∇f` over the probed states.
    pub drift_error: f64,
    /// Worst relative mismatch of the `∇g_k` over the probed states.
    pub diffusion_error: f64,
    pub tolerance: f64,
    pub states_checked: usize,
}

impl DerivativeCheck {
    pub fn passed(&self) -> bool {
        self.drift_error <= self.tolerance && self.diffusion_error <= self.tolerance
    }
}

fn relative_mismatch(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(b.amax()).max(1.0);
    (a - b).amax() / scale
}

/// Checks `drift_jacobian` and `diffusion_jacobians` against central finite
/// differences (step `1e-6·(1+|x|)`) at the given states; also verifies that
/// `g` is invertible there.
pub fn validate_derivatives(
    model: &(impl SdeModel + ?Sized),
    states: &[DVector<f64>],
    tolerance: f64,
) -> Result<DerivativeCheck> {
    let mut drift_error: f64 = 0.0;
    let mut diffusion_error: f64 = 0.0;
    for x in states {
        if x.len() != model.dim() {
            return Err(Error::invalid("probe state has wrong dimension"));
        }
        check_invertible(&model.diffusion(x), "validate_derivatives")?;
        let fd = central_jacobian(&|y| model.drift(y), x, 1e-6);
        drift_error = drift_error.max(relative_mismatch(&model.drift_jacobian(x), &fd));
        let fdg = central_column_jacobians(&|y| model.diffusion(y), x, 1e-6);
        for (a, b) in model.diffusion_jacobians(x).iter().zip(&fdg) {
            diffusion_error = diffusion_error.max(relative_mismatch(a, b));
        }
    }
    Ok(DerivativeCheck {
        drift_error,
        diffusion_error,
        tolerance,
        states_checked: states.len(),
    })
}

pub(crate) fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

pub(crate) fn scalar_mat(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}
