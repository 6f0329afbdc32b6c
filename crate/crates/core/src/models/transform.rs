use nalgebra::{DMatrix, DVector};

use super::{central_jacobian, check_invertible, SdeModel};
use crate::error::{Error, Result};

/// A smooth change of coordinates `z = η(x)`.
pub trait DiffeoTransform: Send + Sync {
    fn eta(&self, x: &DVector<f64>) -> DVector<f64>;
    fn eta_inv(&self, z: &DVector<f64>) -> DVector<f64>;
    /// `∇η(x)`, entry `(i, j) = ∂η_i/∂x_j`.
    fn deta(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Hessians `∇∇η_i(x)`, one per component, if known in closed form.
    fn hessians(&self, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        None
    }
}

/// Componentwise logarithm on the positive orthant.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogTransform;

impl DiffeoTransform for LogTransform {
    fn eta(&self, x: &DVector<f64>) -> DVector<f64> {
        x.map(f64::ln)
    }
    fn eta_inv(&self, z: &DVector<f64>) -> DVector<f64> {
        z.map(f64::exp)
    }
    fn deta(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&x.map(|v| 1.0 / v))
    }
    fn hessians(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let n = x.len();
        Some(
            (0..n)
                .map(|i| {
                    let mut h = DMatrix::zeros(n, n);
                    h[(i, i)] = -1.0 / (x[i] * x[i]);
                    h
                })
                .collect(),
        )
    }
}

/// `z = Mx + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    pub matrix: DMatrix<f64>,
    pub shift: DVector<f64>,
    inverse: DMatrix<f64>,
}

impl AffineTransform {
    pub fn new(matrix: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        if matrix.shape() != (shift.len(), shift.len()) {
            return Err(Error::invalid("affine transform: matrix and shift disagree"));
        }
        check_invertible(&matrix, "affine transform")?;
        let inverse = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::singular("affine transform"))?;
        Ok(Self { matrix, shift, inverse })
    }

    pub fn scaling(dim: usize, factor: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * factor, DVector::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaling(dim, 1.0).expect("identity is invertible")
    }
}

impl DiffeoTransform for AffineTransform {
    fn eta(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.shift
    }
    fn eta_inv(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.inverse * (z - &self.shift)
    }
    fn deta(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
    fn hessians(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let n = x.len();
        Some(vec![DMatrix::zeros(n, n); n])
    }
}

/// The model obeyed by `Z = η(X)`. Stratonovich calculus obeys the ordinary
/// chain rule, so `f_Z = ∇η f` and `g_Z = ∇η g`, evaluated at `x = η⁻¹(z)`.
pub struct PushforwardModel<M, T> {
    pub model: M,
    pub transform: T,
}

/// Finite-difference step used when the transform has no closed-form Hessians.
const FD_STEP: f64 = 1e-6;

pub fn pushforward_model<M: SdeModel, T: DiffeoTransform>(model: M, transform: T) -> PushforwardModel<M, T> {
    PushforwardModel { model, transform }
}

impl<M: SdeModel, T: DiffeoTransform> PushforwardModel<M, T> {
    fn pull(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let x = self.transform.eta_inv(z);
        let j = self.transform.deta(&x);
        (x, j)
    }

    fn inverse_jacobian(j: &DMatrix<f64>) -> DMatrix<f64> {
        j.clone().try_inverse().unwrap_or_else(|| {
            log::warn!("pushforward: ∇η is singular");
            DMatrix::from_element(j.nrows(), j.ncols(), f64::NAN)
        })
    }

    /// `∂(∇η v)/∂x = Σ_l ∇∇η_· v_l + ∇η ∇v`.
    fn chain(hess: &[DMatrix<f64>], j: &DMatrix<f64>, v: &DVector<f64>, dv: &DMatrix<f64>) -> DMatrix<f64> {
        let n = v.len();
        let mut out = j * dv;
        for (i, h) in hess.iter().enumerate() {
            let row = h * v;
            for c in 0..n {
                out[(i, c)] += row[c];
            }
        }
        out
    }
}

impl<M: SdeModel, T: DiffeoTransform> SdeModel for PushforwardModel<M, T> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn drift(&self, z: &DVector<f64>) -> DVector<f64> {
        let (x, j) = self.pull(z);
        j * self.model.drift(&x)
    }

    fn diffusion(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let (x, j) = self.pull(z);
        j * self.model.diffusion(&x)
    }

    fn drift_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let (x, j) = self.pull(z);
        match self.transform.hessians(&x) {
            Some(hess) => {
                let d = Self::chain(&hess, &j, &self.model.drift(&x), &self.model.drift_jacobian(&x));
                d * Self::inverse_jacobian(&j)
            }
            None => central_jacobian(&|z: &DVector<f64>| self.drift(z), z, FD_STEP),
        }
    }

    fn diffusion_jacobians(&self, z: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let (x, j) = self.pull(z);
        match self.transform.hessians(&x) {
            Some(hess) => {
                let jinv = Self::inverse_jacobian(&j);
                let g = self.model.diffusion(&x);
                self.model
                    .diffusion_jacobians(&x)
                    .iter()
                    .enumerate()
                    .map(|(k, dgk)| Self::chain(&hess, &j, &g.column(k).into_owned(), dgk) * &jinv)
                    .collect()
            }
            None => super::central_column_jacobians(&|z: &DVector<f64>| self.diffusion(z), z, FD_STEP),
        }
    }
}

/// Checks `η⁻¹(η(x)) = x` to `1e-10` (relative) and invertibility of `∇η` at
/// each sample.
pub fn validate_transform(t: &dyn DiffeoTransform, states: &[DVector<f64>]) -> Result<()> {
    for x in states {
        let back = t.eta_inv(&t.eta(x));
        let err = (&back - x).amax() / x.amax().max(1.0);
        if !(err <= 1e-10) {
            return Err(Error::invalid(format!("transform round trip off by {err:.3e} at {x:?}")));
        }
        check_invertible(&t.deta(x), "transform Jacobian")?;
    }
    Ok(())
}
