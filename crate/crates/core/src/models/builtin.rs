use nalgebra::{DMatrix, DVector};

use super::{scalar, scalar_mat, SdeModel};

/// Geometric Brownian motion `dX = rX dt + σX ∘ dB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gbm {
    pub r: f64,
    pub sigma: f64,
}

impl Gbm {
    pub fn new(r: f64, sigma: f64) -> Self {
        Self { r, sigma }
    }
}

impl SdeModel for Gbm {
    fn dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        scalar(self.r * x[0])
    }
    fn diffusion(&self, x: &DVector<f64>) -> DMatrix<f64> {
        scalar_mat(self.sigma * x[0])
    }
    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        scalar_mat(self.r)
    }
    fn diffusion_jacobians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![scalar_mat(self.sigma)]
    }
}

/// Square-root (Cox-Ingersoll-Ross) diffusion `dX = λ(ξ − X) dt + γ√X ∘ dB`.
///
/// The parameters are those of the Stratonovich equation, as for every model
/// here. In Itô form this process mean-reverts to `ξ + γ²/(4λ)`; use
/// [`Cir::from_ito`] to start from the Itô level instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cir {
    pub lambda: f64,
    pub xi: f64,
    pub gamma: f64,
}

impl Cir {
    pub fn new(lambda: f64, xi: f64, gamma: f64) -> Self {
        Self { lambda, xi, gamma }
    }

    /// The process `dX = λ(ξ − X) dt + γ√X dB` in the Itô sense.
    pub fn from_ito(lambda: f64, xi: f64, gamma: f64) -> Self {
        Self::new(lambda, xi - gamma * gamma / (4.0 * lambda), gamma)
    }

    /// Mean-reversion level of the equivalent Itô equation.
    pub fn ito_level(&self) -> f64 {
        self.xi + self.gamma * self.gamma / (4.0 * self.lambda)
    }
}

impl SdeModel for Cir {
    fn dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        scalar(self.lambda * (self.xi - x[0]))
    }
    fn diffusion(&self, x: &DVector<f64>) -> DMatrix<f64> {
        scalar_mat(self.gamma * x[0].sqrt())
    }
    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        scalar_mat(-self.lambda)
    }
    fn diffusion_jacobians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![scalar_mat(0.5 * self.gamma / x[0].sqrt())]
    }
}

/// Double well `dX = (X − X³) dt + σ ∘ dB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWell {
    pub sigma: f64,
}

impl DoubleWell {
    pub fn new(sigma: f64) -> Self {
        Self { sigma }
    }
}

impl SdeModel for DoubleWell {
    fn dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        scalar(x[0] - x[0].powi(3))
    }
    fn diffusion(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        scalar_mat(self.sigma)
    }
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        scalar_mat(1.0 - 3.0 * x[0] * x[0])
    }
    fn diffusion_jacobians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![scalar_mat(0.0)]
    }
}

/// Affine drift with additive noise, `dX = (AX + c) dt + G dB`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
}

impl Linear {
    /// # Panics
    /// If the shapes are inconsistent.
    pub fn new(a: DMatrix<f64>, c: DVector<f64>, g: DMatrix<f64>) -> Self {
        let n = c.len();
        assert!(a.shape() == (n, n) && g.shape() == (n, n), "inconsistent linear model shapes");
        Self { a, c, g }
    }

    /// Scalar Ornstein-Uhlenbeck process `dX = θ(μ − X) dt + σ dB`.
    pub fn ou(theta: f64, mu: f64, sigma: f64) -> Self {
        Self::new(scalar_mat(-theta), scalar(theta * mu), scalar_mat(sigma))
    }

    /// Standard Brownian motion in `dim` dimensions.
    pub fn brownian(dim: usize) -> Self {
        Self::new(DMatrix::zeros(dim, dim), DVector::zeros(dim), DMatrix::identity(dim, dim))
    }

    /// A damped, rotating 2-d system with correlated noise.
    pub fn example_2d() -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.3]),
            DVector::from_vec(vec![0.2, -0.1]),
            DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.2, 0.4]),
        )
    }
}

impl SdeModel for Linear {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.c
    }
    fn diffusion(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.g.clone()
    }
    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
    fn diffusion_jacobians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let n = self.dim();
        vec![DMatrix::zeros(n, n); n]
    }
}
