//! Closed-form transition densities used as reference values.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::special::ln_bessel_i;

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive (got {v})")))
    }
}

/// Transition density of geometric Brownian motion `dX = rX dt + σX ∘ dB`:
/// `log X_T ~ N(log x0 + rT, σ²T)`.
pub fn gbm_exact_density(r: f64, sigma: f64, x0: f64, t: f64, xt: f64) -> Result<f64> {
    require_positive("sigma", sigma)?;
    require_positive("x0", x0)?;
    require_positive("T", t)?;
    require_positive("x_T", xt)?;
    let var = sigma * sigma * t;
    let z = xt.ln() - x0.ln() - r * t;
    Ok((-0.5 * z * z / var).exp() / (xt * (2.0 * PI * var).sqrt()))
}

/// Transition density of the Itô square-root process
/// `dX = λ(κ − X) dt + γ√X dB` (scaled noncentral chi-squared).
pub fn cir_exact_density_ito(
    lambda: f64,
    kappa: f64,
    gamma: f64,
    x0: f64,
    t: f64,
    xt: f64,
) -> Result<f64> {
    for (name, v) in [("lambda", lambda), ("kappa", kappa), ("gamma", gamma), ("x0", x0), ("T", t), ("x_T", xt)] {
        require_positive(name, v)?;
    }
    if 2.0 * lambda * kappa < gamma * gamma {
        log::warn!("square-root process violates the Feller condition (2λκ = {} < γ² = {})", 2.0 * lambda * kappa, gamma * gamma);
    }
    let decay = (-lambda * t).exp();
    let c = 2.0 * lambda / (gamma * gamma * (1.0 - decay));
    let u = c * x0 * decay;
    let v = c * xt;
    let q = 2.0 * lambda * kappa / (gamma * gamma) - 1.0;
    let z = 2.0 * (u * v).sqrt();
    let log_p = c.ln() - u - v + 0.5 * q * (v / u).ln() + ln_bessel_i(q, z)?;
    Ok(log_p.exp())
}

/// Transition density of the builtin square-root model
/// `dX = λ(ξ − X) dt + γ√X ∘ dB` (Stratonovich parameters, see [`super::Cir`]).
pub fn cir_exact_density(lambda: f64, xi: f64, gamma: f64, x0: f64, t: f64, xt: f64) -> Result<f64> {
    require_positive("lambda", lambda)?;
    cir_exact_density_ito(lambda, xi + gamma * gamma / (4.0 * lambda), gamma, x0, t, xt)
}

/// Mean and covariance at time `t` of `dX = (AX + c) dt + G dB`, `X_0 = x0`.
///
/// Computed with block matrix exponentials (Van Loan), independently of the
/// ODE integrators used elsewhere.
pub fn linear_mean_covariance(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    x0: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = c.len();
    if a.shape() != (n, n) || g.shape() != (n, n) || x0.len() != n {
        return Err(Error::invalid("inconsistent linear model shapes"));
    }
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, 1)).copy_from(c);
    let e = (aug * t).exp();
    let mean = e.view((0, 0), (n, n)) * x0 + e.view((0, n), (n, 1));

    let mut vl = DMatrix::zeros(2 * n, 2 * n);
    vl.view_mut((0, 0), (n, n)).copy_from(&(-a));
    vl.view_mut((0, n), (n, n)).copy_from(&(g * g.transpose()));
    vl.view_mut((n, n), (n, n)).copy_from(&a.transpose());
    let f = (vl * t).exp();
    let f12 = f.view((0, n), (n, n)).into_owned();
    let f22 = f.view((n, n), (n, n)).into_owned();
    let cov = f22.transpose() * f12;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

/// Gaussian transition density of the linear model `dX = (AX + c) dt + G dB`.
pub fn linear_exact_density(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    x0: &DVector<f64>,
    t: f64,
    xt: &DVector<f64>,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::singular("linear density: covariance vanishes at T = 0"));
    }
    let (mean, cov) = linear_mean_covariance(a, c, g, x0, t)?;
    let n = c.len() as f64;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::singular("linear density covariance"))?;
    let r = xt - mean;
    let quad = r.dot(&chol.solve(&r));
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((-0.5 * quad - 0.5 * logdet - 0.5 * n * (2.0 * PI).ln()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv_sqrt_2pi() -> f64 {
        1.0 / (2.0 * PI).sqrt()
    }

    #[test]
    fn gbm_examples() {
        assert!((gbm_exact_density(0.0, 1.0, 1.0, 1.0, 1.0).unwrap() - inv_sqrt_2pi()).abs() < 1e-15);
        let e = std::f64::consts::E;
        let v = gbm_exact_density(1.0, 1.0, 1.0, 1.0, e).unwrap();
        assert!((v - inv_sqrt_2pi() / e).abs() < 1e-15);
        assert!((v - 0.14676).abs() < 1e-5);
        assert!(gbm_exact_density(0.0, 1.0, -1.0, 1.0, 1.0).is_err());
        assert!(gbm_exact_density(0.0, 0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn cir_anchor() {
        let p = cir_exact_density(1.0, 1.0, 0.5, 0.75, 1.0, 1.500024).unwrap();
        assert!((p - 0.257).abs() < 1e-3, "{p}");
    }

    #[test]
    fn cir_matches_independent_evaluation() {
        // scipy.stats.ncx2 pdf at 2c·x_T, scaled by 2c, for the Itô process
        // (λ, κ, γ) = (1, 1.0625, 0.5)
        let p = cir_exact_density_ito(1.0, 1.0625, 0.5, 0.75, 1.0, 1.5).unwrap();
        assert!((p - 0.25660419688099007).abs() < 1e-12, "{p}");
    }

    #[test]
    fn linear_examples() {
        let z = DMatrix::zeros(1, 1);
        let one = DMatrix::identity(1, 1);
        let v0 = DVector::zeros(1);
        let p = linear_exact_density(&z, &v0, &one, &v0, 1.0, &v0).unwrap();
        assert!((p - inv_sqrt_2pi()).abs() < 1e-14);

        let a = DMatrix::from_element(1, 1, -1.0);
        let c = DVector::from_element(1, 1.0);
        let mean = 1.0 - (-1.0f64).exp();
        let var = 0.5 * (1.0 - (-2.0f64).exp());
        let p = linear_exact_density(&a, &c, &one, &v0, 1.0, &DVector::from_element(1, mean)).unwrap();
        assert!((p - 1.0 / (2.0 * PI * var).sqrt()).abs() < 1e-13);

        assert!(linear_exact_density(&a, &c, &one, &v0, 0.0, &v0).is_err());
    }
}
