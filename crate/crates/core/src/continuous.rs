//! Continuous-time Laplace approximation around the most probable path:
//! backward Riccati equation for the value-function Hessian `Q_t`, forward
//! Lyapunov equation for the fluctuation covariance `Σ_t`, and the density
//!
//! `p̂ = |2πΣ_T|^{-1/2} exp(−½∫ |Ū|² + tr gᵀQg + Λ̄·Σ_k ∇g_k g_k dt)`.
//!
//! All three passes run on one uniform grid of `M` steps; the path is stored
//! on the `2M` grid so RK4 stage evaluations never interpolate it.

use nalgebra::{DMatrix, DVector};

use crate::density::{Breakdown, ContinuousTerms, DensityEstimate};
use crate::error::{Error, Result};
use crate::models::{central_jacobian, check_invertible, SdeModel};
use crate::mpp::{canonical_rhs, solve_mpp, MppOptions, MppSolution};
use crate::numerics::{trapezoid, CurveTable};

const SECOND_DERIV_STEP: f64 = 1e-5;

/// Second derivatives `(H_xx, H_xλ, H_λλ)` of the Hamiltonian, with
/// `(H_xλ)_{ik} = ∂²H/∂x_i∂λ_k`.
///
/// `H_xλ` and `H_λλ = −ggᵀ` are exact in the model's first derivatives;
/// `H_xx` is a central difference (step `1e-5·(1+|x|)`) of the analytic
/// `∂H/∂x`, which in the scalar case is `λf″ − ½λ²(g²)″`.
pub fn hamiltonian_second_derivs(
    model: &(impl SdeModel + ?Sized),
    x: &DVector<f64>,
    lam: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let g = model.diffusion(x);
    let hll = -(&g * g.transpose());
    let hxl = closed_loop_jacobian(model, x, lam, &g).transpose();
    let hxx = if lam.iter().all(|&l| l == 0.0) {
        DMatrix::zeros(x.len(), x.len())
    } else {
        let neg = central_jacobian(&|y: &DVector<f64>| canonical_rhs(model, y, lam).1, x, SECOND_DERIV_STEP);
        let hxx = -neg;
        (&hxx + hxx.transpose()) * 0.5
    };
    (hxx, hxl, hll)
}

/// `∂/∂x [f(x) − g(x)g(x)ᵀλ]` at fixed `λ`.
fn closed_loop_jacobian(
    model: &(impl SdeModel + ?Sized),
    x: &DVector<f64>,
    lam: &DVector<f64>,
    g: &DMatrix<f64>,
) -> DMatrix<f64> {
    let w = g.tr_mul(lam);
    let mut j = model.drift_jacobian(x);
    for (k, dgk) in model.diffusion_jacobians(x).iter().enumerate() {
        j -= dgk * w[k];
        j -= g.column(k) * dgk.tr_mul(lam).transpose();
    }
    j
}

#[derive(Debug, Clone)]
pub struct RiccatiCurve {
    /// `Q_t` on the coarse grid.
    pub q: CurveTable<DMatrix<f64>>,
    /// `Q̇_t` at the same samples (used for Hermite midpoints).
    pub qdot: Vec<DMatrix<f64>>,
    pub terminal: DMatrix<f64>,
}

impl RiccatiCurve {
    /// `Q` halfway between coarse samples `i` and `i + 1`, by cubic Hermite
    /// interpolation.
    pub fn midpoint(&self, i: usize) -> DMatrix<f64> {
        let t = self.q.times();
        let h = t[i + 1] - t[i];
        let v = self.q.values();
        (&v[i] + &v[i + 1]) * 0.5 + (&self.qdot[i] - &self.qdot[i + 1]) * (h / 8.0)
    }
}

#[derive(Debug, Clone)]
pub struct LyapunovCurve {
    pub sigma: CurveTable<DMatrix<f64>>,
}

impl LyapunovCurve {
    pub fn terminal(&self) -> &DMatrix<f64> {
        self.sigma.last()
    }
}

fn coarse_steps(mpp: &MppSolution) -> Result<usize> {
    let fine = mpp.x_curve.len() - 1;
    if fine < 2 || fine % 2 != 0 {
        return Err(Error::invalid("path must be stored on an even number of steps"));
    }
    Ok(fine / 2)
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Backward integration of `Q̇ + H_xx + H_xλ Q + Q H_λx + Q H_λλ Q = 0` from
/// `Q_T = q_terminal` along the path, symmetrizing after every step.
///
/// A norm above `1e8` is reported as a finite escape, the usual symptom of a
/// conjugate point.
pub fn solve_riccati(
    model: &(impl SdeModel + ?Sized),
    mpp: &MppSolution,
    q_terminal: &DMatrix<f64>,
) -> Result<RiccatiCurve> {
    let n = model.dim();
    if q_terminal.shape() != (n, n) {
        return Err(Error::invalid("terminal Q has the wrong shape"));
    }
    let m = coarse_steps(mpp)?;
    let coefs: Vec<_> = mpp
        .x_curve
        .values()
        .iter()
        .zip(mpp.lambda_curve.values())
        .map(|(x, l)| hamiltonian_second_derivs(model, x, l))
        .collect();
    let rhs = |j: usize, q: &DMatrix<f64>| -> DMatrix<f64> {
        let (hxx, hxl, hll) = &coefs[j];
        -(hxx + hxl * q + q * hxl.transpose() + q * hll * q)
    };
    let fine = mpp.x_curve.times();
    let h = mpp.horizon() / m as f64;
    let mut q = sym(q_terminal.clone());
    let mut values = vec![DMatrix::zeros(n, n); m + 1];
    let mut qdot = vec![DMatrix::zeros(n, n); m + 1];
    values[m] = q.clone();
    qdot[m] = rhs(2 * m, &q);
    for i in (1..=m).rev() {
        let j = 2 * i;
        let k1 = rhs(j, &q);
        let k2 = rhs(j - 1, &(&q - &k1 * (0.5 * h)));
        let k3 = rhs(j - 1, &(&q - &k2 * (0.5 * h)));
        let k4 = rhs(j - 2, &(&q - &k3 * h));
        q = sym(&q - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0));
        let norm = q.norm();
        if !norm.is_finite() || norm > 1e8 {
            return Err(Error::RiccatiEscape { time: fine[j - 2], norm });
        }
        qdot[i - 1] = rhs(j - 2, &q);
        values[i - 1] = q.clone();
    }
    let times = (0..=m).map(|i| fine[2 * i]).collect();
    Ok(RiccatiCurve {
        q: CurveTable::new(times, values)?,
        qdot,
        terminal: q_terminal.clone(),
    })
}

/// `A_t` of the linearized fluctuation dynamics: the Jacobian at `X̄_t` of
/// `x ↦ f(x) − g(x)g(x)ᵀ(Λ̄_t + Q_t(x − X̄_t))`.
pub fn fluctuation_matrix(
    model: &(impl SdeModel + ?Sized),
    x: &DVector<f64>,
    lam: &DVector<f64>,
    q: &DMatrix<f64>,
) -> DMatrix<f64> {
    let g = model.diffusion(x);
    closed_loop_jacobian(model, x, lam, &g) - &g * g.transpose() * q
}

/// Forward integration of `Σ̇ = AΣ + ΣAᵀ + ggᵀ`, `Σ_0 = 0`, along the path.
pub fn solve_lyapunov(
    model: &(impl SdeModel + ?Sized),
    mpp: &MppSolution,
    riccati: &RiccatiCurve,
) -> Result<LyapunovCurve> {
    let n = model.dim();
    let m = coarse_steps(mpp)?;
    if riccati.q.len() != m + 1 {
        return Err(Error::invalid("Riccati curve is not on the path's grid"));
    }
    let xs = mpp.x_curve.values();
    let ls = mpp.lambda_curve.values();
    let qs = riccati.q.values();
    let h = mpp.horizon() / m as f64;
    let coef = |j: usize, q: &DMatrix<f64>| {
        let a = fluctuation_matrix(model, &xs[j], &ls[j], q);
        let g = model.diffusion(&xs[j]);
        (a, &g * g.transpose())
    };
    let rhs = |(a, gg): &(DMatrix<f64>, DMatrix<f64>), s: &DMatrix<f64>| a * s + s * a.transpose() + gg;
    let mut s = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(m + 1);
    values.push(s.clone());
    let mut left = coef(0, &qs[0]);
    for i in 0..m {
        let mid = coef(2 * i + 1, &riccati.midpoint(i));
        let right = coef(2 * i + 2, &qs[i + 1]);
        let k1 = rhs(&left, &s);
        let k2 = rhs(&mid, &(&s + &k1 * (0.5 * h)));
        let k3 = rhs(&mid, &(&s + &k2 * (0.5 * h)));
        let k4 = rhs(&right, &(&s + &k3 * h));
        s = sym(&s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0));
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: riccati.q.times()[i + 1] });
        }
        values.push(s.clone());
        left = right;
    }
    Ok(LyapunovCurve {
        sigma: CurveTable::new(riccati.q.times().to_vec(), values)?,
    })
}

/// The three exponent integrals `(∫|Ū|², ∫tr gᵀQg, ∫Λ̄·Σ_k∇g_k g_k)`, by the
/// trapezoid rule on the Riccati grid.
pub fn exponent_terms(
    model: &(impl SdeModel + ?Sized),
    mpp: &MppSolution,
    riccati: &RiccatiCurve,
) -> Result<(f64, f64, f64)> {
    let m = coarse_steps(mpp)?;
    let mut energy = Vec::with_capacity(m + 1);
    let mut trace = Vec::with_capacity(m + 1);
    let mut gradnoise = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let x = &mpp.x_curve.values()[2 * i];
        let l = &mpp.lambda_curve.values()[2 * i];
        let g = model.diffusion(x);
        energy.push(mpp.u_curve.values()[2 * i].norm_squared());
        trace.push((g.transpose() * &riccati.q.values()[i] * &g).trace());
        let mut corr = DVector::zeros(x.len());
        for (k, dgk) in model.diffusion_jacobians(x).iter().enumerate() {
            corr += dgk * g.column(k);
        }
        gradnoise.push(l.dot(&corr));
    }
    let t = riccati.q.times();
    Ok((trapezoid(t, &energy), trapezoid(t, &trace), trapezoid(t, &gradnoise)))
}

#[derive(Debug, Clone, Default)]
pub struct ContinuousOptions {
    pub mpp: MppOptions,
    /// Terminal Hessian `Q_T`; zero when absent.
    pub q_terminal: Option<DMatrix<f64>>,
}

/// Solves the Riccati equation from the requested `Q_T`, or when none is
/// given from `Q_T = 0` and, if that escapes, from `Q_T = k(ggᵀT)⁻¹` for
/// growing `k`. The density does not depend on `Q_T`, but a Riccati solution
/// can blow up before `t = 0` when `Q_T` lies below the value function's
/// curvature (strongly driven bridges); a stiffer terminal condition avoids
/// that. Returns the `k` used, if any.
fn riccati_with_fallback(
    model: &(impl SdeModel + ?Sized),
    mpp: &MppSolution,
    q_terminal: Option<&DMatrix<f64>>,
) -> Result<(RiccatiCurve, Option<f64>)> {
    if let Some(q) = q_terminal {
        return Ok((solve_riccati(model, mpp, q)?, None));
    }
    let n = model.dim();
    let err = match solve_riccati(model, mpp, &DMatrix::zeros(n, n)) {
        Ok(r) => return Ok((r, None)),
        Err(e @ Error::RiccatiEscape { .. }) => e,
        Err(e) => return Err(e),
    };
    let g = model.diffusion(mpp.endpoint());
    let Some(inv) = (&g * g.transpose() * mpp.horizon()).try_inverse() else {
        return Err(err);
    };
    let mut last = err;
    for k in [1.0, 10.0, 100.0, 1000.0] {
        match solve_riccati(model, mpp, &(&inv * k)) {
            Ok(r) => {
                log::debug!("Riccati escaped from Q_T = 0; solved from Q_T = {k}(ggᵀT)⁻¹");
                return Ok((r, Some(k)));
            }
            Err(e @ Error::RiccatiEscape { .. }) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Density from an already computed path, evaluated at the path's endpoint.
pub fn density_from_mpp(
    model: &(impl SdeModel + ?Sized),
    mpp: &MppSolution,
    opts: &ContinuousOptions,
) -> Result<DensityEstimate> {
    for x in mpp.x_curve.values().iter().step_by(2) {
        check_invertible(&model.diffusion(x), "noise intensity along the path").map_err(|e| e.in_stage("mpp"))?;
    }
    let (riccati, retried) = riccati_with_fallback(model, mpp, opts.q_terminal.as_ref()).map_err(|e| e.in_stage("riccati"))?;
    let lyap = solve_lyapunov(model, mpp, &riccati).map_err(|e| e.in_stage("lyapunov"))?;
    let (action_term, riccati_trace_term, gradient_noise_term) = exponent_terms(model, mpp, &riccati)?;
    let two_pi_sigma = lyap.terminal() * (2.0 * std::f64::consts::PI);
    let chol = two_pi_sigma
        .cholesky()
        .ok_or_else(|| Error::singular("terminal covariance Σ_T").in_stage("lyapunov"))?;
    let sigma_logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_value = -0.5 * sigma_logdet - 0.5 * (action_term + riccati_trace_term + gradient_noise_term);
    let terms = ContinuousTerms {
        action_term,
        riccati_trace_term,
        gradient_noise_term,
        sigma_logdet,
        lambda0: mpp.lambda0.iter().copied().collect(),
        shooting_residual: mpp.endpoint_residual,
        hamiltonian_drift: mpp.hamiltonian_drift,
        steps: riccati.q.len() - 1,
    };
    let mut flags: Vec<String> = mpp.flags(model).into_iter().map(String::from).collect();
    if let Some(k) = retried {
        flags.push(format!("riccati-terminal-retry={k}"));
    }
    Ok(DensityEstimate::new(log_value, mpp.endpoint(), Breakdown::Continuous(terms), flags))
}

/// `p̂(0, x0, T, x_T)`: shoot for the most probable path, then solve the
/// Riccati and Lyapunov equations along it.
///
/// The value refers to the endpoint the shooting reached
/// ([`DensityEstimate::endpoint`]), which is within the shooting tolerance
/// of `xt`. Unconverged shooting is an error.
pub fn continuous_laplace_density(
    model: &(impl SdeModel + ?Sized),
    x0: &DVector<f64>,
    xt: &DVector<f64>,
    t: f64,
    opts: &ContinuousOptions,
) -> Result<DensityEstimate> {
    let mpp = solve_mpp(model, x0, xt, t, &opts.mpp).map_err(|e| e.in_stage("mpp"))?;
    if !mpp.converged {
        return Err(Error::Shooting(format!(
            "no initial co-state found; best endpoint residual {:.3e}",
            mpp.endpoint_residual
        ))
        .in_stage("mpp"));
    }
    density_from_mpp(model, &mpp, opts)
}
