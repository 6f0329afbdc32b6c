//! Most probable paths: the minimum-effort control problem, its Hamiltonian
//! and canonical equations, and the two-point boundary solution by shooting.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::models::SdeModel;
use crate::numerics::{rk4_integrate, secant_shoot, trapezoid, CurveTable, ShootOptions};

/// `H(x, λ) = λᵀf(x) − ½|g(x)ᵀλ|²`.
pub fn hamiltonian(model: &(impl SdeModel + ?Sized), x: &DVector<f64>, lam: &DVector<f64>) -> f64 {
    let w = model.diffusion(x).tr_mul(lam);
    lam.dot(&model.drift(x)) - 0.5 * w.norm_squared()
}

/// Minimizing control `μ(x, λ) = −g(x)ᵀλ`.
pub fn control_law(model: &(impl SdeModel + ?Sized), x: &DVector<f64>, lam: &DVector<f64>) -> DVector<f64> {
    -model.diffusion(x).tr_mul(lam)
}

/// `K(x, u, λ) = λᵀ(f(x) + g(x)u) + ½|u|²`.
pub fn pre_hamiltonian(
    model: &(impl SdeModel + ?Sized),
    x: &DVector<f64>,
    u: &DVector<f64>,
    lam: &DVector<f64>,
) -> f64 {
    lam.dot(&(model.drift(x) + model.diffusion(x) * u)) + 0.5 * u.norm_squared()
}

/// Right-hand side of the canonical equations, `(ẋ, λ̇) = (∂H/∂λ, −∂H/∂x)`.
pub fn canonical_rhs(
    model: &(impl SdeModel + ?Sized),
    x: &DVector<f64>,
    lam: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let g = model.diffusion(x);
    let w = g.tr_mul(lam);
    let xdot = model.drift(x) - &g * &w;
    let mut hx = model.drift_jacobian(x).tr_mul(lam);
    for (k, dgk) in model.diffusion_jacobians(x).iter().enumerate() {
        hx -= dgk.tr_mul(lam) * w[k];
    }
    (xdot, -hx)
}

#[derive(Debug, Clone)]
pub struct MppOptions {
    /// Steps per unit time of the Riccati/Lyapunov grid. The path itself is
    /// stored at twice this resolution, so that the RK4 midpoints of those
    /// passes fall on stored samples.
    pub steps_per_unit: usize,
    /// Lower bound on the number of Riccati/Lyapunov steps for short horizons.
    pub min_steps: usize,
    pub shoot: ShootOptions,
    /// First shooting guess for `Λ₀`; zero when absent.
    pub lambda0_guess: Option<DVector<f64>>,
    /// Size of the second guess, taken towards the target from the first.
    pub perturbation: f64,
}

impl Default for MppOptions {
    fn default() -> Self {
        Self {
            steps_per_unit: 1000,
            min_steps: 200,
            shoot: ShootOptions::default(),
            lambda0_guess: None,
            perturbation: 1.0,
        }
    }
}

impl MppOptions {
    /// Number of steps of the shared Riccati/Lyapunov grid on `[0, T]`.
    pub fn coarse_steps(&self, t: f64) -> usize {
        ((self.steps_per_unit as f64 * t).ceil() as usize).max(self.min_steps).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct MppSolution {
    pub x_curve: CurveTable<DVector<f64>>,
    pub lambda_curve: CurveTable<DVector<f64>>,
    pub u_curve: CurveTable<DVector<f64>>,
    /// `∫½|Ū|² dt`.
    pub action: f64,
    /// Requested terminal state.
    pub target: DVector<f64>,
    pub endpoint_residual: f64,
    /// `max_t |H(X̄_t, Λ̄_t) − H(X̄_0, Λ̄_0)|`.
    pub hamiltonian_drift: f64,
    pub lambda0: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl MppSolution {
    pub fn horizon(&self) -> f64 {
        self.x_curve.end()
    }

    /// Terminal state actually reached; downstream stages use this as `x_T`.
    pub fn endpoint(&self) -> &DVector<f64> {
        self.x_curve.last()
    }

    pub fn initial_hamiltonian(&self, model: &(impl SdeModel + ?Sized)) -> f64 {
        hamiltonian(model, self.x_curve.first(), self.lambda_curve.first())
    }

    pub fn hamiltonian_conserved(&self, model: &(impl SdeModel + ?Sized)) -> bool {
        self.hamiltonian_drift <= 1e-4 * (1.0 + self.initial_hamiltonian(model).abs())
    }

    /// Short tags for anything suspicious about this solution.
    pub fn flags(&self, model: &(impl SdeModel + ?Sized)) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.converged {
            out.push("shooting-not-converged");
        }
        if !self.hamiltonian_conserved(model) {
            out.push("hamiltonian-drift");
        }
        out
    }
}

/// State and co-state curves `(X̄, Λ̄)` on a common grid.
pub type PathCurves = (CurveTable<DVector<f64>>, CurveTable<DVector<f64>>);

/// Integrates the canonical equations forward from `(x0, Λ₀)` on `2M` steps.
pub fn integrate_canonical(
    model: &(impl SdeModel + ?Sized),
    x0: &DVector<f64>,
    lambda0: &DVector<f64>,
    t: f64,
    steps: usize,
) -> Result<PathCurves> {
    let n = model.dim();
    if x0.len() != n || lambda0.len() != n {
        return Err(Error::invalid("initial state and co-state must match the model dimension"));
    }
    if !(t > 0.0) {
        return Err(Error::invalid(format!("horizon must be positive (got {t})")));
    }
    let mut y0 = DVector::zeros(2 * n);
    y0.rows_mut(0, n).copy_from(x0);
    y0.rows_mut(n, n).copy_from(lambda0);
    let curve = rk4_integrate(
        |_, y: &DVector<f64>| {
            let (dx, dl) = canonical_rhs(model, &y.rows(0, n).into_owned(), &y.rows(n, n).into_owned());
            let mut out = DVector::zeros(2 * n);
            out.rows_mut(0, n).copy_from(&dx);
            out.rows_mut(n, n).copy_from(&dl);
            out
        },
        y0,
        0.0,
        t,
        steps,
    )?;
    Ok((
        curve.map(|y| y.rows(0, n).into_owned()),
        curve.map(|y| y.rows(n, n).into_owned()),
    ))
}

fn assemble(
    model: &(impl SdeModel + ?Sized),
    x_curve: CurveTable<DVector<f64>>,
    lambda_curve: CurveTable<DVector<f64>>,
    target: DVector<f64>,
    converged: bool,
    iterations: usize,
) -> MppSolution {
    let u_curve = CurveTable::new(
        x_curve.times().to_vec(),
        x_curve
            .values()
            .iter()
            .zip(lambda_curve.values())
            .map(|(x, l)| control_law(model, x, l))
            .collect(),
    )
    .expect("grid already validated");
    let energy: Vec<f64> = u_curve.values().iter().map(|u| 0.5 * u.norm_squared()).collect();
    let action = trapezoid(u_curve.times(), &energy);
    let h0 = hamiltonian(model, x_curve.first(), lambda_curve.first());
    let hamiltonian_drift = x_curve
        .values()
        .iter()
        .zip(lambda_curve.values())
        .map(|(x, l)| (hamiltonian(model, x, l) - h0).abs())
        .fold(0.0, f64::max);
    MppSolution {
        endpoint_residual: (x_curve.last() - &target).norm(),
        lambda0: lambda_curve.first().clone(),
        x_curve,
        lambda_curve,
        u_curve,
        action,
        target,
        hamiltonian_drift,
        converged,
        iterations,
    }
}

/// The path obtained from a given initial co-state, without shooting. Its
/// target is whatever endpoint it reaches.
pub fn integrate_mpp(
    model: &(impl SdeModel + ?Sized),
    x0: &DVector<f64>,
    lambda0: &DVector<f64>,
    t: f64,
    opts: &MppOptions,
) -> Result<MppSolution> {
    let (xc, lc) = integrate_canonical(model, x0, lambda0, t, 2 * opts.coarse_steps(t))?;
    let target = xc.last().clone();
    Ok(assemble(model, xc, lc, target, true, 0))
}

/// Solves the two-point problem `X̄_0 = x0`, `X̄_T = xT` by shooting on `Λ₀`.
///
/// The default guesses are `Λ₀ = 0` (exact when `xT` is the noise-free
/// endpoint) and a unit step against the direction from the noise-free
/// endpoint to `xT`. The first root found is returned; uniqueness is assumed.
/// Non-convergence is reported through [`MppSolution::converged`], with the
/// best iterate.
pub fn solve_mpp(
    model: &(impl SdeModel + ?Sized),
    x0: &DVector<f64>,
    xt: &DVector<f64>,
    t: f64,
    opts: &MppOptions,
) -> Result<MppSolution> {
    let n = model.dim();
    if xt.len() != n {
        return Err(Error::invalid("target must match the model dimension"));
    }
    let steps = 2 * opts.coarse_steps(t);
    let p0 = opts.lambda0_guess.clone().unwrap_or_else(|| DVector::zeros(n));
    if p0.len() != n {
        return Err(Error::invalid("initial co-state guess has the wrong dimension"));
    }
    let (free, _) = integrate_canonical(model, x0, &DVector::zeros(n), t, steps)?;
    let direction = (xt - free.last()).map(|d| if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 });
    let p1 = &p0 - direction * opts.perturbation;

    let outcome = secant_shoot(
        |lam: &DVector<f64>| {
            let (xc, _) = integrate_canonical(model, x0, lam, t, steps)?;
            Ok(xc.last() - xt)
        },
        &p0,
        &p1,
        opts.shoot,
    )?;
    if outcome.diverged {
        log::warn!("shooting diverged; best residual {:.3e}", outcome.residual_norm);
    }
    let (xc, lc) = integrate_canonical(model, x0, &outcome.param, t, steps)?;
    Ok(assemble(model, xc, lc, xt.clone(), outcome.converged, outcome.iterations))
}
