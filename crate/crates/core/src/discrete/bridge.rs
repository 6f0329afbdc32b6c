use std::f64::consts::PI;

use nalgebra::DVector;

use super::scheme::Scheme;
use crate::density::{Breakdown, DensityEstimate, DiscreteTerms};
use crate::error::{Error, Result};
use crate::mpp::{solve_mpp, MppOptions};
use crate::numerics::BandedSymMatrix;

/// States `x_0 … x_N` of a discretized bridge with their increments.
#[derive(Debug, Clone)]
pub struct DiscretePath {
    pub states: Vec<DVector<f64>>,
    pub increments: Vec<DVector<f64>>,
    pub h: f64,
    pub psi: f64,
    /// Euclidean norm of `∇ψ` over the interior states.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DiscretePath {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn interior(&self) -> &[DVector<f64>] {
        &self.states[1..self.states.len() - 1]
    }
}

/// Starting point of the bridge optimization.
#[derive(Debug, Clone, Default)]
pub enum BridgeInit {
    /// Straight line between the endpoints.
    #[default]
    Linear,
    /// The continuous most probable path sampled on the grid.
    Mpp,
    /// Explicit interior states `x_1 … x_{N−1}`.
    States(Vec<DVector<f64>>),
}

#[derive(Debug, Clone)]
pub struct BridgeOptions {
    pub init: BridgeInit,
    pub max_iter: usize,
    /// Convergence when `|∇ψ| ≤ grad_tol·N`.
    pub grad_tol: f64,
    /// Relative gradient step, scaled by `1 + |x|`.
    pub grad_step: f64,
    /// Relative Hessian step, scaled by `1 + |x|`.
    pub hessian_step: f64,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            init: BridgeInit::Linear,
            max_iter: 100,
            grad_tol: 1e-8,
            grad_step: 1e-6,
            hessian_step: 1e-3,
        }
    }
}

/// `ψ = Σ_i log φ_h(b_i)`, the joint Gaussian log-density of the increments
/// that carry the scheme along `states`.
pub fn psi(scheme: &dyn Scheme, states: &[DVector<f64>], h: f64) -> Result<f64> {
    if states.len() < 2 {
        return Err(Error::invalid("a path needs at least two states"));
    }
    let n = scheme.dim() as f64;
    let big_n = (states.len() - 1) as f64;
    let mut sum = 0.0;
    for w in states.windows(2) {
        sum += scheme.increment(&w[0], &w[1], h)?.norm_squared();
    }
    Ok(-0.5 * big_n * n * (2.0 * PI * h).ln() - 0.5 * sum / h)
}

/// `−|b|²/(2h)` for one step; the only part of ψ that depends on the states.
fn step_energy(scheme: &dyn Scheme, x: &DVector<f64>, y: &DVector<f64>, h: f64) -> f64 {
    match scheme.increment(x, y, h) {
        Ok(b) => -0.5 * b.norm_squared() / h,
        Err(_) => f64::NAN,
    }
}

/// Step with an exactly representable perturbation of `v`.
fn fd_step(rel: f64, v: f64) -> f64 {
    let e = rel * (1.0 + v.abs());
    (v + e) - v
}

/// Part of ψ that depends on interior state `i` (1-based in `states`).
fn local(scheme: &dyn Scheme, states: &[DVector<f64>], i: usize, xi: &DVector<f64>, h: f64) -> f64 {
    step_energy(scheme, &states[i - 1], xi, h) + step_energy(scheme, xi, &states[i + 1], h)
}

/// `∇ψ` over interior states by central differences, one state at a time.
fn gradient(scheme: &dyn Scheme, states: &[DVector<f64>], h: f64, rel: f64) -> DVector<f64> {
    let n = scheme.dim();
    let interior = states.len() - 2;
    let mut g = DVector::zeros(interior * n);
    for i in 1..=interior {
        for a in 0..n {
            let e = fd_step(rel, states[i][a]);
            let mut xp = states[i].clone();
            let mut xm = states[i].clone();
            xp[a] += e;
            xm[a] -= e;
            g[(i - 1) * n + a] = (local(scheme, states, i, &xp, h) - local(scheme, states, i, &xm, h)) / (2.0 * e);
        }
    }
    g
}

/// Second-difference estimate of `∂²F/∂u∂v` at offsets `(du, dv)`, where
/// `f(su, sv)` evaluates `F` with the perturbations scaled by signs.
fn mixed(f: &dyn Fn(f64, f64) -> f64, du: f64, dv: f64, same: bool) -> f64 {
    if same {
        (f(1.0, 0.0) - 2.0 * f(0.0, 0.0) + f(-1.0, 0.0)) / (du * du)
    } else {
        (f(1.0, 1.0) - f(1.0, -1.0) - f(-1.0, 1.0) + f(-1.0, -1.0)) / (4.0 * du * dv)
    }
}

/// Richardson-extrapolated second difference: cancels the `O(e²)` term,
/// so the step can be large enough to keep rounding negligible.
fn second_derivative(f: &dyn Fn(f64, f64, f64) -> f64, du: f64, dv: f64, same: bool) -> f64 {
    let d1 = mixed(&|a, b| f(a, b, 1.0), du, dv, same);
    let d2 = mixed(&|a, b| f(a, b, 2.0), 2.0 * du, 2.0 * dv, same);
    (4.0 * d1 - d2) / 3.0
}

/// Hessian of `−ψ` over the interior states, stored with bandwidth `2n − 1`.
pub fn psi_hessian(scheme: &dyn Scheme, path: &DiscretePath) -> BandedSymMatrix {
    hessian_at(scheme, &path.states, path.h, BridgeOptions::default().hessian_step)
}

fn hessian_at(scheme: &dyn Scheme, states: &[DVector<f64>], h: f64, rel: f64) -> BandedSymMatrix {
    let n = scheme.dim();
    let interior = states.len().saturating_sub(2);
    let mut hess = BandedSymMatrix::zeros(interior * n, (2 * n).saturating_sub(1));
    for i in 1..=interior {
        // block (i, i): both steps touching x_i
        for a in 0..n {
            for c in 0..=a {
                let ea = fd_step(rel, states[i][a]);
                let ec = fd_step(rel, states[i][c]);
                let f = |sa: f64, sc: f64, scale: f64| {
                    let mut x = states[i].clone();
                    x[a] += sa * ea * scale;
                    x[c] += sc * ec * scale;
                    local(scheme, states, i, &x, h)
                };
                let v = second_derivative(&f, ea, ec, a == c);
                hess.set((i - 1) * n + a, (i - 1) * n + c, -v);
            }
        }
        // block (i + 1, i): only the step x_i → x_{i+1} couples them
        if i < interior {
            for a in 0..n {
                for c in 0..n {
                    let ea = fd_step(rel, states[i + 1][a]);
                    let ec = fd_step(rel, states[i][c]);
                    let f = |sa: f64, sc: f64, scale: f64| {
                        let mut y = states[i + 1].clone();
                        let mut x = states[i].clone();
                        y[a] += sa * ea * scale;
                        x[c] += sc * ec * scale;
                        step_energy(scheme, &x, &y, h)
                    };
                    let v = second_derivative(&f, ea, ec, false);
                    hess.set(i * n + a, (i - 1) * n + c, -v);
                }
            }
        }
    }
    hess
}

fn with_interior(x0: &DVector<f64>, xt: &DVector<f64>, z: &DVector<f64>, n: usize) -> Vec<DVector<f64>> {
    let interior = z.len() / n;
    let mut states = Vec::with_capacity(interior + 2);
    states.push(x0.clone());
    for i in 0..interior {
        states.push(z.rows(i * n, n).into_owned());
    }
    states.push(xt.clone());
    states
}

fn flatten(states: &[DVector<f64>]) -> DVector<f64> {
    let inner = &states[1..states.len() - 1];
    let n = states[0].len();
    DVector::from_fn(inner.len() * n, |k, _| inner[k / n][k % n])
}

fn finish(scheme: &dyn Scheme, states: Vec<DVector<f64>>, h: f64, psi_v: f64, grad_norm: f64, iterations: usize, converged: bool) -> Result<DiscretePath> {
    let increments = states
        .windows(2)
        .map(|w| scheme.increment(&w[0], &w[1], h))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscretePath { states, increments, h, psi: psi_v, grad_norm, iterations, converged })
}

/// Maximizes ψ over the interior states of an `N`-step bridge from `x0` to
/// `xT` by damped Newton iteration on the banded Hessian.
///
/// Steps are halved (at most 30 times) until ψ increases; an indefinite
/// Hessian is shifted towards the identity until it factorizes. A path that
/// misses the gradient tolerance within `max_iter` iterations is returned
/// with `converged = false`.
pub fn optimize_bridge(
    scheme: &dyn Scheme,
    x0: &DVector<f64>,
    xt: &DVector<f64>,
    t: f64,
    steps: usize,
    opts: &BridgeOptions,
) -> Result<DiscretePath> {
    let n = scheme.dim();
    if x0.len() != n || xt.len() != n {
        return Err(Error::invalid("endpoints must match the model dimension"));
    }
    if steps == 0 || !(t > 0.0) {
        return Err(Error::invalid("need at least one step and a positive horizon"));
    }
    let h = t / steps as f64;
    let mut states: Vec<DVector<f64>> = match &opts.init {
        BridgeInit::Linear => (0..=steps)
            .map(|i| x0 + (xt - x0) * (i as f64 / steps as f64))
            .collect(),
        BridgeInit::Mpp => {
            let mpp = solve_mpp(scheme.model(), x0, xt, t, &MppOptions::default())?;
            (0..=steps)
                .map(|i| match i {
                    0 => x0.clone(),
                    i if i == steps => xt.clone(),
                    i => mpp.x_curve.eval(i as f64 * h),
                })
                .collect()
        }
        BridgeInit::States(inner) => {
            if inner.len() + 1 != steps || inner.iter().any(|s| s.len() != n) {
                return Err(Error::invalid("initial interior states do not match the grid"));
            }
            std::iter::once(x0.clone()).chain(inner.iter().cloned()).chain(std::iter::once(xt.clone())).collect()
        }
    };
    let mut value = psi(scheme, &states, h)?;
    if steps == 1 {
        return finish(scheme, states, h, value, 0.0, 0, true);
    }
    let tol = opts.grad_tol * steps as f64;
    let mut grad = gradient(scheme, &states, h, opts.grad_step);
    for iter in 0..opts.max_iter {
        let gnorm = grad.norm();
        if gnorm <= tol {
            return finish(scheme, states, h, value, gnorm, iter, true);
        }
        let hess = hessian_at(scheme, &states, h, opts.hessian_step);
        let chol = match hess.cholesky() {
            Ok(c) => c,
            Err(_) => shifted_cholesky(&hess)?,
        };
        let dir = chol.solve(&grad);
        let z = flatten(&states);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let cand = with_interior(x0, xt, &(&z + &dir * scale), n);
            if let Ok(v) = psi(scheme, &cand, h) {
                if v.is_finite() && v >= value - 1e-14 * value.abs() {
                    states = cand;
                    value = v;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            log::debug!("bridge line search stalled at iteration {iter}");
            break;
        }
        grad = gradient(scheme, &states, h, opts.grad_step);
    }
    let gnorm = grad.norm();
    let converged = gnorm <= tol;
    finish(scheme, states, h, value, gnorm, opts.max_iter, converged)
}

fn shifted_cholesky(hess: &BandedSymMatrix) -> Result<crate::numerics::BandedCholesky> {
    let order = hess.order();
    let scale = (0..order).map(|i| hess.get(i, i).abs()).fold(1e-12, f64::max);
    let mut mu = 1e-8 * scale;
    for _ in 0..40 {
        let mut shifted = hess.clone();
        for i in 0..order {
            shifted.set(i, i, hess.get(i, i) + mu);
        }
        if let Ok(c) = shifted.cholesky() {
            return Ok(c);
        }
        mu *= 10.0;
    }
    Err(Error::Indefinite { pivot: 0 })
}

#[derive(Debug, Clone, Default)]
pub struct DiscreteOptions {
    pub bridge: BridgeOptions,
}

/// Discrete-time Laplace approximation
/// `p̂ = |H/2π|^{-1/2} exp(ψ*) Π_i |∂b_i/∂x_i|` with `H = −∇∇ψ` at the
/// optimal bridge.
pub fn discrete_laplace_density(
    scheme: &dyn Scheme,
    x0: &DVector<f64>,
    xt: &DVector<f64>,
    t: f64,
    steps: usize,
    opts: &DiscreteOptions,
) -> Result<DensityEstimate> {
    let path = optimize_bridge(scheme, x0, xt, t, steps, &opts.bridge).map_err(|e| e.in_stage("bridge"))?;
    if !path.converged {
        return Err(Error::invalid(format!(
            "bridge optimization stopped at gradient norm {:.3e}",
            path.grad_norm
        ))
        .in_stage("bridge"));
    }
    let hess = hessian_at(scheme, &path.states, path.h, opts.bridge.hessian_step);
    let logdet = if hess.order() == 0 {
        0.0
    } else {
        hess.cholesky().map_err(|e| e.in_stage("hessian"))?.logdet()
    };
    let hessian_logdet = logdet - hess.order() as f64 * (2.0 * PI).ln();
    let mut log_jacobian = 0.0;
    for w in path.states.windows(2) {
        log_jacobian += scheme.log_jacobian(&w[0], &w[1], path.h).map_err(|e| e.in_stage("jacobian"))?;
    }
    let log_value = path.psi - 0.5 * hessian_logdet + log_jacobian;
    let terms = DiscreteTerms {
        psi: path.psi,
        hessian_logdet,
        log_jacobian,
        grad_norm: path.grad_norm,
        iterations: path.iterations,
        steps,
    };
    Ok(DensityEstimate::new(log_value, xt, Breakdown::Discrete(terms), Vec::new()))
}
