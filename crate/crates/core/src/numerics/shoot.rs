//! Root finding for shooting problems: secant iteration for scalar
//! parameters, Newton with a forward-difference Jacobian otherwise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct ShootOptions {
    /// Accept when the residual norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShootOutcome {
    /// Best parameter found (the root when `converged`).
    pub param: DVector<f64>,
    pub residual: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual grew for five consecutive iterations.
    pub diverged: bool,
}

const DIVERGENCE_RUN: usize = 5;
const MAX_BACKTRACK: usize = 30;

struct Tracker {
    best: (DVector<f64>, DVector<f64>, f64),
    last_norm: f64,
    growth_run: usize,
}

impl Tracker {
    fn new(p: &DVector<f64>, r: &DVector<f64>) -> Self {
        let n = r.norm();
        Self {
            best: (p.clone(), r.clone(), n),
            last_norm: n,
            growth_run: 0,
        }
    }

    /// Records an iterate; returns true when divergence is detected.
    fn record(&mut self, p: &DVector<f64>, r: &DVector<f64>) -> bool {
        let n = r.norm();
        if n < self.best.2 {
            self.best = (p.clone(), r.clone(), n);
        }
        if n > self.last_norm {
            self.growth_run += 1;
        } else {
            self.growth_run = 0;
        }
        self.last_norm = n;
        self.growth_run >= DIVERGENCE_RUN
    }

    fn finish(self, iterations: usize, converged: bool, diverged: bool) -> ShootOutcome {
        let (param, residual, residual_norm) = self.best;
        ShootOutcome {
            param,
            residual,
            residual_norm,
            iterations,
            converged,
            diverged,
        }
    }
}

/// Evaluates `map` at `target`, pulling the point back toward `anchor` by
/// halving whenever the map fails (e.g. the trajectory left the domain).
fn eval_with_backtrack<F>(
    map: &mut F,
    anchor: &DVector<f64>,
    mut target: DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut last_err = None;
    for _ in 0..MAX_BACKTRACK {
        match map(&target) {
            Ok(r) if r.iter().all(|v| v.is_finite()) => return Ok((target, r)),
            Ok(_) => last_err = Some(Error::NonFinite { time: f64::NAN }),
            Err(e) => last_err = Some(e),
        }
        target = anchor + (&target - anchor) * 0.5;
    }
    Err(Error::Shooting(format!(
        "map could not be evaluated near {:?}: {}",
        target.as_slice(),
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Finds a root of `map` starting from the two guesses `p0`, `p1`.
///
/// Scalar parameters use the secant method through `(p0, p1)`. Vector
/// parameters use Newton's method from `p0` with a forward-difference
/// Jacobian of step `1e-6·(1+|p_j|)`; `p1` is then only used as a fallback
/// if `p0` cannot be evaluated. Non-convergence is not an error: the best
/// iterate comes back flagged.
pub fn secant_shoot<F>(
    mut map: F,
    p0: &DVector<f64>,
    p1: &DVector<f64>,
    opts: ShootOptions,
) -> Result<ShootOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if p0.len() != p1.len() || p0.is_empty() {
        return Err(Error::invalid("shooting guesses must have equal non-zero length"));
    }
    if p0.len() == 1 {
        secant(&mut map, p0, p1, opts)
    } else {
        newton(&mut map, p0, p1, opts)
    }
}

fn secant<F>(
    map: &mut F,
    p0: &DVector<f64>,
    p1: &DVector<f64>,
    opts: ShootOptions,
) -> Result<ShootOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let (mut pa, mut ra) = eval_with_backtrack(map, p1, p0.clone())?;
    let mut tracker = Tracker::new(&pa, &ra);
    if ra.norm() <= opts.tol {
        return Ok(tracker.finish(0, true, false));
    }
    let (mut pb, mut rb) = eval_with_backtrack(map, &pa, p1.clone())?;
    tracker.record(&pb, &rb);
    for iter in 1..=opts.max_iter {
        if rb.norm() <= opts.tol {
            return Ok(tracker.finish(iter - 1, true, false));
        }
        let denom = rb[0] - ra[0];
        if denom == 0.0 || !denom.is_finite() {
            return Ok(tracker.finish(iter - 1, false, false));
        }
        let next = pb[0] - rb[0] * (pb[0] - pa[0]) / denom;
        let (pc, rc) = eval_with_backtrack(map, &pb, DVector::from_element(1, next))?;
        let diverged = tracker.record(&pc, &rc);
        pa = std::mem::replace(&mut pb, pc);
        ra = std::mem::replace(&mut rb, rc);
        if rb.norm() <= opts.tol {
            return Ok(tracker.finish(iter, true, false));
        }
        if diverged {
            return Ok(tracker.finish(iter, false, true));
        }
    }
    Ok(tracker.finish(opts.max_iter, false, false))
}

fn newton<F>(
    map: &mut F,
    p0: &DVector<f64>,
    p1: &DVector<f64>,
    opts: ShootOptions,
) -> Result<ShootOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = p0.len();
    let (mut p, mut r) = eval_with_backtrack(map, p1, p0.clone())?;
    if r.len() != n {
        return Err(Error::invalid("shooting map must be square"));
    }
    let mut tracker = Tracker::new(&p, &r);
    for iter in 0..opts.max_iter {
        if r.norm() <= opts.tol {
            return Ok(tracker.finish(iter, true, false));
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let step = 1e-6 * (1.0 + p[j].abs());
            let mut q = p.clone();
            q[j] += step;
            let rq = map(&q)?;
            jac.set_column(j, &((rq - &r) / step));
        }
        let delta = jac
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| Error::singular("shooting Jacobian"))?;
        let (pn, rn) = eval_with_backtrack(map, &p, &p + delta)?;
        let diverged = tracker.record(&pn, &rn);
        p = pn;
        r = rn;
        if diverged {
            return Ok(tracker.finish(iter + 1, false, true));
        }
    }
    let converged = r.norm() <= opts.tol;
    Ok(tracker.finish(opts.max_iter, converged, false))
}
