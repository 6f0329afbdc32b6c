//! Classical fixed-step Runge-Kutta integration.

use nalgebra::DVector;

use super::curve::{uniform_grid, CurveTable};
use crate::error::{Error, Result};

/// One classical RK4 step of size `h` (negative `h` steps backward).
pub fn rk4_step<F>(rhs: &mut F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = rhs(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrates `dy/dt = rhs(t, y)` from `(t0, y0)` to `t1` with `steps` RK4 steps.
///
/// Every step is stored. When `t1 < t0` the integration runs backward (a
/// terminal-value problem) and the returned curve is still ordered by
/// increasing time, so its last sample is the initial condition `y0`.
pub fn rk4_integrate<F>(
    mut rhs: F,
    y0: DVector<f64>,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<CurveTable<DVector<f64>>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    if steps == 0 {
        return Err(Error::invalid("rk4_integrate needs at least one step"));
    }
    if t0 == t1 || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::invalid("rk4_integrate needs a non-empty finite interval"));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { time: t0 });
    }
    let grid = uniform_grid(t0, t1, steps);
    let mut values = Vec::with_capacity(steps + 1);
    let mut y = y0;
    values.push(y.clone());
    for w in grid.windows(2) {
        let next = rk4_step(&mut rhs, w[0], &y, w[1] - w[0]);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: w[0] });
        }
        y = next;
        values.push(y.clone());
    }
    let mut times = grid;
    if t1 < t0 {
        times.reverse();
        values.reverse();
    }
    CurveTable::new(times, values)
}
