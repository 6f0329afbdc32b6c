//! Shared numerical kernels: RK4 integration, shooting, quadrature and
//! banded symmetric factorization.

mod banded;
mod curve;
mod ode;
mod quad;
mod shoot;

pub use banded::{banded_logdet, BandedCholesky, BandedSymMatrix};
pub use curve::{uniform_grid, CurveTable, Interpolate};
pub use ode::{rk4_integrate, rk4_step};
pub use quad::{quad_trapezoid, trapezoid};
pub use shoot::{secant_shoot, ShootOptions, ShootOutcome};
