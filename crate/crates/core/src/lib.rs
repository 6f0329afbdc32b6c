//! Laplace approximations of transition densities of Stratonovich SDEs
//! `dX = f(X) dt + g(X) ∘ dB`.
//!
//! Two routes to `p(0, x0, T, xT)`:
//!
//! - [`discrete`]: discretize with a one-step scheme, maximize the path
//!   log-density over the intermediate states and apply the Laplace
//!   approximation with the banded Hessian.
//! - [`continuous`]: the `h → 0` limit. Shoot for the most probable path
//!   ([`mpp`]), integrate a Riccati equation backward along it and a
//!   Lyapunov equation forward.
//!
//! ```
//! use nalgebra::DVector;
//! use transdens::{continuous_laplace_density, ContinuousOptions, Gbm};
//!
//! let x = |v| DVector::from_element(1, v);
//! let est = continuous_laplace_density(&Gbm::new(0.5, 0.3), &x(1.0), &x(1.4), 1.0, &ContinuousOptions::default())?;
//! let exact = transdens::models::gbm_exact_density(0.5, 0.3, 1.0, 1.0, 1.4)?;
//! assert!((est.value / exact - 1.0).abs() < 1e-4);
//! # Ok::<(), transdens::Error>(())
//! ```

// NaN-rejecting guards are written `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::manual_is_multiple_of)]

pub mod continuous;
pub mod density;
pub mod discrete;
pub mod error;
pub mod experiments;
pub mod models;
pub mod monte_carlo;
pub mod mpp;
pub mod numerics;
pub mod special;
pub mod weak_noise;

pub use continuous::{continuous_laplace_density, density_from_mpp, ContinuousOptions};
pub use density::{Breakdown, ContinuousTerms, DensityEstimate, DiscreteTerms};
pub use discrete::{discrete_laplace_density, DiscreteOptions, EulerStratonovich, Scheme, StrangCir};
pub use error::{Error, Result};
pub use models::{Cir, DoubleWell, FnModel, Gbm, Linear, SdeModel};
pub use mpp::{solve_mpp, MppOptions, MppSolution};
