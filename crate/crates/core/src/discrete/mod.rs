//! Discrete-time Laplace approximation: bridge optimization over the
//! intermediate states of a one-step scheme and the Gaussian integral around
//! the optimum.

mod bridge;
mod scheme;

pub use bridge::{
    discrete_laplace_density, optimize_bridge, psi, psi_hessian, BridgeInit, BridgeOptions, DiscreteOptions,
    DiscretePath,
};
pub use scheme::{
    euler_forward, euler_increment, euler_log_jacobian, euler_step_logdensity, strang_forward_cir,
    strang_increment_cir, strang_log_jacobian_cir, strang_step_logdensity, EulerStratonovich, Scheme, StrangCir,
};
