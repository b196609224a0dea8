//! Analytic ground truth: the linear interpolant, Gaussian-mixture teachers
//! (exact score, velocity and flow map), and a reference PF-ODE integrator.

pub mod euler;
pub mod flow;
pub mod mixture;

pub use euler::{euler_pf_ode, euler_pf_ode_batch};
pub use flow::{
    conditional_velocity, gamma_weight, interpolate, interpolate_rows, score_from_velocity,
    velocity_from_score, LinearGaussianFlow, TimePair,
};
pub use mixture::{marginal_velocity_batch, GaussianMixtureSpec, MIN_TIME};
