//! Numerical laboratory for controlled mean-field (McKean-Vlasov) SDEs.
//!
//! The controlled dynamics are
//!
//! ```text
//! dX_t = b(t, X_t, mu_t, alpha_t) dt + sigma(t, X_t, mu_t) dW_t,   mu_t = Law(X_t),
//! ```
//!
//! where the control `alpha_t` is a probability measure over a compact action
//! set `U` (a relaxed control) produced by a Markovian feedback rule
//! `alpha_t = F_t(X_t)`. The library replaces the law `mu_t` by the empirical
//! measure of an interacting particle ensemble and provides:
//!
//! - [`measures`]: empirical measures with exact Wasserstein / total-variation
//!   distances and a linear-functional-derivative probe,
//! - [`model`]: problem coefficients `b, sigma, f, g` with regularity
//!   spot-checkers and a builtin model zoo,
//! - [`controls`]: relaxed feedback policies and their embedding as measures
//!   on `[0,T] x U`,
//! - [`simulate`]: the Euler-Maruyama particle scheme with reproducible
//!   counter-based noise streams and law-restart support,
//! - [`objective`]: Monte Carlo cost estimation, cross-entropy policy
//!   optimization of the value function, and the dynamic-programming residual,
//! - [`verify`]: pass/fail numerical checks of the quantitative estimates
//!   (stability, moment bounds, tightness modulus, value continuity, flow
//!   property, chaos monotonicity).

pub mod controls;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod measures;
pub mod model;
pub mod objective;
pub mod rng;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
