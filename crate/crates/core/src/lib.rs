//! Reflecting diffusions on manifolds whose metric evolves in time.
//!
//! The crate is organised bottom-up:
//!
//! * [`metricflow`] describes `(M, g_t, Z_t, ∂M)` in a single chart and serves
//!   Christoffel symbols, the curvature form `R^Z_t = Ric_t − ∇^t Z_t − ½∂_t g_t`,
//!   boundary geometry, curvature bounds and geodesics.
//! * [`sdesim`] integrates the reflecting `L_t`-diffusion together with its
//!   `g_t`-orthonormal frame and local time, on counter-based noise.
//! * [`multfunc`] evolves the matrix multiplicative functional `Q_{r,t}`.
//! * [`malliavin`] builds the damped gradient and the estimators that use it
//!   (integration by parts, Bismut formula, Clark–Ocône, log-Sobolev).
//! * [`transport`] couples diffusions by parallel displacement and checks
//!   transportation-cost inequalities.
//!
//! The diffusion convention is `dX = √2 u ∘ dB + Z dt + N dl`, so the generator is
//! `Δ_t + Z_t` and a flat path has `Cov(X_T) = 2T·I`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod error;
pub mod exec;
pub mod expr;
pub mod field;
pub mod linalg;
pub mod malliavin;
pub mod metricflow;
pub mod multfunc;
pub mod rng;
pub mod sdesim;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
pub use exec::Executor;
pub use metricflow::{CurvatureBounds, MetricFlow};
pub use sdesim::{FramedPath, SimSpec};
pub use stats::Summary;

pub use nalgebra::{DMatrix, DVector};
