//! Dirichlet form and log-Sobolev inequality on fixed-start and free path spaces.

use nalgebra::DVector;
use serde::Serialize;

use super::{damped_gradient_with, path_factors, CylFunc, McSetup};
use crate::error::Result;
use crate::metricflow::MetricFlow;
use crate::rng::{gaussian_point, PathKey};
use crate::sdesim::{initial_frame, simulate_path};
use crate::stats::{mc_reduce, mean, Summary};

/// Floor applied to `F²` before taking logarithms.
pub const ENTROPY_FLOOR: f64 = 1e-12;

/// Initial law of the paths.
#[derive(Debug, Clone)]
pub enum Start {
    Fixed(DVector<f64>),
    /// `μ = N(mean, var·I)` with log-Sobolev constant `lsi_constant`
    /// (`μ(f² log f²) ≤ C μ|∇f|²` for `μ(f²) = 1`; `C = 2·var` for a Gaussian).
    Gaussian { mean: DVector<f64>, var: f64, lsi_constant: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct LsiReport {
    /// `Ent(F²) / E F²`.
    pub entropy: Summary,
    /// `E(F, F) / E F²`, with `E(F, F) = E[2‖D⁰F‖²_{H₀}]` for a fixed start and
    /// `E[2‖D⁰F‖²_{H₀} + |Σ Q_{t_i} c_i|²]` on the free path space.
    pub form: Summary,
    /// `2` or `2 ∨ C`.
    pub constant: f64,
    /// `Ent − constant·E` with its standard error.
    pub margin: Summary,
    pub ratio: f64,
    /// Paths whose `F²` was raised to the floor, and the entropy change this caused.
    pub floored: usize,
    pub floor_contribution: f64,
    /// `F` has zero variance on the ensemble: the verdict holds trivially.
    pub degenerate: bool,
    pub pass: bool,
}

/// Estimates both sides of `Ent(F²) ≤ c·E(F, F)`.
///
/// With `dX = √2 u ∘ dB`, the Brownian integrand of `F` is `√2 E[D′ | F_s]`,
/// so the form carries a factor 2 relative to `‖D⁰F‖²`. The flat case
/// `F = exp(⟨v, X_T⟩/2)` then gives equality with `c = 2`.
pub fn dirichlet_and_lsi(flow: &dyn MetricFlow, start: &Start, f: &CylFunc, setup: &McSetup) -> Result<LsiReport> {
    setup.check()?;
    let spec = &setup.spec;
    let (fixed_frame, constant) = match start {
        Start::Fixed(x0) => (Some(initial_frame(flow, 0.0, x0)?), 2.0),
        Start::Gaussian { lsi_constant, .. } => (None, lsi_constant.max(2.0)),
    };
    let rows = setup.per_path(|i| {
        let (x0, u0) = match (start, &fixed_frame) {
            (Start::Fixed(x0), Some(u0)) => (x0.clone(), u0.clone()),
            (Start::Gaussian { mean, var, .. }, _) => {
                let x = gaussian_point(PathKey::new(spec.seed, i), mean, *var);
                let u = initial_frame(flow, 0.0, &x)?;
                (x, u)
            }
            _ => unreachable!(),
        };
        let path = simulate_path(flow, &x0, &u0, spec, i)?;
        let factors = path_factors(flow, &path, setup.q)?;
        let g = damped_gradient_with(f, &path, &factors, setup.q_source)?;
        let form = match start {
            Start::Fixed(_) => 2.0 * g.h0_norm2,
            Start::Gaussian { .. } => 2.0 * g.h0_norm2 + g.initial.norm_squared(),
        };
        Ok((f.eval_path(&path)?, form))
    })?;
    let f2: Vec<f64> = rows.iter().map(|r| r.0 * r.0).collect();
    let floored = f2.iter().filter(|v| **v < ENTROPY_FLOOR).count();
    let f2f: Vec<f64> = f2.iter().map(|v| v.max(ENTROPY_FLOOR)).collect();
    let m2 = mean(&f2f);
    let fmean = mean(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let degenerate = rows.iter().all(|r| (r.0 - fmean).abs() <= 1e-14 * (1.0 + fmean.abs()));

    // Linearized influence of Ent(F²)/E F² = E[F² log F²]/m − log m.
    let a_over_m = mean(&f2f.iter().map(|v| v * v.ln()).collect::<Vec<_>>()) / m2;
    let ent_raw = a_over_m - m2.ln();
    let psi: Vec<f64> = f2f.iter().map(|v| (v * v.ln() - (a_over_m + 1.0) * v) / m2).collect();
    let psi_mean = mean(&psi);
    let ent_values: Vec<f64> = psi.iter().map(|p| p - psi_mean + ent_raw).collect();
    let entropy = mc_reduce(&ent_values)?;

    let form_mean = mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let form_ratio = form_mean / m2;
    let form_values: Vec<f64> = rows.iter().zip(&f2f).map(|(r, v)| (r.1 - form_ratio * v) / m2 + form_ratio).collect();
    let form = mc_reduce(&form_values)?;

    let margin_values: Vec<f64> = ent_values.iter().zip(&form_values).map(|(e, q)| e - constant * q).collect();
    let margin = mc_reduce(&margin_values)?;

    let floor_contribution = if floored == 0 {
        0.0
    } else {
        let plain: Vec<f64> = f2.iter().map(|v| if *v > 0.0 { v * v.ln() } else { 0.0 }).collect();
        let pm = mean(&f2);
        let ent_plain = mean(&plain) / pm - pm.ln();
        ent_raw - ent_plain
    };
    let ratio = if form.mean > 0.0 { entropy.mean / form.mean } else { f64::NAN };
    let pass = degenerate || margin.mean <= 3.0 * margin.se;
    Ok(LsiReport { entropy, form, constant, margin, ratio, floored, floor_contribution, degenerate, pass })
}
