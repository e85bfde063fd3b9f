//! One step of the framed reflecting scheme.
//!
//! The frame SDE is Stratonovich, `du = −Γ(∘dX, u) − ½ u (uᵀ G u) dt`. In
//! coordinates the position is stepped in Itô form,
//!
//! ```text
//! Δx = √2 u (ΔB + b Δ) + (Z − g^{ij} Γ^k_{ij}) Δ,
//! ```
//!
//! where `−g^{ij}Γ^k_{ij}` is the Itô correction of `√2 u ∘ dB` (since
//! `u uᵀ = g⁻¹`) and `b` is an optional extra drift in frame coordinates. The
//! frame is parallel-transported along the straight increment by RK4 (with
//! substeps where the Christoffel symbols are large), which integrates the
//! Stratonovich transport without an `O(1)` bias in `uᵀ g u`; the vertical correction uses `G` at the midpoint time.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metricflow::{inward_normal, project_to_boundary, MetricFlow};

pub(crate) struct StepOut {
    pub x: DVector<f64>,
    pub u: DMatrix<f64>,
    pub dl: f64,
    pub hit: bool,
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Itô drift `Z − g^{ij}Γ^k_{ij}` of the coordinate process.
pub(crate) fn ito_drift(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> DVector<f64> {
    let z = flow.drift(t, x);
    if flow.christoffel_vanishes() {
        return z;
    }
    z - flow.christoffel(t, x).trace(&flow.metric_inverse(t, x))
}

/// Reflects `x` (at time `t`) into `{b ≥ 0}` if needed.
/// Returns the corrected point, the push length and the push vector.
pub(crate) fn reflect(flow: &dyn MetricFlow, t: f64, x: DVector<f64>) -> Result<(DVector<f64>, f64, Option<DVector<f64>>)> {
    let Some(b) = flow.boundary() else {
        return Ok((x, 0.0, None));
    };
    if b.value(t, &x) >= 0.0 {
        return Ok((x, 0.0, None));
    }
    let (y, s) = project_to_boundary(flow, t, &x)?;
    let push = &y - &x;
    Ok((y, s.max(0.0), Some(push)))
}

/// `√2 σ noise + drift Δ`, shared by the framed and the position-only step so
/// that equal inputs give bit-identical increments.
pub(crate) fn increment(sigma: &DMatrix<f64>, noise: &DVector<f64>, drift: &DVector<f64>, dt: f64) -> DVector<f64> {
    sigma * noise * SQRT2 + drift * dt
}

/// Advances `(x, u)` from `t` to `t + dt` with Brownian increment `db` and
/// optional frame-coordinate drift `extra`.
///
/// With a diffusion coefficient `psi = ψ(t, x)` the noise is `√2 ψ u` and the
/// Itô drift `ψ²(Z − g^{ij}Γ_{ij})`, i.e. the generator is `ψ²(Δ_t + Z_t)`.
pub(crate) fn framed_step(
    flow: &dyn MetricFlow,
    t: f64,
    dt: f64,
    x: &DVector<f64>,
    u: &DMatrix<f64>,
    db: &DVector<f64>,
    extra: Option<&DVector<f64>>,
    psi: f64,
) -> Result<StepOut> {
    let flat = flow.christoffel_vanishes();
    let noise = match extra {
        Some(b) => db + b * dt,
        None => db.clone(),
    };
    let (sigma, drift) = scaled_coefficients(flow, t, x, u, psi);
    let dx = increment(&sigma, &noise, &drift, dt);
    let x_pred = x + &dx;

    if !flow.in_chart(&x_pred) {
        return Err(Error::Truncation { index: 0 });
    }
    let mut u_new = if flat { u.clone() } else { transport_along(flow, t, x, &dx, u) };

    let gdot = flow.metric_dt(t + 0.5 * dt, &x_pred);
    if gdot.amax() != 0.0 {
        let m = u_new.transpose() * &gdot * &u_new;
        u_new = &u_new - &u_new * m * (0.5 * dt);
    }

    let (x_new, dl, push) = reflect(flow, t + dt, x_pred)?;
    let hit = push.is_some();
    if let (Some(p), false) = (&push, flat) {
        let mid = &x_new - p * 0.5;
        let mid = if flow.in_chart(&mid) { mid } else { x_new.clone() };
        u_new = &u_new - flow.christoffel(t + dt, &mid).contract_frame(p, &u_new);
    }
    if !flow.in_chart(&x_new) || x_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::Truncation { index: 0 });
    }
    Ok(StepOut { x: x_new, u: u_new, dl, hit })
}

/// `(ψ u, ψ² · Itô drift)`; exact copies when `ψ = 1`.
pub(crate) fn scaled_coefficients(
    flow: &dyn MetricFlow,
    t: f64,
    x: &DVector<f64>,
    u: &DMatrix<f64>,
    psi: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let drift = ito_drift(flow, t, x);
    if psi == 1.0 {
        (u.clone(), drift)
    } else {
        (u * psi, drift * (psi * psi))
    }
}

/// Parallel transport of `u` along the segment `x + τ dx`, `τ ∈ [0, 1]`, by
/// RK4 with more substeps where `|Γ| |dx|` is large.
fn transport_along(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>, dx: &DVector<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let g0 = flow.christoffel(t, x);
    let k0 = g0.contract_frame(dx, u);
    let strength = k0.amax() / u.amax().max(f64::MIN_POSITIVE);
    let m = ((8.0 * strength).ceil() as usize).clamp(1, 32);
    let h = 1.0 / m as f64;
    let mut e = u.clone();
    let rhs = |tau: f64, e: &DMatrix<f64>| -> DMatrix<f64> {
        let p = x + dx * tau;
        -flow.christoffel(t, &p).contract_frame(dx, e)
    };
    for j in 0..m {
        let tau = j as f64 * h;
        let k1 = if j == 0 { -&k0 } else { rhs(tau, &e) };
        let k2 = rhs(tau + 0.5 * h, &(&e + &k1 * (0.5 * h)));
        let k3 = rhs(tau + 0.5 * h, &(&e + &k2 * (0.5 * h)));
        let k4 = rhs(tau + h, &(&e + &k3 * h));
        e += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    e
}

/// Position-only reflecting step driven by the noise matrix `sigma` (so the
/// increment is `√2 σ ΔB + drift Δ`).
pub(crate) fn point_step(
    flow: &dyn MetricFlow,
    t: f64,
    dt: f64,
    x: &DVector<f64>,
    sigma: &DMatrix<f64>,
    db: &DVector<f64>,
    drift: &DVector<f64>,
) -> Result<(DVector<f64>, f64, bool)> {
    let x_pred = x + increment(sigma, db, drift, dt);
    if !flow.in_chart(&x_pred) || x_pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::Truncation { index: 0 });
    }
    let (x_new, dl, push) = reflect(flow, t + dt, x_pred)?;
    Ok((x_new, dl, push.is_some()))
}

/// Brownian-bridge probability that a step between two interior points touched
/// `∂M`: `exp(−d₀ d₁ / Δ)` with `d = b/|∇b|_g` (diffusion coefficient 2).
pub(crate) fn bridge_crossing_probability(
    flow: &dyn MetricFlow,
    t: f64,
    dt: f64,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
) -> f64 {
    use crate::metricflow::boundary_distance;
    match (boundary_distance(flow, t, x0), boundary_distance(flow, t + dt, x1)) {
        (Some(a), Some(b)) if a >= 0.0 && b >= 0.0 => (-a * b / dt).exp(),
        (Some(_), Some(_)) => 1.0,
        _ => 0.0,
    }
}

/// `P_u = (uᵀ g N)(uᵀ g N)ᵀ`: the frame-coordinate projector onto the normal.
pub(crate) fn normal_projector(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = inward_normal(flow, t, x)?;
    let a = u.transpose() * flow.metric(t, x) * n;
    let len2 = a.norm_squared();
    Ok(&a * a.transpose() / len2)
}
