//! Geometry of the boundary `{b = 0}` of `M = {b ≥ 0}`.

use nalgebra::{DMatrix, DVector};

use super::{conorm_g, MetricFlow};
use crate::error::{Error, Result};
use crate::field::fd_step;
use crate::linalg::sym;

fn normal_unchecked<F: MetricFlow + ?Sized>(flow: &F, t: f64, x: &DVector<f64>) -> Option<DVector<f64>> {
    let b = flow.boundary()?;
    let db = b.gradient(t, x);
    let ginv = flow.metric_inverse(t, x);
    let n = conorm_g(&ginv, &db);
    if !(n > 0.0) {
        return None;
    }
    Some(ginv * db / n)
}

/// Inward `g_t`-unit normal `N = g⁻¹∇b / |∇b|`, defined wherever `∇b ≠ 0`.
pub fn inward_normal(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if flow.boundary().is_none() {
        return Err(Error::arg(format!("flow `{}` has no boundary", flow.name())));
    }
    normal_unchecked(flow, t, x).ok_or_else(|| Error::numeric("boundary defining function has zero gradient"))
}

/// `b / |∇b|_{g_t}`: the first-order signed `g_t`-distance to `∂M`.
pub fn boundary_distance(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> Option<f64> {
    let b = flow.boundary()?;
    let n = conorm_g(&flow.metric_inverse(t, x), &b.gradient(t, x));
    Some(b.value(t, x) / n)
}

/// Moves `x` along `N_t(x)` onto `{b = 0}` by Newton's method on `s ↦ b(x + sN)`.
///
/// Returns the projected point and `s`, the `g_t`-length of the push (since
/// `N` is `g_t`-unit at `x`).
pub fn project_to_boundary(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let b = flow.boundary().ok_or_else(|| Error::arg("flow has no boundary"))?;
    let n = inward_normal(flow, t, x)?;
    let mut s = 0.0;
    for _ in 0..50 {
        let y = x + &n * s;
        let v = b.value(t, &y);
        if v.abs() < 1e-14 * (1.0 + y.norm()) {
            return Ok((y, s));
        }
        let slope = b.gradient(t, &y).dot(&n);
        if !(slope.abs() > 0.0) {
            break;
        }
        s -= v / slope;
    }
    let y = x + &n * s;
    let v = b.value(t, &y);
    if v.abs() < 1e-10 {
        Ok((y, s))
    } else {
        Err(Error::numeric(format!("boundary projection did not converge (b = {v:.3e})")))
    }
}

/// `II_t` by finite differences of the extended normal field:
/// `S_ij = −g_{kj}(∂_i N^k + Γ^k_{il} N^l)`, restricted to `T∂M` with the
/// `g_t`-orthogonal projector `Π = I − N (gN)ᵀ` and symmetrized.
pub fn second_fundamental_fd<F: MetricFlow + ?Sized>(flow: &F, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
    let d = flow.dim();
    let Some(n) = normal_unchecked(flow, t, x) else {
        return DMatrix::zeros(d, d);
    };
    let g = flow.metric(t, x);
    let gamma = flow.christoffel(t, x);
    let h = fd_step(x);
    // dn[(k, i)] = ∂_i N^k + Γ^k_{il} N^l
    let mut dn = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut y = x.clone();
        y[i] += h;
        let np = normal_unchecked(flow, t, &y).unwrap_or_else(|| n.clone());
        y[i] -= 2.0 * h;
        let nm = normal_unchecked(flow, t, &y).unwrap_or_else(|| n.clone());
        for k in 0..d {
            let mut c = 0.0;
            for l in 0..d {
                c += gamma.get(k, i, l) * n[l];
            }
            dn[(k, i)] = (np[k] - nm[k]) / (2.0 * h) + c;
        }
    }
    // S_ij = −(dnᵀ g)_ij
    let s = -(dn.transpose() * &g);
    let pi = DMatrix::identity(d, d) - &n * (&g * &n).transpose();
    sym(&(pi.transpose() * s * pi))
}
