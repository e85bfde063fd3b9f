//! Lower bounds `K(t)` for `R^Z_t` and `σ(t)` for `II_t`.

use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use super::{check_domain, project_to_boundary, ricci_zg_unchecked, inward_normal, MetricFlow};
use crate::error::{Error, Result};
use crate::linalg::{min_generalized_eigen, tangent_basis};

/// A scalar function of time.
#[derive(Clone)]
pub enum BoundFn {
    Const(f64),
    Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Values on increasing times; between nodes the smaller neighbour is used,
    /// so the table stays a lower bound for a bound that is monotone between nodes.
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl std::fmt::Debug for BoundFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundFn::Const(c) => write!(f, "Const({c})"),
            BoundFn::Func(_) => f.write_str("Func(..)"),
            BoundFn::Table { times, .. } => write!(f, "Table({} nodes)", times.len()),
        }
    }
}

impl BoundFn {
    pub fn func(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        BoundFn::Func(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            BoundFn::Const(c) => *c,
            BoundFn::Func(f) => f(t),
            BoundFn::Table { times, values } => {
                let i = times.partition_point(|s| *s <= t);
                if i == 0 {
                    values[0]
                } else if i >= times.len() {
                    values[times.len() - 1]
                } else if times[i - 1] == t {
                    values[i - 1]
                } else {
                    values[i - 1].min(values[i])
                }
            }
        }
    }

    /// `∫_s^t` by the composite trapezoid rule on `nodes` intervals (exact for constants).
    pub fn integral(&self, s: f64, t: f64, nodes: usize) -> f64 {
        if let BoundFn::Const(c) = self {
            return c * (t - s);
        }
        let n = nodes.max(1);
        let h = (t - s) / n as f64;
        let mut acc = 0.5 * (self.at(s) + self.at(t));
        for i in 1..n {
            acc += self.at(s + i as f64 * h);
        }
        acc * h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Scanned,
}

/// `R^Z_t(X, X) ≥ K(t)|X|²_t` and `II_t(X, X) ≥ σ(t)|X|²_t` for `g_t`-unit `X`.
#[derive(Debug, Clone)]
pub struct CurvatureBounds {
    pub k: BoundFn,
    pub sigma: BoundFn,
    pub provenance: Provenance,
}

impl CurvatureBounds {
    pub fn constant(k: f64, sigma: f64) -> Self {
        Self { k: BoundFn::Const(k), sigma: BoundFn::Const(sigma), provenance: Provenance::Analytic }
    }

    pub fn k_at(&self, t: f64) -> f64 {
        self.k.at(t)
    }

    pub fn sigma_at(&self, t: f64) -> f64 {
        self.sigma.at(t)
    }

    /// `e^{−∫_s^t K}`.
    pub fn contraction(&self, s: f64, t: f64) -> f64 {
        (-self.k.integral(s, t, 4096)).exp()
    }
}

/// Smallest `R^Z_t` eigenvalue over `g_t`-unit vectors at one point.
pub fn min_ricci_eigen(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> Result<f64> {
    check_domain(flow, x)?;
    let r = ricci_zg_unchecked(flow, t, x);
    min_generalized_eigen(&r, &flow.metric(t, x))
}

/// Smallest `II_t` eigenvalue over `g_t`-unit tangent vectors at a boundary point.
/// Returns 0 in dimension 1, where `T∂M` is trivial.
pub fn min_ii_eigen(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> Result<f64> {
    let d = flow.dim();
    if d == 1 {
        return Ok(0.0);
    }
    let g = flow.metric(t, x);
    let n = inward_normal(flow, t, x)?;
    let basis = tangent_basis(&n, &g)?;
    let ii = flow.second_fundamental(t, x);
    let m = crate::linalg::sym(&(basis.transpose() * ii * &basis));
    Ok(m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Tabulated bounds from the minimum over `samples` at each time of `t_grid`.
///
/// `σ` is evaluated at the projections of the samples onto `∂M`; flows without
/// boundary get `σ ≡ 0`.
pub fn scan_bounds(flow: &dyn MetricFlow, t_grid: &[f64], samples: &[DVector<f64>]) -> Result<CurvatureBounds> {
    if samples.is_empty() {
        return Err(Error::arg("scan_bounds needs at least one sample point"));
    }
    if t_grid.is_empty() {
        return Err(Error::arg("scan_bounds needs at least one time"));
    }
    let mut k_vals = Vec::with_capacity(t_grid.len());
    let mut s_vals = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut k = f64::INFINITY;
        for x in samples {
            k = k.min(min_ricci_eigen(flow, t, x)?);
        }
        k_vals.push(k);
        let mut s = if flow.boundary().is_some() { f64::INFINITY } else { 0.0 };
        if flow.boundary().is_some() {
            for x in samples {
                let (p, _) = project_to_boundary(flow, t, x)?;
                check_domain(flow, &p)?;
                s = s.min(min_ii_eigen(flow, t, &p)?);
            }
        }
        s_vals.push(s);
    }
    Ok(CurvatureBounds {
        k: BoundFn::Table { times: t_grid.to_vec(), values: k_vals },
        sigma: BoundFn::Table { times: t_grid.to_vec(), values: s_vals },
        provenance: Provenance::Scanned,
    })
}
