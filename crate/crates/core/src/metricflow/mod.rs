//! Manifolds with a time-dependent metric, drift and boundary, in one chart.
//!
//! A [`MetricFlow`] serves `g_t(x)`, `∂_t g_t(x)`, the Levi-Civita connection,
//! Ricci curvature, the drift `Z_t` and an optional boundary `{b = 0}` with
//! `M = {b ≥ 0}`. Anything a flow does not supply analytically is obtained by
//! central finite differences. The public functions in this module check the
//! chart domain and return [`Error::Domain`] outside it.

mod bounds;
mod boundary;
mod builtin;
mod conformal;
mod exprflow;
mod geodesic;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{fd_step, ScalarField};
use crate::linalg::{spd_inverse, sym};

pub use bounds::{min_ii_eigen, min_ricci_eigen, scan_bounds, BoundFn, CurvatureBounds, Provenance};
pub use boundary::{boundary_distance, inward_normal, project_to_boundary, second_fundamental_fd};
pub use builtin::{builtin, builtin_names, disk_exterior_distance, FlowParams};
pub use conformal::{ConformalFlow, Potential};
pub use exprflow::ExprFlow;
pub use geodesic::{geodesic_and_transport, geodesic_with_guess, Geodesic};

/// Christoffel symbols `Γ^k_{ij}` stored as `data[k·d² + i·d + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    d: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(d: usize) -> Self {
        Self { d, data: vec![0.0; d * d * d] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.d + i) * self.d + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.data[(k * self.d + i) * self.d + j] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    /// `Γ^k_{ij} a^i b^j`.
    pub fn contract(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let d = self.d;
        DVector::from_fn(d, |k, _| {
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += self.get(k, i, j) * a[i] * b[j];
                }
            }
            s
        })
    }

    /// Columnwise `Γ^k_{ij} a^i u^j_c`: the change of a frame moved along `a`.
    pub fn contract_frame(&self, a: &DVector<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.d;
        let mut m = DMatrix::zeros(d, d);
        for k in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for i in 0..d {
                    s += self.get(k, i, j) * a[i];
                }
                m[(k, j)] = s;
            }
        }
        m * u
    }

    /// `g^{ij} Γ^k_{ij}`, the Itô correction of the horizontal Brownian motion.
    pub fn trace(&self, ginv: &DMatrix<f64>) -> DVector<f64> {
        let d = self.d;
        DVector::from_fn(d, |k, _| {
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += ginv[(i, j)] * self.get(k, i, j);
                }
            }
            s
        })
    }

    /// Levi-Civita symbols from the metric, its inverse and `∂_l g`.
    pub fn from_metric(ginv: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Self {
        let d = ginv.nrows();
        let mut c = Self::zeros(d);
        for k in 0..d {
            for i in 0..d {
                for j in i..d {
                    let mut s = 0.0;
                    for l in 0..d {
                        s += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    c.set(k, i, j, 0.5 * s);
                    c.set(k, j, i, 0.5 * s);
                }
            }
        }
        c
    }
}

/// `(M, g_t, Z_t, ∂M)` in a single coordinate chart.
pub trait MetricFlow: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Flows are defined on `[0, horizon)`.
    fn horizon(&self) -> f64;

    /// Open chart domain. Points slightly outside `M` may lie in the chart;
    /// the reflection step moves them back.
    fn in_chart(&self, _x: &DVector<f64>) -> bool {
        true
    }

    fn metric(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64>;

    fn metric_inverse(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        spd_inverse(&self.metric(t, x)).unwrap_or_else(|_| DMatrix::from_element(self.dim(), self.dim(), f64::NAN))
    }

    /// `G_t = ∂_t g_t`.
    fn metric_dt(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let h = 1e-5 * (1.0 + t.abs());
        (self.metric(t + h, x) - self.metric(t - h, x)) / (2.0 * h)
    }

    /// `[∂_1 g, …, ∂_d g]`.
    fn metric_dx(&self, t: f64, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let h = fd_step(x);
        (0..self.dim())
            .map(|l| {
                let mut y = x.clone();
                y[l] += h;
                let gp = self.metric(t, &y);
                y[l] -= 2.0 * h;
                (gp - self.metric(t, &y)) / (2.0 * h)
            })
            .collect()
    }

    fn christoffel(&self, t: f64, x: &DVector<f64>) -> Christoffel {
        Christoffel::from_metric(&self.metric_inverse(t, x), &self.metric_dx(t, x))
    }

    /// True when `Γ ≡ 0` everywhere; enables straight-line geodesics.
    fn christoffel_vanishes(&self) -> bool {
        false
    }

    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;

    /// `J[(i, j)] = ∂_j Z^i`.
    fn drift_jacobian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let h = fd_step(x);
        let mut j = DMatrix::zeros(d, d);
        for c in 0..d {
            let mut y = x.clone();
            y[c] += h;
            let zp = self.drift(t, &y);
            y[c] -= 2.0 * h;
            let zm = self.drift(t, &y);
            j.set_column(c, &((zp - zm) / (2.0 * h)));
        }
        j
    }

    /// Coordinate matrix of the Ricci tensor of `g_t`.
    fn ricci(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        ricci_fd(self, t, x)
    }

    fn boundary(&self) -> Option<&dyn ScalarField> {
        None
    }

    /// Coordinate matrix of `II_t` on `T∂M`, extended by zero in the normal direction.
    fn second_fundamental(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        second_fundamental_fd(self, t, x)
    }

    fn analytic_bounds(&self) -> Option<CurvatureBounds> {
        None
    }

    /// Closed-form distance in `M` for flows whose chart geodesics can leave `M`
    /// (a non-convex boundary). `None` means chart geodesics are used.
    fn intrinsic_distance(&self, _t: f64, _x: &DVector<f64>, _y: &DVector<f64>) -> Option<f64> {
        None
    }
}

/// Ricci tensor from finite differences of the Christoffel symbols:
/// `R_ij = ∂_k Γ^k_ij − ∂_j Γ^k_ik + Γ^k_kl Γ^l_ij − Γ^k_jl Γ^l_ik`.
pub fn ricci_fd<F: MetricFlow + ?Sized>(flow: &F, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
    let d = flow.dim();
    let h = 1e-4 * (1.0 + x.norm());
    let gamma = flow.christoffel(t, x);
    let dgamma: Vec<Christoffel> = (0..d)
        .map(|m| {
            let mut y = x.clone();
            y[m] += h;
            let p = flow.christoffel(t, &y);
            y[m] -= 2.0 * h;
            let q = flow.christoffel(t, &y);
            Christoffel {
                d,
                data: p.data.iter().zip(&q.data).map(|(a, b)| (a - b) / (2.0 * h)).collect(),
            }
        })
        .collect();
    let mut r = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += dgamma[k].get(k, i, j) - dgamma[j].get(k, i, k);
                for l in 0..d {
                    s += gamma.get(k, k, l) * gamma.get(l, i, j) - gamma.get(k, j, l) * gamma.get(l, i, k);
                }
            }
            r[(i, j)] = s;
        }
    }
    sym(&r)
}

fn check_domain(flow: &dyn MetricFlow, x: &DVector<f64>) -> Result<()> {
    if x.len() != flow.dim() {
        return Err(Error::arg(format!(
            "point has dimension {} but flow `{}` has dimension {}",
            x.len(),
            flow.name(),
            flow.dim()
        )));
    }
    if !flow.in_chart(x) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain { flow: flow.name().to_string(), point: x.iter().cloned().collect() });
    }
    Ok(())
}

/// `Γ^k_{ij}(t, x)`.
pub fn christoffel(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> Result<Christoffel> {
    check_domain(flow, x)?;
    Ok(flow.christoffel(t, x))
}

/// `(∇^t Z)^i_j = ∂_j Z^i + Γ^i_{jk} Z^k`.
pub fn drift_cov_deriv(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_domain(flow, x)?;
    Ok(cov_deriv_unchecked(flow, t, x, &flow.christoffel(t, x)))
}

fn cov_deriv_unchecked(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>, gamma: &Christoffel) -> DMatrix<f64> {
    let d = flow.dim();
    let z = flow.drift(t, x);
    let mut j = flow.drift_jacobian(t, x);
    for i in 0..d {
        for c in 0..d {
            for k in 0..d {
                j[(i, c)] += gamma.get(i, c, k) * z[k];
            }
        }
    }
    j
}

/// Coordinate matrix of `R^Z_t = Ric_t − ⟨∇^t Z_t, ·⟩_t − ½ G_t`, with the
/// drift term symmetrized.
pub fn ricci_zg(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_domain(flow, x)?;
    Ok(ricci_zg_unchecked(flow, t, x))
}

pub(crate) fn ricci_zg_unchecked(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
    let g = flow.metric(t, x);
    let gamma = flow.christoffel(t, x);
    let nz = cov_deriv_unchecked(flow, t, x, &gamma);
    // ⟨∇_X Z, Y⟩ = X^j (∇Z)^i_j g_{il} Y^l, i.e. the matrix (∇Z)ᵀ g.
    let form = nz.transpose() * &g;
    flow.ricci(t, x) - sym(&form) - flow.metric_dt(t, x) * 0.5
}

/// Generator applied to a scalar field: `L_t f = Δ_t f + Z_t f`.
pub fn generator(flow: &dyn MetricFlow, f: &dyn ScalarField, t: f64, x: &DVector<f64>) -> f64 {
    let ginv = flow.metric_inverse(t, x);
    let gamma = flow.christoffel(t, x);
    let df = f.gradient(t, x);
    let hf = f.hessian(t, x);
    let tr = gamma.trace(&ginv);
    let mut lap = 0.0;
    for i in 0..flow.dim() {
        for j in 0..flow.dim() {
            lap += ginv[(i, j)] * hf[(i, j)];
        }
    }
    lap - tr.dot(&df) + flow.drift(t, x).dot(&df)
}

/// `|v|_{g}`.
pub fn norm_g(g: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * g * v)[(0, 0)].max(0.0).sqrt()
}

/// `|df|_{g} = sqrt(df g⁻¹ df)`.
pub fn conorm_g(ginv: &DMatrix<f64>, df: &DVector<f64>) -> f64 {
    (df.transpose() * ginv * df)[(0, 0)].max(0.0).sqrt()
}

#[cfg(test)]
mod tests;
