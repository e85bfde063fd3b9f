//! Conformally flat flows `g_t = e^{2w(t,x)} I` with closed-form geometry.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Christoffel, CurvatureBounds, MetricFlow};
use crate::field::ScalarField;

/// `w` with its spatial gradient, Hessian and time derivative at one point.
#[derive(Debug, Clone)]
pub struct Potential {
    pub w: f64,
    pub dw: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub wt: f64,
}

type PotentialFn = dyn Fn(f64, &DVector<f64>) -> Potential + Send + Sync;
type DriftFn = dyn Fn(f64, &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync;
type ChartFn = dyn Fn(&DVector<f64>) -> bool + Send + Sync;
type FormFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
type DistanceFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;

/// `g_t = e^{2w} I`.
///
/// `Γ^k_{ij} = δ_ik w_j + δ_jk w_i − δ_ij w_k` and
/// `Ric = −(n−2)(∇²w − dw⊗dw) − (Δw + (n−2)|dw|²) I` with flat `∇²`, `Δ`.
#[derive(Clone)]
pub struct ConformalFlow {
    name: String,
    dim: usize,
    horizon: f64,
    potential: Arc<PotentialFn>,
    drift: Option<Arc<DriftFn>>,
    chart: Option<Arc<ChartFn>>,
    boundary: Option<Arc<dyn ScalarField>>,
    second_fundamental: Option<Arc<FormFn>>,
    bounds: Option<CurvatureBounds>,
    distance: Option<Arc<DistanceFn>>,
    flat_connection: bool,
}

impl std::fmt::Debug for ConformalFlow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConformalFlow").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

impl ConformalFlow {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        horizon: f64,
        potential: impl Fn(f64, &DVector<f64>) -> Potential + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            horizon,
            potential: Arc::new(potential),
            drift: None,
            chart: None,
            boundary: None,
            second_fundamental: None,
            bounds: None,
            distance: None,
            flat_connection: false,
        }
    }

    /// `w = w(t)` only; the connection is then flat.
    pub fn spatially_constant(
        name: impl Into<String>,
        dim: usize,
        horizon: f64,
        w: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static,
    ) -> Self {
        let mut f = Self::new(name, dim, horizon, move |t, _x| {
            let (w, wt) = w(t);
            Potential { w, dw: DVector::zeros(dim), hess: DMatrix::zeros(dim, dim), wt }
        });
        f.flat_connection = true;
        f
    }

    /// Drift `Z` with its Jacobian `∂_j Z^i`.
    pub fn with_drift(
        mut self,
        drift: impl Fn(f64, &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.drift = Some(Arc::new(drift));
        self
    }

    pub fn with_chart(mut self, chart: impl Fn(&DVector<f64>) -> bool + Send + Sync + 'static) -> Self {
        self.chart = Some(Arc::new(chart));
        self
    }

    pub fn with_boundary(mut self, b: Arc<dyn ScalarField>) -> Self {
        self.boundary = Some(b);
        self
    }

    pub fn with_second_fundamental(
        mut self,
        ii: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.second_fundamental = Some(Arc::new(ii));
        self
    }

    pub fn with_bounds(mut self, b: CurvatureBounds) -> Self {
        self.bounds = Some(b);
        self
    }

    /// Closed-form distance in `M`, see [`MetricFlow::intrinsic_distance`].
    pub fn with_distance(
        mut self,
        d: impl Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.distance = Some(Arc::new(d));
        self
    }

    pub fn potential(&self, t: f64, x: &DVector<f64>) -> Potential {
        (self.potential)(t, x)
    }

    /// The flow with metric `φ⁻² g_t`, i.e. potential `w − log φ`.
    ///
    /// Drift, chart and boundary are kept; bounds, closed-form distance and
    /// second fundamental form are dropped since they refer to the old metric.
    pub fn rescaled(&self, phi: Arc<dyn ScalarField>) -> Self {
        let base = self.potential.clone();
        let phi_c = phi.clone();
        let potential = move |t: f64, x: &DVector<f64>| {
            let p = base(t, x);
            let v = phi_c.value(t, x);
            let g = phi_c.gradient(t, x);
            let h = phi_c.hessian(t, x);
            let vt = phi_c.dt(t, x);
            let gl = &g / v;
            Potential {
                w: p.w - v.ln(),
                dw: &p.dw - &gl,
                hess: &p.hess - (h / v - &gl * gl.transpose()),
                wt: p.wt - vt / v,
            }
        };
        Self {
            name: format!("{}~rescaled", self.name),
            dim: self.dim,
            horizon: self.horizon,
            potential: Arc::new(potential),
            drift: self.drift.clone(),
            chart: self.chart.clone(),
            boundary: self.boundary.clone(),
            second_fundamental: None,
            bounds: None,
            distance: None,
            flat_connection: false,
        }
    }
}

impl MetricFlow for ConformalFlow {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn in_chart(&self, x: &DVector<f64>) -> bool {
        self.chart.as_ref().is_none_or(|c| c(x))
    }

    fn metric(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let w = self.potential(t, x).w;
        DMatrix::from_diagonal_element(self.dim, self.dim, (2.0 * w).exp())
    }

    fn metric_inverse(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let w = self.potential(t, x).w;
        DMatrix::from_diagonal_element(self.dim, self.dim, (-2.0 * w).exp())
    }

    fn metric_dt(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.potential(t, x);
        DMatrix::from_diagonal_element(self.dim, self.dim, 2.0 * p.wt * (2.0 * p.w).exp())
    }

    fn metric_dx(&self, t: f64, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let p = self.potential(t, x);
        let e = (2.0 * p.w).exp();
        (0..self.dim)
            .map(|l| DMatrix::from_diagonal_element(self.dim, self.dim, 2.0 * p.dw[l] * e))
            .collect()
    }

    fn christoffel(&self, t: f64, x: &DVector<f64>) -> Christoffel {
        let d = self.dim;
        let mut c = Christoffel::zeros(d);
        if self.flat_connection {
            return c;
        }
        let dw = self.potential(t, x).dw;
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut v = 0.0;
                    if i == k {
                        v += dw[j];
                    }
                    if j == k {
                        v += dw[i];
                    }
                    if i == j {
                        v -= dw[k];
                    }
                    c.set(k, i, j, v);
                }
            }
        }
        c
    }

    fn christoffel_vanishes(&self) -> bool {
        self.flat_connection
    }

    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.drift {
            Some(z) => z(t, x).0,
            None => DVector::zeros(self.dim),
        }
    }

    fn drift_jacobian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.drift {
            Some(z) => z(t, x).1,
            None => DMatrix::zeros(self.dim, self.dim),
        }
    }

    fn ricci(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim as f64;
        if self.flat_connection {
            return DMatrix::zeros(self.dim, self.dim);
        }
        let p = self.potential(t, x);
        let lap = p.hess.trace();
        let grad2 = p.dw.norm_squared();
        let outer = &p.dw * p.dw.transpose();
        (&p.hess - outer) * (-(n - 2.0))
            - DMatrix::from_diagonal_element(self.dim, self.dim, lap + (n - 2.0) * grad2)
    }

    fn boundary(&self) -> Option<&dyn ScalarField> {
        self.boundary.as_deref()
    }

    fn second_fundamental(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.second_fundamental {
            Some(ii) => ii(t, x),
            None => super::second_fundamental_fd(self, t, x),
        }
    }

    fn analytic_bounds(&self) -> Option<CurvatureBounds> {
        self.bounds.clone()
    }

    fn intrinsic_distance(&self, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> Option<f64> {
        self.distance.as_ref().map(|d| d(t, x, y))
    }
}
