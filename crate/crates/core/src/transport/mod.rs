//! Couplings by parallel displacement and transportation-cost inequalities.
//!
//! A coupled pair shares one Brownian motion `B̃`. The process `X` may carry
//! the Girsanov drift `√2 u β`, so under the tilted measure `Q` its law is
//! `F·Π` with `F = exp(∫⟨β, dB⟩ − ½∫|β|²)`, while `Y` receives the noise of `X`
//! rotated by the parallel displacement `P^t_{X,Y}` along the minimal geodesic
//! and has the law `Π` of the unperturbed diffusion. Simulating directly under
//! `Q` gives `E_Q max_k ρ(X_k, Y_k)²` as an upper estimate of `W₂²` for the
//! uniform distance.

mod checks;
mod constants;
mod marginal;

use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::gram_schmidt;
use crate::malliavin::McSetup;
use crate::metricflow::{geodesic_and_transport, geodesic_with_guess, BoundFn, MetricFlow};
use crate::rng::{PathKey, Purpose, StepStream};
use crate::sdesim::{
    check_start, framed_step, girsanov_log_weight, initial_frame, ito_drift, point_step, scaled_coefficients,
    simulate_path, SimSpec,
};
use crate::stats::{mc_reduce, pairwise_sum, Summary};

pub use checks::{
    check_contraction, check_nonconvex_transport, check_psi_transport, check_talagrand, metric_sandwich,
    ContractionReport, NonconvexReport, PsiTransportReport, SandwichReport, TalagrandReport,
};
pub use constants::{
    c_stk, conformal_constants, decay_integrals, inf_over_r, integrate, psi_constants, InequalityConstants,
    PhiConstants, PsiConstants, RicciTimeBounds, ScanRegion, TimeSample,
};
pub use marginal::{check_marginal_transport, lemma_reproduction, quantile_w2, LemmaReport, MarginalReport, TransitionLaw};

/// One inequality check in the shared report format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub theorem_id: String,
    pub scenario: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub margin: f64,
    pub se: f64,
    pub n_paths: usize,
    pub pass: bool,
}

/// One grid point of a per-time estimator trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub t: f64,
    pub value: f64,
    pub se: f64,
    pub bound: f64,
}

/// Both sides of one inequality with the slack used for the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Outcome {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// Standard error of `lhs − rhs`.
    pub se: f64,
    /// Allowed excess of `lhs` over `rhs`: statistical plus discretization.
    pub slack: f64,
    pub pass: bool,
}

impl Outcome {
    pub fn new(lhs: f64, rhs: f64, se: f64, slack: f64) -> Self {
        let margin = rhs - lhs;
        Self { lhs, rhs, margin, se, slack, pass: lhs.is_finite() && rhs.is_finite() && lhs <= rhs + slack }
    }

    pub fn verdict(&self, theorem_id: &str, scenario: &str, n_paths: usize) -> Verdict {
        Verdict {
            theorem_id: theorem_id.to_string(),
            scenario: scenario.to_string(),
            lhs: self.lhs,
            rhs: self.rhs,
            margin: self.margin,
            se: self.se,
            n_paths,
            pass: self.pass,
        }
    }
}

type BetaFn = dyn Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Girsanov drift in frame coordinates.
#[derive(Clone)]
pub enum Beta {
    Constant(DVector<f64>),
    /// `β_k = f(k, X_k)`, adapted to the path of `X`.
    Adapted(Arc<BetaFn>),
}

impl std::fmt::Debug for Beta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Beta::Constant(v) => write!(f, "Constant({:?})", v.as_slice()),
            Beta::Adapted(_) => f.write_str("Adapted(..)"),
        }
    }
}

impl Beta {
    pub fn zero(dim: usize) -> Self {
        Beta::Constant(DVector::zeros(dim))
    }

    pub fn at(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Beta::Constant(v) => v.clone(),
            Beta::Adapted(f) => f(k, x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Beta::Constant(v) if v.iter().all(|c| *c == 0.0))
    }
}

/// The tilted path measure `F·Π` with `F = R_β`.
#[derive(Debug, Clone)]
pub struct TiltedMeasure {
    pub beta: Beta,
}

impl TiltedMeasure {
    pub fn new(beta: Beta) -> Self {
        Self { beta }
    }

    /// `Π(F log F) = ½|β|²T` for constant `β`.
    pub fn exact_entropy(&self, t_end: f64) -> Option<f64> {
        match &self.beta {
            Beta::Constant(v) => Some(0.5 * v.norm_squared() * t_end),
            Beta::Adapted(_) => None,
        }
    }

    /// Per-path `F` and `F log F` under the reference measure `Π`.
    fn weights(&self, flow: &dyn MetricFlow, x0: &DVector<f64>, setup: &McSetup) -> Result<Vec<(f64, f64)>> {
        setup.check()?;
        let u0 = initial_frame(flow, 0.0, x0)?;
        setup.per_path(|i| {
            let path = simulate_path(flow, x0, &u0, &setup.spec, i)?;
            let betas: Vec<DVector<f64>> = (0..path.steps()).map(|k| self.beta.at(k, &path.x(k))).collect();
            let lw = girsanov_log_weight(&path, &betas)?;
            let w = lw.exp();
            Ok((w, w * lw))
        })
    }

    /// `E_Π[F]`, which must be 1.
    pub fn normalization(&self, flow: &dyn MetricFlow, x0: &DVector<f64>, setup: &McSetup) -> Result<Summary> {
        let w = self.weights(flow, x0, setup)?;
        mc_reduce(&w.iter().map(|r| r.0).collect::<Vec<_>>())
    }

    /// `E_Π[F log F]` estimated under the reference measure.
    pub fn entropy_under_reference(&self, flow: &dyn MetricFlow, x0: &DVector<f64>, setup: &McSetup) -> Result<Summary> {
        let w = self.weights(flow, x0, setup)?;
        mc_reduce(&w.iter().map(|r| r.1).collect::<Vec<_>>())
    }
}

/// Geometry of a coupling.
///
/// `psi` is a diffusion coefficient (generator `ψ²(Δ_t + Z_t)`), and
/// `conformal = (g̃, φ)` makes `Y` use the parallel displacement of
/// `g̃ = φ⁻² g` instead of `g`; then `Y` gets the noise
/// `√2 ψ(Y) (φ(X)/φ(Y)) P̃_{X,Y} u_X`, still `g(Y)`-isotropic.
#[derive(Clone, Copy)]
pub struct Coupling<'a> {
    pub flow: &'a dyn MetricFlow,
    pub psi: Option<&'a dyn ScalarField>,
    pub conformal: Option<(&'a dyn MetricFlow, &'a dyn ScalarField)>,
}

impl<'a> Coupling<'a> {
    pub fn new(flow: &'a dyn MetricFlow) -> Self {
        Self { flow, psi: None, conformal: None }
    }

    pub fn with_psi(mut self, psi: &'a dyn ScalarField) -> Self {
        self.psi = Some(psi);
        self
    }

    pub fn with_conformal(mut self, tilde: &'a dyn MetricFlow, phi: &'a dyn ScalarField) -> Self {
        self.conformal = Some((tilde, phi));
        self
    }

    fn psi_at(&self, t: f64, x: &DVector<f64>) -> f64 {
        self.psi.map_or(1.0, |p| p.value(t, x))
    }
}

/// Distance `ρ_t(x, y)` of `flow`: the closed form when the flow has one,
/// otherwise the chart geodesic.
pub fn distance(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if x == y {
        return Ok(0.0);
    }
    match flow.intrinsic_distance(t, x, y) {
        Some(d) => Ok(d),
        None => geodesic_and_transport(flow, t, x, y).map(|g| g.distance),
    }
}

/// A coupled pair on the grid `s_k = kΔ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPaths {
    pub dim: usize,
    pub dt: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
    dbs: Vec<f64>,
    /// `ρ_{s_k}(X_k, Y_k)`, `k = 0..=N`.
    pub rho: Vec<f64>,
    pub local_time_x: f64,
    pub local_time_y: f64,
    /// `log F = Σ⟨β_k, dB_k⟩ − ½Σ|β_k|²Δ` with `dB = dB̃ + βΔ`.
    pub log_weight: f64,
    /// `Σ|β_k|²Δ`.
    pub beta_energy: f64,
}

impl CoupledPaths {
    pub fn steps(&self) -> usize {
        self.rho.len() - 1
    }

    pub fn x(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.xs[k * self.dim..(k + 1) * self.dim])
    }

    pub fn y(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.ys[k * self.dim..(k + 1) * self.dim])
    }

    /// The shared increment `dB̃_k`.
    pub fn db(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.dbs[k * self.dim..(k + 1) * self.dim])
    }

    /// `max_k ρ_{s_k}`.
    pub fn rho_max(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }
}

fn at_step(k: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Coupling { step: k, source: Box::new(e) }
}

/// Couples the `L_t`-diffusion from `x0` (with Girsanov drift `β`) and from `y0`
/// by parallel displacement of `g_t`.
pub fn couple_paths(
    flow: &dyn MetricFlow,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    beta: &Beta,
    spec: &SimSpec,
    path_index: u64,
) -> Result<CoupledPaths> {
    couple_with(&Coupling::new(flow), x0, y0, beta, spec, path_index)
}

/// [`couple_paths`] for a general [`Coupling`].
///
/// `X` is stepped with its frame; `Y` is a position-only step whose noise
/// matrix is the displaced frame of `X`, with the Itô drift of `Y`'s own
/// generator so its law does not depend on the coupling. When `X_k = Y_k`
/// both steps are bit-identical.
pub fn couple_with(
    c: &Coupling,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    beta: &Beta,
    spec: &SimSpec,
    path_index: u64,
) -> Result<CoupledPaths> {
    let flow = c.flow;
    spec.validate(flow)?;
    let u0 = initial_frame(flow, 0.0, x0)?;
    check_start(flow, x0, &u0)?;
    check_start(flow, y0, &initial_frame(flow, 0.0, y0)?)?;
    if let Some((tilde, _)) = c.conformal {
        if tilde.dim() != flow.dim() {
            return Err(Error::arg("conformal flow has the wrong dimension"));
        }
    }
    let d = flow.dim();
    let n = spec.steps;
    let dt = spec.dt();
    let sd = dt.sqrt();
    let mut stream = StepStream::new(PathKey::new(spec.seed, path_index), Purpose::Noise, d);
    let mut buf = vec![0.0; d];
    let mut out = CoupledPaths {
        dim: d,
        dt,
        xs: Vec::with_capacity((n + 1) * d),
        ys: Vec::with_capacity((n + 1) * d),
        dbs: Vec::with_capacity(n * d),
        rho: Vec::with_capacity(n + 1),
        local_time_x: 0.0,
        local_time_y: 0.0,
        log_weight: 0.0,
        beta_energy: 0.0,
    };
    let geometry = c.conformal.map_or(flow, |(tilde, _)| tilde);
    let separate_distance = c.conformal.is_some();
    let (mut x, mut u, mut y) = (x0.clone(), u0, y0.clone());
    let mut guess: Option<DVector<f64>> = None;
    let mut noise_terms = Vec::with_capacity(n);
    let mut energy_terms = Vec::with_capacity(n);
    let mut dl_x = Vec::with_capacity(n);
    let mut dl_y = Vec::with_capacity(n);
    for k in 0..=n {
        let t = k as f64 * dt;
        out.xs.extend_from_slice(x.as_slice());
        out.ys.extend_from_slice(y.as_slice());
        let transport = if x == y {
            out.rho.push(0.0);
            None
        } else {
            let need_transport = k < n;
            let geo = if need_transport || !separate_distance {
                let g = geodesic_with_guess(geometry, t, &x, &y, guess.as_ref()).map_err(at_step(k))?;
                guess = Some(g.velocity.clone());
                Some(g)
            } else {
                None
            };
            let rho = match (&geo, separate_distance || flow.intrinsic_distance(t, &x, &y).is_some()) {
                (Some(g), false) => g.distance,
                _ => distance(flow, t, &x, &y).map_err(at_step(k))?,
            };
            out.rho.push(rho);
            geo.map(|g| g.transport)
        };
        if k == n {
            break;
        }
        stream.normals(k, &mut buf);
        let db = DVector::from_iterator(d, buf.iter().map(|z| z * sd));
        let b = beta.at(k, &x);
        let b_norm2 = b.norm_squared();
        noise_terms.push(b.dot(&db));
        energy_terms.push(b_norm2 * dt);
        let psi_x = c.psi_at(t, &x);
        let extra = if b_norm2 > 0.0 { Some(&b) } else { None };
        let step = framed_step(flow, t, dt, &x, &u, &db, extra, psi_x).map_err(at_step(k))?;

        let (sigma_y, drift_y) = match &transport {
            None => scaled_coefficients(flow, t, &x, &u, psi_x),
            Some(p) => {
                let psi_y = c.psi_at(t, &y);
                let ratio = c.conformal.map_or(1.0, |(_, phi)| phi.value(t, &x) / phi.value(t, &y));
                (p * &u * (psi_y * ratio), ito_drift(flow, t, &y) * (psi_y * psi_y))
            }
        };
        let (y_next, dly, _) = point_step(flow, t, dt, &y, &sigma_y, &db, &drift_y).map_err(at_step(k))?;
        let mut u_next = step.u;
        if spec.renorm_every > 0 && (k + 1) % spec.renorm_every == 0 {
            u_next = gram_schmidt(&u_next, &flow.metric(t + dt, &step.x)).map_err(at_step(k))?;
        }
        out.dbs.extend_from_slice(db.as_slice());
        dl_x.push(step.dl);
        dl_y.push(dly);
        x = step.x;
        u = u_next;
        y = y_next;
    }
    out.beta_energy = pairwise_sum(&energy_terms);
    out.log_weight = pairwise_sum(&noise_terms) + 0.5 * out.beta_energy;
    out.local_time_x = pairwise_sum(&dl_x);
    out.local_time_y = pairwise_sum(&dl_y);
    Ok(out)
}

/// Path-wise domination of the distance process for `X_0 = Y_0`:
/// `ρ_{s_k} ≤ e^{−∫_0^{s_k} K} √2 ∫_0^{s_k} e^{∫_0^s K} |β_s| ds`.
///
/// Returns the largest excess `ρ_{s_k} − bound_k` over the path (negative when
/// the bound holds with room).
pub fn domination_excess(paths: &CoupledPaths, k_bound: &BoundFn, beta_norms: &[f64]) -> Result<f64> {
    let n = paths.steps();
    if beta_norms.len() != n {
        return Err(Error::arg("beta norms do not match the grid"));
    }
    let dt = paths.dt;
    let mut int_k = 0.0;
    let mut acc = 0.0;
    let mut worst = paths.rho[0];
    for k in 0..n {
        let t = k as f64 * dt;
        // Trapezoid for ∫K, left point for the drift integral (β is constant on steps).
        let dk = 0.5 * (k_bound.at(t) + k_bound.at(t + dt)) * dt;
        let mid = int_k + 0.5 * dk;
        acc += std::f64::consts::SQRT_2 * mid.exp() * beta_norms[k] * dt;
        int_k += dk;
        let bound = (-int_k).exp() * acc;
        worst = worst.max(paths.rho[k + 1] - bound);
    }
    Ok(worst)
}

/// Sample mean and standard error of `(max_k ρ)^p`, and per-grid-point means of `ρ^p`.
pub(crate) struct DistanceMoments {
    pub sup: Summary,
    pub per_time: Vec<Summary>,
}

pub(crate) fn distance_moments(paths: &[CoupledPaths], p: f64) -> Result<DistanceMoments> {
    let n = paths.first().map_or(0, |c| c.steps());
    let sup = mc_reduce(&paths.iter().map(|c| c.rho_max().powf(p)).collect::<Vec<_>>())?;
    let per_time = (0..=n)
        .map(|k| mc_reduce(&paths.iter().map(|c| c.rho[k].powf(p)).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceMoments { sup, per_time })
}

/// `(m, se)` of `E[V]` mapped to `(m^{1/p}, se · m^{1/p − 1}/p)`.
pub(crate) fn root_moment(s: &Summary, p: f64) -> (f64, f64) {
    if s.mean <= 0.0 {
        return (0.0, s.se.powf(1.0 / p));
    }
    let r = s.mean.powf(1.0 / p);
    (r, s.se * r / (p * s.mean))
}

#[cfg(test)]
mod tests;
