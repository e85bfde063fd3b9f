//! Constants of the transportation-cost inequalities.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::min_generalized_eigen;
use crate::metricflow::{conorm_g, generator, inward_normal, min_ii_eigen, norm_g, BoundFn, MetricFlow};

/// Panels of the composite Simpson rules below.
pub const PANELS: usize = 2000;
/// Time nodes of the sup-norm scans; values in between are interpolated linearly.
const SCAN_TIMES: usize = 65;
const R_GRID: usize = 61;

/// `I(t_j) = ∫_S^{t_j} w(u) e^{−2∫_u^{t_j} k(r) dr} du` on `t_j = S + j(T−S)/n`.
///
/// Computed by the stable recursion `I_{j+1} = e^{−2∫_{t_j}^{t_{j+1}} k} I_j + local`
/// with Simpson's rule on each panel (inner integrals of `k` by Simpson on half panels).
pub fn decay_integrals(k: &dyn Fn(f64) -> f64, w: &dyn Fn(f64) -> f64, s: f64, t: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    let h = (t - s) / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(acc);
    for j in 0..n {
        let a = s + j as f64 * h;
        let kv = [k(a), k(a + 0.25 * h), k(a + 0.5 * h), k(a + 0.75 * h), k(a + h)];
        let first = h / 12.0 * (kv[0] + 4.0 * kv[1] + kv[2]);
        let second = h / 12.0 * (kv[2] + 4.0 * kv[3] + kv[4]);
        let whole = first + second;
        let local = h / 6.0
            * (w(a) * (-2.0 * whole).exp() + 4.0 * w(a + 0.5 * h) * (-2.0 * second).exp() + w(a + h));
        acc = (-2.0 * whole).exp() * acc + local;
        out.push(acc);
    }
    out
}

/// `∫_s^t k` by composite Simpson on [`PANELS`] panels.
pub fn integrate(k: &dyn Fn(f64) -> f64, s: f64, t: f64) -> f64 {
    let n = PANELS;
    let h = (t - s) / n as f64;
    let mut acc = k(s) + k(t);
    for j in 1..n {
        acc += if j % 2 == 1 { 4.0 } else { 2.0 } * k(s + j as f64 * h);
    }
    acc * h / 3.0
}

/// `C(S, T, K) = sup_{t ∈ [S, T]} ∫_S^t e^{−2∫_u^t K} du`.
pub fn c_stk(k: &BoundFn, s: f64, t: f64) -> f64 {
    decay_integrals(&|r| k.at(r), &|_| 1.0, s, t, PANELS).into_iter().fold(0.0, f64::max)
}

/// Constants of the convex-flow inequalities on `[S, T]`.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityConstants {
    pub s: f64,
    pub t: f64,
    /// `C(S, T, K)`.
    pub c_k: f64,
    /// `∫_S^T e^{−2∫_u^T K} du`, the constant of the marginal inequalities.
    pub c_k_terminal: f64,
    /// `e^{−∫_S^T K}`.
    pub contraction: f64,
}

impl InequalityConstants {
    pub fn from_bound(k: &BoundFn, s: f64, t: f64) -> Result<Self> {
        if !(t > s) || s < 0.0 {
            return Err(Error::arg(format!("need 0 <= S < T, got S = {s}, T = {t}")));
        }
        let vals = decay_integrals(&|r| k.at(r), &|_| 1.0, s, t, PANELS);
        let c_k = vals.iter().copied().fold(0.0, f64::max);
        let c_k_terminal = *vals.last().unwrap_or(&0.0);
        let contraction = (-integrate(&|r| k.at(r), s, t)).exp();
        if !(c_k.is_finite() && c_k > 0.0 && contraction.is_finite()) {
            return Err(Error::numeric("inequality constants are not finite"));
        }
        Ok(Self { s, t, c_k, c_k_terminal, contraction })
    }
}

/// Points over which sup-norms are taken, plus boundary points for the
/// class-D condition.
#[derive(Debug, Clone)]
pub struct ScanRegion {
    pub label: String,
    pub points: Vec<DVector<f64>>,
    pub boundary_points: Vec<DVector<f64>>,
}

impl ScanRegion {
    pub fn from_points(label: impl Into<String>, points: Vec<DVector<f64>>, boundary_points: Vec<DVector<f64>>) -> Self {
        Self { label: label.into(), points, boundary_points }
    }

    /// `n + 1` equispaced points of `[a, b]` in `d = 1`.
    pub fn interval(a: f64, b: f64, n: usize) -> Self {
        let n = n.max(1);
        let points = (0..=n).map(|i| DVector::from_element(1, a + (b - a) * i as f64 / n as f64)).collect();
        Self { label: format!("[{a}, {b}] ({} points)", n + 1), points, boundary_points: Vec::new() }
    }

    /// Polar grid on `r0 ≤ |x| ≤ r1` in `d = 2`; the circle `|x| = r0` is the boundary.
    pub fn annulus(r0: f64, r1: f64, nr: usize, ntheta: usize) -> Self {
        let nr = nr.max(1);
        let ntheta = ntheta.max(1);
        let polar = |r: f64, i: usize| {
            let a = std::f64::consts::TAU * i as f64 / ntheta as f64;
            DVector::from_vec(vec![r * a.cos(), r * a.sin()])
        };
        let mut points = Vec::with_capacity((nr + 1) * ntheta);
        for j in 0..=nr {
            let r = r0 + (r1 - r0) * j as f64 / nr as f64;
            points.extend((0..ntheta).map(|i| polar(r, i)));
        }
        let boundary_points = (0..ntheta).map(|i| polar(r0, i)).collect();
        Self { label: format!("annulus {r0} <= |x| <= {r1} ({} points)", points.len()), points, boundary_points }
    }

    pub fn with_boundary_points(mut self, b: Vec<DVector<f64>>) -> Self {
        self.boundary_points = b;
        self
    }

    fn check(&self, flow: &dyn MetricFlow) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::arg("scan region is empty"));
        }
        if self.points.iter().chain(&self.boundary_points).any(|p| p.len() != flow.dim() || !flow.in_chart(p)) {
            return Err(Error::arg(format!("scan region `{}` does not fit flow `{}`", self.label, flow.name())));
        }
        Ok(())
    }
}

/// Values of a scalar scanned on [`SCAN_TIMES`] nodes of `[0, T]`, linear in between.
#[derive(Debug, Clone)]
struct TimeTable {
    t_end: f64,
    values: Vec<f64>,
}

impl TimeTable {
    fn build(t_end: f64, f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let values = (0..SCAN_TIMES)
            .map(|i| f(t_end * i as f64 / (SCAN_TIMES - 1) as f64))
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("sup-norm scan is unbounded on the region"));
        }
        Ok(Self { t_end, values })
    }

    fn at(&self, t: f64) -> f64 {
        let n = self.values.len() - 1;
        let r = (t / self.t_end).clamp(0.0, 1.0) * n as f64;
        let i = (r.floor() as usize).min(n - 1);
        let w = r - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `inf_{R > 0} 4(1 + 1/R) · j · exp(8(1 + R) g)`.
///
/// 61-point log grid on `R ∈ [10⁻³, 10³]` refined by golden section around the
/// grid minimum. For `g = 0` the infimum is the limit `R → ∞`, returned with `R = ∞`.
pub fn inf_over_r(j: f64, g: f64) -> (f64, f64) {
    let f = |lr: f64| {
        let r = 10f64.powf(lr);
        4.0 * (1.0 + 1.0 / r) * j * (8.0 * (1.0 + r) * g).exp()
    };
    if g == 0.0 {
        return (4.0 * j, f64::INFINITY);
    }
    let grid: Vec<f64> = (0..R_GRID).map(|i| -3.0 + 6.0 * i as f64 / (R_GRID - 1) as f64).collect();
    let best = (0..R_GRID).min_by(|&a, &b| f(grid[a]).total_cmp(&f(grid[b]))).unwrap_or(0);
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(R_GRID - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    for _ in 0..80 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    let lr = 0.5 * (a + b);
    let (v, v_grid) = (f(lr), f(grid[best]));
    if v <= v_grid {
        (v, 10f64.powf(lr))
    } else {
        (v_grid, 10f64.powf(grid[best]))
    }
}

/// Lower bound `K₁` of `Ric^Z = Ric − ∇Z` and upper bound `K₂` of `∂_t g`,
/// relative to `g_t`.
#[derive(Debug, Clone)]
pub struct RicciTimeBounds {
    pub k1: BoundFn,
    pub k2: BoundFn,
}

impl RicciTimeBounds {
    pub fn constant(k1: f64, k2: f64) -> Self {
        Self { k1: BoundFn::Const(k1), k2: BoundFn::Const(k2) }
    }

    /// Scans both bounds over `region` on [`SCAN_TIMES`] nodes of `[0, T]`.
    /// `K₂` is interpolated by the larger neighbour so it stays an upper bound
    /// for bounds monotone between nodes.
    pub fn scan(flow: &dyn MetricFlow, region: &ScanRegion, t_end: f64) -> Result<Self> {
        region.check(flow)?;
        let times: Vec<f64> = (0..SCAN_TIMES).map(|i| t_end * i as f64 / (SCAN_TIMES - 1) as f64).collect();
        let mut k1 = Vec::with_capacity(times.len());
        let mut k2 = Vec::with_capacity(times.len());
        for &t in &times {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for x in &region.points {
                let g = flow.metric(t, x);
                let gdot = flow.metric_dt(t, x);
                // R^Z + ½G = Ric − ∇Z.
                let rz = crate::metricflow::ricci_zg(flow, t, x)? + &gdot * 0.5;
                lo = lo.min(min_generalized_eigen(&rz, &g)?);
                hi = hi.max(-min_generalized_eigen(&(-gdot), &g)?);
            }
            k1.push(lo);
            k2.push(hi);
        }
        let (t2, v2) = (times.clone(), k2);
        let upper = move |t: f64| {
            let i = t2.partition_point(|s| *s <= t);
            if i == 0 {
                v2[0]
            } else if i >= t2.len() {
                v2[t2.len() - 1]
            } else {
                v2[i - 1].max(v2[i])
            }
        };
        Ok(Self { k1: BoundFn::Table { times, values: k1 }, k2: BoundFn::func(upper) })
    }
}

/// Sample of a time-dependent constant, for reports.
#[derive(Debug, Clone, Serialize)]
pub struct TimeSample {
    pub t: f64,
    pub value: f64,
}

fn sample(t_end: f64, f: impl Fn(f64) -> f64) -> Vec<TimeSample> {
    (0..=8).map(|i| t_end * i as f64 / 8.0).map(|t| TimeSample { t, value: f(t) }).collect()
}

/// Constants of the diffusion-coefficient inequalities.
#[derive(Debug, Clone, Serialize)]
pub struct PsiConstants {
    pub t_end: f64,
    pub region: String,
    pub sup_psi: f64,
    pub sup_grad_psi: f64,
    pub sup_drift: f64,
    pub inf_psi: f64,
    pub k_psi: Vec<TimeSample>,
    /// `∫_0^T K_ψ`.
    pub int_k_psi: f64,
    /// `∫_0^T ‖ψ_s‖² e^{2∫_s^T K_ψ} ds`.
    pub weighted_integral: f64,
    /// `C(T, ψ)` and the minimizing `R` (`∞` when `∇ψ ≡ 0`).
    pub c_t: f64,
    pub r_opt: f64,
    /// `2 e^{∫_0^T (K_ψ + ‖∇ψ‖)}`.
    pub contraction_factor: f64,
}

fn sup_over(region: &ScanRegion, f: impl Fn(&DVector<f64>) -> f64) -> f64 {
    region.points.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
}

fn inf_over(points: &[DVector<f64>], f: impl Fn(&DVector<f64>) -> f64) -> (f64, usize) {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (f(p), i))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
}

/// `K_ψ(t) = (d−1)‖∇ψ‖² + K₁⁻‖ψ‖² + 2‖Z‖‖ψ‖‖∇ψ‖ + K₂(t)` and `C(T, ψ)`, with
/// sup-norms over `region`.
pub fn psi_constants(
    flow: &dyn MetricFlow,
    psi: &dyn ScalarField,
    region: &ScanRegion,
    bounds: &RicciTimeBounds,
    t_end: f64,
) -> Result<PsiConstants> {
    region.check(flow)?;
    if !(t_end > 0.0) {
        return Err(Error::arg("T must be positive"));
    }
    let d = flow.dim() as f64;
    let inf_psi = TimeTable::build(t_end, |t| Ok(inf_over(&region.points, |x| psi.value(t, x)).0))?;
    if inf_psi.values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::arg("ψ must be strictly positive on the scan region"));
    }
    let sup_psi = TimeTable::build(t_end, |t| Ok(sup_over(region, |x| psi.value(t, x).abs())))?;
    let sup_grad = TimeTable::build(t_end, |t| {
        Ok(sup_over(region, |x| conorm_g(&flow.metric_inverse(t, x), &psi.gradient(t, x))))
    })?;
    let sup_z = TimeTable::build(t_end, |t| Ok(sup_over(region, |x| norm_g(&flow.metric(t, x), &flow.drift(t, x)))))?;
    let k_psi = |t: f64| {
        let (p, g, z) = (sup_psi.at(t), sup_grad.at(t), sup_z.at(t));
        (d - 1.0) * g * g + (-bounds.k1.at(t)).max(0.0) * p * p + 2.0 * z * p * g + bounds.k2.at(t)
    };
    let int_k_psi = integrate(&k_psi, 0.0, t_end);
    // ∫_0^T w(s) e^{2∫_s^T K_ψ} ds is the decay integral with rate −K_ψ.
    let weighted_integral =
        *decay_integrals(&|t| -k_psi(t), &|t| sup_psi.at(t).powi(2), 0.0, t_end, PANELS).last().unwrap_or(&0.0);
    let g = sup_grad.max();
    let (c_t, r_opt) = inf_over_r(weighted_integral, g);
    let contraction_factor = 2.0 * (int_k_psi + integrate(&|t| sup_grad.at(t), 0.0, t_end)).exp();
    if !(c_t.is_finite() && contraction_factor.is_finite()) {
        return Err(Error::arg("ψ constants are not finite on the scan region"));
    }
    Ok(PsiConstants {
        t_end,
        region: region.label.clone(),
        sup_psi: sup_psi.max(),
        sup_grad_psi: g,
        sup_drift: sup_z.max(),
        inf_psi: inf_psi.values.iter().copied().fold(f64::INFINITY, f64::min),
        k_psi: sample(t_end, k_psi),
        int_k_psi,
        weighted_integral,
        c_t,
        r_opt,
        contraction_factor,
    })
}

/// Class-D admissibility of a conformal factor and the constants built on it.
#[derive(Debug, Clone, Serialize)]
pub struct PhiConstants {
    pub t_end: f64,
    pub region: String,
    /// `inf φ_t = 1` and `II_t ≥ −N_t log φ_t` on the boundary samples.
    pub admissible: bool,
    pub inf_phi: f64,
    pub inf_phi_at: Vec<f64>,
    /// `min (λ_min(II) + N log φ)` over boundary samples and where it occurs.
    pub boundary_margin: f64,
    pub boundary_margin_at: Vec<f64>,
    pub sup_phi: f64,
    pub sup_grad_phi: f64,
    pub k_phi1: Vec<TimeSample>,
    pub k_phi2: Vec<TimeSample>,
    pub k_phi: Vec<TimeSample>,
    /// `∫_0^T K_φ` and `∫_0^T e^{2∫_s^T K_φ} ds`.
    pub int_k_phi: f64,
    pub weighted_integral: f64,
    pub c_t: f64,
    pub r_opt: f64,
    /// `sup‖φ‖² C(T, φ)`.
    pub talagrand_constant: f64,
    /// `2 sup‖φ‖ e^{∫_0^T (K_φ + ‖∇φ‖)}`.
    pub contraction_factor: f64,
}

/// Tolerance on `inf φ = 1` and on the boundary condition.
const ADMISSIBILITY_TOL: f64 = 1e-6;

/// Constants for the conformal change `g̃ = φ⁻² g`:
///
/// ```text
/// K_{φ,1}(t) = inf{φK₁ + ½L_tφ² − |∇φ²||Z| − (d−2)|∇φ|²},
/// K_{φ,2}(t) = sup{−2∂_t log φ + K₂},
/// K_φ = (d−1)‖∇φ‖² + K_{φ,1}⁻ + 2‖φZ + (d−2)∇φ‖‖∇φ‖ + K_{φ,2}.
/// ```
///
/// An inadmissible `φ` is reported through `admissible`, not as an error.
pub fn conformal_constants(
    flow: &dyn MetricFlow,
    phi: &dyn ScalarField,
    region: &ScanRegion,
    bounds: &RicciTimeBounds,
    t_end: f64,
) -> Result<PhiConstants> {
    region.check(flow)?;
    if flow.boundary().is_none() {
        return Err(Error::arg("conformal constants need a boundary"));
    }
    if !(t_end > 0.0) {
        return Err(Error::arg("T must be positive"));
    }
    let dim = flow.dim() as f64;
    let grad = |t: f64, x: &DVector<f64>| flow.metric_inverse(t, x) * phi.gradient(t, x);
    let grad_norm = |t: f64, x: &DVector<f64>| conorm_g(&flow.metric_inverse(t, x), &phi.gradient(t, x));

    let mut inf_phi = f64::INFINITY;
    let mut inf_phi_at = Vec::new();
    let mut boundary_margin = f64::INFINITY;
    let mut boundary_margin_at = Vec::new();
    for i in 0..SCAN_TIMES {
        let t = t_end * i as f64 / (SCAN_TIMES - 1) as f64;
        let (v, j) = inf_over(&region.points, |x| phi.value(t, x));
        if v < inf_phi {
            inf_phi = v;
            inf_phi_at = region.points[j].iter().copied().collect();
        }
        for x in &region.boundary_points {
            let n = inward_normal(flow, t, x)?;
            let n_log_phi = phi.gradient(t, x).dot(&n) / phi.value(t, x);
            let m = min_ii_eigen(flow, t, x)? + n_log_phi;
            if m < boundary_margin {
                boundary_margin = m;
                boundary_margin_at = x.iter().copied().collect();
            }
        }
    }
    if region.boundary_points.is_empty() {
        return Err(Error::arg("scan region has no boundary points"));
    }
    let admissible = (inf_phi - 1.0).abs() <= ADMISSIBILITY_TOL && boundary_margin >= -ADMISSIBILITY_TOL;

    let sup_phi = TimeTable::build(t_end, |t| Ok(sup_over(region, |x| phi.value(t, x))))?;
    let sup_grad = TimeTable::build(t_end, |t| Ok(sup_over(region, |x| grad_norm(t, x))))?;
    let k_phi1 = TimeTable::build(t_end, |t| {
        let k1 = bounds.k1.at(t);
        let mut lo = f64::INFINITY;
        for x in &region.points {
            let g = flow.metric(t, x);
            let v = phi.value(t, x);
            let gn = grad_norm(t, x);
            let z = norm_g(&g, &flow.drift(t, x));
            let phi2 = Phi2(phi);
            let l_phi2 = generator(flow, &phi2, t, x);
            lo = lo.min(v * k1 + 0.5 * l_phi2 - 2.0 * v * gn * z - (dim - 2.0) * gn * gn);
        }
        Ok(lo)
    })?;
    let k_phi2 = TimeTable::build(t_end, |t| {
        Ok(sup_over(region, |x| -2.0 * phi.dt(t, x) / phi.value(t, x)) + bounds.k2.at(t))
    })?;
    let cross = TimeTable::build(t_end, |t| {
        Ok(sup_over(region, |x| {
            let v = flow.drift(t, x) * phi.value(t, x) + grad(t, x) * (dim - 2.0);
            norm_g(&flow.metric(t, x), &v)
        }))
    })?;
    let k_phi = |t: f64| {
        let g = sup_grad.at(t);
        (dim - 1.0) * g * g + (-k_phi1.at(t)).max(0.0) + 2.0 * cross.at(t) * g + k_phi2.at(t)
    };
    let int_k_phi = integrate(&k_phi, 0.0, t_end);
    let weighted_integral = *decay_integrals(&|t| -k_phi(t), &|_| 1.0, 0.0, t_end, PANELS).last().unwrap_or(&0.0);
    let g = sup_grad.max();
    let (c_t, r_opt) = inf_over_r(weighted_integral, g);
    let sup = sup_phi.max();
    let contraction_factor = 2.0 * sup * (int_k_phi + integrate(&|t| sup_grad.at(t), 0.0, t_end)).exp();
    if !(c_t.is_finite() && contraction_factor.is_finite()) {
        return Err(Error::arg("φ constants are not finite on the scan region"));
    }
    Ok(PhiConstants {
        t_end,
        region: region.label.clone(),
        admissible,
        inf_phi,
        inf_phi_at,
        boundary_margin,
        boundary_margin_at,
        sup_phi: sup,
        sup_grad_phi: g,
        k_phi1: sample(t_end, |t| k_phi1.at(t)),
        k_phi2: sample(t_end, |t| k_phi2.at(t)),
        k_phi: sample(t_end, k_phi),
        int_k_phi,
        weighted_integral,
        c_t,
        r_opt,
        talagrand_constant: sup * sup * c_t,
        contraction_factor,
    })
}

/// `φ²` with derivatives from those of `φ`.
struct Phi2<'a>(&'a dyn ScalarField);

impl ScalarField for Phi2<'_> {
    fn value(&self, t: f64, x: &DVector<f64>) -> f64 {
        self.0.value(t, x).powi(2)
    }

    fn gradient(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.0.gradient(t, x) * (2.0 * self.0.value(t, x))
    }

    fn hessian(&self, t: f64, x: &DVector<f64>) -> nalgebra::DMatrix<f64> {
        let g = self.0.gradient(t, x);
        self.0.hessian(t, x) * (2.0 * self.0.value(t, x)) + &g * g.transpose() * 2.0
    }

    fn dt(&self, t: f64, x: &DVector<f64>) -> f64 {
        2.0 * self.0.value(t, x) * self.0.dt(t, x)
    }
}
