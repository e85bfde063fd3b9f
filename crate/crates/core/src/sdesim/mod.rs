//! Reflecting `L_t`-diffusions with a `g_t`-orthonormal frame and local time.
//!
//! Paths are driven by counter-based noise (see [`crate::rng`]), so a path is a
//! pure function of `(flow, x0, u0, spec, path_index)` and perturbed runs reuse
//! the exact Brownian increments of the unperturbed run.

mod scheme;

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{gram_schmidt, orthonormality_defect};
use crate::metricflow::MetricFlow;
use crate::rng::{crossing_uniforms, PathKey, Purpose, StepStream};

pub(crate) use scheme::{
    bridge_crossing_probability, framed_step, ito_drift, normal_projector, point_step, scaled_coefficients,
};

/// Time grid, seed and scheme options shared by every path of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub t_end: f64,
    pub steps: usize,
    pub seed: u64,
    /// Gram–Schmidt in `g_{s_{k+1}}` after every this many steps (0 = never).
    pub renorm_every: usize,
    /// Flag Brownian-bridge boundary crossings between grid points in `crossed`.
    pub detect_crossings: bool,
}

impl SimSpec {
    pub fn new(t_end: f64, steps: usize, seed: u64) -> Self {
        Self { t_end, steps, seed, renorm_every: 16, detect_crossings: false }
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Grid index of time `t`, or an argument error when `t` is off the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let r = t / self.dt();
        let k = r.round();
        if (r - k).abs() > 1e-9 * (1.0 + r.abs()) || k < 0.0 || k as usize > self.steps {
            return Err(Error::arg(format!("time {t} is not on the grid of step {}", self.dt())));
        }
        Ok(k as usize)
    }

    pub(crate) fn validate(&self, flow: &dyn MetricFlow) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::arg("steps must be at least 1"));
        }
        if !(self.t_end > 0.0) || !(self.t_end < flow.horizon()) {
            return Err(Error::arg(format!(
                "T = {} must lie in (0, {}) for flow `{}`",
                self.t_end,
                flow.horizon(),
                flow.name()
            )));
        }
        Ok(())
    }
}

/// One discretized trajectory on the grid `s_k = kΔ`, `k = 0..=N`.
///
/// Step `k` goes from `s_k` to `s_{k+1}`; `db[k]`, `dl[k]`, `hit[k]` and
/// `crossed[k]` belong to it. Positions and frames are stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct FramedPath {
    pub dim: usize,
    pub dt: f64,
    pub seed: u64,
    pub path_index: u64,
    xs: Vec<f64>,
    us: Vec<f64>,
    dbs: Vec<f64>,
    pub dl: Vec<f64>,
    pub hit: Vec<bool>,
    /// Set when a bridge between two interior grid points crossed `∂M`.
    pub crossed: Vec<bool>,
}

impl FramedPath {
    pub fn steps(&self) -> usize {
        self.dl.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn x(&self, k: usize) -> DVector<f64> {
        let d = self.dim;
        DVector::from_column_slice(&self.xs[k * d..(k + 1) * d])
    }

    /// Frame at `s_k`; columns are the frame vectors.
    pub fn u(&self, k: usize) -> DMatrix<f64> {
        let d2 = self.dim * self.dim;
        DMatrix::from_column_slice(self.dim, self.dim, &self.us[k * d2..(k + 1) * d2])
    }

    pub fn db(&self, k: usize) -> DVector<f64> {
        let d = self.dim;
        DVector::from_column_slice(&self.dbs[k * d..(k + 1) * d])
    }

    pub fn x_end(&self) -> DVector<f64> {
        self.x(self.steps())
    }

    pub fn local_time(&self) -> f64 {
        crate::stats::pairwise_sum(&self.dl)
    }

    /// `max_k ‖u[k]ᵀ g_{s_k}(x[k]) u[k] − I‖`.
    pub fn max_orthonormality_defect(&self, flow: &dyn MetricFlow) -> f64 {
        (0..=self.steps())
            .map(|k| orthonormality_defect(&self.u(k), &flow.metric(self.time(k), &self.x(k))))
            .fold(0.0, f64::max)
    }

    /// Writes the CSV trace `k, s_k, x…, u (row-major)…, dB…, dl`. The final
    /// row has empty `dB` and `dl` fields.
    pub fn write_trace<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim;
        let mut header = vec!["k".to_string(), "s_k".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        for i in 1..=d {
            header.extend((1..=d).map(|j| format!("u{i}{j}")));
        }
        header.extend((1..=d).map(|i| format!("dB{i}")));
        header.push("dl".into());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..=self.steps() {
            let mut row = vec![k.to_string(), format!("{:e}", self.time(k))];
            row.extend(self.x(k).iter().map(|v| format!("{v:e}")));
            let u = self.u(k);
            for i in 0..d {
                row.extend((0..d).map(|j| format!("{:e}", u[(i, j)])));
            }
            if k < self.steps() {
                row.extend(self.db(k).iter().map(|v| format!("{v:e}")));
                row.push(format!("{:e}", self.dl[k]));
            } else {
                row.extend(std::iter::repeat_n(String::new(), d + 1));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// A Cameron–Martin direction: piecewise linear `h` with `h(0) = 0` and slope
/// `h′[k]` on step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CMVector {
    pub dh: Vec<DVector<f64>>,
    /// `h′[k]` depends only on `dB[0..k]`.
    pub adapted: bool,
}

impl CMVector {
    /// `h(t) = t·w`.
    pub fn linear(w: &DVector<f64>, steps: usize) -> Self {
        Self { dh: vec![w.clone(); steps], adapted: true }
    }

    pub fn zero(dim: usize, steps: usize) -> Self {
        Self::linear(&DVector::zeros(dim), steps)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { dh: self.dh.iter().map(|v| v * a).collect(), adapted: self.adapted }
    }

    /// `h(s_k)` for `k = 0..=N`.
    pub fn values(&self, dt: f64) -> Vec<DVector<f64>> {
        let dim = self.dh.first().map_or(0, |v| v.len());
        let mut out = Vec::with_capacity(self.dh.len() + 1);
        let mut acc = DVector::zeros(dim);
        out.push(acc.clone());
        for v in &self.dh {
            acc += v * dt;
            out.push(acc.clone());
        }
        out
    }

    /// `‖h‖²_{H₀} = Σ|h′[k]|²Δ`.
    pub fn norm2(&self, dt: f64) -> f64 {
        self.dh.iter().map(|v| v.norm_squared()).sum::<f64>() * dt
    }
}

/// `u0 = L⁻ᵀ` from the Cholesky factor `g = L Lᵀ`, so `u0ᵀ g u0 = I`.
pub fn initial_frame(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let g = flow.metric(t, x);
    let l = g.cholesky().ok_or_else(|| Error::numeric("metric is not positive definite"))?.l();
    l.transpose().try_inverse().ok_or_else(|| Error::numeric("singular metric factor"))
}

pub(crate) fn check_start(flow: &dyn MetricFlow, x0: &DVector<f64>, u0: &DMatrix<f64>) -> Result<()> {
    if x0.len() != flow.dim() || u0.nrows() != flow.dim() || u0.ncols() != flow.dim() {
        return Err(Error::arg("x0/u0 do not match the flow dimension"));
    }
    if !flow.in_chart(x0) {
        return Err(Error::Domain { flow: flow.name().to_string(), point: x0.iter().cloned().collect() });
    }
    if let Some(b) = flow.boundary() {
        if b.value(0.0, x0) < -1e-12 {
            return Err(Error::arg("x0 lies outside M"));
        }
    }
    let defect = orthonormality_defect(u0, &flow.metric(0.0, x0));
    if defect > 1e-8 {
        return Err(Error::arg(format!("u0 is not g_0-orthonormal (defect {defect:.2e})")));
    }
    Ok(())
}

/// Simulates one path with an extra drift `√2 u b_k` where `b_k = extra(k, x_k, u_k)`
/// is given in frame coordinates. Both [`simulate_path`] and
/// [`simulate_perturbed`] are special cases.
pub fn simulate_driven<F>(
    flow: &dyn MetricFlow,
    x0: &DVector<f64>,
    u0: &DMatrix<f64>,
    spec: &SimSpec,
    path_index: u64,
    extra: F,
) -> Result<FramedPath>
where
    F: Fn(usize, &DVector<f64>, &DMatrix<f64>) -> Option<DVector<f64>>,
{
    spec.validate(flow)?;
    check_start(flow, x0, u0)?;
    let d = flow.dim();
    let n = spec.steps;
    let dt = spec.dt();
    let key = PathKey::new(spec.seed, path_index);
    let mut stream = StepStream::new(key, Purpose::Noise, d);
    let crossing_u = if spec.detect_crossings && flow.boundary().is_some() {
        crossing_uniforms(key, n)
    } else {
        Vec::new()
    };
    let sd = dt.sqrt();
    let mut path = FramedPath {
        dim: d,
        dt,
        seed: spec.seed,
        path_index,
        xs: Vec::with_capacity((n + 1) * d),
        us: Vec::with_capacity((n + 1) * d * d),
        dbs: Vec::with_capacity(n * d),
        dl: Vec::with_capacity(n),
        hit: Vec::with_capacity(n),
        crossed: Vec::with_capacity(n),
    };
    path.xs.extend_from_slice(x0.as_slice());
    path.us.extend_from_slice(u0.as_slice());
    let mut x = x0.clone();
    let mut u = u0.clone();
    let mut buf = vec![0.0; d];
    for k in 0..n {
        stream.normals(k, &mut buf);
        let db = DVector::from_iterator(d, buf.iter().map(|z| z * sd));
        let t = k as f64 * dt;
        let b = extra(k, &x, &u);
        let out = scheme::framed_step(flow, t, dt, &x, &u, &db, b.as_ref(), 1.0).map_err(|e| match e {
            Error::Truncation { .. } => Error::Truncation { index: k + 1 },
            other => other,
        })?;
        let mut u_next = out.u;
        if spec.renorm_every > 0 && (k + 1) % spec.renorm_every == 0 {
            u_next = gram_schmidt(&u_next, &flow.metric(t + dt, &out.x))?;
        }
        let crossed = !out.hit
            && !crossing_u.is_empty()
            && crossing_u[k] <= bridge_crossing_probability(flow, t, dt, &x, &out.x);
        path.xs.extend_from_slice(out.x.as_slice());
        path.us.extend_from_slice(u_next.as_slice());
        path.dbs.extend_from_slice(db.as_slice());
        path.dl.push(out.dl);
        path.hit.push(out.hit);
        path.crossed.push(crossed);
        x = out.x;
        u = u_next;
    }
    Ok(path)
}

/// The reflecting `L_t`-diffusion with its frame.
pub fn simulate_path(
    flow: &dyn MetricFlow,
    x0: &DVector<f64>,
    u0: &DMatrix<f64>,
    spec: &SimSpec,
    path_index: u64,
) -> Result<FramedPath> {
    simulate_driven(flow, x0, u0, spec, path_index, |_, _, _| None)
}

/// The quasi-invariant flow: extra drift `ε√2 u h′`, same Brownian increments.
pub fn simulate_perturbed(
    flow: &dyn MetricFlow,
    x0: &DVector<f64>,
    u0: &DMatrix<f64>,
    h: &CMVector,
    eps: f64,
    spec: &SimSpec,
    path_index: u64,
) -> Result<FramedPath> {
    if h.dh.len() != spec.steps {
        return Err(Error::arg("Cameron-Martin vector does not match the grid"));
    }
    if eps == 0.0 {
        return simulate_path(flow, x0, u0, spec, path_index);
    }
    simulate_driven(flow, x0, u0, spec, path_index, |k, _, _| Some(&h.dh[k] * eps))
}

/// `log R = Σ⟨β_k, dB_k⟩ − ½Σ|β_k|²Δ`.
pub fn girsanov_log_weight(path: &FramedPath, beta: &[DVector<f64>]) -> Result<f64> {
    if beta.len() != path.steps() {
        return Err(Error::arg("beta does not match the grid"));
    }
    let terms: Vec<f64> = beta
        .iter()
        .enumerate()
        .map(|(k, b)| b.dot(&path.db(k)) - 0.5 * b.norm_squared() * path.dt)
        .collect();
    Ok(crate::stats::pairwise_sum(&terms))
}

/// `R = exp(Σ⟨β_k, dB_k⟩ − ½Σ|β_k|²Δ)`, accumulated in log space.
pub fn girsanov_weight(path: &FramedPath, beta: &[DVector<f64>]) -> Result<f64> {
    girsanov_log_weight(path, beta).map(f64::exp)
}
