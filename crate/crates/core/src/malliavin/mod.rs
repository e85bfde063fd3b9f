//! Damped gradient on path space and the estimators built on it.
//!
//! For a cylindrical functional `F = f(X_{t_1}, …, X_{t_n})` the damped
//! gradient has grid derivative
//!
//! ```text
//! D′[k] = Σ_{i: s_k < t_i} Q_{k, t_i} c_i,    c_i = u_{t_i}ᵀ ∂_i f,
//! ```
//!
//! where `c_i` is the frame form of the slot gradient (`u⁻¹ g⁻¹ df = uᵀ df`
//! because `u uᵀ = g⁻¹`). With the convention `dX = √2 u ∘ dB`, the Brownian
//! integrand of `F` is `√2 E[D′ | F_s]`, so the estimators below carry an
//! explicit `√2` wherever `D′` is paired with `dB`.

mod clark;
mod estimators;
mod lsi;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::expr::{slot_vars, Expr};
use crate::field::ScalarField;
use crate::metricflow::MetricFlow;
use crate::multfunc::{lifted_forms, step_factors, QOptions};
use crate::sdesim::{CMVector, FramedPath, SimSpec};

pub use clark::{clark_ocone, ClarkOconeReport, Regression};
pub use estimators::{
    bel_gradient, gradient_formula_check, ibp_three_way, xi_linear, BelReport, GradientCheck, IbpOptions,
    IbpReport,
};
pub use lsi::{dirichlet_and_lsi, LsiReport, Start};

type SlotFn = dyn Fn(&[DVector<f64>]) -> f64 + Send + Sync;
type SlotGrad = dyn Fn(&[DVector<f64>]) -> Vec<DVector<f64>> + Send + Sync;

/// `F(γ) = f(γ_{t_1}, …, γ_{t_n})`, with slot gradients `∂_i f` (coordinate
/// differentials). Without an analytic gradient, central finite differences
/// are used.
#[derive(Clone)]
pub struct CylFunc {
    times: Vec<f64>,
    dim: usize,
    value: Arc<SlotFn>,
    grad: Option<Arc<SlotGrad>>,
    label: String,
}

impl std::fmt::Debug for CylFunc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CylFunc").field("label", &self.label).field("times", &self.times).finish()
    }
}

impl CylFunc {
    /// Slot times must be strictly increasing and non-negative; `t = 0` is
    /// allowed so free-path functionals can read the initial point.
    pub fn new(
        times: Vec<f64>,
        dim: usize,
        value: impl Fn(&[DVector<f64>]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if times.is_empty() || dim == 0 {
            return Err(Error::arg("a cylindrical functional needs at least one slot and dim >= 1"));
        }
        if times[0] < 0.0 || times.windows(2).any(|w| !(w[0] < w[1])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::arg(format!("slot times must be strictly increasing and >= 0: {times:?}")));
        }
        Ok(Self { times, dim, value: Arc::new(value), grad: None, label: "closure".into() })
    }

    pub fn with_gradient(
        mut self,
        grad: impl Fn(&[DVector<f64>]) -> Vec<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// An expression in `p1_1, …, pn_d` (slot `i`, coordinate `j`).
    pub fn parse(src: &str, times: Vec<f64>, dim: usize) -> Result<Self> {
        let names = slot_vars(times.len(), dim);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let expr = Expr::parse(src, &refs)?;
        let label = src.to_string();
        let f = Self::new(times, dim, move |p| {
            let flat: Vec<f64> = p.iter().flat_map(|v| v.iter().copied()).collect();
            expr.eval(&flat)
        })?;
        Ok(f.with_label(label))
    }

    /// `⟨v, γ_t⟩`.
    pub fn linear(t: f64, v: DVector<f64>) -> Result<Self> {
        let dim = v.len();
        let w = v.clone();
        Ok(Self::new(vec![t], dim, move |p| v.dot(&p[0]))?
            .with_gradient(move |_| vec![w.clone()])
            .with_label("linear"))
    }

    /// `f(t, γ_t)` for a scalar field.
    pub fn terminal(t: f64, dim: usize, f: Arc<dyn ScalarField>) -> Result<Self> {
        let g = f.clone();
        Ok(Self::new(vec![t], dim, move |p| f.value(t, &p[0]))?
            .with_gradient(move |p| vec![g.gradient(t, &p[0])])
            .with_label("terminal"))
    }

    pub fn constant(c: f64, times: Vec<f64>, dim: usize) -> Result<Self> {
        let n = times.len();
        Ok(Self::new(times, dim, move |_| c)?
            .with_gradient(move |_| vec![DVector::zeros(dim); n])
            .with_label("constant"))
    }

    /// `φ ∘ F`, with the chain rule applied to the slot gradients.
    pub fn compose(
        &self,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let (inner, inner2) = (self.clone(), self.clone());
        let phi = Arc::new(phi);
        Self {
            times: self.times.clone(),
            dim: self.dim,
            value: Arc::new(move |p| phi(inner.value(p))),
            grad: Some(Arc::new(move |p| {
                let s = dphi(inner2.value(p));
                inner2.gradients(p).into_iter().map(|g| g * s).collect()
            })),
            label: format!("phi({})", self.label),
        }
    }

    /// `a F + b G` on the same slot times.
    pub fn linear_combination(&self, a: f64, other: &CylFunc, b: f64) -> Result<Self> {
        if self.times != other.times || self.dim != other.dim {
            return Err(Error::arg("functionals have different slots"));
        }
        let (f1, g1, f2, g2) = (self.clone(), other.clone(), self.clone(), other.clone());
        Ok(Self {
            times: self.times.clone(),
            dim: self.dim,
            value: Arc::new(move |p| a * f1.value(p) + b * g1.value(p)),
            grad: Some(Arc::new(move |p| {
                f2.gradients(p).into_iter().zip(g2.gradients(p)).map(|(x, y)| x * a + y * b).collect()
            })),
            label: format!("{a}*({}) + {b}*({})", self.label, other.label),
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn value(&self, p: &[DVector<f64>]) -> f64 {
        (self.value)(p)
    }

    /// `∂_i f` for every slot.
    pub fn gradients(&self, p: &[DVector<f64>]) -> Vec<DVector<f64>> {
        match &self.grad {
            Some(g) => g(p),
            None => self.fd_gradients(p),
        }
    }

    /// Central finite-difference slot gradients, step `1e-5·(1+|p_i|)`.
    pub fn fd_gradients(&self, p: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut work: Vec<DVector<f64>> = p.to_vec();
        (0..p.len())
            .map(|i| {
                let h = crate::field::fd_step(&p[i]);
                DVector::from_fn(self.dim, |j, _| {
                    work[i][j] = p[i][j] + h;
                    let fp = self.value(&work);
                    work[i][j] = p[i][j] - h;
                    let fm = self.value(&work);
                    work[i][j] = p[i][j];
                    (fp - fm) / (2.0 * h)
                })
            })
            .collect()
    }

    /// Grid indices of the slots on a grid of step `dt` with `steps` steps.
    pub fn slot_indices(&self, dt: f64, steps: usize) -> Result<Vec<usize>> {
        self.times
            .iter()
            .map(|&t| {
                let r = t / dt;
                let k = r.round();
                if (r - k).abs() > 1e-9 * (1.0 + r.abs()) || k as usize > steps {
                    Err(Error::arg(format!("slot time {t} is not on the grid of step {dt}")))
                } else {
                    Ok(k as usize)
                }
            })
            .collect()
    }

    /// Slot points and value of `F` on a path.
    pub fn evaluate(&self, path: &FramedPath) -> Result<(Vec<DVector<f64>>, f64)> {
        let idx = self.slot_indices(path.dt, path.steps())?;
        let pts: Vec<DVector<f64>> = idx.iter().map(|&k| path.x(k)).collect();
        let v = self.value(&pts);
        Ok((pts, v))
    }

    pub fn eval_path(&self, path: &FramedPath) -> Result<f64> {
        self.evaluate(path).map(|(_, v)| v)
    }
}

/// How `Q_{k, t_i}` is obtained for interior base points `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QSource {
    /// Evolve `Q` afresh from every base index: `O(N²)` products per path.
    Fresh,
    /// The same products accumulated right to left, `w_k = A_k (w_{k+1} + …)`.
    #[default]
    Backward,
    /// `Q_{0,k}⁻¹ Q_{0,t_i}`; fails once a projection has made `Q` singular.
    CachedInverse,
}

/// The damped gradient of `F` along one path.
#[derive(Debug, Clone)]
pub struct DampedGradient {
    /// `D′[k]` on step `k`, `k = 0..N`.
    pub dprime: Vec<DVector<f64>>,
    /// `‖D⁰F‖²_{H₀} = Σ|D′[k]|²Δ`.
    pub h0_norm2: f64,
    /// `Σ_i Q_{0, t_i} c_i`: the initial-point term of the free-path gradient.
    pub initial: DVector<f64>,
    /// Frame slot gradients `c_i`.
    pub slots: Vec<DVector<f64>>,
    pub dt: f64,
}

impl DampedGradient {
    /// `D⁰_h F = Σ⟨D′[k], h′[k]⟩Δ`.
    pub fn pair(&self, h: &CMVector) -> Result<f64> {
        if h.dh.len() != self.dprime.len() {
            return Err(Error::arg(format!(
                "Cameron-Martin vector has {} steps, the gradient {}",
                h.dh.len(),
                self.dprime.len()
            )));
        }
        let terms: Vec<f64> = self.dprime.iter().zip(&h.dh).map(|(a, b)| a.dot(b)).collect();
        Ok(crate::stats::pairwise_sum(&terms) * self.dt)
    }

    /// `‖DF‖²_H = |DF(0)|² + ‖D⁰F‖²_{H₀}` for the free-path gradient.
    pub fn h_norm2(&self) -> f64 {
        self.initial.norm_squared() + self.h0_norm2
    }
}

/// One-step factors `A_k` of `Q` on this path.
pub(crate) fn path_factors(flow: &dyn MetricFlow, path: &FramedPath, opts: QOptions) -> Result<Vec<DMatrix<f64>>> {
    let forms = lifted_forms(flow, path, opts.use_crossings)?;
    step_factors(&forms, path, opts)
}

/// Evaluates `D′` on `path`.
pub fn damped_gradient(
    flow: &dyn MetricFlow,
    f: &CylFunc,
    path: &FramedPath,
    q_source: QSource,
    opts: QOptions,
) -> Result<DampedGradient> {
    let factors = path_factors(flow, path, opts)?;
    damped_gradient_with(f, path, &factors, q_source)
}

/// As [`damped_gradient`] with precomputed factors.
pub fn damped_gradient_with(
    f: &CylFunc,
    path: &FramedPath,
    factors: &[DMatrix<f64>],
    q_source: QSource,
) -> Result<DampedGradient> {
    if f.dim() != path.dim {
        return Err(Error::arg("functional and path dimensions differ"));
    }
    let n = path.steps();
    let d = path.dim;
    let idx = f.slot_indices(path.dt, n)?;
    let pts: Vec<DVector<f64>> = idx.iter().map(|&k| path.x(k)).collect();
    let slots: Vec<DVector<f64>> = f
        .gradients(&pts)
        .into_iter()
        .zip(&idx)
        .map(|(df, &k)| path.u(k).transpose() * df)
        .collect();

    let mut dprime = vec![DVector::zeros(d); n];
    let initial;
    match q_source {
        QSource::Backward => {
            let mut w = DVector::zeros(d);
            for k in (0..n).rev() {
                for (c, &ki) in slots.iter().zip(&idx) {
                    if ki == k + 1 {
                        w += c;
                    }
                }
                w = &factors[k] * &w;
                dprime[k] = w.clone();
            }
            initial = slots.iter().zip(&idx).filter(|(_, &ki)| ki == 0).fold(w, |acc, (c, _)| acc + c);
        }
        QSource::Fresh => {
            for (k, dk) in dprime.iter_mut().enumerate() {
                let mut q = DMatrix::<f64>::identity(d, d);
                for m in k..n {
                    q = &q * &factors[m];
                    for (c, &ki) in slots.iter().zip(&idx) {
                        if ki == m + 1 {
                            *dk += &q * c;
                        }
                    }
                }
            }
            initial = slots
                .iter()
                .zip(&idx)
                .map(|(c, &ki)| {
                    let q = factors[..ki].iter().fold(DMatrix::<f64>::identity(d, d), |q, a| q * a);
                    q * c
                })
                .fold(DVector::zeros(d), |a, b| a + b);
        }
        QSource::CachedInverse => {
            let mut q0 = Vec::with_capacity(n + 1);
            q0.push(DMatrix::<f64>::identity(d, d));
            for a in factors {
                let next = q0.last().expect("non-empty") * a;
                q0.push(next);
            }
            let targets: Vec<DVector<f64>> = slots.iter().zip(&idx).map(|(c, &ki)| &q0[ki] * c).collect();
            for (k, dk) in dprime.iter_mut().enumerate() {
                let inv = q0[k]
                    .clone()
                    .try_inverse()
                    .filter(|m| m.iter().all(|v| v.is_finite()))
                    .ok_or_else(|| Error::numeric(format!("Q_(0,{k}) is singular; use a fresh or backward source")))?;
                for (tq, &ki) in targets.iter().zip(&idx) {
                    if ki > k {
                        *dk += &inv * tq;
                    }
                }
            }
            initial = targets.iter().fold(DVector::zeros(d), |a, b| a + b);
        }
    }
    let sq: Vec<f64> = dprime.iter().map(|v| v.norm_squared()).collect();
    let h0_norm2 = crate::stats::pairwise_sum(&sq) * path.dt;
    Ok(DampedGradient { dprime, h0_norm2, initial, slots, dt: path.dt })
}

/// `D⁰_h F` on one path.
pub fn directional_derivative(
    flow: &dyn MetricFlow,
    f: &CylFunc,
    path: &FramedPath,
    q_source: QSource,
    opts: QOptions,
    h: &CMVector,
) -> Result<f64> {
    damped_gradient(flow, f, path, q_source, opts)?.pair(h)
}

/// Shared Monte Carlo settings for the path-space estimators.
#[derive(Debug, Clone)]
pub struct McSetup {
    pub spec: SimSpec,
    pub n_paths: usize,
    pub exec: Executor,
    pub q: QOptions,
    pub q_source: QSource,
}

impl McSetup {
    pub fn new(spec: SimSpec, n_paths: usize) -> Self {
        Self { spec, n_paths, exec: Executor::serial(), q: QOptions::default(), q_source: QSource::default() }
    }

    pub fn with_exec(mut self, exec: Executor) -> Self {
        self.exec = exec;
        self
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::arg("at least two paths are needed for a standard error"));
        }
        Ok(())
    }

    /// Runs `work(i)` for every path index and collects the results in order.
    pub(crate) fn per_path<T: Send>(&self, work: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        self.exec.map(self.n_paths, |i| work(i as u64)).into_iter().collect()
    }
}

/// Splits per-path vectors into one column per component.
pub(crate) fn columns(rows: &[DVector<f64>], d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

#[cfg(test)]
mod tests;
