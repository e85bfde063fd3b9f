//! The matrix multiplicative functional `Q_{r,t}` along a framed path.
//!
//! `Q` solves `dQ = −Q {R^Z_u dt + II_u dl}` with the normal component removed
//! at every boundary visit (projected scheme), or
//! `dQ = −Q {R^Z_u dt + (ε⁻¹ P_u + II_u) dl}` (penalized scheme). On the grid,
//! `Q_{r,r} = I` and `Q_{r,k+1} = Q_{r,k} A_k` with the one-step factor
//!
//! ```text
//! A_k = exp(−R_u[k] Δ − II_u[k+1] dl[k]) · (I − 1_{hit[k]} P_u[k+1])       projected
//! A_k = exp(−R_u[k] Δ − (II_u[k+1] + ε⁻¹ P_u[k+1]) dl[k])                    penalized
//! ```
//!
//! The boundary terms belong to the post-step point, where the reflected path
//! sits on `∂M`. Because every `Q_{r,·}` is a product of the same factors, the
//! cocycle `Q_{r,t} = Q_{r,s} Q_{s,t}` holds up to rounding. The matrix
//! exponential is the default; [`QIntegrator::Euler`] uses `I − S` instead.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{op_norm, sym};
use crate::metricflow::{ricci_zg_unchecked, CurvatureBounds, MetricFlow};
use crate::sdesim::{normal_projector, FramedPath};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QScheme {
    Projected,
    Penalized(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QIntegrator {
    #[default]
    Exponential,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QOptions {
    pub scheme: QScheme,
    pub integrator: QIntegrator,
    /// Also project at steps whose Brownian bridge crossed `∂M` between two
    /// interior grid points (see `FramedPath::crossed`).
    pub use_crossings: bool,
}

impl Default for QOptions {
    fn default() -> Self {
        Self { scheme: QScheme::Projected, integrator: QIntegrator::Exponential, use_crossings: false }
    }
}

impl QOptions {
    pub fn penalized(eps: f64) -> Self {
        Self { scheme: QScheme::Penalized(eps), ..Self::default() }
    }
}

/// Frame-lifted forms along a path.
#[derive(Debug, Clone)]
pub struct LiftedForms {
    /// `R_u[k] = u[k]ᵀ R^Z(s_k, x[k]) u[k]`, `k = 0..N`.
    pub r_u: Vec<DMatrix<f64>>,
    /// `(II_u[k+1], P_u[k+1])` for the steps `k` that touched `∂M`.
    pub boundary: Vec<Option<(DMatrix<f64>, DMatrix<f64>)>>,
}

/// Computes the lifted forms; boundary data only where a step touched `∂M`
/// (or crossed it, when `use_crossings`).
pub fn lifted_forms(flow: &dyn MetricFlow, path: &FramedPath, use_crossings: bool) -> Result<LiftedForms> {
    let n = path.steps();
    let mut r_u = Vec::with_capacity(n);
    let mut boundary = Vec::with_capacity(n);
    for k in 0..n {
        let (t, x, u) = (path.time(k), path.x(k), path.u(k));
        r_u.push(sym(&(u.transpose() * ricci_zg_unchecked(flow, t, &x) * &u)));
        let touched = path.hit[k] || (use_crossings && path.crossed[k]);
        if touched && flow.boundary().is_some() {
            let (t1, x1, u1) = (path.time(k + 1), path.x(k + 1), path.u(k + 1));
            let ii = sym(&(u1.transpose() * flow.second_fundamental(t1, &x1) * &u1));
            let p = normal_projector(flow, t1, &x1, &u1)?;
            boundary.push(Some((ii, p)));
        } else {
            boundary.push(None);
        }
    }
    Ok(LiftedForms { r_u, boundary })
}

/// `exp(−S)` for symmetric `S`.
pub fn expm_neg_sym(s: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s.nrows();
    let mut diagonal = true;
    for i in 0..d {
        for j in 0..d {
            if i != j && s[(i, j)] != 0.0 {
                diagonal = false;
            }
        }
    }
    if diagonal {
        return DMatrix::from_fn(d, d, |i, j| if i == j { (-s[(i, i)]).exp() } else { 0.0 });
    }
    let e = s.clone().symmetric_eigen();
    let lam = e.eigenvalues.map(|l| (-l).exp());
    &e.eigenvectors * DMatrix::from_diagonal(&lam) * e.eigenvectors.transpose()
}

/// One-step factors `A_k`, `k = 0..N`.
pub fn step_factors(forms: &LiftedForms, path: &FramedPath, opts: QOptions) -> Result<Vec<DMatrix<f64>>> {
    if let QScheme::Penalized(eps) = opts.scheme {
        if !(eps > 0.0) {
            return Err(Error::arg("penalty parameter must be positive"));
        }
    }
    let dt = path.dt;
    let d = path.dim;
    let eye = DMatrix::<f64>::identity(d, d);
    Ok(forms
        .r_u
        .iter()
        .zip(&forms.boundary)
        .enumerate()
        .map(|(k, (r, bd))| {
            let mut s = r * dt;
            let mut proj = None;
            if let Some((ii, p)) = bd {
                s += ii * path.dl[k];
                match opts.scheme {
                    QScheme::Projected => proj = Some(p),
                    QScheme::Penalized(eps) => s += p * (path.dl[k] / eps),
                }
            }
            let a = match opts.integrator {
                QIntegrator::Exponential => expm_neg_sym(&s),
                QIntegrator::Euler => &eye - &s,
            };
            match proj {
                Some(p) => a * (&eye - p),
                None => a,
            }
        })
        .collect())
}

/// `Q_{r,k}` for `k = r..=N`.
#[derive(Debug, Clone)]
pub struct QFunctional {
    pub base: usize,
    pub q: Vec<DMatrix<f64>>,
    pub scheme: QScheme,
    /// `‖Q_{r,k}‖ − exp(−Σ K(s_j)Δ − Σ σ(s_{j+1}) dl_j)` over `j = r..k`.
    pub bound_margin: Vec<f64>,
}

impl QFunctional {
    /// `Q_{r,k}`.
    pub fn at(&self, k: usize) -> &DMatrix<f64> {
        &self.q[k - self.base]
    }

    pub fn last(&self) -> &DMatrix<f64> {
        self.q.last().expect("non-empty")
    }
}

/// Multiplies out `Q_{r,k} = A_r ⋯ A_{k−1}` and the norm-bound margins.
pub fn evolve_from_factors(
    factors: &[DMatrix<f64>],
    path: &FramedPath,
    bounds: &CurvatureBounds,
    r: usize,
    scheme: QScheme,
) -> Result<QFunctional> {
    let n = factors.len();
    if r > n {
        return Err(Error::arg(format!("base index {r} is beyond the grid ({n} steps)")));
    }
    let d = path.dim;
    let mut q = Vec::with_capacity(n - r + 1);
    let mut margin = Vec::with_capacity(n - r + 1);
    let mut cur = DMatrix::<f64>::identity(d, d);
    let mut exponent = 0.0;
    q.push(cur.clone());
    margin.push(0.0);
    for (k, a) in factors.iter().enumerate().skip(r) {
        cur = &cur * a;
        exponent += bounds.k_at(path.time(k)) * path.dt + bounds.sigma_at(path.time(k + 1)) * path.dl[k];
        margin.push(op_norm(&cur) - (-exponent).exp());
        q.push(cur.clone());
    }
    Ok(QFunctional { base: r, q, scheme, bound_margin: margin })
}

/// Convenience: lifted forms, factors and product in one call.
pub fn evolve_q(
    flow: &dyn MetricFlow,
    path: &FramedPath,
    bounds: &CurvatureBounds,
    r: usize,
    opts: QOptions,
) -> Result<QFunctional> {
    let forms = lifted_forms(flow, path, opts.use_crossings)?;
    let factors = step_factors(&forms, path, opts)?;
    evolve_from_factors(&factors, path, bounds, r, opts.scheme)
}

/// The projected scheme from base index `r`.
pub fn evolve_q_projected(
    flow: &dyn MetricFlow,
    path: &FramedPath,
    bounds: &CurvatureBounds,
    r: usize,
) -> Result<QFunctional> {
    evolve_q(flow, path, bounds, r, QOptions::default())
}

/// The penalized scheme with parameter `eps` from base index `r`.
pub fn evolve_q_penalized(
    flow: &dyn MetricFlow,
    path: &FramedPath,
    bounds: &CurvatureBounds,
    r: usize,
    eps: f64,
) -> Result<QFunctional> {
    evolve_q(flow, path, bounds, r, QOptions::penalized(eps))
}

/// `‖Q_{r,t} − Q_{r,s} Q_{s,t}‖` with both sides evolved from their own base
/// index on the same path.
pub fn cocycle_check(
    flow: &dyn MetricFlow,
    path: &FramedPath,
    bounds: &CurvatureBounds,
    opts: QOptions,
    r: usize,
    s: usize,
    t: usize,
) -> Result<f64> {
    if !(r <= s && s <= t && t <= path.steps()) {
        return Err(Error::arg(format!("need r <= s <= t <= N, got ({r}, {s}, {t})")));
    }
    let forms = lifted_forms(flow, path, opts.use_crossings)?;
    let factors = step_factors(&forms, path, opts)?;
    let from_r = evolve_from_factors(&factors, path, bounds, r, opts.scheme)?;
    let from_s = evolve_from_factors(&factors, path, bounds, s, opts.scheme)?;
    Ok(op_norm(&(from_r.at(t) - from_r.at(s) * from_s.at(t))))
}
