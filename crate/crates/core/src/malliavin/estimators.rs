//! Integration by parts, the Bismut formula and the gradient formula.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{columns, damped_gradient_with, path_factors, CylFunc, McSetup};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::metricflow::MetricFlow;
use crate::sdesim::{initial_frame, simulate_path, simulate_perturbed, CMVector};
use crate::stats::{mc_reduce, paired_difference, Summary};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone)]
pub struct IbpOptions {
    /// Perturbation sizes; the first two are combined by Richardson
    /// extrapolation of central differences.
    pub eps: Vec<f64>,
    /// Bias allowance coefficient: `c_Δ = coef · (Δ + ε₁²) · (1 + |b|)`
    /// without boundary and `coef · √Δ · (1 + |b|)` with one.
    pub bias_coef: f64,
}

impl Default for IbpOptions {
    fn default() -> Self {
        Self { eps: vec![0.1, 0.05], bias_coef: 1.0 }
    }
}

/// The three sides of the integration by parts formula.
#[derive(Debug, Clone, Serialize)]
pub struct IbpReport {
    /// (a) derivative of `ε ↦ E F(X^{ε,h})`.
    pub flow_fd: Summary,
    /// (b) `√2 E D⁰_h F`.
    pub damped: Summary,
    /// (c) `E[F Σ⟨h′, dB⟩]`.
    pub girsanov: Summary,
    /// Paired differences a−b, a−c, b−c.
    pub diffs: [Summary; 3],
    pub allowance: f64,
    pub pass: bool,
}

fn central_difference(fp: f64, fm: f64, eps: f64) -> f64 {
    (fp - fm) / (2.0 * eps)
}

/// All three sides of `√2 E D⁰_h F = E[F Σ⟨h′, dB⟩] = ∂_ε E F(X^{ε,h})|₀`
/// on one ensemble with common random numbers.
pub fn ibp_three_way(
    flow: &dyn MetricFlow,
    x0: &DVector<f64>,
    f: &CylFunc,
    h: &CMVector,
    opts: &IbpOptions,
    setup: &McSetup,
) -> Result<IbpReport> {
    setup.check()?;
    if opts.eps.is_empty() || opts.eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::arg("eps_list must hold positive values"));
    }
    if h.dh.len() != setup.spec.steps {
        return Err(Error::arg("Cameron-Martin vector does not match the grid"));
    }
    let u0 = initial_frame(flow, 0.0, x0)?;
    let spec = &setup.spec;
    let eps: Vec<f64> = opts.eps.iter().take(2).copied().collect();
    let rows = setup.per_path(|i| {
        let base = simulate_path(flow, x0, &u0, spec, i)?;
        let f0 = f.eval_path(&base)?;
        let mut diffs = Vec::with_capacity(eps.len());
        for &e in &eps {
            let fp = f.eval_path(&simulate_perturbed(flow, x0, &u0, h, e, spec, i)?)?;
            let fm = f.eval_path(&simulate_perturbed(flow, x0, &u0, h, -e, spec, i)?)?;
            diffs.push(central_difference(fp, fm, e));
        }
        let a = match diffs.as_slice() {
            [d1, d2] => {
                let (e1, e2) = (eps[0] * eps[0], eps[1] * eps[1]);
                (e1 * d2 - e2 * d1) / (e1 - e2)
            }
            [d1] => *d1,
            _ => unreachable!(),
        };
        let factors = path_factors(flow, &base, setup.q)?;
        let b = SQRT2 * damped_gradient_with(f, &base, &factors, setup.q_source)?.pair(h)?;
        let noise: f64 = (0..base.steps()).map(|k| h.dh[k].dot(&base.db(k))).sum();
        Ok([a, b, f0 * noise])
    })?;
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let (a, b, c) = (col(0), col(1), col(2));
    let damped = mc_reduce(&b)?;
    let dt = spec.dt();
    let scale = 1.0 + damped.mean.abs();
    let allowance = if flow.boundary().is_some() {
        opts.bias_coef * dt.sqrt() * scale
    } else {
        opts.bias_coef * (dt + eps[0] * eps[0]) * scale
    };
    let diffs = [paired_difference(&a, &b)?, paired_difference(&a, &c)?, paired_difference(&b, &c)?];
    let pass = diffs.iter().all(|s| s.mean.abs() <= 3.0 * s.se + allowance);
    Ok(IbpReport { flow_fd: mc_reduce(&a)?, damped, girsanov: mc_reduce(&c)?, diffs, allowance, pass })
}

/// `ξ(s) = s/T` on the grid `k = 0..=N`.
pub fn xi_linear(steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

/// Both forms of the Bismut formula for `∇P_T f(x0)`.
#[derive(Debug, Clone, Serialize)]
pub struct BelReport {
    /// `(1/√2) E[f(X_T) Σ ξ′(s_k) Q_{0,k} dB_k]`, frame components at `x0`.
    pub weighted: Vec<Summary>,
    /// `E[Q_{0,T} u_Tᵀ df(X_T)]`, frame components at `x0`.
    pub plain: Vec<Summary>,
    /// Component-wise paired difference weighted − plain.
    pub diff: Vec<Summary>,
    /// The weighted and plain estimates as coordinate differentials `u0⁻ᵀ a`.
    pub coord_weighted: Vec<f64>,
    pub coord_plain: Vec<f64>,
    pub agree: bool,
}

/// Bismut–Elworthy–Li estimator of `∇P_T f(x0)` with weight schedule `ξ`
/// given on the grid (`ξ(0) = 0`, `ξ(T) = 1`).
pub fn bel_gradient(
    flow: &dyn MetricFlow,
    x0: &DVector<f64>,
    f: &dyn ScalarField,
    xi: &[f64],
    setup: &McSetup,
) -> Result<BelReport> {
    setup.check()?;
    let spec = &setup.spec;
    let n = spec.steps;
    if xi.len() != n + 1 {
        return Err(Error::arg(format!("weight schedule needs {} grid values, got {}", n + 1, xi.len())));
    }
    if xi[0].abs() > 1e-12 || (xi[n] - 1.0).abs() > 1e-12 {
        return Err(Error::arg(format!("weight schedule must run from 0 to 1, got {} .. {}", xi[0], xi[n])));
    }
    let d = flow.dim();
    let dt = spec.dt();
    let t_end = spec.t_end;
    let u0 = initial_frame(flow, 0.0, x0)?;
    let rows = setup.per_path(|i| {
        let path = simulate_path(flow, x0, &u0, spec, i)?;
        let factors = path_factors(flow, &path, setup.q)?;
        let xt = path.x_end();
        let mut q = DMatrix::<f64>::identity(d, d);
        let mut acc = DVector::zeros(d);
        for k in 0..n {
            let slope = (xi[k + 1] - xi[k]) / dt;
            acc += &q * path.db(k) * slope;
            q = &q * &factors[k];
        }
        let weighted = acc * (f.value(t_end, &xt) / SQRT2);
        let plain = &q * path.u(n).transpose() * f.gradient(t_end, &xt);
        Ok((weighted, plain))
    })?;
    let (w, p): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let (wc, pc) = (columns(&w, d), columns(&p, d));
    let weighted = wc.iter().map(|c| mc_reduce(c)).collect::<Result<Vec<_>>>()?;
    let plain = pc.iter().map(|c| mc_reduce(c)).collect::<Result<Vec<_>>>()?;
    let diff = wc.iter().zip(&pc).map(|(a, b)| paired_difference(a, b)).collect::<Result<Vec<_>>>()?;
    let agree = diff.iter().all(|s| s.mean.abs() <= 3.0 * s.se);
    let to_coord = |s: &[Summary]| -> Result<Vec<f64>> {
        let a = DVector::from_iterator(d, s.iter().map(|x| x.mean));
        let m = u0.transpose().try_inverse().ok_or_else(|| Error::numeric("singular initial frame"))?;
        Ok((m * a).iter().copied().collect())
    };
    Ok(BelReport {
        coord_weighted: to_coord(&weighted)?,
        coord_plain: to_coord(&plain)?,
        weighted,
        plain,
        diff,
        agree,
    })
}

/// Finite-difference gradient in `x0` against the damped-gradient formula.
#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    /// Central differences `∂_j E F`, common random numbers, step `delta`.
    pub fd: Vec<Summary>,
    /// `E[Σ_i Q_{0,t_i} c_i]` mapped to coordinates by `u0⁻ᵀ`.
    pub formula: Vec<Summary>,
    pub diff: Vec<Summary>,
    pub delta: f64,
    pub rel_err: f64,
    pub pass: bool,
}

/// Checks `∇_{x0} E f(X_{t_1}, …, X_{t_n}) = E Σ_i Q_{0,t_i} u_{t_i}⁻¹ ∇_i f`.
pub fn gradient_formula_check(
    flow: &dyn MetricFlow,
    x0: &DVector<f64>,
    f: &CylFunc,
    delta: f64,
    setup: &McSetup,
) -> Result<GradientCheck> {
    setup.check()?;
    if !(delta > 0.0) {
        return Err(Error::arg("finite-difference step must be positive"));
    }
    let d = flow.dim();
    let spec = &setup.spec;
    let mut starts = Vec::with_capacity(2 * d);
    for j in 0..d {
        for s in [1.0, -1.0] {
            let mut y = x0.clone();
            y[j] += s * delta;
            if let Some(b) = flow.boundary() {
                if b.value(0.0, &y) <= 0.0 {
                    return Err(Error::arg("x0 is within the finite-difference step of the boundary"));
                }
            }
            let u = initial_frame(flow, 0.0, &y)?;
            starts.push((y, u));
        }
    }
    let u0 = initial_frame(flow, 0.0, x0)?;
    let to_coord = u0.transpose().try_inverse().ok_or_else(|| Error::numeric("singular initial frame"))?;
    let rows = setup.per_path(|i| {
        let mut fd = DVector::zeros(d);
        for j in 0..d {
            let (yp, up) = &starts[2 * j];
            let (ym, um) = &starts[2 * j + 1];
            let fp = f.eval_path(&simulate_path(flow, yp, up, spec, i)?)?;
            let fm = f.eval_path(&simulate_path(flow, ym, um, spec, i)?)?;
            fd[j] = (fp - fm) / (2.0 * delta);
        }
        let path = simulate_path(flow, x0, &u0, spec, i)?;
        let factors = path_factors(flow, &path, setup.q)?;
        let g = damped_gradient_with(f, &path, &factors, setup.q_source)?;
        Ok((fd, &to_coord * g.initial))
    })?;
    let (a, b): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let (ac, bc) = (columns(&a, d), columns(&b, d));
    let fd = ac.iter().map(|c| mc_reduce(c)).collect::<Result<Vec<_>>>()?;
    let formula = bc.iter().map(|c| mc_reduce(c)).collect::<Result<Vec<_>>>()?;
    let diff = ac.iter().zip(&bc).map(|(x, y)| paired_difference(x, y)).collect::<Result<Vec<_>>>()?;
    let scale = formula.iter().map(|s| s.mean * s.mean).sum::<f64>().sqrt();
    let gap = diff.iter().map(|s| s.mean * s.mean).sum::<f64>().sqrt();
    let rel_err = if scale > 0.0 { gap / scale } else { gap };
    let pass = diff.iter().all(|s| s.mean.abs() <= (0.05 * scale).max(3.0 * s.se));
    Ok(GradientCheck { fd, formula, diff, delta, rel_err, pass })
}
