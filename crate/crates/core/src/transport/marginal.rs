//! One-dimensional marginal inequalities with the quantile coupling.

use nalgebra::DVector;
use serde::Serialize;

use super::constants::InequalityConstants;
use super::Outcome;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::metricflow::{BoundFn, MetricFlow};

/// Intervals of the spatial grid.
const Y_INTERVALS: usize = 1 << 15;
/// Midpoint nodes of the quantile integral.
const QUANTILE_NODES: usize = 10_000;
/// Half-width of the window in standard deviations.
const WINDOW_SD: f64 = 12.0;

/// Transition law `P_{S,T}(x, ·)` of `dX = √2 dB − λX dt` on `ℝ` or, with
/// reflection at 0, on `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TransitionLaw {
    Gaussian { mean: f64, var: f64 },
    /// Density `φ(y; m, v) + φ(y; −m, v)` on `y ≥ 0`.
    ReflectedGaussian { mean: f64, var: f64 },
}

impl TransitionLaw {
    /// Mean `x e^{−λτ}` and variance `(1 − e^{−2λτ})/λ` (`2τ` when `λ = 0`), `τ = t − s`.
    pub fn ou(x: f64, lambda: f64, tau: f64, reflected: bool) -> Result<Self> {
        if !(tau > 0.0) || !lambda.is_finite() {
            return Err(Error::arg("need t > s and a finite rate"));
        }
        if reflected && x < 0.0 {
            return Err(Error::arg("the start must lie in [0, ∞)"));
        }
        let mean = x * (-lambda * tau).exp();
        let var = if lambda.abs() * tau < 1e-8 { 2.0 * tau * (1.0 - lambda * tau) } else { -(-2.0 * lambda * tau).exp_m1() / lambda };
        Ok(if reflected { Self::ReflectedGaussian { mean, var } } else { Self::Gaussian { mean, var } })
    }

    /// Recognizes a one-dimensional flat flow with drift `−λy` and no boundary
    /// or the boundary `{y = 0}`.
    pub fn for_flow(flow: &dyn MetricFlow, x: f64, s: f64, t: f64) -> Result<Self> {
        if flow.dim() != 1 {
            return Err(Error::arg("the marginal check needs a one-dimensional flow"));
        }
        let probe = |y: f64| DVector::from_element(1, y);
        let lambda = -flow.drift(s, &probe(1.0))[0];
        for tt in [s, 0.5 * (s + t), t] {
            for y in [0.0, 0.3, 1.0, 2.5, 7.0] {
                let g = flow.metric(tt, &probe(y))[(0, 0)];
                let z = flow.drift(tt, &probe(y))[0];
                if (g - 1.0).abs() > 1e-12 || (z + lambda * y).abs() > 1e-12 * (1.0 + y.abs()) {
                    return Err(Error::arg(format!(
                        "flow `{}` has no closed-form transition law (needs g = 1, Z = −λy)",
                        flow.name()
                    )));
                }
            }
        }
        let reflected = match flow.boundary() {
            None => false,
            Some(b) => {
                if [0.0, 0.5, 2.0].iter().any(|&y| (b.value(s, &probe(y)) - y).abs() > 1e-12) {
                    return Err(Error::arg("only the boundary {y = 0} has a closed-form law"));
                }
                true
            }
        };
        Self::ou(x, lambda, t - s, reflected)
    }

    pub fn density(&self, y: f64) -> f64 {
        let phi = |m: f64, v: f64| (-(y - m) * (y - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        match *self {
            Self::Gaussian { mean, var } => phi(mean, var),
            Self::ReflectedGaussian { mean, var } => {
                if y < 0.0 {
                    0.0
                } else {
                    phi(mean, var) + phi(-mean, var)
                }
            }
        }
    }

    fn window(&self) -> (f64, f64) {
        match *self {
            Self::Gaussian { mean, var } => (mean - WINDOW_SD * var.sqrt(), mean + WINDOW_SD * var.sqrt()),
            Self::ReflectedGaussian { mean, var } => (0.0, mean.abs() + WINDOW_SD * var.sqrt()),
        }
    }
}

/// Density `p` and tilted density `p·f` on a uniform grid.
struct Grid {
    ys: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl Grid {
    /// Widens the window until the tilted density is negligible at both ends.
    fn new(law: &TransitionLaw, f: &dyn Fn(f64) -> f64) -> Result<Self> {
        let (mut lo, mut hi) = law.window();
        let lower_fixed = matches!(law, TransitionLaw::ReflectedGaussian { .. });
        for _ in 0..12 {
            let h = (hi - lo) / Y_INTERVALS as f64;
            let ys: Vec<f64> = (0..=Y_INTERVALS).map(|i| lo + i as f64 * h).collect();
            let p: Vec<f64> = ys.iter().map(|&y| law.density(y)).collect();
            let mut q = Vec::with_capacity(ys.len());
            for (&y, &py) in ys.iter().zip(&p) {
                let fy = f(y);
                if !(fy >= 0.0) || !fy.is_finite() {
                    return Err(Error::arg(format!("tilt must be finite and nonnegative, got f({y}) = {fy}")));
                }
                q.push(py * fy);
            }
            let peak = q.iter().copied().fold(0.0, f64::max);
            if !(peak > 0.0) {
                return Err(Error::arg("tilt vanishes on the support"));
            }
            let tol = 1e-17 * peak;
            let left_ok = lower_fixed || q[0] <= tol;
            let right_ok = q[Y_INTERVALS] <= tol;
            if left_ok && right_ok {
                return Ok(Self { ys, p, q });
            }
            let w = 0.5 * (hi - lo);
            if !left_ok {
                lo -= w;
            }
            if !right_ok {
                hi += w;
            }
        }
        Err(Error::numeric("tilted law is not concentrated on a finite window"))
    }

    fn step(&self) -> f64 {
        self.ys[1] - self.ys[0]
    }

    /// Trapezoid rule for samples `v` on every `stride`-th node.
    fn integral(&self, v: impl Fn(usize) -> f64, stride: usize) -> f64 {
        let h = self.step() * stride as f64;
        let n = Y_INTERVALS / stride;
        let mut acc = 0.5 * (v(0) + v(n * stride));
        for i in 1..n {
            acc += v(i * stride);
        }
        acc * h
    }
}

fn cumulative(v: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    c.push(0.0);
    for i in 1..v.len() {
        acc += 0.5 * (v[i - 1] + v[i]) * (ys[i] - ys[i - 1]);
        c.push(acc);
    }
    let total = acc;
    c.iter_mut().for_each(|x| *x /= total);
    c
}

/// Quantiles at the midpoints `(j + ½)/m` by linear interpolation of the CDF.
fn quantiles(cdf: &[f64], ys: &[f64], m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m);
    let mut i = 0;
    for j in 0..m {
        let u = (j as f64 + 0.5) / m as f64;
        while i + 2 < cdf.len() && cdf[i + 1] < u {
            i += 1;
        }
        let (c0, c1) = (cdf[i], cdf[i + 1]);
        let w = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
        out.push(ys[i] + w * (ys[i + 1] - ys[i]));
    }
    out
}

fn w2_on(ys: &[f64], p: &[f64], q: &[f64], m: usize) -> f64 {
    let qp = quantiles(&cumulative(p, ys), ys, m);
    let qq = quantiles(&cumulative(q, ys), ys, m);
    let sq: Vec<f64> = qp.iter().zip(&qq).map(|(a, b)| (a - b) * (a - b)).collect();
    crate::stats::pairwise_sum(&sq) / m as f64
}

/// `W₂(f·μ / μ(f), μ)²` in one dimension, `W₂² = ∫_0^1 |F_μ^{−1} − F_{fμ}^{−1}|² du`.
///
/// Returns the estimate and its quadrature error, the sum of the changes
/// under doubling the quantile nodes and under halving the spatial grid.
/// An error above `1e-6 max(1, W₂²)` is a numeric error.
pub fn quantile_w2(law: &TransitionLaw, f: &dyn Fn(f64) -> f64) -> Result<(f64, f64)> {
    let grid = Grid::new(law, f)?;
    w2_with_error(&grid)
}

fn w2_with_error(grid: &Grid) -> Result<(f64, f64)> {
    let base = w2_on(&grid.ys, &grid.p, &grid.q, QUANTILE_NODES);
    let fine = w2_on(&grid.ys, &grid.p, &grid.q, 2 * QUANTILE_NODES);
    let every_other = |v: &[f64]| v.iter().step_by(2).copied().collect::<Vec<_>>();
    let coarse = w2_on(&every_other(&grid.ys), &every_other(&grid.p), &every_other(&grid.q), QUANTILE_NODES);
    let err = (fine - base).abs() + (coarse - base).abs();
    if !(base.is_finite() && err <= 1e-6 * base.max(1.0)) {
        return Err(Error::numeric(format!("quantile W₂ did not converge (W₂² = {base}, change {err})")));
    }
    Ok((base, err))
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalReport {
    pub law: TransitionLaw,
    /// `μ(f)`; the checks use `f / μ(f)`.
    pub normalizer: f64,
    /// `W_{2,T}(P, fP)²` and its quadrature error.
    pub w2_squared: f64,
    pub quadrature_error: f64,
    /// `P(f log f)` and `P(|∇f|²/f)` for the normalized `f`.
    pub entropy: f64,
    pub fisher: f64,
    /// `∫_S^T e^{−2∫_u^T K} du`.
    pub c_int: f64,
    /// `W² ≤ 4 c_int P(f log f)`.
    pub entropy_form: Outcome,
    /// `W² ≤ 4 c_int² P(|∇f|²/f)`.
    pub gradient_form: Outcome,
    pub pass: bool,
}

/// Both marginal inequalities for the law `P_{S,T}(x, ·)` and an
/// unnormalized nonnegative tilt `f` (only `f(t, ·)` at `t = T` is read).
///
/// The allowance is ten times the quadrature error of `W₂²` plus `1e-9(1 + rhs)`;
/// Gaussian tilts of the flat and OU laws saturate both inequalities.
pub fn check_marginal_transport(
    law: &TransitionLaw,
    k: &BoundFn,
    f: &dyn ScalarField,
    s: f64,
    t: f64,
) -> Result<MarginalReport> {
    let c_int = InequalityConstants::from_bound(k, s, t)?.c_k_terminal;
    let probe = |y: f64| DVector::from_element(1, y);
    let fv = |y: f64| f.value(t, &probe(y));
    let grid = Grid::new(law, &fv)?;
    let normalizer = grid.integral(|i| grid.q[i], 1);
    let fs: Vec<f64> = grid.ys.iter().map(|&y| fv(y) / normalizer).collect();
    let grads: Vec<f64> = grid.ys.iter().map(|&y| f.gradient(t, &probe(y))[0] / normalizer).collect();
    let entropy = grid
        .integral(|i| if fs[i] > 0.0 { grid.p[i] * fs[i] * fs[i].ln() } else { 0.0 }, 1)
        .max(0.0);
    let fisher = grid.integral(|i| if fs[i] > 0.0 { grid.p[i] * grads[i] * grads[i] / fs[i] } else { 0.0 }, 1);
    let (w2, err) = w2_with_error(&grid)?;

    let rhs4 = 4.0 * c_int * entropy;
    let rhs5 = 4.0 * c_int * c_int * fisher;
    let entropy_form = Outcome::new(w2, rhs4, 0.0, 10.0 * err + 1e-9 * (1.0 + rhs4));
    let gradient_form = Outcome::new(w2, rhs5, 0.0, 10.0 * err + 1e-9 * (1.0 + rhs5));
    Ok(MarginalReport {
        law: *law,
        normalizer,
        w2_squared: w2,
        quadrature_error: err,
        entropy,
        fisher,
        c_int,
        pass: entropy_form.pass && gradient_form.pass,
        entropy_form,
        gradient_form,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub eps: f64,
    /// `μ(f)` removed before the check.
    pub centering: f64,
    /// `μ(f²)` and `μ(|∇f|²)` of the centered `f`.
    pub variance: f64,
    pub gradient_energy: f64,
    /// `W₂((1 + εf)μ, μ)`.
    pub w2: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

/// The small-perturbation inequality
/// `μ(f²) ≤ ε⁻¹ μ(|∇f|²)^{1/2} W₂(f_ε μ, μ) + ‖Hess f‖_∞ (2ε)⁻¹ W₂(f_ε μ, μ)²`
/// for `f_ε = 1 + εf` and centered `f`.
pub fn lemma_reproduction(law: &TransitionLaw, f: &dyn ScalarField, hess_sup: f64, eps: f64) -> Result<LemmaReport> {
    if !(eps > 0.0) || !(hess_sup >= 0.0) {
        return Err(Error::arg("need ε > 0 and a nonnegative Hessian bound"));
    }
    let probe = |y: f64| DVector::from_element(1, y);
    let base = Grid::new(law, &|_| 1.0)?;
    let raw: Vec<f64> = base.ys.iter().map(|&y| f.value(0.0, &probe(y))).collect();
    let centering = base.integral(|i| base.p[i] * raw[i], 1) / base.integral(|i| base.p[i], 1);
    let fc = |y: f64| f.value(0.0, &probe(y)) - centering;
    if base.ys.iter().any(|&y| 1.0 + eps * fc(y) < 0.0) {
        return Err(Error::arg(format!("1 + εf takes negative values for ε = {eps}")));
    }
    let variance = base.integral(|i| base.p[i] * (raw[i] - centering).powi(2), 1);
    let gradient_energy = base.integral(|i| base.p[i] * f.gradient(0.0, &probe(base.ys[i]))[0].powi(2), 1);
    let (w2sq, _) = quantile_w2(law, &|y| 1.0 + eps * fc(y))?;
    let w2 = w2sq.sqrt();
    let rhs = gradient_energy.sqrt() * w2 / eps + hess_sup * w2sq / (2.0 * eps);
    Ok(LemmaReport {
        eps,
        centering,
        variance,
        gradient_energy,
        w2,
        rhs,
        margin: rhs - variance,
        pass: variance <= rhs * (1.0 + 1e-6),
    })
}
