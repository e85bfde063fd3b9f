//! Clark–Ocône representation by regression.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{damped_gradient_with, path_factors, CylFunc, McSetup};
use crate::error::{Error, Result};
use crate::metricflow::MetricFlow;
use crate::sdesim::{initial_frame, simulate_path};
use crate::stats::{mean, pairwise_sum};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Polynomial regression basis in the current position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regression {
    pub degree: usize,
}

impl Default for Regression {
    fn default() -> Self {
        Self { degree: 2 }
    }
}

/// Exponents of all monomials of total degree `<= degree` in `d` variables.
fn monomials(d: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(d: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(d, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|m| m.iter().sum::<usize>());
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ClarkOconeReport {
    pub mean_f: f64,
    pub var_f: f64,
    /// `Σ_k E|ζ[k]|²Δ` with `ζ = √2 E[D′ | F_{s_k}]`.
    pub isometry: f64,
    /// `Var(F) − Σ E|ζ|²Δ`.
    pub isometry_gap: f64,
    /// `E[(F − E F − Σ⟨ζ, dB⟩)²]`.
    pub residual_var: f64,
    /// `residual_var / Var(F)`; zero when `F` is constant.
    pub residual_ratio: f64,
    /// Ensemble mean of `ζ[k]`.
    pub integrand_mean: Vec<Vec<f64>>,
    /// Per step, coefficients on the standardized monomial basis (d × basis, row-major).
    pub coefficients: Vec<Vec<f64>>,
    pub basis_size: usize,
    pub n_paths: usize,
}

/// Projects `√2 D′[k]` onto functions of `X_{s_k}` and checks the
/// martingale representation `F = E F + Σ⟨ζ[k], dB_k⟩` in `L²`.
pub fn clark_ocone(
    flow: &dyn MetricFlow,
    x0: &DVector<f64>,
    f: &CylFunc,
    reg: Regression,
    setup: &McSetup,
) -> Result<ClarkOconeReport> {
    setup.check()?;
    let spec = &setup.spec;
    let (n, d) = (spec.steps, flow.dim());
    let basis = monomials(d, reg.degree);
    let p = basis.len();
    if p >= setup.n_paths {
        return Err(Error::numeric(format!("basis of size {p} needs more than {} paths", setup.n_paths)));
    }
    let u0 = initial_frame(flow, 0.0, x0)?;
    // Per path: F, then per step (x, dB, √2 D′), flattened.
    let rows = setup.per_path(|i| {
        let path = simulate_path(flow, x0, &u0, spec, i)?;
        let factors = path_factors(flow, &path, setup.q)?;
        let g = damped_gradient_with(f, &path, &factors, setup.q_source)?;
        let mut row = Vec::with_capacity(1 + 3 * n * d);
        row.push(f.eval_path(&path)?);
        for k in 0..n {
            row.extend(path.x(k).iter());
            row.extend(path.db(k).iter());
            row.extend(g.dprime[k].iter().map(|v| v * SQRT2));
        }
        Ok(row)
    })?;
    let m = rows.len();
    let fs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mean_f = mean(&fs);
    let var_f = pairwise_sum(&fs.iter().map(|v| (v - mean_f).powi(2)).collect::<Vec<_>>()) / m as f64;
    let at = |r: &[f64], k: usize, part: usize, j: usize| r[1 + k * 3 * d + part * d + j];

    let mut stoch = vec![0.0; m];
    let mut iso = 0.0;
    let mut integrand_mean = Vec::with_capacity(n);
    let mut coefficients = Vec::with_capacity(n);
    for k in 0..n {
        // Standardized features; constant columns other than the intercept are dropped.
        let raw = DMatrix::from_fn(m, p, |r, c| {
            basis[c].iter().enumerate().map(|(j, &e)| at(&rows[r], k, 0, j).powi(e as i32)).product::<f64>()
        });
        let mut keep = vec![0usize];
        let mut shift = vec![0.0];
        let mut scale = vec![1.0];
        for c in 1..p {
            let col: Vec<f64> = raw.column(c).iter().copied().collect();
            let mu = mean(&col);
            let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m as f64).sqrt();
            if sd > 1e-12 * (1.0 + mu.abs()) {
                keep.push(c);
                shift.push(mu);
                scale.push(sd);
            }
        }
        let q = keep.len();
        let x = DMatrix::from_fn(m, q, |r, c| if c == 0 { 1.0 } else { (raw[(r, keep[c])] - shift[c]) / scale[c] });
        let y = DMatrix::from_fn(m, d, |r, j| at(&rows[r], k, 2, j));
        let qr = x.clone().qr();
        let rmat = qr.r();
        let rmax = rmat.diagonal().amax();
        if rmat.diagonal().iter().any(|v| v.abs() <= 1e-10 * rmax) {
            return Err(Error::numeric(format!("regression at step {k} is rank deficient")));
        }
        let qty = qr.q().transpose() * &y;
        let beta = rmat
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::numeric(format!("regression at step {k} failed")))?;
        let fitted = &x * &beta;
        let mut mean_k = vec![0.0; d];
        for r in 0..m {
            let db: f64 = (0..d).map(|j| fitted[(r, j)] * at(&rows[r], k, 1, j)).sum();
            stoch[r] += db;
            for (j, mk) in mean_k.iter_mut().enumerate() {
                *mk += fitted[(r, j)] / m as f64;
            }
        }
        let sq: Vec<f64> = (0..m).map(|r| fitted.row(r).norm_squared()).collect();
        iso += mean(&sq) * spec.dt();
        integrand_mean.push(mean_k);
        let mut full = DMatrix::zeros(p, d);
        for (c, &orig) in keep.iter().enumerate() {
            full.set_row(orig, &beta.row(c));
        }
        coefficients.push(full.transpose().iter().copied().collect());
    }
    let resid: Vec<f64> = fs.iter().zip(&stoch).map(|(v, s)| (v - mean_f - s).powi(2)).collect();
    let residual_var = mean(&resid);
    let residual_ratio = if var_f > 0.0 { residual_var / var_f } else { 0.0 };
    Ok(ClarkOconeReport {
        mean_f,
        var_f,
        isometry: iso,
        isometry_gap: var_f - iso,
        residual_var,
        residual_ratio,
        integrand_mean,
        coefficients,
        basis_size: p,
        n_paths: m,
    })
}
