//! Minimal geodesics and parallel displacement by shooting.

use nalgebra::{DMatrix, DVector};

use super::{check_domain, norm_g, MetricFlow};
use crate::error::{Error, Result};

/// A geodesic from `x` to `y` under `g_t`, parametrized on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Geodesic {
    pub distance: f64,
    /// Parallel displacement `T_x M → T_y M` in coordinates.
    pub transport: DMatrix<f64>,
    /// Initial velocity; reusable as a warm start for nearby endpoints.
    pub velocity: DVector<f64>,
}

const MAX_SUBSTEPS: usize = 64;
const MIN_SUBSTEPS: usize = 8;
const MAX_NEWTON: usize = 40;
const CONTINUATION: usize = 8;

fn accel(flow: &dyn MetricFlow, t: f64, p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    -flow.christoffel(t, p).contract(v, v)
}

/// Endpoint of the geodesic with initial data `(x, v)` after unit time.
fn shoot(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>, v: &DVector<f64>, m: usize) -> Result<DVector<f64>> {
    let h = 1.0 / m as f64;
    let mut p = x.clone();
    let mut q = v.clone();
    for _ in 0..m {
        let k1p = q.clone();
        let k1q = accel(flow, t, &p, &q);
        let p2 = &p + &k1p * (0.5 * h);
        let q2 = &q + &k1q * (0.5 * h);
        let k2q = accel(flow, t, &p2, &q2);
        let p3 = &p + &q2 * (0.5 * h);
        let q3 = &q + &k2q * (0.5 * h);
        let k3q = accel(flow, t, &p3, &q3);
        let p4 = &p + &q3 * h;
        let q4 = &q + &k3q * h;
        let k4q = accel(flow, t, &p4, &q4);
        p += (k1p + &q2 * 2.0 + &q3 * 2.0 + &q4) * (h / 6.0);
        q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
        if !flow.in_chart(&p) || p.iter().any(|c| !c.is_finite()) {
            return Err(Error::Geodesic { residual: f64::INFINITY });
        }
    }
    Ok(p)
}

/// Transports the identity frame along the geodesic `(x, v)`:
/// `E' = −Γ(γ)(γ', E)`.
fn transport(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>, v: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let d = x.len();
    let h = 1.0 / m as f64;
    let mut p = x.clone();
    let mut q = v.clone();
    let mut e = DMatrix::identity(d, d);
    let rhs = |p: &DVector<f64>, q: &DVector<f64>, e: &DMatrix<f64>| {
        let gam = flow.christoffel(t, p);
        (-gam.contract(q, q), -gam.contract_frame(q, e))
    };
    for _ in 0..m {
        let (k1q, k1e) = rhs(&p, &q, &e);
        let k1p = q.clone();
        let (p2, q2, e2) = (&p + &k1p * (0.5 * h), &q + &k1q * (0.5 * h), &e + &k1e * (0.5 * h));
        let (k2q, k2e) = rhs(&p2, &q2, &e2);
        let (p3, q3, e3) = (&p + &q2 * (0.5 * h), &q + &k2q * (0.5 * h), &e + &k2e * (0.5 * h));
        let (k3q, k3e) = rhs(&p3, &q3, &e3);
        let (p4, q4, e4) = (&p + &q3 * h, &q + &k3q * h, &e + &k3e * h);
        let (k4q, k4e) = rhs(&p4, &q4, &e4);
        p += (k1p + &q2 * 2.0 + &q3 * 2.0 + &q4) * (h / 6.0);
        q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
        e += (k1e + k2e * 2.0 + k3e * 2.0 + k4e) * (h / 6.0);
    }
    e
}

/// Distance `ρ_t(x, y)` and parallel displacement `P^t_{x,y}` along the geodesic.
pub fn geodesic_and_transport(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>, y: &DVector<f64>) -> Result<Geodesic> {
    geodesic_with_guess(flow, t, x, y, None)
}

/// As [`geodesic_and_transport`], starting the shooting iteration from `guess`.
pub fn geodesic_with_guess(
    flow: &dyn MetricFlow,
    t: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    guess: Option<&DVector<f64>>,
) -> Result<Geodesic> {
    check_domain(flow, x)?;
    check_domain(flow, y)?;
    let d = x.len();
    let delta = y - x;
    if flow.christoffel_vanishes() {
        let g = flow.metric(t, x);
        return Ok(Geodesic { distance: norm_g(&g, &delta), transport: DMatrix::identity(d, d), velocity: delta });
    }
    if delta.norm() == 0.0 {
        return Ok(Geodesic { distance: 0.0, transport: DMatrix::identity(d, d), velocity: delta });
    }
    let m = substeps(flow, t, x, &delta);
    let start = guess.cloned().unwrap_or_else(|| delta.clone());
    match newton(flow, t, x, y, start, m) {
        Ok(v) => Ok(finish(flow, t, x, v, m)),
        Err(first) => {
            // Continuation along the coordinate segment for hard endpoint pairs.
            let mut v = delta.clone() * (1.0 / CONTINUATION as f64);
            for stage in 1..=CONTINUATION {
                let target = x + &delta * (stage as f64 / CONTINUATION as f64);
                let scaled = &v * (stage as f64 / (stage - 1).max(1) as f64);
                let guess = if stage == 1 { v.clone() } else { scaled };
                v = newton(flow, t, x, &target, guess, m).map_err(|_| first.clone())?;
            }
            Ok(finish(flow, t, x, v, m))
        }
    }
}

/// RK4 substeps for a geodesic from `x` to `x + delta`: scaled with the
/// bending `|Γ(δ, δ)|` at both ends and the midpoint, so short geodesics between nearby points are cheap.
fn substeps(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>, delta: &DVector<f64>) -> usize {
    let len = delta.norm().max(f64::MIN_POSITIVE);
    let bend = [0.0, 0.5, 1.0]
        .iter()
        .map(|s| x + delta * *s)
        .filter(|p| flow.in_chart(p))
        .map(|p| flow.christoffel(t, &p).contract(delta, delta).norm() / len)
        .fold(0.0, f64::max);
    ((64.0 * bend).ceil() as usize).clamp(MIN_SUBSTEPS, MAX_SUBSTEPS)
}

fn finish(flow: &dyn MetricFlow, t: f64, x: &DVector<f64>, v: DVector<f64>, m: usize) -> Geodesic {
    let transport = transport(flow, t, x, &v, m);
    let distance = norm_g(&flow.metric(t, x), &v);
    Geodesic { distance, transport, velocity: v }
}

fn newton(
    flow: &dyn MetricFlow,
    t: f64,
    x: &DVector<f64>,
    y: &DVector<f64>,
    mut v: DVector<f64>,
    m: usize,
) -> Result<DVector<f64>> {
    let d = x.len();
    let tol = 1e-11 * (1.0 + y.norm());
    let mut end = shoot(flow, t, x, &v, m)?;
    let mut residual = (&end - y).norm();
    for _ in 0..MAX_NEWTON {
        if residual < tol {
            return Ok(v);
        }
        let r = &end - y;
        let eps = 1e-7 * (1.0 + v.norm());
        let mut jac = DMatrix::zeros(d, d);
        for c in 0..d {
            let mut vp = v.clone();
            vp[c] += eps;
            let ep = shoot(flow, t, x, &vp, m)?;
            jac.set_column(c, &((ep - &end) / eps));
        }
        let step = jac.lu().solve(&r).ok_or(Error::Geodesic { residual })?;
        // Damp long steps, then backtrack until the residual decreases.
        let mut scale = (0.5 * (1.0 + v.norm()) / step.norm()).min(1.0);
        let mut accepted = false;
        for _ in 0..12 {
            let trial = &v - &step * scale;
            if let Ok(e) = shoot(flow, t, x, &trial, m) {
                let res = (&e - y).norm();
                if res < residual {
                    v = trial;
                    end = e;
                    residual = res;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if residual < tol {
        return Ok(v);
    }
    Err(Error::Geodesic { residual })
}
