//! Registry of built-in flows keyed by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{BoundFn, ConformalFlow, CurvatureBounds, Potential, Provenance};
use crate::error::{Error, Result};
use crate::field::FnField;

pub type FlowParams = BTreeMap<String, f64>;

const NAMES: [&str; 7] = [
    "euclid",
    "ou",
    "conformal-euclid",
    "shrinking-sphere",
    "half-space",
    "half-line",
    "disk-exterior",
];

pub fn builtin_names() -> &'static [&'static str] {
    &NAMES
}

struct Params<'a> {
    flow: &'a str,
    map: &'a FlowParams,
    allowed: &'static [&'static str],
}

impl Params<'_> {
    fn get(&self, key: &str, default: f64) -> f64 {
        self.map.get(key).copied().unwrap_or(default)
    }

    fn dim(&self, default: usize) -> Result<usize> {
        let d = self.get("d", default as f64);
        if d < 1.0 || d.fract() != 0.0 || d > 8.0 {
            return Err(Error::Definition(format!("flow `{}`: d must be an integer in 1..=8, got {d}", self.flow)));
        }
        Ok(d as usize)
    }

    fn check(&self) -> Result<()> {
        for k in self.map.keys() {
            if !self.allowed.contains(&k.as_str()) {
                return Err(Error::Definition(format!(
                    "flow `{}` has no parameter `{k}` (expected one of: {})",
                    self.flow,
                    self.allowed.join(", ")
                )));
            }
        }
        Ok(())
    }
}

fn linear_drift(dim: usize, lambda: f64) -> impl Fn(f64, &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync {
    move |_, x| (x * -lambda, DMatrix::from_diagonal_element(dim, dim, -lambda))
}

fn horizon_for_rate(rate: f64, scale: f64) -> f64 {
    if rate < 0.0 {
        scale / -rate
    } else {
        f64::INFINITY
    }
}

/// Length of the shortest path between `x` and `y` avoiding the open unit disk:
/// the segment when it clears the disk, otherwise tangent, arc, tangent.
pub fn disk_exterior_distance(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let d = y - x;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return 0.0;
    }
    let s = (-x.dot(&d) / len2).clamp(0.0, 1.0);
    if (x + &d * s).norm() >= 1.0 {
        return len2.sqrt();
    }
    let (rx, ry) = (x.norm().max(1.0), y.norm().max(1.0));
    let theta = (x.dot(y) / (x.norm() * y.norm())).clamp(-1.0, 1.0).acos();
    let arc = theta - (1.0 / rx).acos() - (1.0 / ry).acos();
    (rx * rx - 1.0).sqrt() + (ry * ry - 1.0).sqrt() + arc.max(0.0)
}

/// Builds a built-in flow.
///
/// | name | parameters | geometry |
/// |---|---|---|
/// | `euclid` | `d` | flat, `Z = 0` |
/// | `ou` | `d`, `lambda` | flat, `Z = −λx` |
/// | `conformal-euclid` | `d`, `a0`, `rate` | `g_t = a(t)² I`, `a = a0(1 + rate·t)` |
/// | `shrinking-sphere` | `r0`, `rate` | round 2-sphere of radius `r(t) = sqrt(r0² − rate·t)`, stereographic chart |
/// | `half-space` | `d`, `lambda` | flat, `M = {x_d ≥ 0}` |
/// | `half-line` | `lambda` | `[0, ∞)` |
/// | `disk-exterior` | `lambda` | flat plane minus the open unit disk |
pub fn builtin(name: &str, params: &FlowParams) -> Result<ConformalFlow> {
    let p = |allowed| Params { flow: name, map: params, allowed };
    match name {
        "euclid" => {
            let p = p(&["d"]);
            p.check()?;
            let d = p.dim(2)?;
            Ok(ConformalFlow::spatially_constant(name, d, f64::INFINITY, |_| (0.0, 0.0))
                .with_bounds(CurvatureBounds::constant(0.0, 0.0)))
        }
        "ou" => {
            let p = p(&["d", "lambda"]);
            p.check()?;
            let d = p.dim(2)?;
            let lambda = p.get("lambda", 1.0);
            Ok(ConformalFlow::spatially_constant(name, d, f64::INFINITY, |_| (0.0, 0.0))
                .with_drift(linear_drift(d, lambda))
                .with_bounds(CurvatureBounds::constant(lambda, 0.0)))
        }
        "conformal-euclid" => {
            let p = p(&["d", "a0", "rate"]);
            p.check()?;
            let d = p.dim(2)?;
            let a0 = p.get("a0", 1.0);
            let rate = p.get("rate", 0.5);
            if !(a0 > 0.0) {
                return Err(Error::Definition("conformal-euclid: a0 must be positive".into()));
            }
            Ok(ConformalFlow::spatially_constant(name, d, horizon_for_rate(rate, 1.0), move |t| {
                let s = 1.0 + rate * t;
                ((a0 * s).ln(), rate / s)
            })
            .with_bounds(CurvatureBounds {
                k: BoundFn::func(move |t| -rate / (1.0 + rate * t)),
                sigma: BoundFn::Const(0.0),
                provenance: Provenance::Analytic,
            }))
        }
        "shrinking-sphere" => {
            let p = p(&["r0", "rate"]);
            p.check()?;
            let r0 = p.get("r0", 1.0);
            let rate = p.get("rate", 0.5);
            if !(r0 > 0.0) {
                return Err(Error::Definition("shrinking-sphere: r0 must be positive".into()));
            }
            let horizon = if rate > 0.0 { r0 * r0 / rate } else { f64::INFINITY };
            Ok(ConformalFlow::new(name, 2, horizon, move |t, x: &DVector<f64>| {
                let r2 = r0 * r0 - rate * t;
                let q = 1.0 + x.norm_squared();
                let dw = x * (-2.0 / q);
                let hess = DMatrix::from_diagonal_element(2, 2, -2.0 / q) + x * x.transpose() * (4.0 / (q * q));
                Potential {
                    w: 0.5 * r2.ln() + std::f64::consts::LN_2 - q.ln(),
                    dw,
                    hess,
                    wt: -0.5 * rate / r2,
                }
            })
            .with_chart(|x| x.norm() < 100.0)
            .with_bounds(CurvatureBounds {
                k: BoundFn::func(move |t| (1.0 + 0.5 * rate) / (r0 * r0 - rate * t)),
                sigma: BoundFn::Const(0.0),
                provenance: Provenance::Analytic,
            }))
        }
        "half-space" => {
            let p = p(&["d", "lambda"]);
            p.check()?;
            let d = p.dim(2)?;
            let lambda = p.get("lambda", 0.0);
            let last = d - 1;
            Ok(ConformalFlow::spatially_constant(name, d, f64::INFINITY, |_| (0.0, 0.0))
                .with_drift(linear_drift(d, lambda))
                .with_boundary(Arc::new(FnField::coordinate(last)))
                .with_second_fundamental(move |_, _| DMatrix::zeros(d, d))
                .with_bounds(CurvatureBounds::constant(lambda, 0.0)))
        }
        "half-line" => {
            let p = p(&["lambda"]);
            p.check()?;
            let lambda = p.get("lambda", 0.0);
            Ok(ConformalFlow::spatially_constant(name, 1, f64::INFINITY, |_| (0.0, 0.0))
                .with_drift(linear_drift(1, lambda))
                .with_boundary(Arc::new(FnField::coordinate(0)))
                .with_second_fundamental(|_, _| DMatrix::zeros(1, 1))
                .with_bounds(CurvatureBounds::constant(lambda, 0.0)))
        }
        "disk-exterior" => {
            let p = p(&["lambda"]);
            p.check()?;
            let lambda = p.get("lambda", 0.0);
            let b = FnField::new(|_, x: &DVector<f64>| x.norm() - 1.0)
                .with_gradient(|_, x| x / x.norm())
                .with_hessian(|_, x| {
                    let r = x.norm();
                    (DMatrix::identity(2, 2) - x * x.transpose() / (r * r)) / r
                })
                .with_dt(|_, _| 0.0);
            Ok(ConformalFlow::spatially_constant(name, 2, f64::INFINITY, |_| (0.0, 0.0))
                .with_drift(linear_drift(2, lambda))
                .with_chart(|x| x.norm() > 1e-9)
                .with_boundary(Arc::new(b))
                // II(X, Y) = −⟨∇_X N, Y⟩ with N = x/|x|.
                .with_second_fundamental(|_, x| {
                    let r = x.norm();
                    -(DMatrix::identity(2, 2) - x * x.transpose() / (r * r)) / r
                })
                .with_bounds(CurvatureBounds::constant(lambda, -1.0))
                .with_distance(|_, x, y| disk_exterior_distance(x, y)))
        }
        _ => Err(Error::Definition(format!(
            "unknown flow `{name}` (built-ins: {})",
            NAMES.join(", ")
        ))),
    }
}
