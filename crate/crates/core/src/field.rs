//! Time-dependent scalar fields `f(t, x)` with derivatives.
//!
//! Used for boundary defining functions, conformal factors `φ`, diffusion
//! coefficients `ψ` and test functions. Derivatives default to central finite
//! differences with step `h = 1e-5·(1+|x|)`; analytic fields override them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::expr::{flow_vars, Expr};

pub(crate) fn fd_step(x: &DVector<f64>) -> f64 {
    1e-5 * (1.0 + x.norm())
}

pub trait ScalarField: Send + Sync {
    fn value(&self, t: f64, x: &DVector<f64>) -> f64;

    fn gradient(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        fd_gradient(self, t, x)
    }

    fn hessian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        fd_hessian(self, t, x)
    }

    fn dt(&self, t: f64, x: &DVector<f64>) -> f64 {
        let h = 1e-5 * (1.0 + t.abs());
        (self.value(t + h, x) - self.value(t - h, x)) / (2.0 * h)
    }
}

type ValueFn = dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync;
type GradFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
type HessFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A field given by closures; missing derivatives fall back to finite differences.
#[derive(Clone)]
pub struct FnField {
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradFn>>,
    hessian: Option<Arc<HessFn>>,
    dt: Option<Arc<ValueFn>>,
}

impl FnField {
    pub fn new(value: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self { value: Arc::new(value), gradient: None, hessian: None, dt: None }
    }

    pub fn with_gradient(mut self, g: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_hessian(mut self, h: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.hessian = Some(Arc::new(h));
        self
    }

    pub fn with_dt(mut self, d: impl Fn(f64, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.dt = Some(Arc::new(d));
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| c)
            .with_gradient(|_, x| DVector::zeros(x.len()))
            .with_hessian(|_, x| DMatrix::zeros(x.len(), x.len()))
            .with_dt(|_, _| 0.0)
    }

    /// `x ↦ x[i]`.
    pub fn coordinate(i: usize) -> Self {
        Self::new(move |_, x| x[i])
            .with_gradient(move |_, x| {
                let mut g = DVector::zeros(x.len());
                g[i] = 1.0;
                g
            })
            .with_hessian(|_, x| DMatrix::zeros(x.len(), x.len()))
            .with_dt(|_, _| 0.0)
    }
}

impl std::fmt::Debug for FnField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FnField")
    }
}

impl ScalarField for FnField {
    fn value(&self, t: f64, x: &DVector<f64>) -> f64 {
        (self.value)(t, x)
    }

    fn gradient(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match &self.gradient {
            Some(g) => g(t, x),
            None => fd_gradient(self, t, x),
        }
    }

    fn hessian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.hessian {
            Some(h) => h(t, x),
            None => fd_hessian(self, t, x),
        }
    }

    fn dt(&self, t: f64, x: &DVector<f64>) -> f64 {
        match &self.dt {
            Some(d) => d(t, x),
            None => {
                let h = 1e-5 * (1.0 + t.abs());
                (self.value(t + h, x) - self.value(t - h, x)) / (2.0 * h)
            }
        }
    }
}

fn fd_gradient<F: ScalarField + ?Sized>(f: &F, t: f64, x: &DVector<f64>) -> DVector<f64> {
    let h = fd_step(x);
    DVector::from_fn(x.len(), |i, _| {
        let mut y = x.clone();
        y[i] += h;
        let fp = f.value(t, &y);
        y[i] -= 2.0 * h;
        (fp - f.value(t, &y)) / (2.0 * h)
    })
}

fn fd_hessian<F: ScalarField + ?Sized>(f: &F, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
    let h = 1e2 * fd_step(x);
    let d = x.len();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut y = x.clone();
        y[i] += h;
        let gp = f.gradient(t, &y);
        y[i] -= 2.0 * h;
        let gm = f.gradient(t, &y);
        for j in 0..d {
            m[(i, j)] = (gp[j] - gm[j]) / (2.0 * h);
        }
    }
    crate::linalg::sym(&m)
}

/// A field given by an expression in `t, x1, …, xd`.
#[derive(Debug, Clone)]
pub struct ExprField {
    expr: Expr,
    dim: usize,
}

impl ExprField {
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        if dim == 0 || dim > 8 {
            return Err(crate::Error::Definition(format!("expression fields support 1..=8 dimensions, got {dim}")));
        }
        let names = flow_vars(dim);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Ok(Self { expr: Expr::parse(src, &refs)?, dim })
    }

    pub fn source(&self) -> &str {
        self.expr.source()
    }
}

impl ScalarField for ExprField {
    fn value(&self, t: f64, x: &DVector<f64>) -> f64 {
        let mut vars = [0.0; 9];
        vars[0] = t;
        vars[1..=self.dim].copy_from_slice(x.as_slice());
        self.expr.eval(&vars[..=self.dim])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expression_field_derivatives() {
        let f = ExprField::parse("x1^2 * x2 + t * x2", 2).unwrap();
        let x = DVector::from_vec(vec![1.5, -0.5]);
        let g = f.gradient(0.3, &x);
        assert_relative_eq!(g[0], 2.0 * 1.5 * -0.5, epsilon = 1e-7);
        assert_relative_eq!(g[1], 1.5 * 1.5 + 0.3, epsilon = 1e-7);
        let h = f.hessian(0.3, &x);
        assert_relative_eq!(h[(0, 0)], -1.0, epsilon = 1e-5);
        assert_relative_eq!(h[(0, 1)], 3.0, epsilon = 1e-5);
        assert_relative_eq!(h[(1, 1)], 0.0, epsilon = 1e-5);
        assert_relative_eq!(f.dt(0.3, &x), -0.5, epsilon = 1e-8);
    }

    #[test]
    fn closure_field_defaults_match_analytic() {
        let analytic = FnField::new(|_, x: &DVector<f64>| x[0].sin() * x[1])
            .with_gradient(|_, x| DVector::from_vec(vec![x[0].cos() * x[1], x[0].sin()]));
        let plain = FnField::new(|_, x: &DVector<f64>| x[0].sin() * x[1]);
        let x = DVector::from_vec(vec![0.4, 2.0]);
        assert!((analytic.gradient(0.0, &x) - plain.gradient(0.0, &x)).norm() < 1e-8);
    }
}
