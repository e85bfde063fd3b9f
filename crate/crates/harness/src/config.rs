//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "ou-contraction"
//! description = "OU point masses contract at rate λ"
//!
//! [flow]
//! name = "ou"                      # a built-in flow ...
//! params = { d = 2, lambda = 1.0 }
//! # expr = { name = "..", dim = 2, metric = [..] }   # ... or an expression flow
//!
//! [run]
//! t_end = 1.0
//! steps = 1000
//! paths = 2000
//! seed = 7
//!
//! [start]
//! x0 = [0.0, 0.0]
//! y0 = [1.0, 0.0]                  # second start, for couplings
//!
//! [bounds]                         # optional; otherwise the flow's own bounds
//! k = "1"
//! sigma = "0"
//!
//! [[check]]
//! op = "check_contraction"
//! p = 2
//! ```
//!
//! Numbers marked `Num` below may be written as numbers or as constant
//! expressions such as `"exp(-1)"`. Spatial expressions use `t, x1, …, xd`;
//! cylindrical functionals use `p1_1, …` (slot, coordinate).

use std::collections::BTreeMap;

use pathspace_core::expr::Expr;
use pathspace_core::metricflow::{builtin, BoundFn, ConformalFlow, CurvatureBounds, ExprFlow, Provenance};
use pathspace_core::{DVector, MetricFlow};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{HarnessError, Result};

/// A number or a constant expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Value(f64),
    Expr(String),
}

impl Num {
    pub fn eval(&self) -> Result<f64> {
        match self {
            Num::Value(v) => Ok(*v),
            Num::Expr(s) => {
                let e = Expr::parse(s, &[]).map_err(|e| HarnessError::config(format!("`{s}`: {e}")))?;
                Ok(e.eval(&[]))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub name: Option<Spanned<String>>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub expr: Option<toml::Table>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Exponential,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QSourceSpec {
    Fresh,
    #[default]
    Backward,
    CachedInverse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub t_end: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    /// Gram–Schmidt period; 0 disables it.
    pub renorm_every: Option<usize>,
    /// Brownian-bridge crossing detection, also used by `Q`.
    #[serde(default)]
    pub crossings: bool,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub q_source: QSourceSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    pub x0: Vec<f64>,
    pub y0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub k: Num,
    #[serde(default = "zero")]
    pub sigma: Num,
}

fn zero() -> Num {
    Num::Value(0.0)
}

/// Point set for sup-norm scans.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    Interval { a: f64, b: f64, n: usize },
    Annulus { r0: f64, r1: f64, nr: usize, ntheta: usize },
    Points { points: Vec<Vec<f64>>, #[serde(default)] boundary: Vec<Vec<f64>> },
}

/// Constant `K₁`, `K₂`; scanned over the region when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RicciSpec {
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianStart {
    pub var: f64,
    pub lsi_constant: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaSpec {
    pub f: String,
    pub hess_sup: f64,
    #[serde(default = "lemma_eps")]
    pub eps: f64,
}

fn lemma_eps() -> f64 {
    0.01
}
fn two() -> f64 {
    2.0
}
fn ten() -> f64 {
    10.0
}
fn one() -> f64 {
    1.0
}
fn q_tol() -> f64 {
    1e-4
}
fn fd_delta() -> f64 {
    1e-3
}
fn five_percent() -> f64 {
    0.05
}
fn two_percent() -> f64 {
    0.02
}
fn terminal_tol() -> f64 {
    1e-3
}
fn degree() -> usize {
    2
}
fn eps_list() -> Vec<f64> {
    vec![0.1, 0.01, 0.001]
}
fn ibp_eps() -> Vec<f64> {
    vec![0.1, 0.05]
}
fn min_fraction() -> f64 {
    0.95
}

/// One requested check. `op` selects the operation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// `sup_k ‖Q_{0,k} − e^{−rate·s_k} I‖ ≤ tol` on one path.
    EvolveQProjected {
        rate: f64,
        #[serde(default = "q_tol")]
        tol: f64,
        #[serde(default)]
        path: u64,
    },
    /// Penalized `Q` approaches projected `Q` as `ε` decreases.
    EvolveQPenalized {
        #[serde(default = "eps_list")]
        eps: Vec<f64>,
        #[serde(default = "min_fraction")]
        min_fraction: f64,
    },
    /// `‖Q_{r,t} − Q_{r,s} Q_{s,t}‖` at two index triples per path.
    CocycleCheck { tol: Option<f64> },
    /// `‖Q_{0,k}‖ ≤ e^{−∫K − ∫σ dl}(1 + coef·Δ)` on every path and step.
    QNormBound {
        #[serde(default = "ten")]
        coef: f64,
    },
    BelGradient {
        f: String,
        expected: Option<Vec<Num>>,
        #[serde(default = "one")]
        bias_coef: f64,
    },
    GradientFormulaCheck {
        f: String,
        times: Vec<f64>,
        #[serde(default = "fd_delta")]
        delta: f64,
        #[serde(default = "five_percent")]
        rel_tol: f64,
    },
    IbpThreeWay {
        f: String,
        times: Vec<f64>,
        /// `h(t) = t·w`.
        w: Vec<f64>,
        #[serde(default = "ibp_eps")]
        eps: Vec<f64>,
        expected: Option<Num>,
    },
    ClarkOcone {
        f: String,
        times: Vec<f64>,
        #[serde(default = "degree")]
        degree: usize,
        #[serde(default = "five_percent")]
        max_residual: f64,
    },
    DirichletAndLsi {
        f: String,
        times: Vec<f64>,
        /// Free path space with `μ = N(x0, var·I)`.
        gaussian: Option<GaussianStart>,
    },
    CheckContraction {
        #[serde(default = "two")]
        p: f64,
        expected_terminal: Option<Num>,
        #[serde(default = "terminal_tol")]
        terminal_tol: f64,
    },
    CheckTalagrand {
        beta: Vec<f64>,
        /// Closed-form value of both sides when the case saturates.
        expected: Option<Num>,
        #[serde(default = "two_percent")]
        rel_tol: f64,
    },
    CheckMarginalTransport {
        tilt: String,
        #[serde(default)]
        s: f64,
        t: Option<f64>,
        expected_w2: Option<Num>,
        lemma: Option<LemmaSpec>,
    },
    CheckPsiTransport {
        psi: String,
        beta: Vec<f64>,
        region: RegionSpec,
        ricci: Option<RicciSpec>,
        /// Closed-form `W₂²` estimate (time-changed flat case).
        expected_w2: Option<Num>,
    },
    CheckNonconvexTransport {
        phi: String,
        beta: Vec<f64>,
        region: RegionSpec,
        ricci: Option<RicciSpec>,
    },
}

impl CheckSpec {
    pub fn op(&self) -> &'static str {
        match self {
            CheckSpec::EvolveQProjected { .. } => "evolve_q_projected",
            CheckSpec::EvolveQPenalized { .. } => "evolve_q_penalized",
            CheckSpec::CocycleCheck { .. } => "cocycle_check",
            CheckSpec::QNormBound { .. } => "q_norm_bound",
            CheckSpec::BelGradient { .. } => "bel_gradient",
            CheckSpec::GradientFormulaCheck { .. } => "gradient_formula_check",
            CheckSpec::IbpThreeWay { .. } => "ibp_three_way",
            CheckSpec::ClarkOcone { .. } => "clark_ocone",
            CheckSpec::DirichletAndLsi { .. } => "dirichlet_and_lsi",
            CheckSpec::CheckContraction { .. } => "check_contraction",
            CheckSpec::CheckTalagrand { .. } => "check_talagrand",
            CheckSpec::CheckMarginalTransport { .. } => "check_marginal_transport",
            CheckSpec::CheckPsiTransport { .. } => "check_psi_transport",
            CheckSpec::CheckNonconvexTransport { .. } => "check_nonconvex_transport",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub flow: FlowSpec,
    pub run: RunSpec,
    pub start: StartSpec,
    pub bounds: Option<BoundsSpec>,
    #[serde(rename = "check")]
    pub checks: Vec<Spanned<CheckSpec>>,
    #[serde(skip)]
    source: String,
}

/// A flow built from its spec; built-in flows keep their conformal structure.
pub enum Flow {
    Builtin(ConformalFlow),
    Expr(ExprFlow),
}

impl Flow {
    pub fn as_dyn(&self) -> &dyn MetricFlow {
        match self {
            Flow::Builtin(f) => f,
            Flow::Expr(f) => f,
        }
    }

    pub fn conformal(&self) -> Option<&ConformalFlow> {
        match self {
            Flow::Builtin(f) => Some(f),
            Flow::Expr(_) => None,
        }
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

impl Scenario {
    pub fn parse(src: &str) -> Result<Self> {
        let mut s: Scenario = toml::from_str(src).map_err(|e| HarnessError::config(e.to_string().trim_end().to_string()))?;
        s.source = src.to_string();
        Ok(s)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
        Self::parse(&src)
    }

    /// Line number of a spanned item in the source text.
    pub fn line<T>(&self, item: &Spanned<T>) -> usize {
        line_of(&self.source, item.span().start)
    }

    pub fn build_flow(&self) -> Result<Flow> {
        match (&self.flow.name, &self.flow.expr) {
            (Some(name), None) => {
                let params = self.flow.params.iter().map(|(k, v)| (k.clone(), *v)).collect();
                builtin(name.get_ref(), &params)
                    .map(Flow::Builtin)
                    .map_err(|e| HarnessError::config(format!("line {}: flow.name: {e}", self.line(name))))
            }
            (None, Some(table)) => {
                if !self.flow.params.is_empty() {
                    return Err(HarnessError::config("flow.params applies to built-in flows only"));
                }
                let src = toml::to_string(table).map_err(|e| HarnessError::config(e.to_string()))?;
                ExprFlow::from_toml(&src).map(Flow::Expr).map_err(|e| HarnessError::config(format!("flow.expr: {e}")))
            }
            _ => Err(HarnessError::config("flow needs exactly one of `name` and `expr`")),
        }
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.start.x0)
    }

    pub fn y0(&self) -> Option<DVector<f64>> {
        self.start.y0.as_deref().map(DVector::from_column_slice)
    }

    /// Bounds from the `[bounds]` section, else the flow's analytic bounds.
    pub fn bounds(&self, flow: &dyn MetricFlow) -> Result<Option<CurvatureBounds>> {
        match &self.bounds {
            None => Ok(flow.analytic_bounds()),
            Some(b) => {
                let parse = |n: &Num, what: &str| -> Result<BoundFn> {
                    Ok(match n {
                        Num::Value(v) => BoundFn::Const(*v),
                        Num::Expr(s) => {
                            let e = Expr::parse(s, &["t"])
                                .map_err(|e| HarnessError::config(format!("bounds.{what}: {e}")))?;
                            BoundFn::func(move |t| e.eval(&[t]))
                        }
                    })
                };
                Ok(Some(CurvatureBounds {
                    k: parse(&b.k, "k")?,
                    sigma: parse(&b.sigma, "sigma")?,
                    provenance: Provenance::Analytic,
                }))
            }
        }
    }

    /// Structural checks that need the flow: sizes, horizon, starts.
    pub fn validate(&self, flow: &dyn MetricFlow) -> Result<()> {
        let r = &self.run;
        if !(r.t_end > 0.0) {
            return Err(HarnessError::config(format!("run.t_end must be positive, got {}", r.t_end)));
        }
        if r.t_end >= flow.horizon() {
            return Err(HarnessError::config(format!(
                "run.t_end = {} is not below the horizon {} of flow `{}`",
                r.t_end,
                flow.horizon(),
                flow.name()
            )));
        }
        if r.steps < 10 {
            return Err(HarnessError::config(format!("run.steps must be at least 10, got {}", r.steps)));
        }
        if r.paths < 100 {
            return Err(HarnessError::config(format!("run.paths must be at least 100, got {}", r.paths)));
        }
        let d = flow.dim();
        let check_point = |p: &[f64], what: &str| -> Result<()> {
            if p.len() != d {
                return Err(HarnessError::config(format!("{what} has {} coordinates, flow `{}` has dimension {d}", p.len(), flow.name())));
            }
            let x = DVector::from_column_slice(p);
            if !flow.in_chart(&x) || flow.boundary().is_some_and(|b| b.value(0.0, &x) < 0.0) {
                return Err(HarnessError::config(format!("{what} = {p:?} is outside the manifold")));
            }
            Ok(())
        };
        check_point(&self.start.x0, "start.x0")?;
        if let Some(y) = &self.start.y0 {
            check_point(y, "start.y0")?;
        }
        if self.checks.is_empty() {
            return Err(HarnessError::config("scenario has no [[check]] entries"));
        }
        for c in &self.checks {
            let needs_y0 = matches!(
                c.get_ref(),
                CheckSpec::CheckContraction { .. }
                    | CheckSpec::CheckPsiTransport { .. }
                    | CheckSpec::CheckNonconvexTransport { .. }
            );
            if needs_y0 && self.start.y0.is_none() {
                return Err(HarnessError::config(format!("line {}: {} needs start.y0", self.line(c), c.get_ref().op())));
            }
            if matches!(c.get_ref(), CheckSpec::CheckNonconvexTransport { .. }) && self.flow.name.is_none() {
                return Err(HarnessError::config(format!(
                    "line {}: check_nonconvex_transport needs a built-in flow",
                    self.line(c)
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
[flow]
name = "ou"
params = { d = 1, lambda = 1 }
[run]
t_end = 1.0
steps = 20
paths = 100
seed = 1
[start]
x0 = [0.5]
[[check]]
op = "evolve_q_projected"
rate = 1.0
"#;

    #[test]
    fn parses_minimal_scenario() {
        let s = Scenario::parse(MINIMAL).unwrap();
        let f = s.build_flow().unwrap();
        s.validate(f.as_dyn()).unwrap();
        assert_eq!(s.checks.len(), 1);
        assert_eq!(s.checks[0].get_ref().op(), "evolve_q_projected");
        assert_eq!(s.line(&s.checks[0]), 13);
    }

    #[test]
    fn unknown_check_reports_line() {
        let src = MINIMAL.replace("evolve_q_projected", "no_such_check");
        let e = Scenario::parse(&src).unwrap_err().to_string();
        assert!(e.contains("line 14") && e.contains("no_such_check"), "{e}");
    }

    #[test]
    fn unknown_flow_reports_line() {
        let src = MINIMAL.replace("name = \"ou\"", "name = \"torus\"");
        let s = Scenario::parse(&src).unwrap();
        let e = s.build_flow().err().unwrap().to_string();
        assert!(e.contains("line 4") && e.contains("torus"), "{e}");
    }

    #[test]
    fn horizon_violation_names_the_field() {
        let src = MINIMAL
            .replace("name = \"ou\"", "name = \"conformal-euclid\"")
            .replace("{ d = 1, lambda = 1 }", "{ d = 1, rate = -0.5 }")
            .replace("t_end = 1.0", "t_end = 3.0");
        let s = Scenario::parse(&src).unwrap();
        let f = s.build_flow().unwrap();
        let e = s.validate(f.as_dyn()).unwrap_err().to_string();
        assert!(e.contains("run.t_end"), "{e}");
    }

    #[test]
    fn constant_expressions() {
        assert_eq!(Num::Value(2.0).eval().unwrap(), 2.0);
        assert!((Num::Expr("exp(-1)".into()).eval().unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(Num::Expr("x1".into()).eval().is_err());
    }
}
