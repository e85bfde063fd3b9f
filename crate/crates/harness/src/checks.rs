//! The check registry: parameters are parsed up front, so bad expressions are
//! configuration errors, and the simulation runs later.

use std::sync::Arc;

use pathspace_core::field::{ExprField, ScalarField};
use pathspace_core::linalg::op_norm;
use pathspace_core::malliavin::{
    bel_gradient, clark_ocone, dirichlet_and_lsi, gradient_formula_check, ibp_three_way, xi_linear, CylFunc, IbpOptions,
    McSetup, Regression, Start,
};
use pathspace_core::metricflow::CurvatureBounds;
use pathspace_core::multfunc::{cocycle_check, evolve_q, QOptions, QScheme};
use pathspace_core::sdesim::{initial_frame, simulate_path, CMVector, FramedPath};
use pathspace_core::transport::{
    check_contraction, check_marginal_transport, check_nonconvex_transport, check_psi_transport, check_talagrand,
    conformal_constants, lemma_reproduction, RicciTimeBounds, ScanRegion, TracePoint, TransitionLaw,
};
use pathspace_core::{DMatrix, DVector, MetricFlow};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{CheckSpec, Flow, Num, RegionSpec, RicciSpec};
use crate::error::{HarnessError, Result};
use crate::report::Item;

/// Static description of one check operation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CheckInfo {
    pub op: &'static str,
    pub theorem: &'static str,
    pub summary: &'static str,
    pub params: &'static str,
}

pub const CHECKS: &[CheckInfo] = &[
    CheckInfo {
        op: "evolve_q_projected",
        theorem: "Theorem 2.1(1)",
        summary: "Projected multiplicative functional Q on one path against e^{-rate s} I.",
        params: "rate, tol = 1e-4, path = 0",
    },
    CheckInfo {
        op: "evolve_q_penalized",
        theorem: "Theorem 2.1(1)",
        summary: "Penalized Q approaches projected Q: sup_k |Q_eps - Q| strictly decreasing along eps, on a fraction of paths.",
        params: "eps = [0.1, 0.01, 0.001], min_fraction = 0.95",
    },
    CheckInfo {
        op: "cocycle_check",
        theorem: "Theorem 2.1(3)",
        summary: "Max of |Q_{r,t} - Q_{r,s} Q_{s,t}| over two index triples per path.",
        params: "tol = 1e-8 without boundary, 5*dt with one",
    },
    CheckInfo {
        op: "q_norm_bound",
        theorem: "Theorem 2.1(2)",
        summary: "Path-wise |Q_{0,k}| <= exp(-int K - int sigma dl)(1 + coef*dt); counts violations.",
        params: "coef = 10",
    },
    CheckInfo {
        op: "bel_gradient",
        theorem: "Corollary 2.3",
        summary: "Bismut formula for grad P_T f(x0), weighted and plain estimators, optionally against a known gradient.",
        params: "f (expression in t, x1..xd), expected = [..], bias_coef = 1",
    },
    CheckInfo {
        op: "gradient_formula_check",
        theorem: "Lemma 3.3",
        summary: "Damped-gradient formula for grad_x0 E F against central differences in x0.",
        params: "f (expression in p{slot}_{coord}), times, delta = 1e-3, rel_tol = 0.05",
    },
    CheckInfo {
        op: "ibp_three_way",
        theorem: "Theorem 3.2",
        summary: "Integration by parts: flow derivative, damped gradient and Girsanov weight agree for h(t) = t w.",
        params: "f, times, w, eps = [0.1, 0.05], expected",
    },
    CheckInfo {
        op: "clark_ocone",
        theorem: "Lemma 4.2",
        summary: "Martingale representation residual E(F - EF - int zeta dB)^2 relative to Var F.",
        params: "f, times, degree = 2, max_residual = 0.05",
    },
    CheckInfo {
        op: "dirichlet_and_lsi",
        theorem: "Theorem 4.3 / Theorem 4.7",
        summary: "Log-Sobolev inequality Ent(F^2) <= c E(F, F) on path space, c = 2 or 2 v C for a Gaussian start.",
        params: "f, times, gaussian = { var, lsi_constant }",
    },
    CheckInfo {
        op: "check_contraction",
        theorem: "Theorem 5.2(6)",
        summary: "Synchronous coupling from point masses: (E rho_t^p)^{1/p} <= e^{-int K} rho_0 per time, at T and uniformly.",
        params: "p = 2, expected_terminal, terminal_tol = 1e-3",
    },
    CheckInfo {
        op: "check_talagrand",
        theorem: "Theorem 5.2(3)",
        summary: "Transportation-cost inequality W_2^2 <= 4 C(0,T,K) Ent for a constant-beta Girsanov tilt, with the entropy identity.",
        params: "beta, expected, rel_tol = 0.02",
    },
    CheckInfo {
        op: "check_marginal_transport",
        theorem: "Theorem 5.2(4)/(5), Lemma 5.1",
        summary: "Marginal inequalities in d = 1 with exact quantile-coupling W_2; optional small-perturbation lemma.",
        params: "tilt, s = 0, t = T, expected_w2, lemma = { f, hess_sup, eps = 0.01 }",
    },
    CheckInfo {
        op: "check_psi_transport",
        theorem: "Theorem 6.1 / Theorem 6.2",
        summary: "Transport inequality and contraction for the generator psi^2 (Delta + Z).",
        params: "psi, beta, region, ricci = { k1, k2 }, expected_w2",
    },
    CheckInfo {
        op: "check_nonconvex_transport",
        theorem: "Theorem 6.3 / Theorem 6.4",
        summary: "Non-convex boundary via g~ = phi^-2 g: admissibility, metric sandwich, transport inequality and contraction.",
        params: "phi, beta, region, ricci = { k1, k2 }",
    },
];

pub fn info(op: &str) -> Option<&'static CheckInfo> {
    CHECKS.iter().find(|c| c.op == op)
}

/// Text for `describe <check>`.
pub fn describe(op: &str) -> Result<String> {
    let c = info(op).ok_or_else(|| {
        let known: Vec<&str> = CHECKS.iter().map(|c| c.op).collect();
        HarnessError::config(format!("unknown check `{op}`; known checks: {}", known.join(", ")))
    })?;
    Ok(format!("{}\n  cites:  {}\n  checks: {}\n  params: {}\n", c.op, c.theorem, c.summary, c.params))
}

/// Everything a check needs from its scenario.
pub struct Ctx {
    pub flow: Flow,
    pub bounds: Option<CurvatureBounds>,
    pub x0: DVector<f64>,
    pub y0: Option<DVector<f64>>,
    pub setup: McSetup,
}

impl Ctx {
    fn flow(&self) -> &dyn MetricFlow {
        self.flow.as_dyn()
    }

    fn dim(&self) -> usize {
        self.flow().dim()
    }

    fn dt(&self) -> f64 {
        self.setup.spec.dt()
    }

    fn has_boundary(&self) -> bool {
        self.flow().boundary().is_some()
    }

    fn bounds(&self) -> Result<&CurvatureBounds> {
        self.bounds.as_ref().ok_or_else(|| {
            HarnessError::config(format!("flow `{}` has no curvature bounds; add a [bounds] section", self.flow().name()))
        })
    }

    fn y0(&self) -> Result<&DVector<f64>> {
        self.y0.as_ref().ok_or_else(|| HarnessError::config("start.y0 is required"))
    }

    fn q_options(&self) -> QOptions {
        self.setup.q
    }

    /// Simulates every path of the ensemble from `x0` and applies `work`.
    fn per_path<T: Send>(&self, work: impl Fn(&FramedPath) -> pathspace_core::Result<T> + Sync + Send) -> Result<Vec<T>> {
        let flow = self.flow();
        let spec = &self.setup.spec;
        let u0 = initial_frame(flow, 0.0, &self.x0)?;
        let out: pathspace_core::Result<Vec<T>> = self
            .setup
            .exec
            .map(self.setup.n_paths, |i| work(&simulate_path(flow, &self.x0, &u0, spec, i as u64)?))
            .into_iter()
            .collect();
        Ok(out?)
    }

    /// `Δ` with a boundary-free flow, `√Δ` otherwise.
    fn bias_scale(&self) -> f64 {
        if self.has_boundary() {
            self.dt().sqrt()
        } else {
            self.dt()
        }
    }
}

/// What a finished check contributes to its record.
pub struct Output {
    pub items: Vec<Item>,
    pub details: Value,
    pub trace: Vec<TracePoint>,
}

impl Output {
    fn new(items: Vec<Item>, details: impl Serialize) -> Result<Self> {
        Ok(Self { items, details: serde_json::to_value(details)?, trace: Vec::new() })
    }

    fn with_trace(mut self, trace: Vec<TracePoint>) -> Self {
        self.trace = trace;
        self
    }
}

pub type Prepared = Box<dyn FnOnce(&Ctx) -> Result<Output>>;

fn field(src: &str, dim: usize, what: &str) -> Result<Arc<ExprField>> {
    ExprField::parse(src, dim).map(Arc::new).map_err(|e| HarnessError::config(format!("{what}: {e}")))
}

fn cyl(src: &str, times: &[f64], dim: usize) -> Result<CylFunc> {
    CylFunc::parse(src, times.to_vec(), dim).map_err(|e| HarnessError::config(format!("f: {e}")))
}

fn vector(v: &[f64], dim: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != dim {
        return Err(HarnessError::config(format!("{what} has {} entries, the flow has dimension {dim}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn region(spec: &RegionSpec, dim: usize) -> Result<ScanRegion> {
    Ok(match spec {
        RegionSpec::Interval { a, b, n } => {
            if dim != 1 {
                return Err(HarnessError::config("region.interval needs a one-dimensional flow"));
            }
            ScanRegion::interval(*a, *b, *n)
        }
        RegionSpec::Annulus { r0, r1, nr, ntheta } => {
            if dim != 2 {
                return Err(HarnessError::config("region.annulus needs a two-dimensional flow"));
            }
            ScanRegion::annulus(*r0, *r1, *nr, *ntheta)
        }
        RegionSpec::Points { points, boundary } => {
            let conv = |ps: &[Vec<f64>]| -> Result<Vec<DVector<f64>>> {
                ps.iter().map(|p| vector(p, dim, "region point")).collect()
            };
            ScanRegion::from_points("points", conv(points)?, conv(boundary)?)
        }
    })
}

fn ricci(spec: &Option<RicciSpec>, flow: &dyn MetricFlow, region: &ScanRegion, t_end: f64) -> Result<RicciTimeBounds> {
    Ok(match spec {
        Some(r) => RicciTimeBounds::constant(r.k1, r.k2),
        None => RicciTimeBounds::scan(flow, region, t_end)?,
    })
}

fn opt_num(n: &Option<Num>) -> Result<Option<f64>> {
    n.as_ref().map(Num::eval).transpose()
}

/// Parses the parameters of `spec` against the scenario and returns the work.
pub fn prepare(spec: &CheckSpec, ctx: &Ctx) -> Result<Prepared> {
    let d = ctx.dim();
    let t_end = ctx.setup.spec.t_end;
    Ok(match spec.clone() {
        CheckSpec::EvolveQProjected { rate, tol, path } => {
            ctx.bounds()?;
            Box::new(move |ctx| q_closed_form(ctx, rate, tol, path))
        }
        CheckSpec::EvolveQPenalized { eps, min_fraction } => {
            ctx.bounds()?;
            if eps.len() < 2 || eps.windows(2).any(|w| !(w[1] < w[0])) || eps.iter().any(|e| !(*e > 0.0)) {
                return Err(HarnessError::config("eps must be positive and strictly decreasing, at least two values"));
            }
            Box::new(move |ctx| q_penalized(ctx, &eps, min_fraction))
        }
        CheckSpec::CocycleCheck { tol } => {
            ctx.bounds()?;
            Box::new(move |ctx| q_cocycle(ctx, tol))
        }
        CheckSpec::QNormBound { coef } => {
            ctx.bounds()?;
            Box::new(move |ctx| q_norm_bound(ctx, coef))
        }
        CheckSpec::BelGradient { f, expected, bias_coef } => {
            let f = field(&f, d, "f")?;
            let expected = match expected {
                Some(v) => {
                    let vals = v.iter().map(Num::eval).collect::<Result<Vec<_>>>()?;
                    Some(vector(&vals, d, "expected")?)
                }
                None => None,
            };
            Box::new(move |ctx| bel(ctx, f.as_ref(), expected, bias_coef))
        }
        CheckSpec::GradientFormulaCheck { f, times, delta, rel_tol } => {
            let cf = cyl(&f, &times, d)?;
            Box::new(move |ctx| {
                let r = gradient_formula_check(ctx.flow(), &ctx.x0, &cf, delta, &ctx.setup)?;
                let items = vec![Item::le("relative error of the formula", r.rel_err, 0.0, rel_tol, 0.0)];
                Output::new(items, &r)
            })
        }
        CheckSpec::IbpThreeWay { f, times, w, eps, expected } => {
            let cf = cyl(&f, &times, d)?;
            let w = vector(&w, d, "w")?;
            let expected = opt_num(&expected)?;
            Box::new(move |ctx| ibp(ctx, &cf, &w, eps, expected))
        }
        CheckSpec::ClarkOcone { f, times, degree, max_residual } => {
            let cf = cyl(&f, &times, d)?;
            Box::new(move |ctx| {
                let r = clark_ocone(ctx.flow(), &ctx.x0, &cf, Regression { degree }, &ctx.setup)?;
                let items = vec![Item::le("residual / Var F", r.residual_ratio, 0.0, max_residual, 0.0)];
                Output::new(items, &r)
            })
        }
        CheckSpec::DirichletAndLsi { f, times, gaussian } => {
            let cf = cyl(&f, &times, d)?;
            Box::new(move |ctx| {
                let start = match &gaussian {
                    None => Start::Fixed(ctx.x0.clone()),
                    Some(g) => Start::Gaussian { mean: ctx.x0.clone(), var: g.var, lsi_constant: g.lsi_constant },
                };
                let r = dirichlet_and_lsi(ctx.flow(), &start, &cf, &ctx.setup)?;
                let items = vec![Item::le(
                    format!("Ent(F^2) vs {}·E(F,F)", r.constant),
                    r.entropy.mean,
                    r.margin.se,
                    r.constant * r.form.mean,
                    // Rounding: a constant F gives Ent of order 1e-16 with zero SE.
                    3.0 * r.margin.se + 1e-12,
                )];
                Output::new(items, &r)
            })
        }
        CheckSpec::CheckContraction { p, expected_terminal, terminal_tol } => {
            ctx.bounds()?;
            ctx.y0()?;
            let expected = opt_num(&expected_terminal)?;
            Box::new(move |ctx| {
                let y0 = ctx.y0()?;
                let r = check_contraction(ctx.flow(), &ctx.x0, y0, ctx.bounds()?, p, &ctx.setup)?;
                let mut items = vec![
                    Item::outcome("per time: W_p / (e^{-int K} rho_0)", &r.per_time),
                    Item::outcome("terminal W_p", &r.terminal),
                    Item::outcome("uniform W_p vs rho_0 sup_t e^{-int K}", &r.uniform),
                ];
                if let Some(e) = expected {
                    items.push(Item::within("terminal W_p vs closed form", r.terminal.lhs, r.terminal.se, e, terminal_tol));
                }
                Ok(Output::new(items, &r)?.with_trace(r.trace.clone()))
            })
        }
        CheckSpec::CheckTalagrand { beta, expected, rel_tol } => {
            ctx.bounds()?;
            let beta = vector(&beta, d, "beta")?;
            let expected = opt_num(&expected)?;
            Box::new(move |ctx| {
                let r = check_talagrand(ctx.flow(), &ctx.x0, &beta, ctx.bounds()?, &ctx.setup)?;
                let mut items = vec![
                    Item::outcome("W_2^2 <= 4 C Ent", &r.squared),
                    Item::outcome("W_2 <= 2 (C Ent)^{1/2}", &r.mixed),
                    Item::estimate("entropy identity E_Q log F = |beta|^2 T / 2", &r.entropy_estimate, r.entropy, 0.0),
                    Item::estimate("normalization E F", &r.normalization, 1.0, 0.0),
                    Item::le("path-wise domination violations", r.domination_violations as f64, 0.0, 0.0, 0.0),
                ];
                if let Some(e) = expected {
                    let tol = rel_tol * e.abs();
                    items.push(Item::within("W_2^2 vs closed form", r.w2_squared.mean, r.w2_squared.se, e, tol));
                    items.push(Item::within("4 C Ent vs closed form", r.squared.rhs, 0.0, e, tol));
                }
                Ok(Output::new(items, &r)?.with_trace(r.trace.clone()))
            })
        }
        CheckSpec::CheckMarginalTransport { tilt, s, t, expected_w2, lemma } => {
            ctx.bounds()?;
            if d != 1 {
                return Err(HarnessError::config("check_marginal_transport needs a one-dimensional flow"));
            }
            let tilt = field(&tilt, 1, "tilt")?;
            let lemma = match lemma {
                Some(l) => Some((field(&l.f, 1, "lemma.f")?, l.hess_sup, l.eps)),
                None => None,
            };
            let t = t.unwrap_or(t_end);
            let expected = opt_num(&expected_w2)?;
            Box::new(move |ctx| {
                let law = TransitionLaw::for_flow(ctx.flow(), ctx.x0[0], s, t)?;
                let r = check_marginal_transport(&law, &ctx.bounds()?.k, tilt.as_ref(), s, t)?;
                let mut items = vec![
                    Item::outcome("W_2^2 <= 4 c P(f log f)", &r.entropy_form),
                    Item::outcome("W_2^2 <= 4 c^2 P(|grad f|^2 / f)", &r.gradient_form),
                ];
                if let Some(e) = expected {
                    let tol = 10.0 * r.quadrature_error + 1e-9 * (1.0 + e.abs());
                    items.push(Item::within("W_2^2 vs closed form", r.w2_squared, 0.0, e, tol));
                }
                let lemma_report = match &lemma {
                    Some((f, hess, eps)) => {
                        let l = lemma_reproduction(&law, f.as_ref(), *hess, *eps)?;
                        items.push(Item::le(
                            format!("small-perturbation lemma at eps = {eps}"),
                            l.variance,
                            0.0,
                            l.rhs,
                            1e-6 * l.rhs,
                        ));
                        Some(l)
                    }
                    None => None,
                };
                Output::new(items, json!({ "marginal": r, "lemma": lemma_report }))
            })
        }
        CheckSpec::CheckPsiTransport { psi, beta, region: rs, ricci: rc, expected_w2 } => {
            ctx.y0()?;
            let psi = field(&psi, d, "psi")?;
            let beta = vector(&beta, d, "beta")?;
            let reg = region(&rs, d)?;
            let expected = opt_num(&expected_w2)?;
            Box::new(move |ctx| {
                let rb = ricci(&rc, ctx.flow(), &reg, t_end)?;
                let r = check_psi_transport(ctx.flow(), psi.as_ref(), &reg, &rb, &ctx.x0, ctx.y0()?, &beta, &ctx.setup)?;
                let mut items = vec![
                    Item::outcome("W_2^2 <= C(T, psi) Ent", &r.talagrand),
                    Item::outcome("W_2 <= 2 e^{int (K_psi + |grad psi|)} rho_0", &r.contraction),
                ];
                if let Some(e) = expected {
                    let s = &r.w2_squared;
                    items.push(Item::estimate("W_2^2 vs time-change prediction", s, e, 1e-9 * (1.0 + e.abs())));
                }
                Output::new(items, &r)
            })
        }
        CheckSpec::CheckNonconvexTransport { phi, beta, region: rs, ricci: rc } => {
            ctx.y0()?;
            if ctx.flow.conformal().is_none() {
                return Err(HarnessError::config("check_nonconvex_transport needs a built-in flow"));
            }
            let phi = field(&phi, d, "phi")?;
            let beta = vector(&beta, d, "beta")?;
            let reg = region(&rs, d)?;
            Box::new(move |ctx| nonconvex(ctx, phi, &beta, &reg, &rc))
        }
    })
}

fn q_closed_form(ctx: &Ctx, rate: f64, tol: f64, path_index: u64) -> Result<Output> {
    let flow = ctx.flow();
    let spec = &ctx.setup.spec;
    let u0 = initial_frame(flow, 0.0, &ctx.x0)?;
    let path = simulate_path(flow, &ctx.x0, &u0, spec, path_index)?;
    let q = evolve_q(flow, &path, ctx.bounds()?, 0, ctx.q_options())?;
    let d = path.dim;
    let every = (spec.steps / 200).max(1);
    let mut worst = 0.0f64;
    let mut trace = Vec::new();
    for k in 0..=spec.steps {
        let s = spec.time(k);
        let target = DMatrix::<f64>::identity(d, d) * (-rate * s).exp();
        let dev = op_norm(&(q.at(k) - target));
        worst = worst.max(dev);
        if k % every == 0 || k == spec.steps {
            trace.push(TracePoint { t: s, value: dev, se: 0.0, bound: tol });
        }
    }
    let items = vec![Item::le("sup_k |Q_{0,k} - e^{-rate s_k} I|", worst, 0.0, tol, 0.0)];
    let details = json!({ "path": path_index, "rate": rate, "sup_deviation": worst, "local_time": path.local_time() });
    Ok(Output::new(items, details)?.with_trace(trace))
}

fn q_penalized(ctx: &Ctx, eps: &[f64], min_fraction: f64) -> Result<Output> {
    let flow = ctx.flow();
    let bounds = ctx.bounds()?;
    let base = ctx.q_options();
    let diffs = ctx.per_path(|p| {
        let proj = evolve_q(flow, p, bounds, 0, QOptions { scheme: QScheme::Projected, ..base })?;
        eps.iter()
            .map(|&e| {
                let pen = evolve_q(flow, p, bounds, 0, QOptions { scheme: QScheme::Penalized(e), ..base })?;
                Ok(proj.q.iter().zip(&pen.q).map(|(a, b)| op_norm(&(a - b))).fold(0.0, f64::max))
            })
            .collect::<pathspace_core::Result<Vec<f64>>>()
    })?;
    let n = diffs.len();
    let monotone = |d: &Vec<f64>| d.windows(2).all(|w| w[1] < w[0]);
    let decreasing = diffs.iter().filter(|d| monotone(d)).count();
    let exceptions: Vec<Value> = diffs
        .iter()
        .enumerate()
        .filter(|(_, d)| !monotone(d))
        .take(10)
        .map(|(i, d)| json!({ "path": i, "sup_difference": d }))
        .collect();
    let fraction = decreasing as f64 / n as f64;
    let mean_diff: Vec<f64> = (0..eps.len()).map(|j| diffs.iter().map(|d| d[j]).sum::<f64>() / n as f64).collect();
    let items = vec![Item::ge("fraction of paths with strictly decreasing sup|Q_eps - Q|", fraction, 0.0, min_fraction, 0.0)];
    Output::new(items, json!({ "eps": eps, "mean_sup_difference": mean_diff, "decreasing": decreasing, "n_paths": n, "exceptions": exceptions }))
}

fn q_cocycle(ctx: &Ctx, tol: Option<f64>) -> Result<Output> {
    let flow = ctx.flow();
    let bounds = ctx.bounds()?;
    let opts = ctx.q_options();
    let n = ctx.setup.spec.steps;
    let tol = tol.unwrap_or(if ctx.has_boundary() { 5.0 * ctx.dt() } else { 1e-8 });
    let defects = ctx.per_path(|p| {
        // A fixed triple and one that moves with the path index.
        let i = p.path_index as usize;
        let s = n / 4 + i % (n / 2).max(1);
        let a = cocycle_check(flow, p, bounds, opts, 0, n / 2, n)?;
        let b = cocycle_check(flow, p, bounds, opts, n / 4, s.min(n), n)?;
        Ok(a.max(b))
    })?;
    let worst = defects.iter().copied().fold(0.0, f64::max);
    let items = vec![Item::le("max_paths |Q_{r,t} - Q_{r,s} Q_{s,t}|", worst, 0.0, tol, 0.0)];
    Output::new(items, json!({ "max_defect": worst, "tol": tol, "n_paths": defects.len() }))
}

fn q_norm_bound(ctx: &Ctx, coef: f64) -> Result<Output> {
    let flow = ctx.flow();
    let bounds = ctx.bounds()?;
    let opts = ctx.q_options();
    let slack = coef * ctx.dt();
    let per_path = ctx.per_path(|p| {
        let q = evolve_q(flow, p, bounds, 0, opts)?;
        let mut violations = 0usize;
        let mut worst = f64::NEG_INFINITY;
        for (k, m) in q.bound_margin.iter().enumerate() {
            let norm = op_norm(&q.q[k]);
            let bound = norm - m;
            let excess = norm / bound - 1.0;
            worst = worst.max(excess);
            if norm > bound * (1.0 + slack) {
                violations += 1;
            }
        }
        Ok((violations, worst, p.local_time()))
    })?;
    let violations: usize = per_path.iter().map(|v| v.0).sum();
    let paths_with = per_path.iter().filter(|v| v.0 > 0).count();
    let worst = per_path.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let mean_lt = per_path.iter().map(|v| v.2).sum::<f64>() / per_path.len() as f64;
    let items = vec![Item::le("violations of |Q| <= e^{-int K - int sigma dl}(1 + coef dt)", violations as f64, 0.0, 0.0, 0.0)];
    Output::new(
        items,
        json!({
            "violations": violations,
            "paths_with_violations": paths_with,
            "worst_relative_excess": worst,
            "allowed_relative_excess": slack,
            "mean_local_time": mean_lt,
            "n_paths": per_path.len(),
        }),
    )
}

fn bel(ctx: &Ctx, f: &dyn ScalarField, expected: Option<DVector<f64>>, bias_coef: f64) -> Result<Output> {
    let flow = ctx.flow();
    let r = bel_gradient(flow, &ctx.x0, f, &xi_linear(ctx.setup.spec.steps), &ctx.setup)?;
    let mut items = Vec::new();
    let scale = expected.as_ref().map_or(1.0, |e| e.norm().max(1e-12));
    let allowance = bias_coef * ctx.bias_scale() * scale;
    for (j, s) in r.diff.iter().enumerate() {
        items.push(Item::estimate(format!("weighted - plain, component {}", j + 1), s, 0.0, allowance));
    }
    if let Some(e) = &expected {
        // The estimators report frame components u0^T grad.
        let u0 = initial_frame(flow, 0.0, &ctx.x0)?;
        let target = u0.transpose() * e;
        for j in 0..target.len() {
            items.push(Item::estimate(format!("plain, component {}", j + 1), &r.plain[j], target[j], allowance));
            items.push(Item::estimate(format!("weighted, component {}", j + 1), &r.weighted[j], target[j], allowance));
        }
    }
    Output::new(items, json!({ "report": r, "allowance": allowance, "expected": expected.map(|e| e.as_slice().to_vec()) }))
}

fn ibp(ctx: &Ctx, cf: &CylFunc, w: &DVector<f64>, eps: Vec<f64>, expected: Option<f64>) -> Result<Output> {
    let h = CMVector::linear(w, ctx.setup.spec.steps);
    let opts = IbpOptions { eps, bias_coef: 1.0 };
    let r = ibp_three_way(ctx.flow(), &ctx.x0, cf, &h, &opts, &ctx.setup)?;
    let names = ["flow derivative - damped gradient", "flow derivative - Girsanov", "damped gradient - Girsanov"];
    let mut items: Vec<Item> =
        names.iter().zip(&r.diffs).map(|(n, s)| Item::estimate(*n, s, 0.0, r.allowance)).collect();
    if let Some(e) = expected {
        items.push(Item::estimate("flow derivative vs closed form", &r.flow_fd, e, r.allowance));
        items.push(Item::estimate("damped gradient vs closed form", &r.damped, e, r.allowance));
        items.push(Item::estimate("Girsanov vs closed form", &r.girsanov, e, r.allowance));
    }
    Output::new(items, &r)
}

fn nonconvex(
    ctx: &Ctx,
    phi: Arc<ExprField>,
    beta: &DVector<f64>,
    reg: &ScanRegion,
    rc: &Option<RicciSpec>,
) -> Result<Output> {
    let flow = ctx.flow.conformal().expect("checked in prepare");
    let t_end = ctx.setup.spec.t_end;
    let rb = ricci(rc, flow, reg, t_end)?;
    let constants = conformal_constants(flow, phi.as_ref(), reg, &rb, t_end)?;
    let mut items = vec![
        Item::within("inf phi", constants.inf_phi, 0.0, 1.0, 1e-6),
        Item::ge("boundary condition II + N log phi", constants.boundary_margin, 0.0, 0.0, 1e-6),
    ];
    if !constants.admissible {
        return Output::new(items, &constants);
    }
    let phi: Arc<dyn ScalarField> = phi;
    let r = check_nonconvex_transport(flow, phi, reg, &rb, &ctx.x0, ctx.y0()?, beta, &ctx.setup)?;
    items.push(Item::ge("sandwich pairs", r.sandwich.n_pairs as f64, 0.0, 100.0, 0.0));
    items.push(Item::le("sandwich violations", r.sandwich.violations as f64, 0.0, 0.0, 0.0));
    items.push(Item::outcome("W_2^2 <= sup|phi|^2 C(T, phi) Ent", &r.talagrand));
    items.push(Item::outcome("W_2 <= 2 sup|phi| e^{int (K_phi + |grad phi|)} rho_0", &r.contraction));
    Output::new(items, &r)
}
