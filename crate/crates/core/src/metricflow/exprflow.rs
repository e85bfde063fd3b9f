//! Flows defined by closed-form expressions in a TOML document.
//!
//! ```toml
//! name = "stretched"
//! dim = 2
//! horizon = 5.0
//! metric = [["exp(2*t)", "0"], ["0", "1 + x1^2"]]
//! drift = ["-x1", "-x2"]        # optional, default 0
//! boundary = "x2"               # optional: M = {b >= 0}
//! domain = "4 - x1^2 - x2^2"    # optional: chart = {domain > 0}
//!
//! [bounds]                      # optional analytic bounds, expressions in t
//! k = "0.5"
//! sigma = "0"
//! ```
//!
//! Entries may be numbers or strings. All derivatives are finite differences.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::{BoundFn, CurvatureBounds, MetricFlow, Provenance};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{ExprField, ScalarField};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Entry {
    Num(f64),
    Text(String),
}

impl Entry {
    fn source(&self) -> String {
        match self {
            Entry::Num(v) => format!("{v:?}"),
            Entry::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsDef {
    k: Entry,
    sigma: Option<Entry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowDef {
    name: String,
    dim: usize,
    horizon: Option<f64>,
    metric: Vec<Vec<Entry>>,
    drift: Option<Vec<Entry>>,
    boundary: Option<Entry>,
    domain: Option<Entry>,
    bounds: Option<BoundsDef>,
}

pub struct ExprFlow {
    name: String,
    dim: usize,
    horizon: f64,
    metric: Vec<ExprField>,
    drift: Vec<ExprField>,
    boundary: Option<Arc<dyn ScalarField>>,
    domain: Option<ExprField>,
    bounds: Option<CurvatureBounds>,
}

impl std::fmt::Debug for ExprFlow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExprFlow").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

fn field(e: &Entry, dim: usize, what: &str) -> Result<ExprField> {
    ExprField::parse(&e.source(), dim).map_err(|err| Error::Definition(format!("{what}: {err}")))
}

fn time_fn(e: &Entry, what: &str) -> Result<BoundFn> {
    let expr = Expr::parse(&e.source(), &["t"]).map_err(|err| Error::Definition(format!("{what}: {err}")))?;
    Ok(BoundFn::func(move |t| expr.eval(&[t])))
}

impl ExprFlow {
    pub fn from_toml(src: &str) -> Result<Self> {
        let def: FlowDef = toml::from_str(src).map_err(|e| Error::Definition(e.to_string()))?;
        let d = def.dim;
        if d == 0 || d > 8 {
            return Err(Error::Definition(format!("dim must be in 1..=8, got {d}")));
        }
        if def.metric.len() != d || def.metric.iter().any(|r| r.len() != d) {
            return Err(Error::Definition(format!("metric must be a {d}x{d} array")));
        }
        let mut metric = Vec::with_capacity(d * d);
        for (i, row) in def.metric.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                metric.push(field(e, d, &format!("metric[{i}][{j}]"))?);
            }
        }
        let drift = match &def.drift {
            None => (0..d).map(|_| ExprField::parse("0", d)).collect::<Result<Vec<_>>>()?,
            Some(z) if z.len() == d => z
                .iter()
                .enumerate()
                .map(|(i, e)| field(e, d, &format!("drift[{i}]")))
                .collect::<Result<Vec<_>>>()?,
            Some(z) => return Err(Error::Definition(format!("drift has {} entries, expected {d}", z.len()))),
        };
        let boundary = match &def.boundary {
            Some(e) => Some(Arc::new(field(e, d, "boundary")?) as Arc<dyn ScalarField>),
            None => None,
        };
        let domain = def.domain.as_ref().map(|e| field(e, d, "domain")).transpose()?;
        let bounds = match &def.bounds {
            Some(b) => Some(CurvatureBounds {
                k: time_fn(&b.k, "bounds.k")?,
                sigma: match &b.sigma {
                    Some(s) => time_fn(s, "bounds.sigma")?,
                    None => BoundFn::Const(0.0),
                },
                provenance: Provenance::Analytic,
            }),
            None => None,
        };
        let horizon = def.horizon.unwrap_or(f64::INFINITY);
        if !(horizon > 0.0) {
            return Err(Error::Definition("horizon must be positive".into()));
        }
        Ok(Self { name: def.name, dim: d, horizon, metric, drift, boundary, domain, bounds })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Definition(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&src)
    }
}

impl MetricFlow for ExprFlow {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn in_chart(&self, x: &DVector<f64>) -> bool {
        self.domain.as_ref().is_none_or(|f| f.value(0.0, x) > 0.0)
    }

    fn metric(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim;
        let m = DMatrix::from_fn(d, d, |i, j| self.metric[i * d + j].value(t, x));
        crate::linalg::sym(&m)
    }

    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| self.drift[i].value(t, x))
    }

    fn boundary(&self) -> Option<&dyn ScalarField> {
        self.boundary.as_deref()
    }

    fn analytic_bounds(&self) -> Option<CurvatureBounds> {
        self.bounds.clone()
    }
}
