use std::io::Write;

use pathspace_core::stats::Summary;
use pathspace_core::transport::{Outcome, TracePoint};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    /// `|value − bound| ≤ slack`.
    #[serde(rename = "~")]
    Within,
}

/// One judged quantity: `value` against `bound` with `slack` allowed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Item {
    pub name: String,
    pub value: f64,
    pub se: f64,
    pub bound: f64,
    pub relation: Relation,
    pub slack: f64,
    /// Positive when the relation holds without using the slack.
    pub margin: f64,
    pub pass: bool,
}

impl Item {
    fn new(name: impl Into<String>, value: f64, se: f64, bound: f64, relation: Relation, slack: f64) -> Self {
        let (margin, pass) = match relation {
            Relation::Le => (bound - value, value <= bound + slack),
            Relation::Ge => (value - bound, value >= bound - slack),
            Relation::Within => (slack - (value - bound).abs(), (value - bound).abs() <= slack),
        };
        let finite = value.is_finite() && bound.is_finite() && slack.is_finite();
        Self { name: name.into(), value, se, bound, relation, slack, margin, pass: pass && finite }
    }

    pub fn le(name: impl Into<String>, value: f64, se: f64, bound: f64, slack: f64) -> Self {
        Self::new(name, value, se, bound, Relation::Le, slack)
    }

    pub fn ge(name: impl Into<String>, value: f64, se: f64, bound: f64, slack: f64) -> Self {
        Self::new(name, value, se, bound, Relation::Ge, slack)
    }

    pub fn within(name: impl Into<String>, value: f64, se: f64, target: f64, slack: f64) -> Self {
        Self::new(name, value, se, target, Relation::Within, slack)
    }

    /// A Monte Carlo mean against a target, `3·SE + extra`.
    pub fn estimate(name: impl Into<String>, s: &Summary, target: f64, extra: f64) -> Self {
        Self::within(name, s.mean, s.se, target, 3.0 * s.se + extra)
    }

    pub fn outcome(name: impl Into<String>, o: &Outcome) -> Self {
        Self::le(name, o.lhs, o.se, o.rhs, o.slack)
    }
}

/// The result of one `[[check]]` entry.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub op: String,
    pub line: usize,
    pub theorem: String,
    pub items: Vec<Item>,
    /// Set when the check could not be evaluated; the check then fails.
    pub error: Option<String>,
    pub details: Value,
    pub pass: bool,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

impl CheckRecord {
    pub fn new(op: &str, line: usize, theorem: &str, items: Vec<Item>, details: Value, trace: Vec<TracePoint>) -> Self {
        let pass = !items.is_empty() && items.iter().all(|i| i.pass);
        Self { op: op.into(), line, theorem: theorem.into(), items, error: None, details, pass, trace }
    }

    pub fn failed(op: &str, line: usize, theorem: &str, error: String) -> Self {
        Self {
            op: op.into(),
            line,
            theorem: theorem.into(),
            items: Vec::new(),
            error: Some(error),
            details: Value::Null,
            pass: false,
            trace: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RngInfo {
    pub generator: &'static str,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub workers: usize,
    pub wall_seconds: f64,
    /// Seconds per check, in check order.
    pub per_check: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub description: String,
    pub config: Value,
    pub rng: RngInfo,
    pub checks: Vec<CheckRecord>,
    pub errors: usize,
    pub pass: bool,
    /// Excluded from [`ScenarioReport::deterministic_json`].
    pub timing: Timing,
}

impl ScenarioReport {
    pub fn new(scenario: String, description: String, config: Value, seed: u64, checks: Vec<CheckRecord>, timing: Timing) -> Self {
        let errors = checks.iter().filter(|c| c.error.is_some()).count();
        let pass = checks.iter().all(|c| c.pass);
        Self {
            scenario,
            description,
            config,
            rng: RngInfo { generator: pathspace_core::rng::GENERATOR, seed },
            checks,
            errors,
            pass,
            timing,
        }
    }

    /// `0` all pass, `1` some check failed, `3` some check could not run.
    pub fn exit_code(&self) -> i32 {
        if self.errors > 0 {
            3
        } else if !self.pass {
            1
        } else {
            0
        }
    }

    /// The full report, timing included.
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// The report without the `timing` field; identical across reruns and worker counts.
    pub fn deterministic_json(&self) -> serde_json::Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.remove("timing");
        }
        serde_json::to_string_pretty(&v)
    }

    /// Rows `scenario,check,s_k,value,se` for every traced check.
    pub fn write_trace_csv<W: Write>(&self, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "scenario,check,s_k,value,se")?;
        }
        for (i, c) in self.checks.iter().enumerate() {
            for p in &c.trace {
                writeln!(w, "{},{}#{},{:e},{:e},{:e}", self.scenario, c.op, i + 1, p.t, p.value, p.se)?;
            }
        }
        Ok(())
    }

    /// One line per check for terminal output.
    pub fn summary(&self) -> String {
        let mut out = format!("scenario {}: {}\n", self.scenario, if self.pass { "PASS" } else { "FAIL" });
        for c in &self.checks {
            let status = match (&c.error, c.pass) {
                (Some(_), _) => "ERROR",
                (None, true) => "pass",
                (None, false) => "FAIL",
            };
            out.push_str(&format!("  {:<26} [{}] {status}", c.op, c.theorem));
            if let Some(e) = &c.error {
                out.push_str(&format!(": {e}"));
            }
            out.push('\n');
            for it in &c.items {
                let rel = match it.relation {
                    Relation::Le => "<=",
                    Relation::Ge => ">=",
                    Relation::Within => "~",
                };
                out.push_str(&format!(
                    "      {:<5} {}: {:.6e} {rel} {:.6e} (slack {:.2e}, se {:.2e})\n",
                    if it.pass { "ok" } else { "FAIL" },
                    it.name,
                    it.value,
                    it.bound,
                    it.slack,
                    it.se
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn item_relations() {
        assert!(Item::le("a", 1.0, 0.0, 1.0, 0.0).pass);
        assert!(!Item::le("a", 1.1, 0.0, 1.0, 0.05).pass);
        assert!(Item::ge("a", 0.96, 0.0, 1.0, 0.05).pass);
        let w = Item::within("a", 1.02, 0.0, 1.0, 0.05);
        assert!(w.pass && (w.margin - 0.03).abs() < 1e-12);
        assert!(!Item::le("a", f64::NAN, 0.0, 1.0, 0.0).pass);
    }

    #[test]
    fn pass_is_derived_from_items() {
        let ok = CheckRecord::new("x", 1, "t", vec![Item::le("a", 0.0, 0.0, 1.0, 0.0)], Value::Null, vec![]);
        let bad = CheckRecord::new("x", 2, "t", vec![Item::le("a", 2.0, 0.0, 1.0, 0.0)], Value::Null, vec![]);
        let empty = CheckRecord::new("x", 3, "t", vec![], Value::Null, vec![]);
        let err = CheckRecord::failed("x", 4, "t", "boom".into());
        assert!(ok.pass && !bad.pass && !empty.pass && !err.pass);
        let timing = Timing { workers: 1, wall_seconds: 0.0, per_check: vec![] };
        let r = ScenarioReport::new("s".into(), String::new(), Value::Null, 1, vec![ok.clone()], timing.clone());
        assert_eq!(r.exit_code(), 0);
        let r = ScenarioReport::new("s".into(), String::new(), Value::Null, 1, vec![ok.clone(), bad], timing.clone());
        assert_eq!(r.exit_code(), 1);
        let r = ScenarioReport::new("s".into(), String::new(), Value::Null, 1, vec![ok, err], timing);
        assert_eq!(r.exit_code(), 3);
        assert!(!r.deterministic_json().unwrap().contains("wall_seconds"));
        assert!(r.to_json().unwrap().contains("wall_seconds"));
    }
}
