//! The acceptance suite: fifteen criteria, each backed by built-in scenarios
//! plus runtime limits and a few extra conditions.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use crate::error::Result;
use crate::report::ScenarioReport;
use crate::runner::{run_scenario, RunOptions};
use crate::scenarios;

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub title: &'static str,
    pub pass: bool,
    pub seconds: f64,
    pub detail: String,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {} ({:.2} s): {}",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.seconds,
            self.detail
        )
    }
}

/// Outcome of the scenarios behind one criterion.
struct Tally {
    pass: bool,
    notes: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Self { pass: true, notes: Vec::new() }
    }

    fn require(&mut self, ok: bool, note: impl Into<String>) {
        self.pass &= ok;
        let note = note.into();
        self.notes.push(if ok { note } else { format!("FAILED {note}") });
    }

    /// Runs a built-in scenario and requires every check to pass.
    fn scenario(&mut self, name: &str, opts: &RunOptions) -> Option<(ScenarioReport, f64)> {
        let t0 = Instant::now();
        match scenarios::builtin(name).and_then(|s| run_scenario(&s, opts)) {
            Ok(r) => {
                let secs = t0.elapsed().as_secs_f64();
                let failing: Vec<String> = r
                    .checks
                    .iter()
                    .flat_map(|c| {
                        let err = c.error.iter().map(move |e| format!("{}: {e}", c.op));
                        let items = c.items.iter().filter(|i| !i.pass).map(move |i| format!("{}: {}", c.op, i.name));
                        err.chain(items)
                    })
                    .collect();
                let note = if failing.is_empty() {
                    format!("{name} ok in {secs:.2} s")
                } else {
                    format!("{name} [{}]", failing.join("; "))
                };
                self.require(r.pass, note);
                Some((r, secs))
            }
            Err(e) => {
                self.require(false, format!("{name}: {e}"));
                None
            }
        }
    }

    fn finish(self, id: usize, title: &'static str, t0: Instant) -> CriterionResult {
        CriterionResult { id, title, pass: self.pass, seconds: t0.elapsed().as_secs_f64(), detail: self.notes.join(", ") }
    }
}

/// First item of the first check whose name starts with `prefix`.
fn item<'a>(r: &'a ScenarioReport, prefix: &str) -> Option<&'a crate::report::Item> {
    r.checks.iter().flat_map(|c| c.items.iter()).find(|i| i.name.starts_with(prefix))
}

fn serial() -> RunOptions {
    RunOptions::default()
}

type Criterion = fn(&mut Tally, &Suite);

/// Settings shared by the criteria.
pub struct Suite {
    /// The `pathspace` binary, for the exit-code checks; in-process codes otherwise.
    pub binary: Option<PathBuf>,
    pub started: Instant,
}

const CRITERIA: [(&str, Criterion); 15] = [
    ("Q closed form", c1),
    ("cocycle", c2),
    ("norm bound", c3),
    ("penalized to projected", c4),
    ("Bismut formula", c5),
    ("gradient formula", c6),
    ("integration by parts", c7),
    ("Clark-Ocone", c8),
    ("log-Sobolev", c9),
    ("contraction", c10),
    ("Talagrand", c11),
    ("marginal inequalities", c12),
    ("psi extension", c13),
    ("non-convex extension", c14),
    ("engineering", c15),
];

fn c1(t: &mut Tally, _: &Suite) {
    if let Some((r, secs)) = t.scenario("ou-q-closed-form", &serial()) {
        if let Some(i) = item(&r, "sup_k") {
            t.require(true, format!("sup deviation {:.2e}", i.value));
        }
        t.require(secs < 1.0, format!("runtime {secs:.2} s < 1 s"));
    }
}

fn c2(t: &mut Tally, _: &Suite) {
    for name in ["cocycle-ou", "cocycle-half-line"] {
        if let Some((r, _)) = t.scenario(name, &serial()) {
            if let Some(i) = item(&r, "max_paths") {
                t.require(true, format!("max defect {:.2e} <= {:.2e}", i.value, i.bound));
            }
        }
    }
}

fn c3(t: &mut Tally, _: &Suite) {
    let mut total = 0.0;
    for name in ["norm-bound-ou", "norm-bound-half-line", "norm-bound-sphere"] {
        if let Some((r, secs)) = t.scenario(name, &serial()) {
            total += secs;
            let paths = r.config["run"]["paths"].as_u64().unwrap_or(0);
            t.require(paths >= 10_000, format!("{paths} paths"));
        }
    }
    t.require(total < 30.0, format!("runtime {total:.1} s < 30 s"));
}

fn c4(t: &mut Tally, _: &Suite) {
    if let Some((r, _)) = t.scenario("penalized-half-line", &serial()) {
        if let Some(i) = item(&r, "fraction") {
            t.require(true, format!("decreasing on {:.1}% of paths", 100.0 * i.value));
        }
    }
}

fn c5(t: &mut Tally, _: &Suite) {
    if let Some((r, secs)) = t.scenario("bismut-ou", &serial()) {
        let paths = r.config["run"]["paths"].as_u64().unwrap_or(0);
        t.require(paths >= 100_000, format!("{paths} paths"));
        t.require(secs < 60.0, format!("runtime {secs:.1} s < 60 s"));
    }
    t.scenario("bismut-half-line", &serial());
}

fn c6(t: &mut Tally, _: &Suite) {
    if let Some((r, secs)) = t.scenario("gradient-formula-ou", &serial()) {
        if let Some(i) = item(&r, "relative error") {
            t.require(true, format!("relative error {:.3}", i.value));
        }
        t.require(secs < 120.0, format!("runtime {secs:.1} s < 120 s"));
    }
}

fn c7(t: &mut Tally, _: &Suite) {
    for name in ["ibp-flat", "ibp-ou", "ibp-half-line"] {
        t.scenario(name, &serial());
    }
}

fn c8(t: &mut Tally, _: &Suite) {
    if let Some((r, _)) = t.scenario("clark-ocone-ou", &serial()) {
        if let Some(i) = item(&r, "residual") {
            t.require(true, format!("residual {:.4} of Var F", i.value));
        }
    }
}

fn c9(t: &mut Tally, _: &Suite) {
    let mut n = 0;
    for name in ["lsi-ou", "lsi-half-line", "lsi-sphere", "lsi-free-path"] {
        if let Some((r, _)) = t.scenario(name, &serial()) {
            n += r.checks.len();
        }
    }
    t.require(n == 6, format!("{n} functionals"));
}

fn c10(t: &mut Tally, _: &Suite) {
    if let Some((r, _)) = t.scenario("ou-contraction", &serial()) {
        if let Some(i) = item(&r, "terminal W_p vs closed form") {
            t.require(true, format!("terminal gap {:.2e}", (i.value - i.bound).abs()));
        }
    }
    t.scenario("conformal-contraction", &serial());
}

fn c11(t: &mut Tally, _: &Suite) {
    if let Some((r, _)) = t.scenario("flat-talagrand", &serial()) {
        if let Some(i) = item(&r, "W_2^2 <=") {
            t.require(true, format!("flat: {:.4} vs {:.4}", i.value, i.bound));
        }
    }
    if let Some((r, _)) = t.scenario("ou-talagrand", &serial()) {
        if let Some(i) = item(&r, "W_2^2 <=") {
            t.require(i.margin > 0.0, format!("OU margin {:.4}", i.margin));
        }
    }
}

fn c12(t: &mut Tally, _: &Suite) {
    for name in ["marginal-flat", "marginal-ou", "marginal-half-line"] {
        if let Some((r, _)) = t.scenario(name, &serial()) {
            let m: Vec<String> = r.checks[0]
                .items
                .iter()
                .filter(|i| i.name.starts_with("W_2^2 <=") || i.name.starts_with("small"))
                .map(|i| format!("{:.2e}", i.margin))
                .collect();
            t.require(true, format!("{name} margins [{}]", m.join(", ")));
        }
    }
}

fn c13(t: &mut Tally, _: &Suite) {
    t.scenario("psi-constant", &serial());
    t.scenario("psi-sine", &serial());
}

fn c14(t: &mut Tally, s: &Suite) {
    if let Some((r, _)) = t.scenario("disk-nonconvex", &serial()) {
        if let Some(i) = item(&r, "sandwich pairs") {
            t.require(true, format!("{} sandwich pairs", i.value));
        }
    }
    let total = s.started.elapsed().as_secs_f64();
    t.require(total < 600.0, format!("suite runtime so far {total:.0} s < 600 s"));
}

fn exit_code_of(bin: &Path, args: &[&str]) -> std::io::Result<i32> {
    let out = Command::new(bin).args(args).output()?;
    Ok(out.status.code().unwrap_or(-1))
}

fn temp_file(tag: &str, contents: &str) -> std::io::Result<PathBuf> {
    let path = std::env::temp_dir().join(format!("pathspace-acceptance-{}-{tag}.toml", std::process::id()));
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn c15(t: &mut Tally, s: &Suite) {
    let json = |opts: &RunOptions| -> Result<String> {
        let r = run_scenario(&scenarios::builtin("smoke")?, opts)?;
        Ok(r.deterministic_json()?)
    };
    let t0 = Instant::now();
    let first = json(&serial());
    let smoke_secs = t0.elapsed().as_secs_f64();
    let smoke_ok = first.is_ok();
    t.require(smoke_ok && smoke_secs < 5.0, format!("smoke run {smoke_secs:.2} s < 5 s"));
    let Ok(first) = first else { return };
    let again = json(&serial()).ok();
    t.require(again.as_deref() == Some(first.as_str()), "rerun byte-identical");
    for w in [4, 8] {
        let other = json(&RunOptions { workers: Some(w), ..serial() }).ok();
        t.require(other.as_deref() == Some(first.as_str()), format!("{w} workers identical"));
    }

    // Exit codes: 0 pass, 1 failing check, 2 configuration error, 3 runtime error.
    let base = scenarios::builtin_source("ou-q-closed-form").unwrap_or_default().replace("steps = 10000", "steps = 100");
    let failing = base.replace("rate = 1.0", "rate = 2.0");
    let bad_config = base.replace("t_end = 1.0", "t_end = 0.0");
    let runtime = scenarios::builtin_source("disk-nonconvex")
        .unwrap_or_default()
        .replace("op = \"check_nonconvex_transport\"", "op = \"check_contraction\"")
        .lines()
        .filter(|l| !l.starts_with("phi") && !l.starts_with("beta") && !l.starts_with("region"))
        .collect::<Vec<_>>()
        .join("\n");
    let cases = [("pass", base, 0), ("fail", failing, 1), ("config", bad_config, 2), ("runtime", runtime, 3)];
    let mut codes = Vec::new();
    let mut ok = true;
    for (tag, src, want) in cases {
        let got = match &s.binary {
            Some(bin) => temp_file(tag, &src).and_then(|p| {
                let out = p.with_extension("json");
                let code = exit_code_of(bin, &["run", p.to_str().unwrap_or_default(), "--out", out.to_str().unwrap_or_default()]);
                let _ = std::fs::remove_file(&p);
                let _ = std::fs::remove_file(&out);
                code
            }),
            None => Ok(match crate::Scenario::parse(&src).and_then(|sc| run_scenario(&sc, &serial())) {
                Ok(r) => r.exit_code(),
                Err(e) => e.exit_code(),
            }),
        };
        let got = got.unwrap_or(-1);
        codes.push(format!("{tag}={got}"));
        ok &= got == want;
    }
    let how = if s.binary.is_some() { "binary" } else { "in-process" };
    t.require(ok, format!("exit codes ({how}) {}", codes.join(" ")));
}

/// Runs criteria whose ids are in `only` (all when empty), reporting each
/// result through `emit` as soon as it is known.
pub fn run(binary: Option<PathBuf>, only: &[usize], mut emit: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let suite = Suite { binary, started: Instant::now() };
    let mut out = Vec::new();
    for (i, (title, f)) in CRITERIA.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let mut tally = Tally::new();
        f(&mut tally, &suite);
        let r = tally.finish(id, title, t0);
        emit(&r);
        out.push(r);
    }
    out
}
