use std::time::Instant;

use pathspace_core::malliavin::{McSetup, QSource};
use pathspace_core::multfunc::QIntegrator;
use pathspace_core::{Executor, SimSpec};

use crate::checks::{info, prepare, Ctx};
use crate::config::{Integrator, QSourceSpec, Scenario};
use crate::error::Result;
use crate::report::{CheckRecord, ScenarioReport, Timing};

/// Command-line overrides of the `[run]` section.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    /// Worker threads; `None` runs serially.
    pub workers: Option<usize>,
}

/// Runs every check of a scenario in order.
///
/// Configuration problems (including bad check parameters) are returned as
/// errors before anything is simulated; a check that fails at run time is
/// recorded with its error and the remaining checks still run.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<ScenarioReport> {
    let start = Instant::now();
    let mut scenario = scenario.clone();
    if let Some(s) = opts.seed {
        scenario.run.seed = s;
    }
    if let Some(p) = opts.paths {
        scenario.run.paths = p;
    }
    if let Some(n) = opts.steps {
        scenario.run.steps = n;
    }
    let flow = scenario.build_flow()?;
    scenario.validate(flow.as_dyn())?;
    let bounds = scenario.bounds(flow.as_dyn())?;

    let r = &scenario.run;
    let mut spec = SimSpec::new(r.t_end, r.steps, r.seed);
    if let Some(k) = r.renorm_every {
        spec.renorm_every = k;
    }
    spec.detect_crossings = r.crossings;
    let exec = match opts.workers {
        None | Some(1) => Executor::serial(),
        Some(w) => Executor::with_workers(w),
    };
    let workers = exec.workers();
    let mut setup = McSetup::new(spec, r.paths).with_exec(exec);
    setup.q.use_crossings = r.crossings;
    setup.q.integrator = match r.integrator {
        Integrator::Exponential => QIntegrator::Exponential,
        Integrator::Euler => QIntegrator::Euler,
    };
    setup.q_source = match r.q_source {
        QSourceSpec::Fresh => QSource::Fresh,
        QSourceSpec::Backward => QSource::Backward,
        QSourceSpec::CachedInverse => QSource::CachedInverse,
    };
    let ctx = Ctx { flow, bounds, x0: scenario.x0(), y0: scenario.y0(), setup };

    let mut prepared = Vec::with_capacity(scenario.checks.len());
    for c in &scenario.checks {
        let line = scenario.line(c);
        let work = prepare(c.get_ref(), &ctx).map_err(|e| e.at_line(line))?;
        prepared.push((c.get_ref().op(), line, work));
    }

    let mut records = Vec::with_capacity(prepared.len());
    let mut per_check = Vec::with_capacity(prepared.len());
    for (op, line, work) in prepared {
        let t0 = Instant::now();
        let theorem = info(op).map_or("", |i| i.theorem);
        let rec = match work(&ctx) {
            Ok(out) => CheckRecord::new(op, line, theorem, out.items, out.details, out.trace),
            Err(e) => CheckRecord::failed(op, line, theorem, e.to_string()),
        };
        per_check.push(t0.elapsed().as_secs_f64());
        records.push(rec);
    }
    let config = serde_json::to_value(&scenario)?;
    let timing = Timing { workers, wall_seconds: start.elapsed().as_secs_f64(), per_check };
    Ok(ScenarioReport::new(scenario.name.clone(), scenario.description.clone(), config, scenario.run.seed, records, timing))
}
