//! Library-level runs of built-in scenarios against closed forms.

use pathspace::report::Item;
use pathspace::{run_scenario, scenarios, RunOptions, ScenarioReport};

fn run(name: &str) -> ScenarioReport {
    run_scenario(&scenarios::builtin(name).unwrap(), &RunOptions::default()).unwrap()
}

fn item<'a>(r: &'a ScenarioReport, name: &str) -> &'a Item {
    r.checks.iter().flat_map(|c| &c.items).find(|i| i.name == name).unwrap_or_else(|| panic!("no item {name}"))
}

#[test]
fn flat_talagrand_saturates() {
    let r = run("flat-talagrand");
    assert!(r.pass, "{}", r.summary());
    let i = item(&r, "W_2^2 <= 4 C Ent");
    assert!((i.value - 0.5).abs() < 1e-9 && (i.bound - 0.5).abs() < 1e-9);
}

#[test]
fn constant_psi_is_a_time_change() {
    let r = run("psi-constant");
    assert!(r.pass, "{}", r.summary());
    let i = item(&r, "W_2^2 vs time-change prediction");
    assert!((i.value - 2.0 * 0.49 * 0.16).abs() <= 3.0 * i.se + 1e-6, "{}", i.value);
}

#[test]
fn marginal_gaussian_tilt_matches_quantile_formula() {
    let r = run("marginal-flat");
    assert!(r.pass, "{}", r.summary());
    let i = item(&r, "W_2^2 vs closed form");
    assert!((i.value - 0.36).abs() < 1e-4, "{}", i.value);
}

#[test]
fn expression_flow_reproduces_builtin_q() {
    let r = run("expr-ou");
    assert!(r.pass, "{}", r.summary());
}

#[test]
fn ibp_flat_hits_the_closed_form() {
    let r = run("ibp-flat");
    assert!(r.pass, "{}", r.summary());
    let exact = std::f64::consts::SQRT_2 * (0.3 - 0.5);
    let i = item(&r, "damped gradient vs closed form");
    assert!((i.value - exact).abs() < 1e-9);
}

#[test]
fn bounds_override_changes_the_verdict() {
    // Claiming K = 2 on OU with lambda = 1 overstates the contraction.
    let src = scenarios::builtin_source("ou-contraction").unwrap().replace("[start]", "[bounds]\nk = 2.0\n\n[start]");
    let s = pathspace::Scenario::parse(&src).unwrap();
    let r = run_scenario(&s, &RunOptions::default()).unwrap();
    assert!(!r.pass);
    assert_eq!(r.exit_code(), 1);
}
