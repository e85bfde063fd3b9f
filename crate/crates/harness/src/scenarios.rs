//! Scenarios shipped with the binary; `run <name>` resolves these before files.

macro_rules! builtins {
    ($($name:literal),* $(,)?) => {
        /// `(name, TOML source)` of every built-in scenario.
        pub const BUILTINS: &[(&str, &str)] = &[$(($name, include_str!(concat!("../scenarios/", $name, ".toml")))),*];
    };
}

builtins!(
    "ou-q-closed-form",
    "cocycle-ou",
    "cocycle-half-line",
    "norm-bound-ou",
    "norm-bound-half-line",
    "norm-bound-sphere",
    "penalized-half-line",
    "bismut-ou",
    "bismut-half-line",
    "gradient-formula-ou",
    "ibp-flat",
    "ibp-ou",
    "ibp-half-line",
    "clark-ocone-ou",
    "lsi-ou",
    "lsi-half-line",
    "lsi-sphere",
    "lsi-free-path",
    "ou-contraction",
    "conformal-contraction",
    "flat-talagrand",
    "ou-talagrand",
    "marginal-flat",
    "marginal-ou",
    "marginal-half-line",
    "psi-constant",
    "psi-sine",
    "disk-nonconvex",
    "smoke",
    "expr-ou",
);

use crate::config::Scenario;
use crate::error::{HarnessError, Result};

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin(name: &str) -> Result<Scenario> {
    let src = builtin_source(name).ok_or_else(|| HarnessError::config(format!("unknown built-in scenario `{name}`")))?;
    Scenario::parse(src)
}

/// `name  description` lines for `list`.
pub fn list() -> String {
    let mut out = String::new();
    for (name, _) in BUILTINS {
        let desc = builtin(name).map(|s| s.description).unwrap_or_default();
        out.push_str(&format!("{name:<24} {desc}\n"));
    }
    out
}
