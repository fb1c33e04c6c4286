//! Reference values for `E[f(X_T)]`.

use klv_core::solver::euler_mc;
use serde::Serialize;

use crate::config::{Experiment, PayoffKind, SystemKind};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    ClosedForm,
    EulerMonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reference {
    pub value: f64,
    pub source: ReferenceSource,
    pub stderr: Option<f64>,
    pub mc_steps: Option<usize>,
    pub mc_paths: Option<usize>,
}

/// Closed forms for the Stratonovich built-ins:
/// GBM `X_T = x·exp(μT + σB_T)` and the Gaussian OU process.
pub fn closed_form(kind: SystemKind, payoff: PayoffKind, x: f64, t: f64) -> Option<f64> {
    match (kind, payoff) {
        (SystemKind::Gbm { mu, sigma }, PayoffKind::Identity) => Some(x * ((mu + 0.5 * sigma * sigma) * t).exp()),
        (SystemKind::Gbm { mu, sigma }, PayoffKind::Square) => Some(x * x * (2.0 * (mu + sigma * sigma) * t).exp()),
        (SystemKind::Ou { theta, sigma }, p @ (PayoffKind::Identity | PayoffKind::Square)) => {
            let mean = x * (-theta * t).exp();
            if p == PayoffKind::Identity {
                return Some(mean);
            }
            let var = if theta == 0.0 {
                sigma * sigma * t
            } else {
                sigma * sigma * (1.0 - (-2.0 * theta * t).exp()) / (2.0 * theta)
            };
            Some(mean * mean + var)
        }
        _ => None,
    }
}

pub fn euler_reference(exp: &Experiment, seed: u64) -> Result<Reference, CliError> {
    let caps = &exp.config.caps;
    let f = exp.payoff_fn();
    let est = euler_mc(&exp.system, &f, &exp.x0, exp.config.horizon, caps.mc_steps, caps.mc_paths, seed)
        .map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(Reference {
        value: est.mean,
        source: ReferenceSource::EulerMonteCarlo,
        stderr: Some(est.stderr),
        mc_steps: Some(est.steps),
        mc_paths: Some(est.paths),
    })
}

/// Closed form when one exists, otherwise Euler–Maruyama with the
/// configured budget.
pub fn reference(exp: &Experiment, seed: u64) -> Result<Reference, CliError> {
    let x = exp.x0[0];
    match (exp.x0.len(), closed_form(exp.system_kind, exp.payoff, x, exp.config.horizon)) {
        (1, Some(value)) => Ok(Reference {
            value,
            source: ReferenceSource::ClosedForm,
            stderr: None,
            mc_steps: None,
            mc_paths: None,
        }),
        _ => euler_reference(exp, seed),
    }
}
