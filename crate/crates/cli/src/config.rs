//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use klv_core::vector_fields::{State, VectorFieldSystem};
use klv_core::CubatureFormula;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `gbm(mu,sigma)`, `ou(theta,sigma)` or `affine(<file>)`.
    pub system: String,
    /// `identity`, `square` or `softplus(<strike>)`, applied to the first coordinate.
    pub payoff: String,
    pub x0: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub cubature: CubatureSource,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub caps: Caps,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CubatureSource {
    /// `degree3` (dimension taken from the system) or `degree5_d1`.
    Builtin(String),
    File(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    /// Defaults to `degree − 1` (at least 1).
    pub gamma: Option<f64>,
    pub k_list: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    Sampled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    pub leaf_cap: u128,
    pub samples: usize,
    pub substeps: usize,
    pub mc_steps: usize,
    pub mc_paths: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { leaf_cap: 10_000_000, samples: 100_000, substeps: 64, mc_steps: 200, mc_paths: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemKind {
    Gbm { mu: f64, sigma: f64 },
    Ou { theta: f64, sigma: f64 },
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayoffKind {
    Identity,
    Square,
    Softplus { strike: f64 },
}

impl PayoffKind {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        match s {
            "identity" => Ok(PayoffKind::Identity),
            "square" => Ok(PayoffKind::Square),
            _ => {
                let args = call_args(s, "softplus")
                    .ok_or_else(|| CliError::Usage(format!("unknown payoff '{s}'")))?;
                match parse_numbers(&args)?.as_slice() {
                    [k] => Ok(PayoffKind::Softplus { strike: *k }),
                    _ => Err(CliError::Usage("softplus takes one argument".into())),
                }
            }
        }
    }

    pub fn eval(&self, x: &State) -> f64 {
        let v = x[0];
        match self {
            PayoffKind::Identity => v,
            PayoffKind::Square => v * v,
            PayoffKind::Softplus { strike } => {
                let z = v - strike;
                z.max(0.0) + (-z.abs()).exp().ln_1p()
            }
        }
    }

    pub fn as_payoff(&self) -> impl Fn(&State) -> f64 + Send + Sync + '_ {
        move |x: &State| self.eval(x)
    }
}

/// Arguments of `name(a, b, …)`, or `None` if `s` is not such a call.
fn call_args(s: &str, name: &str) -> Option<String> {
    let rest = s.strip_prefix(name)?.trim_start();
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.to_string())
}

fn parse_numbers(args: &str) -> Result<Vec<f64>, CliError> {
    args.split(',')
        .map(|a| a.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("'{}' is not a number", a.trim()))))
        .collect()
}

pub fn parse_system(spec: &str, base: &Path) -> Result<(SystemKind, VectorFieldSystem), CliError> {
    let spec = spec.trim();
    let two = |name: &str| -> Result<Option<(f64, f64)>, CliError> {
        match call_args(spec, name) {
            None => Ok(None),
            Some(args) => match parse_numbers(&args)?.as_slice() {
                [a, b] => Ok(Some((*a, *b))),
                _ => Err(CliError::Usage(format!("{name} takes two arguments"))),
            },
        }
    };
    if let Some((mu, sigma)) = two("gbm")? {
        return Ok((SystemKind::Gbm { mu, sigma }, VectorFieldSystem::gbm(mu, sigma)));
    }
    if let Some((theta, sigma)) = two("ou")? {
        return Ok((SystemKind::Ou { theta, sigma }, VectorFieldSystem::ou(theta, sigma)));
    }
    if let Some(file) = call_args(spec, "affine") {
        let path = base.join(file.trim());
        let sys = VectorFieldSystem::from_file(&path).map_err(|e| CliError::Usage(e.to_string()))?;
        return Ok((SystemKind::Affine, sys));
    }
    Err(CliError::Usage(format!("unknown system '{spec}'")))
}

/// A fully resolved configuration.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system_kind: SystemKind,
    pub system: VectorFieldSystem,
    pub payoff: PayoffKind,
    pub cubature: CubatureFormula,
    pub cubature_label: String,
    pub gamma: f64,
    pub x0: State,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Usage(format!("{}:{}:{}: {}", path.display(), e.line(), e.column(), e))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::resolve(config, base)
    }

    pub fn resolve(config: ExperimentConfig, base: &Path) -> Result<Self, CliError> {
        let (system_kind, system) = parse_system(&config.system, base)?;
        let payoff = PayoffKind::parse(&config.payoff)?;
        if config.x0.len() != system.state_dim() {
            return Err(CliError::Usage(format!(
                "x0 has {} entries but the system has dimension {}",
                config.x0.len(),
                system.state_dim()
            )));
        }
        if !(config.horizon > 0.0) {
            return Err(CliError::Usage("T must be positive".into()));
        }
        let k = &config.partition.k_list;
        if k.is_empty() || k[0] == 0 || k.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Usage("k_list must be nonempty, positive and increasing".into()));
        }
        if config.caps.substeps == 0 {
            return Err(CliError::Usage("caps.substeps must be positive".into()));
        }
        let (cubature, cubature_label) = match &config.cubature {
            CubatureSource::Builtin(name) => (builtin(name, system.noise_dim())?, name.clone()),
            CubatureSource::File(f) => {
                let p = base.join(f);
                let q = CubatureFormula::from_file(&p).map_err(|e| CliError::Usage(e.to_string()))?;
                (q, p.display().to_string())
            }
        };
        if cubature.dimension() != system.noise_dim() {
            return Err(CliError::Usage(format!(
                "cubature dimension {} does not match {} Brownian fields",
                cubature.dimension(),
                system.noise_dim()
            )));
        }
        let gamma = config.partition.gamma.unwrap_or(((cubature.degree() as f64) - 1.0).max(1.0));
        let x0 = State::from_vec(config.x0.clone());
        Ok(Experiment { config, system_kind, system, payoff, cubature, cubature_label, gamma, x0 })
    }

    pub fn payoff_fn(&self) -> impl Fn(&State) -> f64 + Send + Sync + '_ {
        self.payoff.as_payoff()
    }
}

pub fn builtin(name: &str, dimension: usize) -> Result<CubatureFormula, CliError> {
    let q = match name {
        "degree3" => CubatureFormula::degree3(dimension),
        "degree5_d1" | "degree5" => CubatureFormula::degree5_d1(),
        other => return Err(CliError::Usage(format!("unknown builtin cubature '{other}'"))),
    };
    q.map_err(|e| CliError::Usage(e.to_string()))
}
