//! Convergence sweeps and the flow-versus-tensor gap study.

use klv_core::lie::right_bracketing;
use klv_core::operator::{flow_tensor_gap, remainder_bound, BoxBound, MultiPoly};
use klv_core::solver::{gamma_partition, klv_full, klv_sampled, SolverConfig, SolverResult};
use klv_core::vector_fields::{bracket_field, FlowConfig, State, VectorField, VectorFieldSystem};
use klv_core::{GradedTensor, LiePolynomial};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Experiment, Mode};
use crate::reference::Reference;
use crate::slope::{fit_slope, SlopeFit};
use crate::CliError;

fn core_err(e: klv_core::KlvError) -> CliError {
    CliError::Failure(e.to_string())
}

pub fn solver_config(exp: &Experiment) -> SolverConfig {
    SolverConfig { flow: FlowConfig::with_substeps(exp.config.caps.substeps), leaf_cap: exp.config.caps.leaf_cap }
}

/// One KLV run with `k` steps of the configured γ-partition.
pub fn solve(exp: &Experiment, k: usize, seed: u64) -> Result<SolverResult, CliError> {
    let partition = gamma_partition(exp.config.horizon, k, exp.gamma).map_err(|e| CliError::Usage(e.to_string()))?;
    let f = exp.payoff_fn();
    let cfg = solver_config(exp);
    match exp.config.mode {
        Mode::Full => klv_full(&exp.cubature, &exp.system, &f, &exp.x0, &partition, &cfg),
        Mode::Sampled => {
            klv_sampled(&exp.cubature, &exp.system, &f, &exp.x0, &partition, exp.config.caps.samples, seed, &cfg)
        }
    }
    .map_err(core_err)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub gaps: Vec<f64>,
    pub value: f64,
    pub abs_error: f64,
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSummary {
    pub system: String,
    pub payoff: String,
    pub cubature: String,
    pub degree: usize,
    pub gamma: f64,
    pub horizon: f64,
    pub mode: Mode,
    pub seed: u64,
    pub reference: Reference,
    pub rows: Vec<ConvergenceRow>,
    pub fit: Option<SlopeFit>,
    pub fit_error: Option<String>,
    /// `−(m − 1)/2` for a degree-`m` formula.
    pub expected_slope: f64,
}

/// Sampled runs use seed `seed + k` for the run with `k` steps.
pub fn converge(exp: &Experiment, reference: Reference, seed: u64) -> Result<ConvergenceSummary, CliError> {
    let mut rows = Vec::new();
    for &k in &exp.config.partition.k_list {
        let r = solve(exp, k, seed.wrapping_add(k as u64))?;
        rows.push(ConvergenceRow {
            k,
            gaps: r.partition.gaps(),
            value: r.value,
            abs_error: (r.value - reference.value).abs(),
            stderr: r.diagnostics.stderr,
        });
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.k as f64, r.abs_error)).collect();
    let (fit, fit_error) = match fit_slope(&pairs) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(ConvergenceSummary {
        system: exp.config.system.clone(),
        payoff: exp.config.payoff.clone(),
        cubature: exp.cubature_label.clone(),
        degree: exp.cubature.degree(),
        gamma: exp.gamma,
        horizon: exp.config.horizon,
        mode: exp.config.mode,
        seed,
        reference,
        rows,
        fit,
        fit_error,
        expected_slope: -((exp.cubature.degree() as f64) - 1.0) / 2.0,
    })
}

/// `k,value,reference,abs_error` with shortest round-trip float formatting.
pub fn convergence_csv(summary: &ConvergenceSummary) -> String {
    let mut out = String::from("k,value,reference,abs_error\n");
    for r in &summary.rows {
        out.push_str(&format!("{},{},{},{}\n", r.k, r.value, summary.reference.value, r.abs_error));
    }
    out
}

/// Random affine fields `V₁, V₂` on `R²` (no drift), a random cubic and a
/// random drift-free Lie polynomial of truncation `m`.
pub struct GapSetup {
    pub system: VectorFieldSystem,
    pub payoff: MultiPoly,
    pub lie: LiePolynomial,
    pub x: State,
}

pub fn gap_setup(m: usize, seed: u64) -> Result<GapSetup, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = |rng: &mut ChaCha8Rng| {
        VectorField::affine(
            DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.5..0.5)),
            DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5)),
        )
        .unwrap()
    };
    let (v1, v2) = (field(&mut rng), field(&mut rng));
    let comm = bracket_field(&v1, &v2, None).map_err(core_err)?;
    let (a, b) = comm.as_affine().unwrap();
    if a.norm() + b.norm() < 1e-3 {
        return Err(CliError::Failure("sampled fields nearly commute; pick another seed".into()));
    }
    let system = VectorFieldSystem::new(vec![VectorField::zero(2), v1, v2]).map_err(core_err)?;

    let mut terms = Vec::new();
    for i in 0..=3u32 {
        for j in 0..=3 - i {
            terms.push((vec![i, j], rng.random_range(-1.0..1.0)));
        }
    }
    let payoff = MultiPoly::from_terms(2, terms).map_err(core_err)?;

    // Σ c_u [u₁,[u₂,…]] over words in the letters 1, 2.
    let mut acc: Vec<(klv_core::Word, f64)> = Vec::new();
    let words: Vec<_> = GradedTensor::zero(2, m)
        .basis()
        .words()
        .iter()
        .filter(|w| !w.is_empty() && !w.letters().contains(&0))
        .cloned()
        .collect();
    for w in words {
        let c = rng.random_range(-1.0..1.0) / w.len() as f64;
        acc.extend(right_bracketing(&w).into_iter().map(|(u, s)| (u, s * c)));
    }
    let tensor = GradedTensor::from_terms(2, m, acc).map_err(core_err)?;
    let lie = LiePolynomial::certify(tensor, 1e-10).map_err(core_err)?;
    let x = State::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
    Ok(GapSetup { system, payoff, lie, x })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub degree: usize,
    pub seed: u64,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub gaps: Vec<f64>,
    pub fit: SlopeFit,
    /// `(m + 1)/2`.
    pub expected_slope: f64,
    /// Enclosure of the remainder bound at `s = 1` on `[−2, 2]²`.
    pub bound: BoxBound,
    /// Largest gap at `s = 1` over a grid of `[−2, 2]²`.
    pub max_gap_on_box: f64,
    pub bound_holds: bool,
}

pub fn lemma_gap(m: usize, seed: u64, s_grid: &[f64], substeps: usize) -> Result<GapReport, CliError> {
    let setup = gap_setup(m, seed)?;
    let cfg = FlowConfig::with_substeps(substeps);
    let gaps = s_grid
        .iter()
        .map(|&s| flow_tensor_gap(&setup.lie, &setup.system, &setup.payoff, &setup.x, s, &cfg))
        .collect::<klv_core::Result<Vec<f64>>>()
        .map_err(core_err)?;
    let fit = fit_slope(&s_grid.iter().copied().zip(gaps.iter().copied()).collect::<Vec<_>>())?;
    let bound = remainder_bound(&setup.lie, &setup.system, &setup.payoff, 2.0, 41).map_err(core_err)?;
    let mut max_gap: f64 = 0.0;
    let n = 9;
    for i in 0..n {
        for j in 0..n {
            let x = State::from_vec(vec![-2.0 + 4.0 * i as f64 / (n - 1) as f64, -2.0 + 4.0 * j as f64 / (n - 1) as f64]);
            let g = flow_tensor_gap(&setup.lie, &setup.system, &setup.payoff, &x, 1.0, &cfg).map_err(core_err)?;
            max_gap = max_gap.max(g);
        }
    }
    Ok(GapReport {
        degree: m,
        seed,
        x: setup.x.iter().copied().collect(),
        s: s_grid.to_vec(),
        gaps,
        fit,
        expected_slope: (m as f64 + 1.0) / 2.0,
        bound,
        max_gap_on_box: max_gap,
        bound_holds: max_gap <= bound.lower,
    })
}
