//! Iterated cubature (KLV) approximation of `E[f(X_T)]`, Kusuoka's
//! flow-level one-step operator and an Euler–Maruyama reference.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubature::{CubatureFormula, Support};
use crate::error::{KlvError, Result};
use crate::vector_fields::{flow_along_path, flow_exp, gamma_field, FlowConfig, State, VectorField, VectorFieldSystem};

/// A payoff `f: R^N → R`. Called concurrently from worker threads.
pub type Payoff<'a> = dyn Fn(&State) -> f64 + Send + Sync + 'a;

pub const DEFAULT_LEAF_CAP: u128 = 10_000_000;

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &NeumaierSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }

    pub fn compensation(&self) -> f64 {
        self.compensation
    }
}

pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = NeumaierSum::new();
    values.into_iter().for_each(|v| acc.add(v));
    acc.value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    times: Vec<f64>,
}

impl Partition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(KlvError::Range("a partition starts at 0 and has at least one step".into()));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KlvError::Range("partition times must be finite and strictly increasing".into()));
        }
        Ok(Partition { times })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        gamma_partition(horizon, steps, 1.0)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// `t_j = T(1 − (1 − j/k)^γ)`, `j = 0..=k`.
pub fn gamma_partition(horizon: f64, steps: usize, gamma: f64) -> Result<Partition> {
    if steps < 1 {
        return Err(KlvError::Range("partition needs at least one step".into()));
    }
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(KlvError::Range(format!("γ must be at least 1, got {gamma}")));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(KlvError::Range(format!("horizon must be positive, got {horizon}")));
    }
    let k = steps as f64;
    let times = (0..=steps)
        .map(|j| if j == steps { horizon } else { horizon * (1.0 - (1.0 - j as f64 / k).powf(gamma)) })
        .collect();
    Partition::new(times)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub flow: FlowConfig,
    pub leaf_cap: u128,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { flow: FlowConfig::default(), leaf_cap: DEFAULT_LEAF_CAP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Full,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Magnitude of the final compensation term of the reduction.
    pub compensation: f64,
    pub min_leaf: f64,
    pub max_leaf: f64,
    /// Standard error of a sampled estimate.
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub value: f64,
    pub leaves_evaluated: u128,
    pub mode: SolverMode,
    pub partition: Partition,
    pub diagnostics: Diagnostics,
}

/// One branch of one level: how to move the state along it.
enum Step {
    Path(crate::signature::PiecewiseLinearPath),
    Field(VectorField),
}

struct Tree<'a> {
    weights: Vec<f64>,
    levels: Vec<Vec<Step>>,
    sys: &'a VectorFieldSystem,
    flow: FlowConfig,
}

impl<'a> Tree<'a> {
    fn build(q: &CubatureFormula, sys: &'a VectorFieldSystem, partition: &Partition, flow: FlowConfig) -> Result<Self> {
        flow.validate()?;
        if q.dimension() != sys.noise_dim() {
            return Err(KlvError::DimensionMismatch { left: q.dimension(), right: sys.noise_dim() });
        }
        if q.horizon() != 1.0 {
            return Err(KlvError::Domain(format!("tree levels rescale a unit-horizon formula, got horizon {}", q.horizon())));
        }
        let mut levels = Vec::with_capacity(partition.steps());
        for s in partition.gaps() {
            let scaled = q.rescale(s)?;
            let steps = match scaled.support() {
                Support::Paths(paths) => paths.iter().cloned().map(Step::Path).collect(),
                Support::Lie(polys) => polys
                    .iter()
                    .map(|l| gamma_field(l, sys, flow.fd_step).map(Step::Field))
                    .collect::<Result<_>>()?,
            };
            levels.push(steps);
        }
        Ok(Tree { weights: q.weights().to_vec(), levels, sys, flow })
    }

    fn advance(&self, level: usize, branch: usize, x: &State) -> Result<State> {
        match &self.levels[level][branch] {
            Step::Path(p) => flow_along_path(p, self.sys, x, &self.flow),
            Step::Field(v) => flow_exp(v, 1.0, x, &self.flow),
        }
    }

    fn leaves(&self) -> u128 {
        (self.weights.len() as u128).saturating_pow(self.levels.len() as u32)
    }
}

fn branch_error(e: KlvError, branch: &[usize]) -> KlvError {
    match e {
        KlvError::Divergence { substep, context } => {
            KlvError::Divergence { substep, context: format!("{context}, branch {branch:?}") }
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy)]
struct Partial {
    sum: NeumaierSum,
    min: f64,
    max: f64,
}

impl Partial {
    fn new() -> Self {
        Partial { sum: NeumaierSum::new(), min: f64::INFINITY, max: f64::NEG_INFINITY }
    }

    fn merge(&mut self, other: &Partial) {
        self.sum.merge(&other.sum);
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }
}

fn descend(
    tree: &Tree<'_>,
    f: &Payoff<'_>,
    x: &State,
    weight: f64,
    branch: &mut Vec<usize>,
    acc: &mut Partial,
    visit: &mut dyn FnMut(&[usize], f64, f64),
) -> Result<()> {
    let level = branch.len();
    if level == tree.levels.len() {
        let v = f(x);
        acc.sum.add(weight * v);
        acc.min = acc.min.min(v);
        acc.max = acc.max.max(v);
        visit(branch, weight, v);
        return Ok(());
    }
    for (i, &w) in tree.weights.iter().enumerate() {
        branch.push(i);
        let y = tree.advance(level, i, x).map_err(|e| branch_error(e, branch))?;
        descend(tree, f, &y, weight * w, branch, acc, visit)?;
        branch.pop();
    }
    Ok(())
}

fn check_cap(tree: &Tree<'_>, cap: u128) -> Result<()> {
    let required = tree.leaves();
    if required > cap {
        return Err(KlvError::LeafCap { required, cap });
    }
    Ok(())
}

/// `Σ_{i₁…i_k} λ_{i₁}⋯λ_{i_k} f(x_{i₁…i_k})` over the full cubature tree,
/// where each level flows along the formula rescaled to that gap. Path
/// support uses path flows; Lie support uses Kusuoka's flow operator at
/// every level. First-level subtrees run in parallel and are reduced in
/// index order, so the result does not depend on the thread count.
pub fn klv_full(
    q: &CubatureFormula,
    sys: &VectorFieldSystem,
    f: &Payoff<'_>,
    x: &State,
    partition: &Partition,
    cfg: &SolverConfig,
) -> Result<SolverResult> {
    let tree = Tree::build(q, sys, partition, cfg.flow)?;
    check_cap(&tree, cfg.leaf_cap)?;
    if x.len() != sys.state_dim() {
        return Err(KlvError::DimensionMismatch { left: sys.state_dim(), right: x.len() });
    }
    let partials: Vec<Partial> = (0..tree.weights.len())
        .into_par_iter()
        .map(|i| {
            let mut branch = vec![i];
            let mut acc = Partial::new();
            let y = tree.advance(0, i, x).map_err(|e| branch_error(e, &branch))?;
            descend(&tree, f, &y, tree.weights[i], &mut branch, &mut acc, &mut |_, _, _| {})?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Partial::new();
    for p in &partials {
        total.merge(p);
    }
    Ok(SolverResult {
        value: total.sum.value(),
        leaves_evaluated: tree.leaves(),
        mode: SolverMode::Full,
        partition: partition.clone(),
        diagnostics: Diagnostics {
            compensation: total.sum.compensation().abs(),
            min_leaf: total.min,
            max_leaf: total.max,
            stderr: None,
        },
    })
}

/// A tree leaf: branch indices, product weight, payoff at the leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub branch: Vec<usize>,
    pub weight: f64,
    pub value: f64,
}

/// Every leaf of the tree in depth-first order (sequential).
pub fn klv_leaves(
    q: &CubatureFormula,
    sys: &VectorFieldSystem,
    f: &Payoff<'_>,
    x: &State,
    partition: &Partition,
    cfg: &SolverConfig,
) -> Result<Vec<Leaf>> {
    let tree = Tree::build(q, sys, partition, cfg.flow)?;
    check_cap(&tree, cfg.leaf_cap)?;
    let mut leaves = Vec::new();
    let mut acc = Partial::new();
    descend(&tree, f, x, 1.0, &mut Vec::new(), &mut acc, &mut |b, w, v| {
        leaves.push(Leaf { branch: b.to_vec(), weight: w, value: v })
    })?;
    Ok(leaves)
}

fn sample_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = neumaier_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo over the tree measure: each sample picks one branch per level
/// with probabilities proportional to the weights. Unbiased for
/// [`klv_full`]. Sample `i` draws from its own ChaCha stream, so results are
/// reproducible and independent of the thread count.
#[allow(clippy::too_many_arguments)]
pub fn klv_sampled(
    q: &CubatureFormula,
    sys: &VectorFieldSystem,
    f: &Payoff<'_>,
    x: &State,
    partition: &Partition,
    n_samples: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<SolverResult> {
    if n_samples == 0 {
        return Err(KlvError::Range("need at least one sample".into()));
    }
    let tree = Tree::build(q, sys, partition, cfg.flow)?;
    let mass: f64 = tree.weights.iter().sum();
    let scale = mass.powi(tree.levels.len() as i32);
    let dist = WeightedIndex::new(&tree.weights).map_err(|e| KlvError::Domain(e.to_string()))?;
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_stream(seed, i as u64);
            let mut y = x.clone();
            let mut branch = Vec::with_capacity(tree.levels.len());
            for level in 0..tree.levels.len() {
                let b = dist.sample(&mut rng);
                branch.push(b);
                y = tree.advance(level, b, &y).map_err(|e| branch_error(e, &branch))?;
            }
            Ok(scale * f(&y))
        })
        .collect::<Result<_>>()?;
    let (mean, stderr) = mean_and_stderr(&values);
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    Ok(SolverResult {
        value: mean,
        leaves_evaluated: n_samples as u128,
        mode: SolverMode::Sampled,
        partition: partition.clone(),
        diagnostics: Diagnostics { compensation: 0.0, min_leaf: min / scale, max_leaf: max / scale, stderr: Some(stderr) },
    })
}

/// `Σ_j λ_j f(Exp[Γ(δ_√s L_j)](x))` for a formula with Lie support.
pub fn kusuoka_step(
    ql: &CubatureFormula,
    sys: &VectorFieldSystem,
    f: &Payoff<'_>,
    x: &State,
    s: f64,
    cfg: &FlowConfig,
) -> Result<f64> {
    let Support::Lie(polys) = ql.support() else {
        return Err(KlvError::Domain("the flow-level operator needs Lie support".into()));
    };
    if !(s >= 0.0) {
        return Err(KlvError::Range(format!("step must be non-negative, got {s}")));
    }
    let values = polys
        .iter()
        .zip(ql.weights())
        .map(|(l, w)| {
            let field = gamma_field(&l.dilate(s.sqrt()), sys, cfg.fd_step)?;
            Ok(w * f(&flow_exp(&field, 1.0, x, cfg)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(neumaier_sum(values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
    pub steps: usize,
}

/// Stratonovich-to-Itô drift `V₀ + ½ Σᵢ DVᵢ·Vᵢ`.
fn ito_drift(sys: &VectorFieldSystem) -> VectorField {
    if sys.is_affine() {
        let (a0, b0) = sys.field(0).as_affine().unwrap();
        let mut a = a0.clone();
        let mut b = b0.clone();
        for v in &sys.fields()[1..] {
            let (ai, bi) = v.as_affine().unwrap();
            a += ai * ai * 0.5;
            b += ai * bi * 0.5;
        }
        VectorField::Affine { matrix: a, offset: b }
    } else {
        let fields = sys.fields().to_vec();
        VectorField::generic(sys.state_dim(), move |x: &State| {
            let mut y = fields[0].eval(x);
            for v in &fields[1..] {
                y += v.jacobian(x, None) * v.eval(x) * 0.5;
            }
            y
        })
    }
}

/// Euler–Maruyama on the Itô form, `paths` independent paths of `steps`
/// uniform steps. Path `i` uses its own ChaCha stream.
pub fn euler_mc(
    sys: &VectorFieldSystem,
    f: &Payoff<'_>,
    x: &State,
    horizon: f64,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if steps == 0 || paths == 0 {
        return Err(KlvError::Range("need at least one step and one path".into()));
    }
    if !(horizon > 0.0) {
        return Err(KlvError::Range(format!("horizon must be positive, got {horizon}")));
    }
    let drift = ito_drift(sys);
    let h = horizon / steps as f64;
    let sq = h.sqrt();
    let d = sys.noise_dim();
    let values: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_stream(seed, i as u64);
            let mut y = x.clone();
            for step in 0..steps {
                let mut dy = drift.eval(&y) * h;
                for j in 1..=d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    dy += sys.field(j).eval(&y) * (sq * z);
                }
                y += dy;
                if y.iter().any(|c| !c.is_finite()) {
                    return Err(KlvError::Divergence { substep: step + 1, context: format!("Euler path {i}") });
                }
            }
            Ok(f(&y))
        })
        .collect::<Result<_>>()?;
    let (mean, stderr) = mean_and_stderr(&values);
    Ok(McEstimate { mean, stderr, paths, steps })
}
