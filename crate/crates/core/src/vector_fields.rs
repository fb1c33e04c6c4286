//! Vector fields on `R^N`, their brackets, the Γ map and ODE flows.
//!
//! Affine fields `x ↦ Ax + b` are closed under brackets and linear
//! combinations, so everything built from them stays exact. Generic fields
//! are callbacks; their brackets use Jacobians from the callback or from
//! central differences.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KlvError, Result};
use crate::lie::LiePolynomial;
use crate::signature::PiecewiseLinearPath;

pub type State = DVector<f64>;
pub type FieldFn = Arc<dyn Fn(&State) -> State + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;

/// Integrator and finite-difference settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    /// RK4 substeps per unit of flow parameter (at least one per call).
    pub substeps: usize,
    /// Central-difference step; `None` uses `ε^{1/3}·(1+|x|)`.
    pub fd_step: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { substeps: 32, fd_step: None }
    }
}

impl FlowConfig {
    pub fn with_substeps(substeps: usize) -> Self {
        FlowConfig { substeps, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(KlvError::Range("substeps must be ≥ 1".into()));
        }
        if let Some(h) = self.fd_step {
            if !(h > 0.0) {
                return Err(KlvError::Range(format!("finite-difference step must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Whether evaluations are exact or carry finite-difference error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accuracy {
    Exact,
    FiniteDifference,
}

#[derive(Clone)]
pub enum VectorField {
    Affine { matrix: DMatrix<f64>, offset: DVector<f64> },
    Generic { dim: usize, eval: FieldFn, jacobian: Option<JacobianFn> },
    /// `[V, W](x) = ∇W·V − ∇V·W` for fields that are not both affine.
    Bracket { left: Box<VectorField>, right: Box<VectorField>, fd_step: Option<f64> },
    Sum(Vec<(f64, VectorField)>),
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorField::Affine { matrix, offset } => {
                f.debug_struct("Affine").field("matrix", matrix).field("offset", offset).finish()
            }
            VectorField::Generic { dim, jacobian, .. } => f
                .debug_struct("Generic")
                .field("dim", dim)
                .field("jacobian", &jacobian.is_some())
                .finish(),
            VectorField::Bracket { left, right, .. } => f.debug_tuple("Bracket").field(left).field(right).finish(),
            VectorField::Sum(terms) => f.debug_tuple("Sum").field(terms).finish(),
        }
    }
}

fn default_fd_step(x: &State) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.norm())
}

impl VectorField {
    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != offset.len() {
            return Err(KlvError::DimensionMismatch { left: matrix.nrows(), right: offset.len() });
        }
        Ok(VectorField::Affine { matrix, offset })
    }

    pub fn zero(dim: usize) -> Self {
        VectorField::Affine { matrix: DMatrix::zeros(dim, dim), offset: DVector::zeros(dim) }
    }

    /// A callback field. Evaluators must tolerate concurrent calls.
    pub fn generic(dim: usize, eval: impl Fn(&State) -> State + Send + Sync + 'static) -> Self {
        VectorField::Generic { dim, eval: Arc::new(eval), jacobian: None }
    }

    pub fn generic_with_jacobian(
        dim: usize,
        eval: impl Fn(&State) -> State + Send + Sync + 'static,
        jacobian: impl Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        VectorField::Generic { dim, eval: Arc::new(eval), jacobian: Some(Arc::new(jacobian)) }
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorField::Affine { offset, .. } => offset.len(),
            VectorField::Generic { dim, .. } => *dim,
            VectorField::Bracket { left, .. } => left.dim(),
            VectorField::Sum(terms) => terms.first().map_or(0, |(_, v)| v.dim()),
        }
    }

    pub fn as_affine(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match self {
            VectorField::Affine { matrix, offset } => Some((matrix, offset)),
            _ => None,
        }
    }

    pub fn accuracy(&self) -> Accuracy {
        match self {
            VectorField::Affine { .. } | VectorField::Generic { .. } => Accuracy::Exact,
            VectorField::Bracket { left, right, .. } => {
                let exact_jac = |v: &VectorField| match v {
                    VectorField::Affine { .. } => true,
                    VectorField::Generic { jacobian, .. } => jacobian.is_some(),
                    _ => false,
                };
                if exact_jac(left) && exact_jac(right) {
                    Accuracy::Exact
                } else {
                    Accuracy::FiniteDifference
                }
            }
            VectorField::Sum(terms) => {
                if terms.iter().all(|(_, v)| v.accuracy() == Accuracy::Exact) {
                    Accuracy::Exact
                } else {
                    Accuracy::FiniteDifference
                }
            }
        }
    }

    pub fn eval(&self, x: &State) -> State {
        match self {
            VectorField::Affine { matrix, offset } => matrix * x + offset,
            VectorField::Generic { eval, .. } => eval(x),
            VectorField::Bracket { left, right, fd_step } => {
                let v = left.eval(x);
                let w = right.eval(x);
                right.jacobian(x, *fd_step) * v - left.jacobian(x, *fd_step) * w
            }
            VectorField::Sum(terms) => {
                let mut acc = DVector::zeros(self.dim());
                for (c, v) in terms {
                    acc += v.eval(x) * *c;
                }
                acc
            }
        }
    }

    /// Jacobian at `x`; exact for affine fields and callbacks that supply
    /// one, central differences otherwise.
    pub fn jacobian(&self, x: &State, fd_step: Option<f64>) -> DMatrix<f64> {
        match self {
            VectorField::Affine { matrix, .. } => matrix.clone(),
            VectorField::Generic { jacobian: Some(j), .. } => j(x),
            VectorField::Sum(terms) => {
                let n = self.dim();
                let mut acc = DMatrix::zeros(n, n);
                for (c, v) in terms {
                    acc += v.jacobian(x, fd_step) * *c;
                }
                acc
            }
            _ => {
                let n = x.len();
                let h = fd_step.unwrap_or_else(|| default_fd_step(x));
                let mut jac = DMatrix::zeros(n, n);
                let mut xp = x.clone();
                for j in 0..n {
                    xp[j] = x[j] + h;
                    let fp = self.eval(&xp);
                    xp[j] = x[j] - h;
                    let fm = self.eval(&xp);
                    xp[j] = x[j];
                    jac.set_column(j, &((fp - fm) / (2.0 * h)));
                }
                jac
            }
        }
    }

    pub fn scale(&self, c: f64) -> VectorField {
        match self {
            VectorField::Affine { matrix, offset } => VectorField::Affine { matrix: matrix * c, offset: offset * c },
            other => VectorField::Sum(vec![(c, other.clone())]),
        }
    }

    /// `Σ cᵢ Vᵢ`; stays affine when every term is.
    pub fn linear_combination(dim: usize, terms: &[(f64, &VectorField)]) -> VectorField {
        if terms.iter().all(|(_, v)| v.as_affine().is_some()) {
            let mut matrix = DMatrix::zeros(dim, dim);
            let mut offset = DVector::zeros(dim);
            for (c, v) in terms {
                let (a, b) = v.as_affine().unwrap();
                matrix += a * *c;
                offset += b * *c;
            }
            VectorField::Affine { matrix, offset }
        } else {
            VectorField::Sum(terms.iter().map(|(c, v)| (*c, (*v).clone())).collect())
        }
    }
}

/// `[V, W]`, exact when both are affine:
/// `[Ax+a, Bx+b] = (BA − AB)x + Ba − Ab`.
pub fn bracket_field(v: &VectorField, w: &VectorField, fd_step: Option<f64>) -> Result<VectorField> {
    if v.dim() != w.dim() {
        return Err(KlvError::DimensionMismatch { left: v.dim(), right: w.dim() });
    }
    match (v.as_affine(), w.as_affine()) {
        (Some((a, av)), Some((b, bw))) => Ok(VectorField::Affine {
            matrix: b * a - a * b,
            offset: b * av - a * bw,
        }),
        _ => Ok(VectorField::Bracket { left: Box::new(v.clone()), right: Box::new(w.clone()), fd_step }),
    }
}

/// The driving fields `V₀, V₁, …, V_d` on `R^N`.
#[derive(Debug, Clone)]
pub struct VectorFieldSystem {
    state_dim: usize,
    fields: Vec<VectorField>,
}

/// JSON form of an affine system: `{"fields": [{"matrix": [[…]], "offset": […]}, …]}`
/// listing `V₀` first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineSystemJson {
    pub fields: Vec<AffineFieldJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineFieldJson {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl VectorFieldSystem {
    /// `fields[0]` is the drift `V₀`; at least one Brownian field is required.
    pub fn new(fields: Vec<VectorField>) -> Result<Self> {
        if fields.len() < 2 {
            return Err(KlvError::Domain("need V₀ and at least one Brownian field".into()));
        }
        let state_dim = fields[0].dim();
        for f in &fields {
            if f.dim() != state_dim {
                return Err(KlvError::DimensionMismatch { left: state_dim, right: f.dim() });
            }
        }
        Ok(VectorFieldSystem { state_dim, fields })
    }

    /// Stratonovich GBM `dX = μX dt + σX∘dB`.
    pub fn gbm(mu: f64, sigma: f64) -> Self {
        let f = |c: f64| VectorField::Affine { matrix: DMatrix::from_element(1, 1, c), offset: DVector::zeros(1) };
        VectorFieldSystem { state_dim: 1, fields: vec![f(mu), f(sigma)] }
    }

    /// Ornstein–Uhlenbeck `dX = −θX dt + σ dB`.
    pub fn ou(theta: f64, sigma: f64) -> Self {
        VectorFieldSystem {
            state_dim: 1,
            fields: vec![
                VectorField::Affine { matrix: DMatrix::from_element(1, 1, -theta), offset: DVector::zeros(1) },
                VectorField::Affine { matrix: DMatrix::zeros(1, 1), offset: DVector::from_element(1, sigma) },
            ],
        }
    }

    pub fn affine(matrices: Vec<DMatrix<f64>>, offsets: Vec<DVector<f64>>) -> Result<Self> {
        if matrices.len() != offsets.len() {
            return Err(KlvError::Domain("one offset per matrix".into()));
        }
        let fields = matrices
            .into_iter()
            .zip(offsets)
            .map(|(a, b)| VectorField::affine(a, b))
            .collect::<Result<_>>()?;
        Self::new(fields)
    }

    pub fn from_json(json: &AffineSystemJson) -> Result<Self> {
        let mut matrices = Vec::new();
        let mut offsets = Vec::new();
        for (i, f) in json.fields.iter().enumerate() {
            let n = f.offset.len();
            if f.matrix.len() != n || f.matrix.iter().any(|r| r.len() != n) {
                return Err(KlvError::Domain(format!("field {i}: matrix is not {n}×{n}")));
            }
            matrices.push(DMatrix::from_fn(n, n, |r, c| f.matrix[r][c]));
            offsets.push(DVector::from_vec(f.offset.clone()));
        }
        Self::affine(matrices, offsets)
    }

    pub fn to_json(&self) -> Option<AffineSystemJson> {
        let fields = self
            .fields
            .iter()
            .map(|f| {
                f.as_affine().map(|(a, b)| AffineFieldJson {
                    matrix: (0..a.nrows()).map(|r| a.row(r).iter().copied().collect()).collect(),
                    offset: b.iter().copied().collect(),
                })
            })
            .collect::<Option<_>>()?;
        Some(AffineSystemJson { fields })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| KlvError::Load { location: path.display().to_string(), reason: e.to_string() })?;
        let json: AffineSystemJson = serde_json::from_str(&text).map_err(|e| KlvError::Load {
            location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            reason: e.to_string(),
        })?;
        Self::from_json(&json)
            .map_err(|e| KlvError::Load { location: path.display().to_string(), reason: e.to_string() })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Number of Brownian fields `d`.
    pub fn noise_dim(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn field(&self, i: usize) -> &VectorField {
        &self.fields[i]
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn is_affine(&self) -> bool {
        self.fields.iter().all(|f| f.as_affine().is_some())
    }

    /// `Δt·V₀ + Σᵢ Δωⁱ·Vᵢ`.
    pub fn controlled_field(&self, dt: f64, dw: &[f64]) -> VectorField {
        let mut terms: Vec<(f64, &VectorField)> = vec![(dt, &self.fields[0])];
        terms.extend(dw.iter().zip(&self.fields[1..]).map(|(c, v)| (*c, v)));
        VectorField::linear_combination(self.state_dim, &terms)
    }

    fn check_state(&self, x: &State) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(KlvError::DimensionMismatch { left: self.state_dim, right: x.len() });
        }
        Ok(())
    }
}

/// `Γ(L)`: each tensor level `k` of a Lie polynomial equals `1/k` times its
/// Dynkin right-bracketing, so `Γ(L) = Σ_k (1/k) Σ_w c_w [V_{w₁},[V_{w₂},…,V_{w_k}]]`.
pub fn gamma_field(l: &LiePolynomial, sys: &VectorFieldSystem, fd_step: Option<f64>) -> Result<VectorField> {
    l.require_certified()?;
    if l.dimension() != sys.noise_dim() {
        return Err(KlvError::DimensionMismatch { left: l.dimension(), right: sys.noise_dim() });
    }
    let n = sys.state_dim();
    let mut memo: HashMap<Vec<u8>, VectorField> = HashMap::new();
    let mut terms: Vec<(f64, VectorField)> = Vec::new();
    for (w, c) in l.tensor().terms() {
        let field = nested_bracket(w.letters(), sys, fd_step, &mut memo)?;
        terms.push((c / w.len() as f64, field));
    }
    if terms.is_empty() {
        return Ok(VectorField::zero(n));
    }
    let refs: Vec<(f64, &VectorField)> = terms.iter().map(|(c, v)| (*c, v)).collect();
    Ok(VectorField::linear_combination(n, &refs))
}

fn nested_bracket(
    letters: &[u8],
    sys: &VectorFieldSystem,
    fd_step: Option<f64>,
    memo: &mut HashMap<Vec<u8>, VectorField>,
) -> Result<VectorField> {
    if let Some(v) = memo.get(letters) {
        return Ok(v.clone());
    }
    let v = match letters {
        [] => VectorField::zero(sys.state_dim()),
        [a] => sys.field(*a as usize).clone(),
        [a, rest @ ..] => {
            let inner = nested_bracket(rest, sys, fd_step, memo)?;
            bracket_field(sys.field(*a as usize), &inner, fd_step)?
        }
    };
    memo.insert(letters.to_vec(), v.clone());
    Ok(v)
}

/// `Exp(tV)(x)` by classical RK4 with `⌈substeps·|t|⌉` steps (at least one).
pub fn flow_exp(v: &VectorField, t: f64, x: &State, cfg: &FlowConfig) -> Result<State> {
    cfg.validate()?;
    if !t.is_finite() || x.iter().any(|c| !c.is_finite()) {
        return Err(KlvError::Domain("flow needs finite time and state".into()));
    }
    if t == 0.0 {
        return Ok(x.clone());
    }
    let steps = ((cfg.substeps as f64) * t.abs()).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut y = x.clone();
    for step in 0..steps {
        let k1 = v.eval(&y);
        let k2 = v.eval(&(&y + &k1 * (h / 2.0)));
        let k3 = v.eval(&(&y + &k2 * (h / 2.0)));
        let k4 = v.eval(&(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if y.iter().any(|c| !c.is_finite()) {
            return Err(KlvError::Divergence { substep: step + 1, context: format!("of {steps} at t={t}") });
        }
    }
    Ok(y)
}

/// Solution of `dX = Σᵢ Vᵢ(X) dωⁱ` (with `ω⁰(t) = t`) along a
/// piecewise-linear path: each segment is the unit-time flow of
/// `Δt·V₀ + Σ Δωⁱ·Vᵢ`.
pub fn flow_along_path(
    path: &PiecewiseLinearPath,
    sys: &VectorFieldSystem,
    x: &State,
    cfg: &FlowConfig,
) -> Result<State> {
    sys.check_state(x)?;
    if path.dimension() != sys.noise_dim() {
        return Err(KlvError::DimensionMismatch { left: path.dimension(), right: sys.noise_dim() });
    }
    let mut y = x.clone();
    for (i, (dt, dw)) in path.segments().enumerate() {
        let field = sys.controlled_field(dt, &dw);
        y = flow_exp(&field, 1.0, &y, cfg).map_err(|e| match e {
            KlvError::Divergence { substep, context } => {
                KlvError::Divergence { substep, context: format!("{context}, path segment {i}") }
            }
            other => other,
        })?;
    }
    Ok(y)
}

/// Closed-form flow of an affine field via the augmented matrix
/// exponential `exp(t·[[A, b], [0, 0]])`.
pub fn affine_flow_exact(matrix: &DMatrix<f64>, offset: &DVector<f64>, t: f64, x: &State) -> State {
    let n = offset.len();
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(matrix * t));
    aug.view_mut((0, n), (n, 1)).copy_from(&(offset * t));
    let e = aug.exp();
    let mut xa = DVector::zeros(n + 1);
    xa.rows_mut(0, n).copy_from(x);
    xa[n] = 1.0;
    (e * xa).rows(0, n).into_owned()
}
