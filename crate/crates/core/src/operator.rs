//! Exact operator calculus for affine vector fields acting on polynomials.
//!
//! Affine fields map polynomials of degree `p` to polynomials of degree at
//! most `p`, so words of fields, Taylor operators and their differences can
//! be expanded symbolically with no truncation.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{KlvError, Result};
use crate::lie::LiePolynomial;
use crate::tensor::{GradedTensor, Word};
use crate::vector_fields::{flow_exp, gamma_field, FlowConfig, State, VectorField, VectorFieldSystem};

/// A polynomial in `vars` real variables, keyed by exponent vectors.
/// Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiPoly {
    vars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl MultiPoly {
    pub fn zero(vars: usize) -> Self {
        MultiPoly { vars, terms: BTreeMap::new() }
    }

    pub fn constant(vars: usize, c: f64) -> Self {
        let mut p = Self::zero(vars);
        p.add_term(vec![0; vars], c);
        p
    }

    /// The coordinate function `x_i`.
    pub fn var(vars: usize, i: usize) -> Result<Self> {
        if i >= vars {
            return Err(KlvError::Range(format!("variable x{i} out of range for {vars} variables")));
        }
        let mut e = vec![0; vars];
        e[i] = 1;
        let mut p = Self::zero(vars);
        p.add_term(e, 1.0);
        Ok(p)
    }

    pub fn from_terms(vars: usize, terms: impl IntoIterator<Item = (Vec<u32>, f64)>) -> Result<Self> {
        let mut p = Self::zero(vars);
        for (e, c) in terms {
            if e.len() != vars {
                return Err(KlvError::DimensionMismatch { left: vars, right: e.len() });
            }
            p.add_term(e, c);
        }
        Ok(p)
    }

    fn add_term(&mut self, e: Vec<u32>, c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.entry(e) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> + '_ {
        self.terms.iter().map(|(e, c)| (e.as_slice(), *c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    fn check(&self, other: &MultiPoly) -> Result<()> {
        if self.vars != other.vars {
            return Err(KlvError::DimensionMismatch { left: self.vars, right: other.vars });
        }
        Ok(())
    }

    pub fn add(&self, other: &MultiPoly) -> Result<Self> {
        self.check(other)?;
        let mut p = self.clone();
        for (e, c) in &other.terms {
            p.add_term(e.clone(), *c);
        }
        Ok(p)
    }

    pub fn sub(&self, other: &MultiPoly) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut p = Self::zero(self.vars);
        for (e, c) in &self.terms {
            p.add_term(e.clone(), c * s);
        }
        p
    }

    pub fn mul(&self, other: &MultiPoly) -> Result<Self> {
        self.check(other)?;
        let mut p = Self::zero(self.vars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                p.add_term(e, c1 * c2);
            }
        }
        Ok(p)
    }

    pub fn partial(&self, i: usize) -> Self {
        let mut p = Self::zero(self.vars);
        for (e, c) in &self.terms {
            if i < e.len() && e[i] > 0 {
                let mut d = e.clone();
                d[i] -= 1;
                p.add_term(d, c * e[i] as f64);
            }
        }
        p
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.vars, "evaluation point has the wrong dimension");
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(k, xi)| xi.powi(*k as i32)).product::<f64>())
            .sum()
    }

    pub fn max_abs_diff(&self, other: &MultiPoly) -> Result<f64> {
        Ok(self.sub(other)?.terms.values().fold(0.0, |m, c| m.max(c.abs())))
    }

    /// Largest and rigorous upper bound of `|p|` on the cube `[−r, r]^N`:
    /// the maximum over a uniform grid with `points` nodes per axis, and that
    /// value plus half the grid diagonal times a bound on `|∇p|`.
    pub fn box_sup(&self, radius: f64, points: usize) -> Result<(f64, f64)> {
        if points < 2 || !(radius > 0.0) {
            return Err(KlvError::Range("box needs a positive radius and at least 2 points per axis".into()));
        }
        let n = self.vars;
        let h = 2.0 * radius / (points - 1) as f64;
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        let mut lower: f64 = 0.0;
        loop {
            for (xi, &k) in x.iter_mut().zip(&idx) {
                *xi = -radius + h * k as f64;
            }
            lower = lower.max(self.eval(&x).abs());
            let mut j = 0;
            while j < n {
                idx[j] += 1;
                if idx[j] < points {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == n {
                break;
            }
        }
        let grad_bound: f64 = (0..n)
            .map(|i| {
                let d = self.partial(i);
                d.terms.iter().map(|(e, c)| c.abs() * radius.powi(e.iter().sum::<u32>() as i32)).sum::<f64>()
            })
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let upper = lower + 0.5 * h * (n as f64).sqrt() * grad_bound;
        Ok((lower, upper))
    }
}

fn affine_parts(v: &VectorField) -> Result<(&nalgebra::DMatrix<f64>, &nalgebra::DVector<f64>)> {
    v.as_affine()
        .ok_or_else(|| KlvError::Domain("symbolic operators need affine vector fields".into()))
}

/// `(Vf)(x) = Σ_j V^j(x) ∂f/∂x_j` for an affine field `V(x) = Ax + b`.
pub fn lie_derivative(v: &VectorField, f: &MultiPoly) -> Result<MultiPoly> {
    let (a, b) = affine_parts(v)?;
    let n = f.vars;
    if b.len() != n {
        return Err(KlvError::DimensionMismatch { left: b.len(), right: n });
    }
    let mut out = MultiPoly::zero(n);
    for (e, c) in &f.terms {
        for j in 0..n {
            if e[j] == 0 {
                continue;
            }
            let dc = c * e[j] as f64;
            let mut base = e.clone();
            base[j] -= 1;
            out.add_term(base.clone(), dc * b[j]);
            for k in 0..n {
                let ajk = a[(j, k)];
                if ajk != 0.0 {
                    let mut t = base.clone();
                    t[k] += 1;
                    out.add_term(t, dc * ajk);
                }
            }
        }
    }
    Ok(out)
}

fn check_system(sys: &VectorFieldSystem, f: &MultiPoly) -> Result<()> {
    if !sys.is_affine() {
        return Err(KlvError::Domain("symbolic operators need an affine system".into()));
    }
    if sys.state_dim() != f.vars {
        return Err(KlvError::DimensionMismatch { left: sys.state_dim(), right: f.vars });
    }
    Ok(())
}

/// `V_{a₁}∘V_{a₂}∘…∘V_{a_k} f`: the rightmost letter differentiates `f`
/// first.
pub fn word_operator(word: &Word, sys: &VectorFieldSystem, f: &MultiPoly) -> Result<MultiPoly> {
    check_system(sys, f)?;
    if let Some(max) = word.max_letter() {
        if max as usize > sys.noise_dim() {
            return Err(KlvError::Range(format!("letter {max} has no vector field")));
        }
    }
    let mut g = f.clone();
    for &a in word.letters().iter().rev() {
        g = lie_derivative(sys.field(a as usize), &g)?;
    }
    Ok(g)
}

fn word_operator_memo(
    letters: &[u8],
    sys: &VectorFieldSystem,
    f: &MultiPoly,
    memo: &mut HashMap<Vec<u8>, MultiPoly>,
) -> Result<MultiPoly> {
    if letters.is_empty() {
        return Ok(f.clone());
    }
    if let Some(p) = memo.get(letters) {
        return Ok(p.clone());
    }
    let inner = word_operator_memo(&letters[1..], sys, f, memo)?;
    let p = lie_derivative(sys.field(letters[0] as usize), &inner)?;
    memo.insert(letters.to_vec(), p.clone());
    Ok(p)
}

/// `Γ(w) f = Σ_u ⟨w, u⟩ V_u f` as a polynomial.
pub fn taylor_operator(w: &GradedTensor, sys: &VectorFieldSystem, f: &MultiPoly) -> Result<MultiPoly> {
    check_system(sys, f)?;
    if w.dimension() != sys.noise_dim() {
        return Err(KlvError::DimensionMismatch { left: w.dimension(), right: sys.noise_dim() });
    }
    let mut memo = HashMap::new();
    let mut out = MultiPoly::zero(f.vars);
    for (u, c) in w.terms() {
        let p = word_operator_memo(u.letters(), sys, f, &mut memo)?;
        for (e, pc) in &p.terms {
            out.add_term(e.clone(), c * pc);
        }
    }
    Ok(out)
}

/// `|f(Exp[Γ(δ_√s w)](x)) − (Γ(π_m exp(δ_√s w)) f)(x)|` with `m` the
/// truncation of `w`.
pub fn flow_tensor_gap(
    w: &LiePolynomial,
    sys: &VectorFieldSystem,
    f: &MultiPoly,
    x: &State,
    s: f64,
    cfg: &FlowConfig,
) -> Result<f64> {
    if !(s > 0.0) {
        return Err(KlvError::Range(format!("scale must be positive, got {s}")));
    }
    check_system(sys, f)?;
    let ws = w.dilate(s.sqrt());
    let field = gamma_field(&ws, sys, cfg.fd_step)?;
    let y = flow_exp(&field, 1.0, x, cfg)?;
    let tensor_side = taylor_operator(&ws.exp()?, sys, f)?.eval(x.as_slice());
    Ok((f.eval(y.as_slice()) - tensor_side).abs())
}

/// Enclosure of `Σ_{j=1}^{m} sup_{[−r,r]^N} |Γ((π_{2m} − π_m) w^{⊗j}) f|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBound {
    pub radius: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn remainder_bound(
    w: &LiePolynomial,
    sys: &VectorFieldSystem,
    f: &MultiPoly,
    radius: f64,
    points: usize,
) -> Result<BoxBound> {
    check_system(sys, f)?;
    let m = w.truncation();
    let wide = w.tensor().retruncate(2 * m);
    let mut power = GradedTensor::one(wide.dimension(), 2 * m);
    let (mut lower, mut upper) = (0.0, 0.0);
    for _ in 1..=m {
        power = power.mul(&wide)?;
        let tail = power.sub(&power.project(m)?)?;
        let (lo, up) = taylor_operator(&tail, sys, f)?.box_sup(radius, points)?;
        lower += lo;
        upper += up;
    }
    Ok(BoxBound { radius, lower, upper })
}
