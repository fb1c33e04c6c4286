//! Signatures of piecewise-linear paths with an implicit time coordinate.
//!
//! A path `ω: [0,T] → R^d` starts at the origin; the letter `0` always
//! integrates against `dt`. On a linear segment the signature is
//! `exp(Δt·ε₀ + Σᵢ Δωⁱ·εᵢ)` exactly, and segments combine by Chen's identity.

use serde::{Deserialize, Serialize};

use crate::error::{KlvError, Result};
use crate::lie::{LiePolynomial, DEFAULT_DYNKIN_TOL};
use crate::tensor::{GradedTensor, Word};

/// Bounded-variation path in `R^d` given by its knots, starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathJson", into = "PathJson")]
pub struct PiecewiseLinearPath {
    knots: Vec<f64>,
    points: Vec<Vec<f64>>,
}

/// On-disk form `{horizon, knots, points}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathJson {
    pub horizon: f64,
    pub knots: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl TryFrom<PathJson> for PiecewiseLinearPath {
    type Error = KlvError;

    fn try_from(json: PathJson) -> Result<Self> {
        let path = PiecewiseLinearPath::new(json.knots, json.points)?;
        if (path.horizon() - json.horizon).abs() > 1e-12 * json.horizon.abs().max(1.0) {
            return Err(KlvError::InvalidPath(format!(
                "horizon {} does not match final knot {}",
                json.horizon,
                path.horizon()
            )));
        }
        Ok(path)
    }
}

impl From<PiecewiseLinearPath> for PathJson {
    fn from(p: PiecewiseLinearPath) -> Self {
        PathJson { horizon: p.horizon(), knots: p.knots, points: p.points }
    }
}

impl PiecewiseLinearPath {
    /// Knots must start at 0 and increase strictly; the first point must be
    /// the origin. A single knot gives the trivial path of length zero.
    pub fn new(knots: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        if knots.is_empty() {
            return Err(KlvError::InvalidPath("no knots".into()));
        }
        if knots.len() != points.len() {
            return Err(KlvError::InvalidPath(format!(
                "{} knots but {} points",
                knots.len(),
                points.len()
            )));
        }
        if knots[0] != 0.0 {
            return Err(KlvError::InvalidPath(format!("first knot is {}, not 0", knots[0])));
        }
        for (i, pair) in knots.windows(2).enumerate() {
            if !(pair[1] > pair[0]) || !pair[1].is_finite() {
                return Err(KlvError::InvalidPath(format!(
                    "knots not strictly increasing at index {}",
                    i + 1
                )));
            }
        }
        let d = points[0].len();
        if d == 0 {
            return Err(KlvError::InvalidPath("points have dimension 0".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(KlvError::InvalidPath(format!(
                    "point {i} has dimension {}, expected {d}",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(KlvError::InvalidPath(format!("point {i} is not finite")));
            }
        }
        if points[0].iter().any(|&x| x != 0.0) {
            return Err(KlvError::InvalidPath("path does not start at the origin".into()));
        }
        Ok(PiecewiseLinearPath { knots, points })
    }

    /// Zero-length path sitting at the origin.
    pub fn trivial(dimension: usize) -> Self {
        PiecewiseLinearPath { knots: vec![0.0], points: vec![vec![0.0; dimension]] }
    }

    /// Straight line from the origin to `increment` over `[0, horizon]`.
    pub fn line(increment: Vec<f64>, horizon: f64) -> Result<Self> {
        let d = increment.len();
        Self::new(vec![0.0, horizon], vec![vec![0.0; d], increment])
    }

    /// Path with the given segment durations and spatial increments.
    pub fn from_increments(durations: &[f64], increments: &[Vec<f64>]) -> Result<Self> {
        if durations.len() != increments.len() || increments.is_empty() {
            return Err(KlvError::InvalidPath("need one increment per duration".into()));
        }
        let d = increments[0].len();
        let mut knots = vec![0.0];
        let mut points = vec![vec![0.0; d]];
        for (dt, dx) in durations.iter().zip(increments) {
            if dx.len() != d {
                return Err(KlvError::InvalidPath("increments of mixed dimension".into()));
            }
            knots.push(knots.last().unwrap() + dt);
            let prev = points.last().unwrap();
            points.push(prev.iter().zip(dx).map(|(a, b)| a + b).collect());
        }
        Self::new(knots, points)
    }

    pub fn dimension(&self) -> usize {
        self.points[0].len()
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn endpoint(&self) -> &[f64] {
        self.points.last().unwrap()
    }

    pub fn num_segments(&self) -> usize {
        self.knots.len() - 1
    }

    /// `(Δt, Δω)` for each linear segment.
    pub fn segments(&self) -> impl Iterator<Item = (f64, Vec<f64>)> + '_ {
        (1..self.knots.len()).map(move |i| {
            let dt = self.knots[i] - self.knots[i - 1];
            let dx = self.points[i].iter().zip(&self.points[i - 1]).map(|(a, b)| a - b).collect();
            (dt, dx)
        })
    }

    pub fn total_variation(&self) -> f64 {
        self.segments().map(|(_, dx)| dx.iter().map(|x| x * x).sum::<f64>().sqrt()).sum()
    }

    /// Truncated signature over the alphabet `{0..d}` by Chen's identity.
    pub fn signature(&self, truncation: usize) -> Result<GradedTensor> {
        if truncation == 0 {
            return Err(KlvError::Range("signature truncation must be ≥ 1".into()));
        }
        let d = self.dimension();
        let mut sig = GradedTensor::one(d, truncation);
        let mut seg = GradedTensor::zero(d, truncation);
        let mut tmp = GradedTensor::zero(d, truncation);
        let mut inc = vec![0.0; d + 1];
        for i in 1..self.knots.len() {
            inc[0] = self.knots[i] - self.knots[i - 1];
            for j in 0..d {
                inc[j + 1] = self.points[i][j] - self.points[i - 1][j];
            }
            seg.set_exp_linear(&inc);
            sig.mul_into(&seg, &mut tmp)?;
            std::mem::swap(&mut sig, &mut tmp);
        }
        Ok(sig)
    }

    /// Truncated log-signature, certified Lie.
    pub fn log_signature(&self, truncation: usize) -> Result<LiePolynomial> {
        let l = self.signature(truncation)?.log()?;
        LiePolynomial::certify(l, DEFAULT_DYNKIN_TOL).map_err(|e| match e {
            KlvError::NotLie { level, defect } => KlvError::Internal(format!(
                "log-signature failed the Dynkin test at level {level} (defect {defect:.3e})"
            )),
            other => other,
        })
    }

    /// `self` followed by `other`, translated to start at the end of `self`.
    pub fn concat(&self, other: &PiecewiseLinearPath) -> Result<Self> {
        if self.dimension() != other.dimension() {
            return Err(KlvError::DimensionMismatch {
                left: self.dimension(),
                right: other.dimension(),
            });
        }
        let t0 = self.horizon();
        let x0 = self.endpoint().to_vec();
        let mut knots = self.knots.clone();
        let mut points = self.points.clone();
        for (t, p) in other.knots.iter().zip(&other.points).skip(1) {
            knots.push(t0 + t);
            points.push(p.iter().zip(&x0).map(|(a, b)| a + b).collect());
        }
        Ok(PiecewiseLinearPath { knots, points })
    }

    /// Brownian rescaling of a path over `[0,1]` to `[0,T]`:
    /// `ω_T(t) = √T·ω(t/T)`.
    pub fn brownian_rescale(&self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(KlvError::Range(format!("rescale horizon must be positive, got {horizon}")));
        }
        if (self.horizon() - 1.0).abs() > 1e-12 {
            return Err(KlvError::Domain(format!(
                "Brownian rescaling needs a path over [0,1], got [0,{}]",
                self.horizon()
            )));
        }
        let root = horizon.sqrt();
        let knots = self.knots.iter().map(|t| t * horizon).collect();
        let points = self.points.iter().map(|p| p.iter().map(|x| x * root).collect()).collect();
        Ok(PiecewiseLinearPath { knots, points })
    }
}

/// `E[S_{0,T}(∘B)]` truncated at `m`: `exp(T·ε₀ + (T/2)·Σᵢ εᵢ⊗εᵢ)`.
pub fn brownian_expected_signature(dimension: usize, truncation: usize, horizon: f64) -> Result<GradedTensor> {
    if truncation == 0 {
        return Err(KlvError::Range("expected signature truncation must be ≥ 1".into()));
    }
    let mut terms = vec![(Word::from([0]), horizon)];
    for i in 1..=dimension as u8 {
        terms.push((Word::from([i, i]), horizon / 2.0));
    }
    GradedTensor::from_terms(dimension, truncation, terms)?.exp()
}
