//! Cubature formulas on Wiener space.
//!
//! A formula of degree `m` is a set of positive weights `λⱼ` on paths `ωⱼ`
//! (or on Lie polynomials `Lⱼ`) such that
//! `Σ λⱼ π_m S(ωⱼ) = E[π_m S_{0,T}(∘B)]` word by word, the truncation
//! being the graded one. [`CubatureFormula::validate`] measures the defect of
//! that identity; the built-in formulas are checked against it in tests.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KlvError, Result};
use crate::lie::{dynkin_defect, LiePolynomial, DEFAULT_DYNKIN_TOL};
use crate::signature::{brownian_expected_signature, PiecewiseLinearPath};
use crate::tensor::{GradedTensor, TensorJson, Word};

/// Default validation tolerance.
pub const DEFAULT_VALIDATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub enum Support {
    Paths(Vec<PiecewiseLinearPath>),
    Lie(Vec<LiePolynomial>),
}

impl Support {
    pub fn len(&self) -> usize {
        match self {
            Support::Paths(p) => p.len(),
            Support::Lie(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct CubatureFormula {
    dimension: usize,
    degree: usize,
    horizon: f64,
    weights: Vec<f64>,
    support: Support,
}

/// One row of the validator's defect table.
#[derive(Debug, Clone, Serialize)]
pub struct DefectRow {
    pub word: Word,
    pub expected: f64,
    pub actual: f64,
    pub defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub degree: usize,
    pub horizon: f64,
    pub tol: f64,
    pub rows: Vec<DefectRow>,
    pub worst_word: Word,
    pub max_defect: f64,
    pub passed: bool,
}

impl ValidationReport {
    /// Rows whose defect exceeds the tolerance.
    pub fn failures(&self) -> impl Iterator<Item = &DefectRow> {
        self.rows.iter().filter(move |r| !(r.defect <= self.tol))
    }
}

impl CubatureFormula {
    /// A formula over `[0,1]`. Weights must be positive and finite, paths
    /// must live on `[0,1]`, Lie support must be certified with truncation
    /// equal to `degree`.
    pub fn new(dimension: usize, degree: usize, weights: Vec<f64>, support: Support) -> Result<Self> {
        Self::with_horizon(dimension, degree, 1.0, weights, support)
    }

    /// A formula whose support already lives on `[0, horizon]`.
    pub fn with_horizon(
        dimension: usize,
        degree: usize,
        horizon: f64,
        weights: Vec<f64>,
        support: Support,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(KlvError::Range(format!("horizon must be positive, got {horizon}")));
        }
        if degree == 0 {
            return Err(KlvError::Range("cubature degree must be ≥ 1".into()));
        }
        if weights.len() != support.len() || weights.is_empty() {
            return Err(KlvError::Domain(format!(
                "{} weights for {} support points",
                weights.len(),
                support.len()
            )));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
            return Err(KlvError::Domain(format!("weight {i} is {w}, weights must be positive")));
        }
        match &support {
            Support::Paths(paths) => {
                for (i, p) in paths.iter().enumerate() {
                    if p.dimension() != dimension {
                        return Err(KlvError::DimensionMismatch { left: dimension, right: p.dimension() });
                    }
                    if (p.horizon() - horizon).abs() > 1e-12 * horizon.max(1.0) {
                        return Err(KlvError::InvalidPath(format!(
                            "support path {i} spans [0,{}], expected [0,{horizon}]",
                            p.horizon()
                        )));
                    }
                }
            }
            Support::Lie(polys) => {
                for l in polys {
                    l.require_certified()?;
                    if l.dimension() != dimension {
                        return Err(KlvError::DimensionMismatch { left: dimension, right: l.dimension() });
                    }
                    if l.truncation() != degree {
                        return Err(KlvError::TruncationMismatch { left: degree, right: l.truncation() });
                    }
                }
            }
        }
        Ok(CubatureFormula { dimension, degree, horizon, weights, support })
    }

    /// `2d` straight lines with increments `±√d·eᵢ`, each of weight `1/(2d)`.
    pub fn degree3(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(KlvError::Range("dimension must be ≥ 1".into()));
        }
        let r = (dimension as f64).sqrt();
        let mut paths = Vec::with_capacity(2 * dimension);
        for i in 0..dimension {
            for sign in [1.0, -1.0] {
                let mut inc = vec![0.0; dimension];
                inc[i] = sign * r;
                paths.push(PiecewiseLinearPath::line(inc, 1.0)?);
            }
        }
        let weights = vec![1.0 / (2 * dimension) as f64; 2 * dimension];
        Self::new(dimension, 3, weights, Support::Paths(paths))
    }

    /// Degree-5 formula for one Brownian dimension with the three-point
    /// Gauss–Hermite endpoints `−√3, 0, √3` and weights `1/6, 2/3, 1/6`.
    ///
    /// Straight lines to those endpoints only reach degree 3 once the time
    /// letter is counted: their `(0,1,1)`, `(1,0,1)`, `(1,1,0)` integrals are
    /// all `1/2` where Wiener measure gives `3/4, 0, 3/4` per unit weight.
    /// The outer paths therefore take three equal-time segments
    /// `0 → a → √3−a → √3`, with `a` chosen so that `∫₀¹ ω² dt = 3/2`; the
    /// point symmetry about `(1/2, √3/2)` gives `∫₀¹ ω dt = √3/2`, and those
    /// two moments fix every remaining even word of graded degree ≤ 5.
    pub fn degree5_d1() -> Result<Self> {
        let z = 3f64.sqrt();
        let a = (4.0 * z - 66f64.sqrt()) / 6.0;
        let third = 1.0 / 3.0;
        let outer = |s: f64| {
            PiecewiseLinearPath::new(
                vec![0.0, third, 2.0 * third, 1.0],
                vec![vec![0.0], vec![s * a], vec![s * (z - a)], vec![s * z]],
            )
        };
        let paths = vec![outer(-1.0)?, PiecewiseLinearPath::line(vec![0.0], 1.0)?, outer(1.0)?];
        Self::new(1, 5, vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], Support::Paths(paths))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ λⱼ π_m S(ωⱼ)` (or `Σ λⱼ π_m exp(Lⱼ)`) at truncation `degree`.
    pub fn expected_signature(&self, degree: usize) -> Result<GradedTensor> {
        let terms: Vec<GradedTensor> = match &self.support {
            Support::Paths(paths) => paths.par_iter().map(|p| p.signature(degree)).collect::<Result<_>>()?,
            Support::Lie(polys) => polys
                .par_iter()
                .map(|l| l.tensor().retruncate(degree).exp())
                .collect::<Result<_>>()?,
        };
        let mut acc = GradedTensor::zero(self.dimension, degree);
        for (w, t) in self.weights.iter().zip(&terms) {
            acc = acc.add(&t.scale(*w))?;
        }
        Ok(acc)
    }

    /// Compares the formula's expected signature with Wiener measure's at
    /// graded degree `degree` over the formula's horizon.
    pub fn validate(&self, degree: usize, tol: f64) -> Result<ValidationReport> {
        let actual = self.expected_signature(degree)?;
        let expected = brownian_expected_signature(self.dimension, degree, self.horizon)?;
        let mut rows = Vec::with_capacity(actual.basis().len());
        let mut worst = (0.0f64, Word::empty());
        for (i, word) in actual.basis().words().iter().enumerate() {
            let (e, a) = (expected.coeffs()[i], actual.coeffs()[i]);
            let defect = (a - e).abs();
            if defect > worst.0 || defect.is_nan() {
                worst = (defect, word.clone());
            }
            rows.push(DefectRow { word: word.clone(), expected: e, actual: a, defect });
        }
        Ok(ValidationReport {
            degree,
            horizon: self.horizon,
            tol,
            rows,
            worst_word: worst.1,
            max_defect: worst.0,
            passed: worst.0 <= tol,
        })
    }

    /// The same formula over `[0,s]`: paths are Brownian-rescaled, Lie
    /// support is dilated by `√s`, weights are unchanged.
    pub fn rescale(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(KlvError::Range(format!("rescale horizon must be positive, got {s}")));
        }
        if (self.horizon - 1.0).abs() > 1e-12 {
            return Err(KlvError::Domain(format!(
                "rescale needs a formula over [0,1], got [0,{}]",
                self.horizon
            )));
        }
        let support = match &self.support {
            Support::Paths(paths) => {
                Support::Paths(paths.iter().map(|p| p.brownian_rescale(s)).collect::<Result<_>>()?)
            }
            Support::Lie(polys) => Support::Lie(polys.iter().map(|l| l.dilate(s.sqrt())).collect()),
        };
        Ok(CubatureFormula { support, horizon: s, ..self.clone() })
    }

    /// Replaces each path by its truncated log-signature.
    pub fn to_lie_support(&self) -> Result<Self> {
        self.to_lie_support_at(self.degree)
    }

    /// Log-signatures truncated at `degree`; the result claims that degree.
    pub fn to_lie_support_at(&self, degree: usize) -> Result<Self> {
        let support = match &self.support {
            Support::Paths(paths) => {
                Support::Lie(paths.par_iter().map(|p| p.log_signature(degree)).collect::<Result<_>>()?)
            }
            Support::Lie(polys) => Support::Lie(polys.iter().map(|l| l.retruncate(degree)).collect()),
        };
        Ok(CubatureFormula { support, degree, ..self.clone() })
    }

    /// Exact agreement of weights, horizon and support up to `tol`.
    pub fn approx_eq(&self, other: &CubatureFormula, tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= tol;
        if self.dimension != other.dimension
            || self.degree != other.degree
            || !close(self.horizon, other.horizon)
            || self.weights.len() != other.weights.len()
            || !self.weights.iter().zip(&other.weights).all(|(a, b)| close(*a, *b))
        {
            return false;
        }
        match (&self.support, &other.support) {
            (Support::Paths(a), Support::Paths(b)) => a.iter().zip(b).all(|(p, q)| {
                p.knots().len() == q.knots().len()
                    && p.knots().iter().zip(q.knots()).all(|(x, y)| close(*x, *y))
                    && p.points().iter().flatten().zip(q.points().iter().flatten()).all(|(x, y)| close(*x, *y))
            }),
            (Support::Lie(a), Support::Lie(b)) => a.iter().zip(b).all(|(p, q)| p.tensor().approx_eq(q.tensor(), tol)),
            _ => false,
        }
    }

    pub fn to_json(&self) -> CubatureJson {
        let support = match &self.support {
            Support::Paths(p) => SupportJson::Paths(p.clone()),
            Support::Lie(l) => SupportJson::LiePolys(l.iter().map(|x| x.tensor().to_json()).collect()),
        };
        CubatureJson {
            dimension: self.dimension,
            degree: self.degree,
            horizon: Some(self.horizon),
            weights: self.weights.clone(),
            support,
        }
    }

    /// Parses and checks a formula; errors name the offending location.
    pub fn from_json(json: CubatureJson, origin: &str) -> Result<Self> {
        let load = |location: String, reason: String| KlvError::Load { location: format!("{origin}: {location}"), reason };
        if let Some((i, w)) = json.weights.iter().enumerate().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
            return Err(load(format!("weights[{i}]"), format!("weight {w} is not positive")));
        }
        let support = match json.support {
            SupportJson::Paths(p) => Support::Paths(p),
            SupportJson::LiePolys(polys) => {
                let mut out = Vec::with_capacity(polys.len());
                for (i, tj) in polys.iter().enumerate() {
                    let loc = format!("support.lie_polys[{i}]");
                    if tj.dimension != json.dimension || tj.truncation != json.degree {
                        return Err(load(
                            loc,
                            format!(
                                "shape (d={}, m={}) does not match formula (d={}, m={})",
                                tj.dimension, tj.truncation, json.dimension, json.degree
                            ),
                        ));
                    }
                    let t = GradedTensor::from_json(tj).map_err(|e| load(loc.clone(), e.to_string()))?;
                    let (level, defect) = dynkin_defect(&t).map_err(|e| load(loc.clone(), e.to_string()))?;
                    if defect > DEFAULT_DYNKIN_TOL {
                        return Err(load(loc, format!("not a Lie polynomial: Dynkin defect {defect:.3e} at level {level}")));
                    }
                    out.push(LiePolynomial::certify(t, DEFAULT_DYNKIN_TOL)?);
                }
                Support::Lie(out)
            }
        };
        let horizon = json.horizon.unwrap_or(1.0);
        CubatureFormula::with_horizon(json.dimension, json.degree, horizon, json.weights, support)
            .map_err(|e| load("formula".into(), e.to_string()))
    }

    pub fn to_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let origin = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| KlvError::Load { location: origin.clone(), reason: e.to_string() })?;
        let json: CubatureJson = serde_json::from_str(&text).map_err(|e| KlvError::Load {
            location: format!("{origin}:{}:{}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        Self::from_json(json, &origin)
    }
}

/// File form `{dimension, degree, horizon?, weights, support: {paths | lie_polys}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubatureJson {
    pub dimension: usize,
    pub degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub weights: Vec<f64>,
    pub support: SupportJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportJson {
    Paths(Vec<PiecewiseLinearPath>),
    LiePolys(Vec<TensorJson>),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree3_passes_at_three_for_small_dimensions() {
        for d in 1..=5 {
            let q = CubatureFormula::degree3(d).unwrap();
            assert_eq!(q.len(), 2 * d);
            assert!(q.weights().iter().all(|&w| (w - 1.0 / (2 * d) as f64).abs() < 1e-16));
            let r = q.validate(3, DEFAULT_VALIDATION_TOL).unwrap();
            assert!(r.passed && r.max_defect < 1e-12, "d={d}: {} at {}", r.max_defect, r.worst_word);
        }
    }

    #[test]
    fn degree3_paths() {
        let q = CubatureFormula::degree3(2).unwrap();
        let Support::Paths(paths) = q.support() else { panic!() };
        let r = 2f64.sqrt();
        let ends: Vec<Vec<f64>> = paths.iter().map(|p| p.endpoint().to_vec()).collect();
        assert_eq!(ends, vec![vec![r, 0.0], vec![-r, 0.0], vec![0.0, r], vec![0.0, -r]]);
    }

    #[test]
    fn degree3_fails_at_five() {
        let q = CubatureFormula::degree3(3).unwrap();
        let r = q.validate(5, DEFAULT_VALIDATION_TOL).unwrap();
        assert!(!r.passed);
        let deg = r.worst_word.graded_degree();
        assert!(deg == 4 || deg == 5, "worst word {}", r.worst_word);
        assert!(r.failures().all(|row| row.word.graded_degree() >= 4));
    }

    #[test]
    fn degree5_d1_passes_at_five() {
        let q = CubatureFormula::degree5_d1().unwrap();
        let r = q.validate(5, DEFAULT_VALIDATION_TOL).unwrap();
        assert!(r.passed && r.max_defect < 1e-12, "{} at {}", r.max_defect, r.worst_word);
        let e = q.expected_signature(5).unwrap();
        assert!((e.coeff(&Word::from([1, 1, 1, 1])) - 3.0 / 24.0).abs() < 1e-15);
        let ends: Vec<f64> = match q.support() {
            Support::Paths(p) => p.iter().map(|p| p.endpoint()[0]).collect(),
            _ => unreachable!(),
        };
        let z = 3f64.sqrt();
        assert!((ends[0] + z).abs() < 1e-15 && ends[1] == 0.0 && (ends[2] - z).abs() < 1e-15);
    }

    #[test]
    fn degree5_d1_fails_at_seven() {
        let r = CubatureFormula::degree5_d1().unwrap().validate(7, DEFAULT_VALIDATION_TOL).unwrap();
        assert!(!r.passed);
        assert!(r.worst_word.graded_degree() >= 6);
    }

    #[test]
    fn straight_line_gauss_hermite_is_only_degree_three() {
        let z = 3f64.sqrt();
        let paths = vec![
            PiecewiseLinearPath::line(vec![-z], 1.0).unwrap(),
            PiecewiseLinearPath::line(vec![0.0], 1.0).unwrap(),
            PiecewiseLinearPath::line(vec![z], 1.0).unwrap(),
        ];
        let q = CubatureFormula::new(1, 5, vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], Support::Paths(paths)).unwrap();
        assert!(q.validate(3, 1e-12).unwrap().passed);
        let r = q.validate(5, 1e-10).unwrap();
        assert!(!r.passed);
        let bad: Vec<String> = r.failures().map(|row| row.word.to_string()).collect();
        assert_eq!(bad, vec!["(0,1,1)", "(1,0,1)", "(1,1,0)"]);
    }

    #[test]
    fn unnormalised_weights_fail_on_empty_word() {
        let paths = vec![
            PiecewiseLinearPath::line(vec![1.0], 1.0).unwrap(),
            PiecewiseLinearPath::line(vec![-1.0], 1.0).unwrap(),
        ];
        let q = CubatureFormula::new(1, 3, vec![0.5, 0.6], Support::Paths(paths)).unwrap();
        let r = q.validate(3, 1e-10).unwrap();
        assert!(!r.passed);
        let empty = r.rows.iter().find(|row| row.word.is_empty()).unwrap();
        assert!((empty.defect - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_weights() {
        let paths = vec![PiecewiseLinearPath::line(vec![1.0], 1.0).unwrap()];
        let r = CubatureFormula::new(1, 3, vec![-0.1], Support::Paths(paths));
        assert!(matches!(r, Err(KlvError::Domain(_))));
    }

    #[test]
    fn rescale_examples() {
        let q = CubatureFormula::degree3(1).unwrap();
        assert!(q.rescale(1.0).unwrap().approx_eq(&q, 0.0));
        let r = q.rescale(0.25).unwrap();
        let Support::Paths(paths) = r.support() else { panic!() };
        assert_eq!(paths[0].knots(), &[0.0, 0.25]);
        assert_eq!(paths[0].endpoint(), &[0.5]);
        assert_eq!(paths[1].endpoint(), &[-0.5]);
        assert!(matches!(q.rescale(-1.0), Err(KlvError::Range(_))));
        assert!(matches!(r.rescale(2.0), Err(KlvError::Domain(_))));
    }

    #[test]
    fn rescaled_formulas_validate_at_their_horizon() {
        let q = CubatureFormula::degree3(2).unwrap();
        for s in [0.1, 0.5, 2.0] {
            let r = q.rescale(s).unwrap().validate(3, 1e-10).unwrap();
            assert!(r.passed, "s={s}: {}", r.max_defect);
        }
        let q5 = CubatureFormula::degree5_d1().unwrap().to_lie_support().unwrap();
        for s in [0.1, 0.5, 2.0] {
            assert!(q5.rescale(s).unwrap().validate(5, 1e-10).unwrap().passed);
        }
    }

    #[test]
    fn path_and_lie_validation_agree() {
        for q in [CubatureFormula::degree3(2).unwrap(), CubatureFormula::degree5_d1().unwrap()] {
            let ql = q.to_lie_support().unwrap();
            for m in [q.degree(), q.degree() + 2] {
                let a = q.validate(m, 1e-10).unwrap();
                let b = ql.validate(m, 1e-10).unwrap();
                assert_eq!(a.passed, b.passed);
                if m == q.degree() {
                    for (x, y) in a.rows.iter().zip(&b.rows) {
                        assert!((x.actual - y.actual).abs() < 1e-12, "{}", x.word);
                    }
                }
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for q in [
            CubatureFormula::degree3(2).unwrap(),
            CubatureFormula::degree5_d1().unwrap(),
            CubatureFormula::degree5_d1().unwrap().to_lie_support().unwrap(),
            CubatureFormula::degree3(1).unwrap().rescale(0.3).unwrap(),
        ] {
            let path = dir.path().join("q.json");
            q.to_file(&path).unwrap();
            let back = CubatureFormula::from_file(&path).unwrap();
            assert!(back.approx_eq(&q, 0.0));
        }
    }

    #[test]
    fn file_with_negative_weight_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let text = r#"{"dimension":1,"degree":3,"weights":[-0.1,1.1],
            "support":{"paths":[{"horizon":1.0,"knots":[0.0,1.0],"points":[[0.0],[1.0]]},
                                {"horizon":1.0,"knots":[0.0,1.0],"points":[[0.0],[-1.0]]}]}}"#;
        std::fs::write(&path, text).unwrap();
        let err = CubatureFormula::from_file(&path).unwrap_err();
        match err {
            KlvError::Load { location, .. } => assert!(location.ends_with("weights[0]")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_with_non_lie_support_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let text = r#"{"dimension":2,"degree":3,"weights":[1.0],
            "support":{"lie_polys":[{"dimension":2,"truncation":3,"terms":[{"word":[1,2],"coeff":1.0}]}]}}"#;
        std::fs::write(&path, text).unwrap();
        let err = CubatureFormula::from_file(&path).unwrap_err();
        match err {
            KlvError::Load { location, reason } => {
                assert!(location.ends_with("support.lie_polys[0]"));
                assert!(reason.contains("Dynkin defect"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_file_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"dimension\": 1,\n \"degree\": }").unwrap();
        let err = CubatureFormula::from_file(&path).unwrap_err();
        assert!(matches!(err, KlvError::Load { ref location, .. } if location.contains(":2:")), "{err}");
    }
}
