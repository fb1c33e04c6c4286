//! Lie brackets, Lie-membership testing and truncated BCH products.
//!
//! Lie elements stay in the word basis. Membership is decided with the
//! Dynkin–Specht–Wever criterion: a homogeneous element `P` of tensor level
//! `k` is Lie iff `D(P) = k·P`, where `D` sends a word `a₁…a_k` to the
//! right-nested bracket `[a₁,[a₂,…[a_{k−1},a_k]…]]`.

use crate::error::{KlvError, Result};
use crate::tensor::{GradedTensor, Word};

/// Default absolute per-coefficient tolerance of the Dynkin test.
pub const DEFAULT_DYNKIN_TOL: f64 = 1e-10;

/// `[a, b] = a⊗b − b⊗a`, truncated.
pub fn bracket(a: &GradedTensor, b: &GradedTensor) -> Result<GradedTensor> {
    a.mul(b)?.sub(&b.mul(a)?)
}

/// Word expansion of the right-nested bracket of the letters of `w`.
pub fn right_bracketing(w: &Word) -> Vec<(Word, f64)> {
    let letters = w.letters();
    let Some((&last, rest)) = letters.split_last() else {
        return Vec::new();
    };
    let mut terms: Vec<(Vec<u8>, f64)> = vec![(vec![last], 1.0)];
    for &a in rest.iter().rev() {
        let mut next = Vec::with_capacity(terms.len() * 2);
        for (v, s) in terms {
            let mut left = Vec::with_capacity(v.len() + 1);
            left.push(a);
            left.extend_from_slice(&v);
            next.push((left, s));
            let mut right = v;
            right.push(a);
            next.push((right, -s));
        }
        terms = next;
    }
    terms.into_iter().map(|(v, s)| (Word::new(v), s)).collect()
}

/// The Dynkin map `D`, extended linearly. The empty word maps to zero.
pub fn dynkin(a: &GradedTensor) -> GradedTensor {
    let mut terms = Vec::new();
    for (w, c) in a.terms() {
        terms.extend(right_bracketing(w).into_iter().map(|(v, s)| (v, s * c)));
    }
    // Every expansion is a permutation of the original word, so it stays
    // inside the truncation and the letters stay within the dimension.
    GradedTensor::from_terms(a.dimension(), a.truncation(), terms)
        .expect("Dynkin expansion permutes letters")
}

/// Largest Dynkin defect `|D(P_k) − k·P_k|` over all levels, with the level
/// where it occurs.
pub fn dynkin_defect(a: &GradedTensor) -> Result<(usize, f64)> {
    if a.constant() != 0.0 {
        return Err(KlvError::Domain(format!(
            "Lie test needs a zero constant term, found {}",
            a.constant()
        )));
    }
    let d = dynkin(a);
    let mut worst = (0usize, 0.0f64);
    for (i, w) in a.basis().words().iter().enumerate() {
        let defect = (d.coeffs()[i] - w.len() as f64 * a.coeffs()[i]).abs();
        if defect > worst.1 || defect.is_nan() {
            worst = (w.len(), defect);
        }
    }
    Ok(worst)
}

pub fn dynkin_is_lie(a: &GradedTensor, tol: f64) -> Result<bool> {
    Ok(dynkin_defect(a)?.1 <= tol)
}

/// A tensor claimed to lie in the free Lie algebra. `certified` is set only
/// when the Dynkin test has passed.
#[derive(Debug, Clone)]
pub struct LiePolynomial {
    tensor: GradedTensor,
    certified: bool,
}

impl LiePolynomial {
    /// Runs the Dynkin test and certifies on success.
    pub fn certify(tensor: GradedTensor, tol: f64) -> Result<Self> {
        let (level, defect) = dynkin_defect(&tensor)?;
        if defect <= tol {
            Ok(LiePolynomial { tensor, certified: true })
        } else {
            Err(KlvError::NotLie { level, defect })
        }
    }

    pub fn uncertified(tensor: GradedTensor) -> Self {
        LiePolynomial { tensor, certified: false }
    }

    /// The generator `ε_i`.
    pub fn generator(dimension: usize, truncation: usize, i: usize) -> Result<Self> {
        Ok(LiePolynomial { tensor: GradedTensor::letter(dimension, truncation, i)?, certified: true })
    }

    pub fn zero(dimension: usize, truncation: usize) -> Self {
        LiePolynomial { tensor: GradedTensor::zero(dimension, truncation), certified: true }
    }

    pub fn tensor(&self) -> &GradedTensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> GradedTensor {
        self.tensor
    }

    pub fn is_certified(&self) -> bool {
        self.certified
    }

    pub fn dimension(&self) -> usize {
        self.tensor.dimension()
    }

    pub fn truncation(&self) -> usize {
        self.tensor.truncation()
    }

    pub(crate) fn require_certified(&self) -> Result<()> {
        if self.certified {
            Ok(())
        } else {
            Err(KlvError::Domain("Lie polynomial has not been certified".into()))
        }
    }

    /// Dilation maps Lie elements to Lie elements.
    pub fn dilate(&self, lambda: f64) -> Self {
        LiePolynomial { tensor: self.tensor.dilate(lambda), certified: self.certified }
    }

    pub fn scale(&self, s: f64) -> Self {
        LiePolynomial { tensor: self.tensor.scale(s), certified: self.certified }
    }

    pub fn add(&self, other: &LiePolynomial) -> Result<Self> {
        Ok(LiePolynomial {
            tensor: self.tensor.add(&other.tensor)?,
            certified: self.certified && other.certified,
        })
    }

    pub fn bracket(&self, other: &LiePolynomial) -> Result<Self> {
        Ok(LiePolynomial {
            tensor: bracket(&self.tensor, &other.tensor)?,
            certified: self.certified && other.certified,
        })
    }

    /// Graded projection; the result is still Lie.
    pub fn project(&self, j: usize) -> Result<Self> {
        Ok(LiePolynomial { tensor: self.tensor.project(j)?, certified: self.certified })
    }

    pub fn retruncate(&self, truncation: usize) -> Self {
        LiePolynomial { tensor: self.tensor.retruncate(truncation), certified: self.certified }
    }

    pub fn exp(&self) -> Result<GradedTensor> {
        self.tensor.exp()
    }
}

/// Truncated Baker–Campbell–Hausdorff product `log(exp(a)⊗exp(b))`.
pub fn bch(a: &LiePolynomial, b: &LiePolynomial) -> Result<LiePolynomial> {
    a.require_certified()?;
    b.require_certified()?;
    let z = a.exp()?.mul(&b.exp()?)?.log()?;
    LiePolynomial::certify(z, DEFAULT_DYNKIN_TOL).map_err(|e| match e {
        KlvError::NotLie { level, defect } => KlvError::Internal(format!(
            "BCH output failed the Dynkin test at level {level} (defect {defect:.3e})"
        )),
        other => other,
    })
}
