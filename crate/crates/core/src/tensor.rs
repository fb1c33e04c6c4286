//! Truncated tensor algebra over `R ⊕ R^d`, graded so that the time letter
//! `ε₀` has degree two and the Brownian letters `ε₁..ε_d` degree one.
//!
//! A [`GradedTensor`] keeps every coefficient for the words of graded degree
//! at most `m`. The word list, the graded degrees and the concatenation
//! table for a given `(d, m)` live in a shared [`Basis`] that is built once
//! and cached, so products reduce to a walk over a precomputed index table.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{KlvError, Result};

/// Default absolute per-coefficient tolerance for tensor equality.
pub const DEFAULT_TENSOR_TOL: f64 = 1e-12;

/// A word `ε_{α₁}⊗…⊗ε_{α_k}` over the alphabet `{0, 1, …, d}`.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn new(letters: impl Into<Vec<u8>>) -> Self {
        Word(letters.into())
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Length plus the number of `0` letters.
    pub fn graded_degree(&self) -> usize {
        self.0.len() + self.0.iter().filter(|&&l| l == 0).count()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = Vec::with_capacity(self.len() + other.len());
        letters.extend_from_slice(&self.0);
        letters.extend_from_slice(&other.0);
        Word(letters)
    }

    pub fn max_letter(&self) -> Option<u8> {
        self.0.iter().copied().max()
    }

    fn shortlex_key(&self) -> (usize, &[u8]) {
        (self.0.len(), &self.0)
    }
}

impl From<&[u8]> for Word {
    fn from(letters: &[u8]) -> Self {
        Word(letters.to_vec())
    }
}

impl<const N: usize> From<[u8; N]> for Word {
    fn from(letters: [u8; N]) -> Self {
        Word(letters.to_vec())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// All shuffles of `u` and `v`, with multiplicity.
pub fn shuffle(u: &Word, v: &Word) -> BTreeMap<Word, u64> {
    let mut out = BTreeMap::new();
    let mut prefix = Vec::with_capacity(u.len() + v.len());
    shuffle_rec(u.letters(), v.letters(), &mut prefix, &mut out);
    out
}

fn shuffle_rec(u: &[u8], v: &[u8], prefix: &mut Vec<u8>, out: &mut BTreeMap<Word, u64>) {
    if u.is_empty() || v.is_empty() {
        let mut w = prefix.clone();
        w.extend_from_slice(u);
        w.extend_from_slice(v);
        *out.entry(Word(w)).or_insert(0) += 1;
        return;
    }
    prefix.push(u[0]);
    shuffle_rec(&u[1..], v, prefix, out);
    prefix.pop();
    prefix.push(v[0]);
    shuffle_rec(u, &v[1..], prefix, out);
    prefix.pop();
}

/// Enumeration of the words of graded degree `≤ m` over `{0..d}` in
/// shortlex order, with the concatenation table used by the product.
pub struct Basis {
    dimension: usize,
    truncation: usize,
    words: Vec<Word>,
    degrees: Vec<usize>,
    index: HashMap<Word, usize>,
    /// `products[i]` lists `(j, k)` with `words[i]·words[j] = words[k]`.
    products: Vec<Vec<(u32, u32)>>,
    /// Index of each word with its last letter removed.
    prefix: Vec<usize>,
}

impl Basis {
    fn build(dimension: usize, truncation: usize) -> Basis {
        let mut words = vec![Word::empty()];
        let mut frontier = vec![Word::empty()];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for w in &frontier {
                for letter in 0..=dimension as u8 {
                    let mut letters = w.0.clone();
                    letters.push(letter);
                    let cand = Word(letters);
                    if cand.graded_degree() <= truncation {
                        next.push(cand);
                    }
                }
            }
            words.extend(next.iter().cloned());
            frontier = next;
        }
        words.sort_by(|a, b| a.shortlex_key().cmp(&b.shortlex_key()));
        let degrees: Vec<usize> = words.iter().map(Word::graded_degree).collect();
        let index: HashMap<Word, usize> =
            words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let products = words
            .iter()
            .enumerate()
            .map(|(i, u)| {
                words
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| degrees[i] + degrees[*j] <= truncation)
                    .map(|(j, v)| (j as u32, index[&u.concat(v)] as u32))
                    .collect()
            })
            .collect();
        let prefix = words
            .iter()
            .map(|w| match w.letters().split_last() {
                Some((_, p)) => index[&Word::from(p)],
                None => 0,
            })
            .collect();
        Basis { dimension, truncation, words, degrees, index, products, prefix }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, w: &Word) -> Option<usize> {
        self.index.get(w).copied()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }
}

/// Shared basis for `(d, m)`.
pub fn basis(dimension: usize, truncation: usize) -> Arc<Basis> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Basis>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry((dimension, truncation))
        .or_insert_with(|| Arc::new(Basis::build(dimension, truncation)))
        .clone()
}

/// Element of `T^(m)(R ⊕ R^d)`.
#[derive(Clone)]
pub struct GradedTensor {
    basis: Arc<Basis>,
    coeffs: Vec<f64>,
}

impl GradedTensor {
    pub fn zero(dimension: usize, truncation: usize) -> Self {
        let basis = basis(dimension, truncation);
        let coeffs = vec![0.0; basis.len()];
        GradedTensor { basis, coeffs }
    }

    pub fn one(dimension: usize, truncation: usize) -> Self {
        let mut t = Self::zero(dimension, truncation);
        t.coeffs[0] = 1.0;
        t
    }

    /// The generator `ε_i`. `ε₀` is zero when `m < 2`.
    pub fn letter(dimension: usize, truncation: usize, i: usize) -> Result<Self> {
        Self::from_terms(dimension, truncation, [(Word::new(vec![i as u8]), 1.0)])
    }

    /// Builds a tensor from `(word, coefficient)` pairs. Repeated words
    /// accumulate; words above the truncation are dropped.
    pub fn from_terms<I>(dimension: usize, truncation: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Word, f64)>,
    {
        let mut t = Self::zero(dimension, truncation);
        for (w, c) in terms {
            if let Some(l) = w.max_letter() {
                if l as usize > dimension {
                    return Err(KlvError::Range(format!(
                        "letter {l} in word {w} exceeds dimension {dimension}"
                    )));
                }
            }
            if let Some(i) = t.basis.index_of(&w) {
                t.coeffs[i] += c;
            }
        }
        Ok(t)
    }

    /// `exp(Σ_a c_a ε_a)` for a degree-one element, in closed form: the
    /// coefficient of `w` is `Π c_{w_i} / |w|!`. `c[0]` multiplies `ε₀`.
    pub fn exp_linear(dimension: usize, truncation: usize, c: &[f64]) -> Self {
        let mut t = Self::zero(dimension, truncation);
        t.set_exp_linear(c);
        t
    }

    /// Overwrites `self` with [`GradedTensor::exp_linear`] of `c`.
    pub fn set_exp_linear(&mut self, c: &[f64]) {
        assert_eq!(c.len(), self.dimension() + 1, "one coefficient per letter");
        // Shortlex order puts every word after its prefix, so each
        // coefficient extends the one of its prefix by a single letter.
        self.coeffs[0] = 1.0;
        for i in 1..self.coeffs.len() {
            let w = &self.basis.words[i];
            let (&last, prefix) = w.letters().split_last().expect("nonempty word");
            let p = self.basis.prefix[i];
            debug_assert_eq!(self.basis.words[p].letters(), prefix);
            self.coeffs[i] = self.coeffs[p] * c[last as usize] / w.len() as f64;
        }
    }

    pub fn dimension(&self) -> usize {
        self.basis.dimension
    }

    pub fn truncation(&self) -> usize {
        self.basis.truncation
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `w`; zero for words outside the truncation.
    pub fn coeff(&self, w: &Word) -> f64 {
        self.basis.index_of(w).map_or(0.0, |i| self.coeffs[i])
    }

    pub fn constant(&self) -> f64 {
        self.coeffs[0]
    }

    /// Nonzero terms in shortlex word order.
    pub fn terms(&self) -> impl Iterator<Item = (&Word, f64)> + '_ {
        self.basis
            .words()
            .iter()
            .zip(self.coeffs.iter().copied())
            .filter(|(_, c)| *c != 0.0)
    }

    fn check_compatible(&self, other: &GradedTensor) -> Result<()> {
        if self.dimension() != other.dimension() {
            return Err(KlvError::DimensionMismatch {
                left: self.dimension(),
                right: other.dimension(),
            });
        }
        if self.truncation() != other.truncation() {
            return Err(KlvError::TruncationMismatch {
                left: self.truncation(),
                right: other.truncation(),
            });
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(usize, f64) -> f64) -> GradedTensor {
        let coeffs = self.coeffs.iter().enumerate().map(|(i, &c)| f(i, c)).collect();
        GradedTensor { basis: self.basis.clone(), coeffs }
    }

    fn zip(&self, other: &GradedTensor, f: impl Fn(f64, f64) -> f64) -> Result<GradedTensor> {
        self.check_compatible(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| f(a, b)).collect();
        Ok(GradedTensor { basis: self.basis.clone(), coeffs })
    }

    pub fn add(&self, other: &GradedTensor) -> Result<GradedTensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GradedTensor) -> Result<GradedTensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> GradedTensor {
        self.map(|_, c| c * s)
    }

    pub fn neg(&self) -> GradedTensor {
        self.scale(-1.0)
    }

    /// Adds `s` to the constant term.
    pub fn add_constant(&self, s: f64) -> GradedTensor {
        let mut t = self.clone();
        t.coeffs[0] += s;
        t
    }

    /// Truncated tensor product.
    pub fn mul(&self, other: &GradedTensor) -> Result<GradedTensor> {
        self.check_compatible(other)?;
        let mut out = GradedTensor::zero(self.dimension(), self.truncation());
        self.mul_into_unchecked(other, &mut out);
        Ok(out)
    }

    /// `out ← self ⊗ other` without allocating; all three must share a basis.
    pub fn mul_into(&self, other: &GradedTensor, out: &mut GradedTensor) -> Result<()> {
        self.check_compatible(other)?;
        self.check_compatible(out)?;
        self.mul_into_unchecked(other, out);
        Ok(())
    }

    fn mul_into_unchecked(&self, other: &GradedTensor, out: &mut GradedTensor) {
        out.coeffs.iter_mut().for_each(|c| *c = 0.0);
        let b = &other.coeffs;
        for (row, &ai) in self.basis.products.iter().zip(&self.coeffs) {
            if ai == 0.0 {
                continue;
            }
            for &(j, k) in row {
                out.coeffs[k as usize] += ai * b[j as usize];
            }
        }
    }

    /// Keeps the words of graded degree `≤ j`; the truncation is unchanged.
    pub fn project(&self, j: usize) -> Result<GradedTensor> {
        if j > self.truncation() {
            return Err(KlvError::Range(format!(
                "projection degree {j} above truncation {}",
                self.truncation()
            )));
        }
        Ok(self.map(|i, c| if self.basis.degrees[i] <= j { c } else { 0.0 }))
    }

    /// The same element viewed in `T^(m')`: words above `m'` are dropped,
    /// new words start at zero.
    pub fn retruncate(&self, truncation: usize) -> GradedTensor {
        let mut out = GradedTensor::zero(self.dimension(), truncation);
        for (w, c) in self.terms() {
            if let Some(i) = out.basis.index_of(w) {
                out.coeffs[i] = c;
            }
        }
        out
    }

    /// Part made of words of length exactly `k`.
    pub fn level(&self, k: usize) -> GradedTensor {
        self.map(|i, c| if self.basis.words[i].len() == k { c } else { 0.0 })
    }

    /// Part made of words of graded degree exactly `j`.
    pub fn graded_part(&self, j: usize) -> GradedTensor {
        self.map(|i, c| if self.basis.degrees[i] == j { c } else { 0.0 })
    }

    /// Longest word length carrying a nonzero coefficient.
    pub fn max_level(&self) -> usize {
        self.terms().map(|(w, _)| w.len()).max().unwrap_or(0)
    }

    /// Homogeneous scaling: the coefficient of `w` is multiplied by
    /// `λ^{graded_degree(w)}`.
    pub fn dilate(&self, lambda: f64) -> GradedTensor {
        let powers: Vec<f64> = (0..=self.truncation()).map(|k| lambda.powi(k as i32)).collect();
        self.map(|i, c| c * powers[self.basis.degrees[i]])
    }

    pub fn exp(&self) -> Result<GradedTensor> {
        if self.constant() != 0.0 {
            return Err(KlvError::Domain(format!(
                "exp needs a zero constant term, found {}",
                self.constant()
            )));
        }
        // Horner: 1 + a(1 + a/2(1 + a/3(…))). Every word of `a` has graded
        // degree ≥ 1, so the series is exact after `m` terms.
        let m = self.truncation();
        let one = GradedTensor::one(self.dimension(), m);
        let mut acc = one.clone();
        let mut tmp = GradedTensor::zero(self.dimension(), m);
        for k in (1..=m).rev() {
            self.mul_into_unchecked(&acc, &mut tmp);
            acc = tmp.scale(1.0 / k as f64).add_constant(1.0);
        }
        Ok(acc)
    }

    pub fn log(&self) -> Result<GradedTensor> {
        if (self.constant() - 1.0).abs() > DEFAULT_TENSOR_TOL {
            return Err(KlvError::Domain(format!(
                "log needs constant term 1, found {}",
                self.constant()
            )));
        }
        let m = self.truncation();
        let mut x = self.clone();
        x.coeffs[0] = 0.0;
        // Horner on Σ (−1)^{k+1} x^k / k.
        let mut acc = GradedTensor::zero(self.dimension(), m);
        let mut tmp = GradedTensor::zero(self.dimension(), m);
        for k in (1..=m).rev() {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            x.mul_into_unchecked(&acc, &mut tmp);
            acc = tmp.add_constant(sign / k as f64);
        }
        x.mul_into_unchecked(&acc, &mut tmp);
        Ok(tmp)
    }

    /// Coordinate-wise inner product in the word basis.
    pub fn inner(&self, other: &GradedTensor) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum())
    }

    pub fn norm2(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Largest absolute coefficient difference, with the word where it occurs.
    pub fn max_abs_diff(&self, other: &GradedTensor) -> Result<(f64, Word)> {
        self.check_compatible(other)?;
        let mut worst = (0.0, Word::empty());
        for (i, (a, b)) in self.coeffs.iter().zip(&other.coeffs).enumerate() {
            let d = (a - b).abs();
            if d > worst.0 || d.is_nan() {
                worst = (d, self.basis.words[i].clone());
            }
        }
        Ok(worst)
    }

    /// Equality within an absolute per-coefficient tolerance. Tensors with
    /// different shapes are never equal.
    pub fn approx_eq(&self, other: &GradedTensor, tol: f64) -> bool {
        self.max_abs_diff(other).map(|(d, _)| d <= tol).unwrap_or(false)
    }

    pub fn to_json(&self) -> TensorJson {
        TensorJson {
            dimension: self.dimension(),
            truncation: self.truncation(),
            terms: self
                .terms()
                .map(|(w, c)| TermJson { word: w.letters().to_vec(), coeff: c })
                .collect(),
        }
    }

    pub fn from_json(json: &TensorJson) -> Result<GradedTensor> {
        GradedTensor::from_terms(
            json.dimension,
            json.truncation,
            json.terms.iter().map(|t| (Word::new(t.word.clone()), t.coeff)),
        )
    }
}

impl fmt::Debug for GradedTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GradedTensor(d={}, m={}) {{", self.dimension(), self.truncation())?;
        for (i, (w, c)) in self.terms().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, " {w}: {c}")?;
        }
        write!(f, " }}")
    }
}

/// JSON form `{dimension, truncation, terms: [{word, coeff}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorJson {
    pub dimension: usize,
    pub truncation: usize,
    pub terms: Vec<TermJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermJson {
    pub word: Vec<u8>,
    pub coeff: f64,
}

impl Serialize for GradedTensor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GradedTensor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let json = TensorJson::deserialize(d)?;
        GradedTensor::from_json(&json).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w<const N: usize>(l: [u8; N]) -> Word {
        Word::from(l)
    }

    fn t(d: usize, m: usize, terms: &[(&[u8], f64)]) -> GradedTensor {
        GradedTensor::from_terms(d, m, terms.iter().map(|(l, c)| (Word::from(*l), *c))).unwrap()
    }

    #[test]
    fn graded_degree_counts_zero_twice() {
        assert_eq!(w([]).graded_degree(), 0);
        assert_eq!(w([1, 2]).graded_degree(), 2);
        assert_eq!(w([0, 1]).graded_degree(), 3);
        assert_eq!(w([0, 0]).graded_degree(), 4);
    }

    #[test]
    fn basis_sizes_follow_the_degree_recursion() {
        // c(k) = d·c(k−1) + c(k−2): words of graded degree exactly k.
        for d in 1..=3usize {
            for m in 0..=6usize {
                let mut c = vec![1usize, d];
                for k in 2..=m {
                    c.push(d * c[k - 1] + c[k - 2]);
                }
                let expected: usize = c[..=m].iter().sum();
                assert_eq!(basis(d, m).len(), expected, "d={d} m={m}");
            }
        }
    }

    #[test]
    fn basis_is_shortlex() {
        let b = basis(2, 3);
        let words = b.words();
        assert_eq!(words[0], Word::empty());
        for pair in words.windows(2) {
            assert!(pair[0].shortlex_key() < pair[1].shortlex_key());
        }
    }

    #[test]
    fn product_distributes() {
        let a = t(2, 4, &[(&[], 1.0), (&[1], 1.0)]);
        let b = t(2, 4, &[(&[], 1.0), (&[2], 1.0)]);
        let expected = t(2, 4, &[(&[], 1.0), (&[1], 1.0), (&[2], 1.0), (&[1, 2], 1.0)]);
        assert!(a.mul(&b).unwrap().approx_eq(&expected, 0.0));
    }

    #[test]
    fn unit_law() {
        let a = t(2, 4, &[(&[0], 0.3), (&[1, 2], -1.5), (&[2, 2, 1], 2.0)]);
        let one = GradedTensor::one(2, 4);
        assert!(a.mul(&one).unwrap().approx_eq(&a, 0.0));
        assert!(one.mul(&a).unwrap().approx_eq(&a, 0.0));
    }

    #[test]
    fn product_drops_words_beyond_truncation() {
        let e0 = GradedTensor::letter(1, 3, 0).unwrap();
        let sq = e0.mul(&e0).unwrap();
        assert_eq!(sq.norm2(), 0.0);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = GradedTensor::one(1, 3);
        let b = GradedTensor::one(2, 3);
        let c = GradedTensor::one(1, 4);
        assert!(matches!(a.mul(&b), Err(KlvError::DimensionMismatch { .. })));
        assert!(matches!(a.mul(&c), Err(KlvError::TruncationMismatch { .. })));
        assert!(matches!(a.inner(&c), Err(KlvError::TruncationMismatch { .. })));
    }

    #[test]
    fn letters_beyond_dimension_are_rejected() {
        assert!(matches!(GradedTensor::letter(2, 3, 3), Err(KlvError::Range(_))));
    }

    #[test]
    fn projection_uses_graded_degree() {
        let a = t(1, 4, &[(&[], 1.0), (&[0], 1.0), (&[1], 1.0), (&[1, 1], 1.0)]);
        let p = a.project(1).unwrap();
        assert!(p.approx_eq(&t(1, 4, &[(&[], 1.0), (&[1], 1.0)]), 0.0));
        assert!(a.project(4).unwrap().approx_eq(&a, 0.0));
        assert!(matches!(a.project(5), Err(KlvError::Range(_))));
    }

    #[test]
    fn project_exp_e0() {
        let e0 = GradedTensor::letter(1, 5, 0).unwrap();
        let p = e0.exp().unwrap().project(3).unwrap();
        assert!(p.approx_eq(&t(1, 5, &[(&[], 1.0), (&[0], 1.0)]), 0.0));
    }

    #[test]
    fn dilation_counts_e0_twice() {
        let a = t(1, 3, &[(&[1], 1.0), (&[0], 1.0)]);
        let l = 1.7;
        let expected = t(1, 3, &[(&[1], l), (&[0], l * l)]);
        assert!(a.dilate(l).approx_eq(&expected, 1e-15));
        assert!(a.dilate(1.0).approx_eq(&a, 0.0));
    }

    #[test]
    fn exp_log_of_trivial_elements() {
        let z = GradedTensor::zero(2, 4);
        let one = GradedTensor::one(2, 4);
        assert!(z.exp().unwrap().approx_eq(&one, 0.0));
        assert!(one.log().unwrap().approx_eq(&z, 0.0));
    }

    #[test]
    fn exp_of_single_letter_is_power_series() {
        let e1 = GradedTensor::letter(1, 4, 1).unwrap();
        let e = e1.exp().unwrap();
        let expected = t(
            1,
            4,
            &[
                (&[], 1.0),
                (&[1], 1.0),
                (&[1, 1], 0.5),
                (&[1, 1, 1], 1.0 / 6.0),
                (&[1, 1, 1, 1], 1.0 / 24.0),
            ],
        );
        assert!(e.approx_eq(&expected, 1e-15));
        assert!(GradedTensor::exp_linear(1, 4, &[0.0, 1.0]).approx_eq(&expected, 1e-15));
    }

    #[test]
    fn exp_log_domain_errors() {
        let one = GradedTensor::one(1, 3);
        assert!(matches!(one.exp(), Err(KlvError::Domain(_))));
        let zero = GradedTensor::zero(1, 3);
        assert!(matches!(zero.log(), Err(KlvError::Domain(_))));
    }

    #[test]
    fn exp_product_word_coefficients_by_enumeration() {
        // Oracle: coefficient of w in exp(ε₁)⊗exp(ε₂) by explicit splitting
        // w = u·v with exp(ε_i)[u] = 1/|u|! when u is all i's.
        let d = 2;
        let m = 4;
        let e1 = GradedTensor::letter(d, m, 1).unwrap().exp().unwrap();
        let e2 = GradedTensor::letter(d, m, 2).unwrap().exp().unwrap();
        let prod = e1.mul(&e2).unwrap();
        let fact = |n: usize| (1..=n).product::<usize>() as f64;
        let exp_coeff = |letters: &[u8], i: u8| {
            if letters.iter().all(|&l| l == i) {
                1.0 / fact(letters.len())
            } else {
                0.0
            }
        };
        for word in basis(d, m).words() {
            let l = word.letters();
            let oracle: f64 = (0..=l.len()).map(|s| exp_coeff(&l[..s], 1) * exp_coeff(&l[s..], 2)).sum();
            assert!((prod.coeff(word) - oracle).abs() < 1e-15, "word {word}");
        }
        assert_eq!(prod.coeff(&w([1, 2])), 1.0);
        assert_eq!(prod.coeff(&w([2, 1])), 0.0);
    }

    #[test]
    fn inner_product_and_norm() {
        let e1 = GradedTensor::letter(2, 3, 1).unwrap();
        let e2 = GradedTensor::letter(2, 3, 2).unwrap();
        let e0 = GradedTensor::letter(2, 3, 0).unwrap();
        assert_eq!(e1.inner(&e2).unwrap(), 0.0);
        assert!((e0.add(&e1).unwrap().norm2() - 2f64.sqrt()).abs() < 1e-15);
        let a = t(2, 3, &[(&[0], 0.75), (&[1], 2.0)]);
        assert_eq!(a.inner(&e0).unwrap(), 0.75);
    }

    #[test]
    fn shuffle_examples() {
        let s = shuffle(&w([1]), &w([2]));
        assert_eq!(s.len(), 2);
        assert_eq!(s[&w([1, 2])], 1);
        assert_eq!(s[&w([2, 1])], 1);
        let s = shuffle(&Word::empty(), &w([1, 2]));
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec![(w([1, 2]), 1)]);
        let s = shuffle(&w([1]), &w([1]));
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec![(w([1, 1]), 2)]);
    }

    #[test]
    fn shuffle_count_is_binomial() {
        let s = shuffle(&w([1, 2, 3]), &w([4, 5]));
        assert_eq!(s.values().sum::<u64>(), 10);
    }

    #[test]
    fn json_round_trip() {
        let a = t(2, 4, &[(&[0], 0.25), (&[1, 2], -3.0), (&[2, 2, 1, 1], 1e-3)]);
        let text = serde_json::to_string(&a).unwrap();
        let back: GradedTensor = serde_json::from_str(&text).unwrap();
        assert!(back.approx_eq(&a, 0.0));
        assert!(text.contains("\"terms\""));
    }

    #[test]
    fn retruncate_keeps_shared_words() {
        let a = t(1, 5, &[(&[0], 1.0), (&[1, 1, 1, 1, 1], 2.0)]);
        let b = a.retruncate(3);
        assert_eq!(b.coeff(&w([0])), 1.0);
        assert_eq!(b.coeff(&w([1, 1, 1, 1, 1])), 0.0);
        assert_eq!(b.retruncate(5).coeff(&w([0])), 1.0);
    }
}
