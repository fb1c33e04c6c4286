//! Cubature on Wiener space for Stratonovich SDEs
//! `dX = V₀(X)dt + Σᵢ Vᵢ(X)∘dBⁱ`.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: truncated graded tensor algebra `T^(m)(R ⊕ R^d)`.
//! - [`lie`]: brackets, Dynkin certification, BCH.
//! - [`signature`]: piecewise-linear paths and their signatures.
//! - [`cubature`]: cubature formulas, their validator and file format.
//! - [`vector_fields`]: the Γ map, brackets of vector fields, ODE flows.
//! - [`operator`]: exact polynomial operator calculus for affine systems.
//! - [`solver`]: partitions, the KLV tree, Kusuoka's flow operator and an
//!   Euler–Maruyama reference.

pub mod cubature;
pub mod error;
pub mod lie;
pub mod operator;
pub mod signature;
pub mod solver;
pub mod tensor;
pub mod vector_fields;

pub use cubature::{CubatureFormula, Support, ValidationReport};
pub use error::{KlvError, Result};
pub use lie::{bch, bracket, dynkin_is_lie, LiePolynomial};
pub use signature::{brownian_expected_signature, PiecewiseLinearPath};
pub use tensor::{shuffle, GradedTensor, Word};
