//! Intrinsic anisotropic calculus on the Galilean group `ℝ × ℝ^d × ℝ^d`.
//!
//! The crate covers the group law and its dilations, anisotropic distances,
//! flows of the Hörmander fields `Z_i = ∂_{v_i}` and `Y = ⟨v, ∇_x⟩ + ∂_t`,
//! intrinsic Taylor polynomials and their remainders, discretized intrinsic
//! Hölder seminorms, commutator steering paths (including a non-homogeneous
//! drift `B`), and pointwise quadrature of fractional kinetic operators.

pub mod corpus;
pub mod error;
pub mod field;
pub mod flows;
pub mod group;
pub mod holder;
pub mod index;
pub mod kinetic;
pub mod quadrature;
pub mod steering;
pub mod taylor;

pub use error::{Error, Result};
pub use field::{DiffOp, ExpPolyField, FunctionHandle, PolynomialField, ScalarField};
pub use group::{Anisotropy, Point};
pub use index::TermIndex;
