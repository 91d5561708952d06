//! Decoupling of multivariate polynomials.
//!
//! Given a polynomial map `f: ℝᵐ → ℝⁿ`, this crate looks for a decoupled
//! representation
//!
//! ```text
//! f(p) ≈ W g(Vᵀp),   g = (g_1(z_1), …, g_r(z_r)),   z = Vᵀp
//! ```
//!
//! with univariate branches `g_i`. The Jacobians of `f` at a set of operating
//! points are stacked into a tensor `𝒥 ∈ ℝ^{n×m×N}`, which is factored as
//! `⟦W, V, 𝓕_C(V)∘G⟧`: `𝓕_C(V)` applies a non-equidistant finite-difference
//! filter along each branch axis `z_i = Pᵀv_i`, so the third factor `G`
//! directly holds samples of the branch functions. A penalty on the
//! disagreement between left and right finite differences keeps those
//! samples smooth, which singles out meaningful decompositions when the
//! plain CP decomposition is not unique.
//!
//! ```
//! use fcpd::fixtures::{toy_coupled, toy_decoupled};
//!
//! let f = toy_coupled();
//! let exact = toy_decoupled();
//! let p = [0.3, -0.7];
//! let diff = f.eval(&p).unwrap() - exact.eval(&p).unwrap();
//! assert!(diff.amax() < 1e-12);
//! ```
//!
//! The guide in `book/` walks through each stage; its code listings are
//! compiled as doctests of this crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cpd;
pub mod error;
pub mod filtered;
pub mod findiff;
pub mod fixtures;
pub mod io;
mod linalg;
pub mod model;
pub mod polyfun;
pub mod scalar;
pub mod tensor3;

pub use crate::cpd::{als_update, cpd_als, AlsOptions, CpdResult};
pub use crate::error::{Error, Result};
pub use crate::filtered::{fcpd_solve, lambda_search, FcpdOptions, FcpdSolution};
pub use crate::findiff::{
    build_filter, build_filter_bank, lagrange_weights, smoothness_penalty, FilterBank,
    FilterMatrix, Scheme,
};
pub use crate::model::{fit_branches, relative_error, DecoupledModel, ErrorReport, Polynomial};
pub use crate::polyfun::{
    build_jacobian_tensor, sample_points, JacobianTensor, MonomialFunction, OperatingPointSet,
};
pub use crate::tensor3::{khatri_rao, reconstruct, residual, FactorSet, Tensor3, ThirdFactor};

pub use nalgebra::{DMatrix, DVector};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/polynomials.md")]
    mod polynomials {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/filters.md")]
    mod filters {}
    #[doc = include_str!("../../../book/src/cpd.md")]
    mod cpd {}
    #[doc = include_str!("../../../book/src/filtered.md")]
    mod filtered {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
