//! The shipped toy problem: a cubic map `ℝ² → ℝ²` that decouples exactly
//! into three branches.

use crate::model::DecoupledModel;
use crate::polyfun::MonomialFunction;

pub const TOY_COUPLED_JSON: &str = include_str!("../fixtures/toy_coupled.json");
pub const TOY_DECOUPLED_JSON: &str = include_str!("../fixtures/toy_decoupled.json");

/// The coupled monomial form.
pub fn toy_coupled() -> MonomialFunction {
    MonomialFunction::from_json_str(TOY_COUPLED_JSON).expect("toy fixture is valid")
}

/// The exact decoupled form of [`toy_coupled`].
pub fn toy_decoupled() -> DecoupledModel {
    serde_json::from_str(TOY_DECOUPLED_JSON).expect("toy fixture is valid")
}
