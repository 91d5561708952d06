//! Serializable artifacts written by the runner.

use serde::Serialize;

use crate::error::Result;
use crate::filtered::{FcpdSolution, LambdaEntry};
use crate::findiff::{build_filter, Scheme, DEFAULT_WINDOW};
use crate::model::BranchFit;
use crate::model::DecoupledModel;
use nalgebra::DMatrix;

/// Which points the output errors were measured on.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationInfo {
    /// `"training"` or `"fresh"`.
    pub set: &'static str,
    pub points: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub tensor_relative_error: Option<f64>,
    pub penalty: Option<f64>,
    pub objective: Option<f64>,
    pub output_errors: Vec<Option<f64>>,
    pub branch_residuals: Vec<f64>,
    pub sweeps: Option<usize>,
    pub restart: Option<usize>,
    pub failed_restarts: Option<usize>,
    pub degenerate_candidates: Option<usize>,
}

impl From<&LambdaEntry> for LambdaRow {
    fn from(entry: &LambdaEntry) -> Self {
        match &entry.outcome {
            Ok(fit) => {
                let s = &fit.solution;
                LambdaRow {
                    lambda: entry.lambda,
                    status: "ok",
                    error: None,
                    tensor_relative_error: Some(s.tensor_relative_error),
                    penalty: Some(s.penalty),
                    objective: Some(s.objective()),
                    output_errors: fit.report.output_errors.clone(),
                    branch_residuals: fit.report.branch_residuals.clone(),
                    sweeps: Some(s.sweeps()),
                    restart: Some(s.restart),
                    failed_restarts: Some(s.failed_restarts),
                    degenerate_candidates: Some(s.degenerate_candidates),
                }
            }
            Err(message) => LambdaRow {
                lambda: entry.lambda,
                status: "failed",
                error: Some(message.clone()),
                tensor_relative_error: None,
                penalty: None,
                objective: None,
                output_errors: Vec::new(),
                branch_residuals: Vec::new(),
                sweeps: None,
                restart: None,
                failed_restarts: None,
                degenerate_candidates: None,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FcpdReport {
    pub status: &'static str,
    pub mode: &'static str,
    pub seed: u64,
    pub rank: usize,
    pub points: usize,
    pub degree: usize,
    pub validation: ValidationInfo,
    pub selected_lambda: f64,
    pub output_errors: Vec<Option<f64>>,
    pub tensor_relative_error: f64,
    pub penalty: f64,
    pub lambdas: Vec<LambdaRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CpdReport {
    pub status: &'static str,
    pub mode: &'static str,
    pub seed: u64,
    pub rank: usize,
    pub points: usize,
    pub degree: usize,
    pub validation: ValidationInfo,
    /// `‖𝒥 − ⟦W,V,H⟧‖_F / ‖𝒥‖_F`, as a fraction.
    pub tensor_residual: f64,
    pub tensor_relative_error: f64,
    pub sweeps: usize,
    pub restart: usize,
    /// Normalized left/right penalty of the integrated branches.
    pub penalty: f64,
    pub output_errors: Vec<Option<f64>>,
    pub branch_residuals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelScore {
    pub path: String,
    pub output_errors: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub status: &'static str,
    pub mode: &'static str,
    pub seed: u64,
    pub points: usize,
    pub model_a: ModelScore,
    pub model_b: ModelScore,
    /// `max_k ‖f_a(p_k) − f_b(p_k)‖_∞`.
    pub max_deviation: f64,
}

/// Written in place of a normal report when a run fails after the output
/// directory was created.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailureReport {
    pub status: &'static str,
    pub mode: &'static str,
    pub kind: &'static str,
    pub message: String,
    /// Artifacts in the directory may be incomplete.
    pub partial: bool,
}

/// Result of a successful run.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Cpd(CpdReport),
    Fcpd(FcpdReport),
    Compare(CompareReport),
}

impl Outcome {
    pub fn to_json_string(&self) -> Result<String> {
        match self {
            Outcome::Cpd(r) => crate::io::to_json_string(r),
            Outcome::Fcpd(r) => crate::io::to_json_string(r),
            Outcome::Compare(r) => crate::io::to_json_string(r),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchRow {
    pub branch_index: usize,
    pub z: f64,
    /// Function-level sample, carrying the same constant as the fitted model.
    pub g_sample: f64,
    pub g_fit: f64,
}

/// Samples and fitted branch values, each branch in increasing `z`.
pub fn branch_rows(
    z: &DMatrix<f64>,
    g: &DMatrix<f64>,
    fits: &[BranchFit],
    model: &DecoupledModel,
) -> Vec<BranchRow> {
    let mut rows = Vec::with_capacity(z.len());
    for (i, (fit, anchored)) in fits.iter().zip(model.branches()).enumerate() {
        let shift = anchored.coeffs[0] - fit.coeffs.coeffs[0];
        let mut order: Vec<usize> = (0..z.nrows()).collect();
        order.sort_by(|&a, &b| z[(a, i)].total_cmp(&z[(b, i)]));
        rows.extend(order.into_iter().map(|k| BranchRow {
            branch_index: i,
            z: z[(k, i)],
            g_sample: g[(k, i)] + shift,
            g_fit: anchored.eval(z[(k, i)]),
        }));
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub lambda: f64,
    pub restart: usize,
    pub iteration: usize,
    pub tensor_term: f64,
    pub penalty_term: f64,
    pub objective: f64,
}

pub fn trace_rows(solution: &FcpdSolution) -> Vec<TraceRow> {
    solution
        .trace
        .iter()
        .map(|t| TraceRow {
            lambda: solution.lambda,
            restart: solution.restart,
            iteration: t.iteration,
            tensor_term: t.tensor_term,
            penalty_term: t.penalty_term,
            objective: t.objective,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterRow {
    pub branch_index: usize,
    pub scheme: &'static str,
    pub row: usize,
    pub column: usize,
    pub weight: f64,
}

/// Nonzero entries of every filter `S⁻¹DS` on the given axes, indexed by
/// sample.
pub fn filter_rows(z: &DMatrix<f64>) -> Result<Vec<FilterRow>> {
    let mut rows = Vec::new();
    for (i, col) in z.column_iter().enumerate() {
        let axis: Vec<f64> = col.iter().copied().collect();
        for scheme in [Scheme::Left, Scheme::Central, Scheme::Right] {
            let dense = build_filter(&axis, scheme, DEFAULT_WINDOW)
                .map_err(|e| e.on_branch(i))?
                .to_dense();
            for row in 0..dense.nrows() {
                for column in 0..dense.ncols() {
                    let weight = dense[(row, column)];
                    if weight != 0.0 {
                        rows.push(FilterRow {
                            branch_index: i,
                            scheme: scheme.name(),
                            row,
                            column,
                            weight,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}
