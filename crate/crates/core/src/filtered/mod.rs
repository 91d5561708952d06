//! Filtered CP decomposition `𝒥 ≈ ⟦W, V, 𝓕_C(V)∘G⟧` with a left/right
//! smoothness penalty on the columns of `G`.
//!
//! Each sweep updates `W` in closed form, `V` by safeguarded damped
//! Gauss-Newton, and `G` from the stacked linear least-squares system. All
//! three steps are accepted only if the joint objective does not increase,
//! so the objective trace is monotone.

mod objective;
mod projected;
mod updates;

pub use objective::{FrozenObjective, ObjectiveValue};
pub use updates::{rms_weights, update_g, update_w, Banks, GSystem, VOptions, VUpdate};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cpd::{restart_seed, uniform_matrix, AlsOptions};
use crate::error::{check_dim, Error, Result};
use crate::findiff::project;
use crate::model::{decouple, relative_error, BranchFit, DecoupledModel, ErrorReport};
use crate::polyfun::{JacobianTensor, MonomialFunction, OperatingPointSet};
use crate::tensor3::{FactorSet, Tensor3, ThirdFactor};
use objective::{BranchStencils, Problem};
use projected::Projector;

/// Coarse logarithmic grid `10⁻³ … 10³`.
pub const DEFAULT_LAMBDAS: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];

/// Perturbation retries when a random `V` projects two samples together.
const DEGENERATE_RETRIES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct FcpdOptions {
    pub als: AlsOptions,
    pub lambdas: Vec<f64>,
    pub v_solver: VOptions,
    pub branch_degree: usize,
}

impl Default for FcpdOptions {
    fn default() -> Self {
        FcpdOptions {
            als: AlsOptions {
                max_iterations: 200,
                tolerance: 1e-8,
                seed: 0,
                restarts: 5,
            },
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            v_solver: VOptions::default(),
            branch_degree: 3,
        }
    }
}

impl FcpdOptions {
    pub fn validate(&self) -> Result<()> {
        self.als.validate()?;
        if self.lambdas.is_empty() {
            return Err(Error::invalid("lambda grid must not be empty"));
        }
        if let Some(l) = self.lambdas.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::invalid(format!("lambda {l} must be positive")));
        }
        if self.v_solver.max_iterations < 1 {
            return Err(Error::invalid("V solver needs at least one iteration"));
        }
        if self.branch_degree < 1 {
            return Err(Error::invalid("branch degree must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the per-sweep objective trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub tensor_term: f64,
    /// `λ²` times the normalized penalty.
    pub penalty_term: f64,
    pub objective: f64,
}

impl TraceRecord {
    fn new(iteration: usize, value: ObjectiveValue) -> Self {
        TraceRecord {
            iteration,
            tensor_term: value.tensor_term,
            penalty_term: value.penalty_term(),
            objective: value.total(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FcpdSolution {
    /// `W`, `V` and the function-level factor `G`.
    pub factors: FactorSet,
    pub lambda: f64,
    pub trace: Vec<TraceRecord>,
    /// `‖𝒥 − ⟦W, V, H_C⟧‖_F / ‖𝒥‖_F × 100`, penalty excluded.
    pub tensor_relative_error: f64,
    /// Unweighted normalized left/right penalty of the final `G`.
    pub penalty: f64,
    /// Branch axes `z_i = Pᵀ v_i`, `N × r`.
    pub axes: DMatrix<f64>,
    pub restart: usize,
    pub failed_restarts: usize,
    /// `V` candidates rejected for degenerate projections, over all sweeps.
    pub degenerate_candidates: usize,
}

impl FcpdSolution {
    pub fn objective(&self) -> f64 {
        self.trace.last().map_or(f64::INFINITY, |t| t.objective)
    }

    pub fn sweeps(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// Sweep state for one restart.
struct Run<'a> {
    problem: Problem<'a>,
    j1: DMatrix<f64>,
    j3: DMatrix<f64>,
    w: DMatrix<f64>,
    v: DMatrix<f64>,
    g: DMatrix<f64>,
    banks: Banks,
    value: ObjectiveValue,
    degenerate_candidates: usize,
    /// Sweep at which the profiled `V` step is tried next.
    next_projection: usize,
}

impl<'a> Run<'a> {
    fn random(problem: Problem<'a>, r: usize, seed: u64) -> Result<Self> {
        let (n, m, big_n) = problem.tensor.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = uniform_matrix(&mut rng, n, r);
        let mut v = uniform_matrix(&mut rng, m, r);
        let g = uniform_matrix(&mut rng, big_n, r);

        let mut retries = 0;
        loop {
            match Banks::build(&v, problem.points) {
                Ok(_) => break,
                Err(Error::DegenerateAxis {
                    branch: Some(i), ..
                }) if retries < DEGENERATE_RETRIES => {
                    retries += 1;
                    let scale = 1e-8 * v.column(i).norm().max(f64::MIN_POSITIVE);
                    for k in 0..m {
                        v[(k, i)] += scale * rng.random_range(-1.0..1.0);
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Self::start(problem, w, v, g)
    }

    fn start(
        problem: Problem<'a>,
        w: DMatrix<f64>,
        v: DMatrix<f64>,
        g: DMatrix<f64>,
    ) -> Result<Self> {
        let banks = Banks::build(&v, problem.points)?;
        let value = problem.evaluate(&w, &v, &g)?;
        if !value.total().is_finite() {
            return Err(Error::Solver(format!(
                "joint objective is not finite at the start (lambda = {:e})",
                problem.lambda
            )));
        }
        Ok(Run {
            problem,
            j1: problem.tensor.matricize(1)?,
            j3: problem.tensor.matricize(3)?,
            w,
            v,
            g,
            banks,
            value,
            degenerate_candidates: 0,
            next_projection: 1,
        })
    }

    fn evaluate(
        &self,
        w: &DMatrix<f64>,
        v: &DMatrix<f64>,
        g: &DMatrix<f64>,
    ) -> Result<ObjectiveValue> {
        self.problem.evaluate(w, v, g)
    }

    /// Keep `candidate` only if it does not increase the objective; otherwise
    /// try points on the segment towards it.
    fn accept_g(&mut self, candidate: DMatrix<f64>) -> Result<()> {
        let base = self.value.total();
        let dir = &candidate - &self.g;
        let mut t = 1.0;
        for _ in 0..10 {
            let trial = &self.g + &dir * t;
            let value = self.evaluate(&self.w, &self.v, &trial)?;
            if value.total() <= base {
                self.g = trial;
                self.value = value;
                return Ok(());
            }
            t *= 0.5;
        }
        Ok(())
    }

    /// Descend on the objective with `W` and `G` eliminated; adopt the
    /// result only if it improves on the incumbent.
    fn try_projected_step(&mut self) -> Result<()> {
        let projector = Projector::new(self.problem, &self.j1, &self.j3, self.w.ncols());
        let Ok(p) = projector.search(&self.v, &self.w) else {
            return Ok(());
        };
        if p.value.total() < self.value.total() {
            (self.w, self.v, self.g, self.banks, self.value) = (p.w, p.v, p.g, p.banks, p.value);
        }
        Ok(())
    }

    fn sweep(&mut self, iteration: usize, v_opts: &VOptions) -> Result<()> {
        // W: exact minimizer of the tensor term; the penalty is W-free.
        let w_new = update_w(&self.j1, &self.v, &self.g, &self.banks.central)?;
        let value = self.evaluate(&w_new, &self.v, &self.g)?;
        if value.total() <= self.value.total() {
            self.w = w_new;
            self.value = value;
        }

        let step = updates::update_v(&self.problem, &self.w, &self.g, &self.v, v_opts)?;
        self.degenerate_candidates += step.degenerate_candidates;
        if step.objective < self.value.total() {
            let mut v_new = step.v;
            // V column scale cancels against the filter, so unit columns
            // leave the objective unchanged
            for mut col in v_new.column_iter_mut() {
                let norm = col.norm();
                if norm > 0.0 {
                    col /= norm;
                }
            }
            let banks = Banks::build(&v_new, self.problem.points)?;
            let value = self.evaluate(&self.w, &v_new, &self.g)?;
            if value.total() <= self.value.total() * (1.0 + 1e-13) {
                self.v = v_new;
                self.banks = banks;
                self.value = value;
            }
        }

        if iteration >= self.next_projection {
            let before = self.value.total();
            self.try_projected_step()?;
            // repeat while it helps, otherwise back off geometrically
            self.next_projection = if self.value.total() < before {
                iteration + 1
            } else {
                2 * iteration
            };
        }

        let g_new = update_g(
            &self.j3,
            &self.w,
            &self.v,
            self.problem.lambda,
            &self.banks,
            &self.g,
        )?;
        self.accept_g(g_new)?;

        // move W's column scale into G; tensor term and normalized penalty
        // are both invariant
        for i in 0..self.w.ncols() {
            let norm = self.w.column(i).norm();
            if norm > 0.0 {
                self.w.column_mut(i).scale_mut(1.0 / norm);
                self.g.column_mut(i).scale_mut(norm);
            }
        }
        if !self.value.total().is_finite() {
            return Err(Error::Solver("joint objective became non-finite".into()));
        }
        Ok(())
    }

    fn finish(self, trace: Vec<TraceRecord>, restart: usize) -> Result<FcpdSolution> {
        let axes = project(&self.v, self.problem.points)?;
        let norm = self.problem.tensor.frobenius_norm();
        let tensor_relative_error = if norm > 0.0 {
            self.value.tensor_term.sqrt() / norm * 100.0
        } else {
            0.0
        };
        Ok(FcpdSolution {
            factors: FactorSet::new(self.w, self.v, self.g, ThirdFactor::Function)?,
            lambda: self.problem.lambda,
            trace,
            tensor_relative_error,
            penalty: self.value.penalty,
            axes,
            restart,
            failed_restarts: 0,
            degenerate_candidates: self.degenerate_candidates,
        })
    }
}

fn single_restart(
    problem: Problem<'_>,
    r: usize,
    opts: &FcpdOptions,
    restart: usize,
) -> Result<FcpdSolution> {
    let run = Run::random(problem, r, restart_seed(opts.als.seed, restart))?;
    iterate(run, opts, restart)
}

fn iterate(mut run: Run<'_>, opts: &FcpdOptions, restart: usize) -> Result<FcpdSolution> {
    let mut trace = vec![TraceRecord::new(0, run.value)];
    for it in 1..=opts.als.max_iterations {
        let prev = run.value.total();
        run.sweep(it, &opts.v_solver)?;
        let cur = run.value.total();
        trace.push(TraceRecord::new(it, run.value));
        if (prev - cur).abs() <= opts.als.tolerance * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    run.finish(trace, restart)
}

/// Solve the filtered decomposition for one `λ`, best of the configured
/// restarts by final joint objective.
pub fn fcpd_solve(
    t: &Tensor3,
    points: &OperatingPointSet,
    r: usize,
    lambda: f64,
    opts: &FcpdOptions,
) -> Result<FcpdSolution> {
    if r < 1 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    opts.als.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!(
            "lambda {lambda} must be non-negative"
        )));
    }
    check_dim("operating points", t.shape().2, points.len())?;
    check_dim("point dimension", t.shape().1, points.dim())?;
    if !t.is_finite() {
        return Err(Error::invalid("tensor contains non-finite entries"));
    }
    let problem = Problem {
        tensor: t,
        points,
        lambda,
    };
    let outcomes: Vec<Result<FcpdSolution>> = (0..opts.als.restarts)
        .into_par_iter()
        .map(|restart| single_restart(problem, r, opts, restart))
        .collect();
    let mut failed = 0;
    let mut last_err = None;
    let mut best: Option<FcpdSolution> = None;
    for outcome in outcomes {
        match outcome {
            Ok(sol) => {
                if best
                    .as_ref()
                    .is_none_or(|b| sol.objective() < b.objective())
                {
                    best = Some(sol);
                }
            }
            Err(e) => {
                log::warn!("restart failed at lambda {lambda}: {e}");
                failed += 1;
                last_err = Some(e);
            }
        }
    }
    match best {
        Some(mut sol) => {
            sol.failed_restarts = failed;
            Ok(sol)
        }
        None => Err(last_err.unwrap_or_else(|| Error::Solver("no restarts ran".into()))),
    }
}

/// Continue the filtered decomposition from given factors instead of a
/// random start.
pub fn fcpd_refine(
    t: &Tensor3,
    points: &OperatingPointSet,
    lambda: f64,
    init: &FactorSet,
    opts: &FcpdOptions,
) -> Result<FcpdSolution> {
    opts.als.validate()?;
    if t.shape() != init.shape() {
        return Err(Error::invalid(format!(
            "tensor shape {:?} does not match factors {:?}",
            t.shape(),
            init.shape()
        )));
    }
    check_dim("operating points", t.shape().2, points.len())?;
    check_dim("point dimension", t.shape().1, points.dim())?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!(
            "lambda {lambda} must be non-negative"
        )));
    }
    let problem = Problem {
        tensor: t,
        points,
        lambda,
    };
    let run = Run::start(problem, init.w.clone(), init.v.clone(), init.third.clone())?;
    iterate(run, opts, 0)
}

/// A solved `λ` together with its fitted model and errors.
#[derive(Clone, Debug)]
pub struct LambdaFit {
    pub solution: FcpdSolution,
    pub model: DecoupledModel,
    pub branch_fits: Vec<BranchFit>,
    pub report: ErrorReport,
}

impl LambdaFit {
    /// Selection score: worst per-output relative error.
    pub fn score(&self) -> f64 {
        self.report.worst().unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Debug)]
pub struct LambdaEntry {
    pub lambda: f64,
    pub outcome: std::result::Result<LambdaFit, String>,
}

#[derive(Clone, Debug)]
pub struct LambdaSearch {
    pub entries: Vec<LambdaEntry>,
    pub best: usize,
}

impl LambdaSearch {
    pub fn best_lambda(&self) -> f64 {
        self.entries[self.best].lambda
    }

    pub fn best_fit(&self) -> &LambdaFit {
        self.entries[self.best]
            .outcome
            .as_ref()
            .expect("best entry always succeeded")
    }
}

/// Run the solver over a grid of `λ` and keep the one whose fitted
/// decoupled model has the lowest worst-output relative error on
/// `validation`.
pub fn lambda_search(
    f: &MonomialFunction,
    jt: &JacobianTensor,
    r: usize,
    opts: &FcpdOptions,
    validation: &OperatingPointSet,
) -> Result<LambdaSearch> {
    opts.validate()?;
    let entries: Vec<LambdaEntry> = opts
        .lambdas
        .par_iter()
        .map(|&lambda| {
            let outcome = fcpd_solve(jt.tensor(), jt.points(), r, lambda, opts)
                .and_then(|solution| fit_lambda(f, jt.points(), solution, opts, validation))
                .map_err(|e| e.to_string());
            LambdaEntry { lambda, outcome }
        })
        .collect();
    let best = entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.outcome.as_ref().ok().map(|fit| (i, fit.score())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Solver("every lambda in the grid failed".into()))?;
    Ok(LambdaSearch { entries, best })
}

fn fit_lambda(
    f: &MonomialFunction,
    training: &OperatingPointSet,
    solution: FcpdSolution,
    opts: &FcpdOptions,
    validation: &OperatingPointSet,
) -> Result<LambdaFit> {
    let (model, branch_fits) = decouple(
        f,
        training,
        &solution.factors.w,
        &solution.factors.v,
        &solution.factors.third,
        opts.branch_degree,
    )?;
    let mut report = relative_error(f, &model, validation)?;
    report.tensor_relative_error = Some(solution.tensor_relative_error);
    report.lambda = Some(solution.lambda);
    report.branch_residuals = branch_fits.iter().map(|b| b.rms_residual).collect();
    Ok(LambdaFit {
        solution,
        model,
        branch_fits,
        report,
    })
}

/// Joint objective of arbitrary factors, with filters built at `V`.
pub fn joint_objective(
    t: &Tensor3,
    points: &OperatingPointSet,
    lambda: f64,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<ObjectiveValue> {
    Problem {
        tensor: t,
        points,
        lambda,
    }
    .evaluate(w, v, g)
}

/// Run the safeguarded `V` update in isolation.
#[allow(clippy::too_many_arguments)]
pub fn update_v(
    t: &Tensor3,
    points: &OperatingPointSet,
    lambda: f64,
    w: &DMatrix<f64>,
    g: &DMatrix<f64>,
    v_current: &DMatrix<f64>,
    opts: &VOptions,
) -> Result<VUpdate> {
    let problem = Problem {
        tensor: t,
        points,
        lambda,
    };
    BranchStencils::new(&project(v_current, points)?)?;
    updates::update_v(&problem, w, g, v_current, opts)
}
