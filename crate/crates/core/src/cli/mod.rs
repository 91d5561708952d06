//! Configuration-driven runner behind the `fcpd` binary.
//!
//! A run loads a polynomial, samples operating points, decomposes the
//! Jacobian tensor and writes its artifacts to the output directory:
//!
//! | file           | contents                                              |
//! |----------------|-------------------------------------------------------|
//! | `report.json`  | status, errors, per-`λ` table (written last)          |
//! | `model.json`   | the selected decoupled model                          |
//! | `branches.csv` | branch samples and fitted values along each axis      |
//! | `trace.csv`    | objective parts after every sweep                     |
//! | `filters.csv`  | filter weights on the final axes (`--dump-filters`)   |

mod config;
mod report;

use std::path::{Path, PathBuf};

use clap::Parser;

pub use config::{Mode, RunConfig};
pub use report::{
    branch_rows, filter_rows, trace_rows, BranchRow, CompareReport, CpdReport, FailureReport,
    FcpdReport, FilterRow, LambdaRow, ModelScore, Outcome, TraceRow, ValidationInfo,
};

use crate::cpd::{cpd_als, cpd_residual, restart_seed};
use crate::error::{Error, Result};
use crate::filtered::lambda_search;
use crate::findiff::{axis_penalty, integrate_columns, project};
use crate::io::{write_csv, write_json};
use crate::model::{decouple, relative_error, DecoupledModel};
use crate::polyfun::{build_jacobian_tensor, sample_points, MonomialFunction, OperatingPointSet};

/// Environment variable capping the number of concurrent solver instances.
pub const THREADS_ENV: &str = "FCPD_THREADS";

/// Stream index reserved for the fresh validation points, far away from
/// any restart index.
const VALIDATION_STREAM: usize = u32::MAX as usize;

#[derive(Clone, Debug, Parser)]
#[command(name = "fcpd", version, about = "Decouple a multivariate polynomial")]
pub struct Args {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding `out_dir` of the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `filters.csv` with the filter weights on the final axes.
    #[arg(long)]
    pub dump_filters: bool,
    /// Measure output errors on the training points.
    #[arg(long)]
    pub validate_on_training: bool,
    #[arg(long)]
    pub model_a: Option<PathBuf>,
    #[arg(long)]
    pub model_b: Option<PathBuf>,
}

impl Args {
    /// Load the configuration and apply the command-line overrides.
    pub fn resolve(&self) -> Result<(RunConfig, bool)> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if self.validate_on_training {
            config.validate_on_training = true;
        }
        if let Some(a) = &self.model_a {
            config.model_a = Some(a.clone());
        }
        if let Some(b) = &self.model_b {
            config.model_b = Some(b.clone());
        }
        Ok((config, self.dump_filters))
    }
}

/// Run the binary: returns the process exit code and prints failures as
/// one JSON object on stderr.
pub fn execute(args: &Args) -> i32 {
    let result = args
        .resolve()
        .and_then(|(config, dump_filters)| run(&config, dump_filters));
    match result {
        Ok(outcome) => {
            log::info!("run finished: {}", summary(&outcome));
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

/// `2` for problems with the inputs, `1` for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation { .. } | Error::Dimension { .. } | Error::InvalidInput(_) => 2,
        _ => 1,
    }
}

pub fn error_json(e: &Error) -> String {
    let field = match e {
        Error::Validation { field, .. } => Some(field.as_str()),
        _ => None,
    };
    serde_json::json!({
        "status": "error",
        "kind": e.kind(),
        "field": field,
        "message": e.to_string(),
    })
    .to_string()
}

fn summary(outcome: &Outcome) -> String {
    match outcome {
        Outcome::Fcpd(r) => format!("lambda {:e}, e = {:?}", r.selected_lambda, r.output_errors),
        Outcome::Cpd(r) => format!(
            "residual {:e}, e = {:?}",
            r.tensor_residual, r.output_errors
        ),
        Outcome::Compare(r) => format!("max deviation {:e}", r.max_deviation),
    }
}

/// Treat any failure to read an input file as a validation error on `field`.
fn input_error(field: &str, e: Error) -> Error {
    match e {
        Error::Validation { .. } => e,
        other => Error::validation(field, other.to_string()),
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(text) => match text.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                return Err(Error::validation(
                    THREADS_ENV,
                    format!("expected a positive integer, got {text:?}"),
                ))
            }
        },
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Solver(format!("cannot start thread pool: {e}")))
}

/// Everything loaded and checked before any output is created.
struct Inputs {
    function: MonomialFunction,
    models: Option<(DecoupledModel, DecoupledModel)>,
}

fn load_inputs(config: &RunConfig) -> Result<Inputs> {
    config.validate()?;
    let function =
        MonomialFunction::load(&config.function).map_err(|e| input_error("function", e))?;
    let models = if config.mode == Mode::Compare {
        let mut loaded = Vec::new();
        for (field, path) in [("model_a", &config.model_a), ("model_b", &config.model_b)] {
            let path = path.as_ref().expect("validated");
            let model = DecoupledModel::load(path).map_err(|e| input_error(field, e))?;
            if model.input_dim() != function.input_dim()
                || model.output_dim() != function.output_dim()
            {
                return Err(Error::validation(
                    field,
                    format!(
                        "model maps R^{} -> R^{} but the function maps R^{} -> R^{}",
                        model.input_dim(),
                        model.output_dim(),
                        function.input_dim(),
                        function.output_dim()
                    ),
                ));
            }
            loaded.push(model);
        }
        let b = loaded.pop().expect("two models");
        let a = loaded.pop().expect("two models");
        Some((a, b))
    } else {
        None
    };
    Ok(Inputs { function, models })
}

/// Execute one configured run and write its artifacts.
///
/// Nothing is written when the configuration or its input files are
/// invalid. If a later stage fails, `report.json` records the failure and
/// flags the directory as partial.
pub fn run(config: &RunConfig, dump_filters: bool) -> Result<Outcome> {
    let inputs = load_inputs(config)?;
    let pool = thread_pool()?;
    let out = config.out_dir.as_path();
    std::fs::create_dir_all(out)?;
    let result = pool.install(|| match config.mode {
        Mode::Fcpd => run_fcpd(config, &inputs.function, out, dump_filters).map(Outcome::Fcpd),
        Mode::Cpd => run_cpd(config, &inputs.function, out, dump_filters).map(Outcome::Cpd),
        Mode::Compare => {
            let (a, b) = inputs.models.as_ref().expect("loaded in compare mode");
            run_compare(config, &inputs.function, a, b).map(Outcome::Compare)
        }
    });
    let report = out.join("report.json");
    match result {
        Ok(outcome) => {
            std::fs::write(report, outcome.to_json_string()?)?;
            Ok(outcome)
        }
        Err(e) => {
            let failure = FailureReport {
                status: "failed",
                mode: config.mode.name(),
                kind: e.kind(),
                message: e.to_string(),
                partial: true,
            };
            // the original error matters more than a failed write here
            let _ = write_json(report, &failure);
            Err(e)
        }
    }
}

/// Training points and the point set the output errors are measured on.
pub fn point_sets(
    config: &RunConfig,
    m: usize,
) -> Result<(OperatingPointSet, OperatingPointSet, ValidationInfo)> {
    let training = sample_points(m, config.points, config.bounds, config.seed)?;
    if config.validate_on_training {
        let info = ValidationInfo {
            set: "training",
            points: config.points,
            seed: config.seed,
        };
        return Ok((training.clone(), training, info));
    }
    let seed = restart_seed(config.seed, VALIDATION_STREAM);
    let size = config.validation_points.unwrap_or(config.points);
    let validation = sample_points(m, size, config.bounds, seed)?;
    let info = ValidationInfo {
        set: "fresh",
        points: size,
        seed,
    };
    Ok((training, validation, info))
}

fn run_fcpd(
    config: &RunConfig,
    f: &MonomialFunction,
    out: &Path,
    dump_filters: bool,
) -> Result<FcpdReport> {
    let (training, validation, info) = point_sets(config, f.input_dim())?;
    let jt = build_jacobian_tensor(f, &training)?;
    let search = lambda_search(f, &jt, config.rank, &config.fcpd_options(), &validation)?;
    for entry in &search.entries {
        match &entry.outcome {
            Ok(fit) => log::info!("lambda {:e}: worst e = {:.4}%", entry.lambda, fit.score()),
            Err(e) => log::warn!("lambda {:e} failed: {e}", entry.lambda),
        }
    }
    let fit = search.best_fit();
    let s = &fit.solution;
    write_json(out.join("model.json"), &fit.model)?;
    write_csv(
        out.join("branches.csv"),
        &branch_rows(&s.axes, &s.factors.third, &fit.branch_fits, &fit.model),
    )?;
    let trace: Vec<TraceRow> = search
        .entries
        .iter()
        .filter_map(|e| e.outcome.as_ref().ok())
        .flat_map(|fit| trace_rows(&fit.solution))
        .collect();
    write_csv(out.join("trace.csv"), &trace)?;
    if dump_filters {
        write_csv(out.join("filters.csv"), &filter_rows(&s.axes)?)?;
    }
    Ok(FcpdReport {
        status: "ok",
        mode: Mode::Fcpd.name(),
        seed: config.seed,
        rank: config.rank,
        points: config.points,
        degree: config.degree,
        validation: info,
        selected_lambda: search.best_lambda(),
        output_errors: fit.report.output_errors.clone(),
        tensor_relative_error: s.tensor_relative_error,
        penalty: s.penalty,
        lambdas: search.entries.iter().map(LambdaRow::from).collect(),
    })
}

fn run_cpd(
    config: &RunConfig,
    f: &MonomialFunction,
    out: &Path,
    dump_filters: bool,
) -> Result<CpdReport> {
    let (training, validation, info) = point_sets(config, f.input_dim())?;
    let jt = build_jacobian_tensor(f, &training)?;
    let cpd = cpd_als(jt.tensor(), config.rank, &config.cpd_options())?;
    let relative = cpd_residual(jt.tensor(), &cpd)?.relative()?;
    let factors = &cpd.factors;
    let z = project(&factors.v, &training)?;
    let g = integrate_columns(&z, &factors.third)?;
    let (model, fits) = decouple(f, &training, &factors.w, &factors.v, &g, config.degree)?;
    let report = relative_error(f, &model, &validation)?;
    let penalty = axis_penalty(&z, &g)?;

    write_json(out.join("model.json"), &model)?;
    write_csv(
        out.join("branches.csv"),
        &branch_rows(&z, &g, &fits, &model),
    )?;
    let trace: Vec<TraceRow> = cpd
        .trace
        .iter()
        .enumerate()
        .map(|(iteration, &value)| TraceRow {
            lambda: 0.0,
            restart: cpd.restart,
            iteration,
            tensor_term: value,
            penalty_term: 0.0,
            objective: value,
        })
        .collect();
    write_csv(out.join("trace.csv"), &trace)?;
    if dump_filters {
        write_csv(out.join("filters.csv"), &filter_rows(&z)?)?;
    }
    Ok(CpdReport {
        status: "ok",
        mode: Mode::Cpd.name(),
        seed: config.seed,
        rank: config.rank,
        points: config.points,
        degree: config.degree,
        validation: info,
        tensor_residual: relative / 100.0,
        tensor_relative_error: relative,
        sweeps: cpd.sweeps(),
        restart: cpd.restart,
        penalty,
        output_errors: report.output_errors,
        branch_residuals: fits.iter().map(|b| b.rms_residual).collect(),
    })
}

fn run_compare(
    config: &RunConfig,
    f: &MonomialFunction,
    a: &DecoupledModel,
    b: &DecoupledModel,
) -> Result<CompareReport> {
    let points = sample_points(f.input_dim(), config.points, config.bounds, config.seed)?;
    let mut max_deviation = 0.0f64;
    for k in 0..points.len() {
        let p = points.point(k);
        let d = a.eval(&p)? - b.eval(&p)?;
        max_deviation = max_deviation.max(d.amax());
    }
    let path = |p: &Option<PathBuf>| {
        p.as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default()
    };
    Ok(CompareReport {
        status: "ok",
        mode: Mode::Compare.name(),
        seed: config.seed,
        points: config.points,
        model_a: ModelScore {
            path: path(&config.model_a),
            output_errors: relative_error(f, a, &points)?.output_errors,
        },
        model_b: ModelScore {
            path: path(&config.model_b),
            output_errors: relative_error(f, b, &points)?.output_errors,
        },
        max_deviation,
    })
}
