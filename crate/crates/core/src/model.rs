//! Parametric decoupled models `f(p) ≈ W g(Vᵀp)` with polynomial branches.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::findiff::project;
use crate::linalg::{lstsq, pinv, PINV_RTOL};
use crate::polyfun::{MonomialFunction, OperatingPointSet};

/// Univariate polynomial with ascending coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial { coeffs }
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Coefficients of `p(a·z + b)`.
    pub fn compose_affine(&self, a: f64, b: f64) -> Polynomial {
        let d = self.coeffs.len();
        let mut out = vec![0.0; d];
        // powers of (a z + b), ascending in z
        let mut power = vec![1.0];
        for &c in &self.coeffs {
            for (o, p) in out.iter_mut().zip(&power) {
                *o += c * p;
            }
            let mut next = vec![0.0; power.len() + 1];
            for (k, &p) in power.iter().enumerate() {
                next[k] += b * p;
                next[k + 1] += a * p;
            }
            power = next;
        }
        Polynomial { coeffs: out }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchFit {
    pub coeffs: Polynomial,
    /// Root-mean-square of the fit residual on the samples.
    pub rms_residual: f64,
}

/// Least-squares polynomial fit of each column of `g` against the matching
/// column of `z`.
///
/// The fit runs on the axis mapped affinely onto `[-1, 1]` and the
/// coefficients are mapped back afterwards.
pub fn fit_branches(z: &DMatrix<f64>, g: &DMatrix<f64>, degree: usize) -> Result<Vec<BranchFit>> {
    if degree < 1 {
        return Err(Error::invalid("branch degree must be at least 1"));
    }
    check_dim("branch fit columns", z.ncols(), g.ncols())?;
    check_dim("branch fit rows", z.nrows(), g.nrows())?;
    let n = z.nrows();
    if n <= degree {
        return Err(Error::invalid(format!(
            "{n} samples cannot determine a degree-{degree} polynomial"
        )));
    }
    (0..z.ncols())
        .map(|i| {
            let zi = z.column(i);
            let gi = g.column(i);
            let lo = zi.min();
            let hi = zi.max();
            let width = hi - lo;
            let magnitude = lo.abs().max(hi.abs());
            if !(width > 1e-12 * magnitude) || width == 0.0 {
                return Err(Error::IllConditioned {
                    branch: i,
                    reason: format!("axis range [{lo}, {hi}] has collapsed"),
                });
            }
            let scale = 2.0 / width;
            let shift = -(hi + lo) / width;
            let vander =
                DMatrix::from_fn(n, degree + 1, |k, d| (scale * zi[k] + shift).powi(d as i32));
            let rhs = DMatrix::from_column_slice(n, 1, gi.as_slice());
            let c = lstsq(&vander, &rhs, PINV_RTOL);
            let fitted = &vander * &c;
            let rms_residual = ((fitted - rhs).norm_squared() / n as f64).sqrt();
            let scaled = Polynomial::new(c.iter().copied().collect());
            Ok(BranchFit {
                coeffs: scaled.compose_affine(scale, shift),
                rms_residual,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    branches: Vec<Polynomial>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::validation(field, "matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::validation(field, "rows have unequal lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// `f_d(p) = W g(Vᵀp)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct DecoupledModel {
    w: DMatrix<f64>,
    v: DMatrix<f64>,
    branches: Vec<Polynomial>,
}

impl TryFrom<ModelFile> for DecoupledModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let w = from_rows("W", &file.w)?;
        let v = from_rows("V", &file.v)?;
        DecoupledModel::new(w, v, file.branches)
    }
}

impl From<DecoupledModel> for ModelFile {
    fn from(m: DecoupledModel) -> Self {
        ModelFile {
            w: to_rows(&m.w),
            v: to_rows(&m.v),
            branches: m.branches,
        }
    }
}

impl DecoupledModel {
    pub fn new(w: DMatrix<f64>, v: DMatrix<f64>, branches: Vec<Polynomial>) -> Result<Self> {
        let r = w.ncols();
        if r == 0 {
            return Err(Error::validation("W", "model needs at least one branch"));
        }
        if v.ncols() != r {
            return Err(Error::validation(
                "V",
                format!("expected {r} columns, got {}", v.ncols()),
            ));
        }
        if branches.len() != r {
            return Err(Error::validation(
                "branches",
                format!("expected {r} branches, got {}", branches.len()),
            ));
        }
        if let Some(i) = branches.iter().position(|b| b.coeffs.is_empty()) {
            return Err(Error::validation(
                format!("branches[{i}].coeffs"),
                "coefficient list is empty",
            ));
        }
        Ok(DecoupledModel { w, v, branches })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s).map_err(Error::from_json)?;
        Self::try_from(file)
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn branches(&self) -> &[Polynomial] {
        &self.branches
    }

    pub fn input_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    /// Branch values `g_i(z_i)` at `p`.
    pub fn branch_values(&self, p: &[f64]) -> Result<DVector<f64>> {
        check_dim("decoupled model input", self.input_dim(), p.len())?;
        let z = self.v.transpose() * DVector::from_column_slice(p);
        Ok(DVector::from_iterator(
            self.rank(),
            z.iter().zip(&self.branches).map(|(&zi, b)| b.eval(zi)),
        ))
    }

    pub fn eval(&self, p: &[f64]) -> Result<DVector<f64>> {
        Ok(&self.w * self.branch_values(p)?)
    }
}

/// Per-output relative RMS errors, plus context from the run that produced
/// the model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    /// `e_i` in percent; `None` when output `i` is identically zero.
    pub output_errors: Vec<Option<f64>>,
    pub tensor_relative_error: Option<f64>,
    pub lambda: Option<f64>,
    pub branch_residuals: Vec<f64>,
}

impl ErrorReport {
    /// Largest defined `e_i`.
    pub fn worst(&self) -> Option<f64> {
        self.output_errors
            .iter()
            .flatten()
            .copied()
            .reduce(f64::max)
    }
}

/// `e_i = rms_k(f_i − f_d,i) / rms_k(f_i) × 100` over the points.
pub fn relative_error(
    f: &MonomialFunction,
    model: &DecoupledModel,
    points: &OperatingPointSet,
) -> Result<ErrorReport> {
    check_dim("model input dimension", f.input_dim(), model.input_dim())?;
    check_dim("model output dimension", f.output_dim(), model.output_dim())?;
    check_dim("point dimension", f.input_dim(), points.dim())?;
    let n = f.output_dim();
    let mut err2 = vec![0.0; n];
    let mut ref2 = vec![0.0; n];
    for k in 0..points.len() {
        let p = points.point(k);
        let q = f.eval(&p)?;
        let qd = model.eval(&p)?;
        for i in 0..n {
            err2[i] += (q[i] - qd[i]).powi(2);
            ref2[i] += q[i] * q[i];
        }
    }
    let output_errors = err2
        .iter()
        .zip(&ref2)
        .map(|(&e, &r)| (r > 0.0).then(|| (e / r).sqrt() * 100.0))
        .collect();
    Ok(ErrorReport {
        output_errors,
        tensor_relative_error: None,
        lambda: None,
        branch_residuals: Vec::new(),
    })
}

/// Fit branches to the function-level factor and fix the constant terms.
///
/// Jacobians carry no information about additive constants, so after
/// fitting, the mean offset between `f` and the model over `points` is
/// distributed onto the branch constants through `W†`.
pub fn decouple(
    f: &MonomialFunction,
    points: &OperatingPointSet,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    g: &DMatrix<f64>,
    degree: usize,
) -> Result<(DecoupledModel, Vec<BranchFit>)> {
    let z = project(v, points)?;
    let fits = fit_branches(&z, g, degree)?;
    let branches = fits.iter().map(|b| b.coeffs.clone()).collect();
    let model = DecoupledModel::new(w.clone(), v.clone(), branches)?;
    Ok((anchor_constants(f, &model, points)?, fits))
}

/// Shift branch constants so that the mean of `f − f_d` over `points` is
/// zero (in the least-squares sense when `W` is not of full row rank).
pub fn anchor_constants(
    f: &MonomialFunction,
    model: &DecoupledModel,
    points: &OperatingPointSet,
) -> Result<DecoupledModel> {
    check_dim("model output dimension", f.output_dim(), model.output_dim())?;
    let n = f.output_dim();
    let mut offset = DVector::zeros(n);
    for k in 0..points.len() {
        let p = points.point(k);
        offset += f.eval(&p)? - model.eval(&p)?;
    }
    offset /= points.len() as f64;
    let shift = pinv(model.w(), PINV_RTOL) * offset;
    let mut branches = model.branches.clone();
    for (b, s) in branches.iter_mut().zip(shift.iter()) {
        b.coeffs[0] += s;
    }
    DecoupledModel::new(model.w.clone(), model.v.clone(), branches)
}
