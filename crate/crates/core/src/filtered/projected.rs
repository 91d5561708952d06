//! `V` steps on the objective with `W` and `G` re-solved for every trial
//! `V`.
//!
//! For fixed `V` the Jacobian tensor usually admits an exact fit for a whole
//! family of axes, so with `G` held fixed the objective in `V` is very rough:
//! each sample of `g_i` stays attached to its operating point while the axis
//! moves under it. Eliminating `W` and `G` first leaves a function of `V`
//! alone that is smooth over a wide basin around the smooth decomposition.

use nalgebra::DMatrix;

use super::objective::{ObjectiveValue, Problem};
use super::updates::{update_g, update_w, Banks};
use crate::error::Result;
use crate::findiff::{integrate_columns, project};
use crate::linalg::{pinv, PINV_RTOL};
use crate::tensor3::khatri_rao;

/// Inner alternations of the `G` and `W` updates per trial `V`.
const INNER_SWEEPS: usize = 3;
/// Initial and final compass step on the unit-norm columns of `V`.
const SEARCH_START: f64 = 0.25;
const SEARCH_END: f64 = 1e-7;
/// Cap on cheap profile evaluations per search.
const SEARCH_BUDGET: usize = 4000;

/// Quantities fixed for one tensor.
pub(crate) struct Projector<'a> {
    problem: Problem<'a>,
    j1: &'a DMatrix<f64>,
    j3: &'a DMatrix<f64>,
    /// Dominant `r`-dimensional column space of `J₍₃₎ᵀ`, when it is a proper
    /// subspace of `ℝ^{nm}`.
    basis_complement: Option<DMatrix<f64>>,
}

/// `W`, `G` and the objective for one trial `V`.
pub(crate) struct Profiled {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub banks: Banks,
    pub value: ObjectiveValue,
}

impl<'a> Projector<'a> {
    pub fn new(problem: Problem<'a>, j1: &'a DMatrix<f64>, j3: &'a DMatrix<f64>, r: usize) -> Self {
        let (n, m, _) = problem.tensor.shape();
        let basis_complement = (n * m > r).then(|| {
            let svd = j3.transpose().svd(true, false);
            let u = svd.u.expect("u requested");
            let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
            idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            let basis = DMatrix::from_fn(n * m, r.min(idx.len()), |row, c| u[(row, idx[c])]);
            DMatrix::identity(n * m, n * m) - &basis * basis.transpose()
        });
        Projector {
            problem,
            j1,
            j3,
            basis_complement,
        }
    }

    /// `w_i` making `v_i ⊗ w_i` closest to the dominant subspace of the
    /// tensor's frontal slices.
    fn subspace_w(&self, v: &DMatrix<f64>, complement: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m, _) = self.problem.tensor.shape();
        let r = v.ncols();
        let mut w = DMatrix::zeros(n, r);
        for i in 0..r {
            // rows of v_i ⊗ I_n follow the Khatri-Rao ordering k·n + j
            let a = DMatrix::from_fn(
                n * m,
                n,
                |row, j| {
                    if row % n == j {
                        v[(row / n, i)]
                    } else {
                        0.0
                    }
                },
            );
            let b = complement * a;
            let gram = b.transpose() * b;
            let eig = gram.symmetric_eigen();
            let q = eig.eigenvalues.imin();
            w.set_column(i, &eig.eigenvectors.column(q));
        }
        w
    }

    /// Approximate minimizer over `W` and `G` of the joint objective at `v`.
    pub fn profile(&self, v: &DMatrix<f64>, w_ref: &DMatrix<f64>) -> Result<Profiled> {
        self.profile_with(v, w_ref, INNER_SWEEPS)
    }

    pub fn profile_with(
        &self,
        v: &DMatrix<f64>,
        w_ref: &DMatrix<f64>,
        sweeps: usize,
    ) -> Result<Profiled> {
        let banks = Banks::build(v, self.problem.points)?;
        let mut w = match &self.basis_complement {
            Some(c) => self.subspace_w(v, c),
            None => w_ref.clone(),
        };
        // derivative samples for this (W, V), then integrated along each axis
        let kr = khatri_rao(v, &w)?;
        let gram = kr.transpose() * &kr;
        let h = self.j3 * &kr * pinv(&gram, PINV_RTOL);
        let mut g = integrate_columns(&project(v, self.problem.points)?, &h)?;
        let mut value = self.problem.evaluate(&w, v, &g)?;
        for _ in 0..sweeps {
            let g_new = update_g(self.j3, &w, v, self.problem.lambda, &banks, &g)?;
            let w_new = update_w(self.j1, v, &g_new, &banks.central)?;
            let trial = self.problem.evaluate(&w_new, v, &g_new)?;
            if !(trial.total() < value.total()) {
                break;
            }
            (w, g, value) = (w_new, g_new, trial);
        }
        Ok(Profiled {
            w,
            v: v.clone(),
            g,
            banks,
            value,
        })
    }

    /// Compass search over the entries of `V` on the cheap profile (no
    /// `G` solves), followed by a full profile at the point found.
    pub fn search(&self, v0: &DMatrix<f64>, w_ref: &DMatrix<f64>) -> Result<Profiled> {
        let (m, r) = v0.shape();
        let cheap = |v: &DMatrix<f64>| {
            self.profile_with(v, w_ref, 0)
                .map(|p| p.value.total())
                .ok()
                .filter(|x| x.is_finite())
        };
        let mut v = unit_columns(v0.clone());
        let mut best = cheap(&v).unwrap_or(f64::INFINITY);
        let mut step = SEARCH_START;
        let mut evaluations = 0;
        while step > SEARCH_END && evaluations < SEARCH_BUDGET {
            let mut moved = false;
            for q in 0..m * r {
                for sign in [1.0, -1.0] {
                    let mut trial = v.clone();
                    trial[(q % m, q / m)] += sign * step;
                    let trial = unit_columns(trial);
                    evaluations += 1;
                    if let Some(value) = cheap(&trial) {
                        if value < best {
                            (v, best, moved) = (trial, value, true);
                            break;
                        }
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        self.profile(&v, w_ref)
    }
}

fn unit_columns(mut v: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in v.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    v
}
