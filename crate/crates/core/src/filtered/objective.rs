//! The joint objective
//!
//! ```text
//! Φ(W, V, G) = ‖𝒥 − ⟦W, V, 𝓕_C(V)∘G⟧‖²_F
//!            + λ² Σ_i ‖h_Li / rms(h_Li) − h_Ri / rms(h_Ri)‖²
//! ```
//!
//! written as the squared norm of one stacked residual vector, so that the
//! `G` update is an ordinary linear least-squares problem and the `V` update
//! a nonlinear one.

use nalgebra::DMatrix;

use crate::error::{check_dim, Result};
use crate::findiff::{normalized_difference, project, Scheme, Stencil, DEFAULT_WINDOW};
use crate::polyfun::OperatingPointSet;
use crate::scalar::{Dual, Real};
use crate::tensor3::Tensor3;

/// Value of the joint objective, split into its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    /// `‖𝒥 − ⟦W, V, H_C⟧‖²_F`
    pub tensor_term: f64,
    /// Unweighted normalized left/right discrepancy.
    pub penalty: f64,
    pub lambda: f64,
}

impl ObjectiveValue {
    pub fn penalty_term(&self) -> f64 {
        self.lambda * self.lambda * self.penalty
    }

    pub fn total(&self) -> f64 {
        self.tensor_term + self.penalty_term()
    }
}

/// Left, central and right stencils for every branch.
#[derive(Clone, Debug)]
pub(crate) struct BranchStencils {
    pub central: Vec<Stencil>,
    pub left: Vec<Stencil>,
    pub right: Vec<Stencil>,
}

impl BranchStencils {
    pub fn new(z: &DMatrix<f64>) -> Result<Self> {
        let mut central = Vec::with_capacity(z.ncols());
        let mut left = Vec::with_capacity(z.ncols());
        let mut right = Vec::with_capacity(z.ncols());
        for (i, col) in z.column_iter().enumerate() {
            let axis: Vec<f64> = col.iter().copied().collect();
            let build = |s| Stencil::new(&axis, s, DEFAULT_WINDOW).map_err(|e| e.on_branch(i));
            central.push(build(Scheme::Central)?);
            left.push(build(Scheme::Left)?);
            right.push(build(Scheme::Right)?);
        }
        Ok(BranchStencils {
            central,
            left,
            right,
        })
    }
}

/// Data shared by every evaluation of the objective.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Problem<'a> {
    pub tensor: &'a Tensor3,
    pub points: &'a OperatingPointSet,
    pub lambda: f64,
}

impl<'a> Problem<'a> {
    pub fn residual_len(&self, r: usize) -> usize {
        let (n, m, big_n) = self.tensor.shape();
        n * m * big_n + r * big_n
    }

    /// Stacked residual `[vec(𝒥 − ⟦W,V,H_C⟧); λ·(normalized L − R)]` with the
    /// given (possibly frozen) stencils. `v` is `m × r` in column-major order.
    pub fn residual<T: Real>(
        &self,
        w: &DMatrix<f64>,
        v: &[T],
        g: &DMatrix<f64>,
        stencils: &BranchStencils,
    ) -> Vec<T> {
        let (n, m, big_n) = self.tensor.shape();
        let r = w.ncols();
        let p = self.points.points();
        let lambda = T::from_f64(self.lambda);

        let mut out = Vec::with_capacity(self.residual_len(r));
        out.extend(self.tensor.data().iter().map(|&x| T::from_f64(x)));
        let mut penalty = Vec::with_capacity(r * big_n);
        let mut z = vec![T::zero(); big_n];
        for i in 0..r {
            let vi = &v[i * m..(i + 1) * m];
            for (l, zl) in z.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (k, &vk) in vi.iter().enumerate() {
                    acc += vk * T::from_f64(p[(k, l)]);
                }
                *zl = acc;
            }
            let gi: Vec<f64> = g.column(i).iter().copied().collect();
            let hc = apply(&stencils.central[i], &z, &gi);
            let hl = apply(&stencils.left[i], &z, &gi);
            let hr = apply(&stencils.right[i], &z, &gi);

            for (l, &hcl) in hc.iter().enumerate() {
                for (k, &vk) in vi.iter().enumerate() {
                    let vh = vk * hcl;
                    let base = n * (k + m * l);
                    for j in 0..n {
                        let t = &mut out[base + j];
                        *t = *t - T::from_f64(w[(j, i)]) * vh;
                    }
                }
            }
            penalty.extend(
                normalized_difference(&hl, &hr)
                    .into_iter()
                    .map(|d| lambda * d),
            );
        }
        out.extend(penalty);
        out
    }

    /// Objective parts with stencils rebuilt from the current `V`.
    pub fn evaluate(
        &self,
        w: &DMatrix<f64>,
        v: &DMatrix<f64>,
        g: &DMatrix<f64>,
    ) -> Result<ObjectiveValue> {
        let stencils = BranchStencils::new(&project(v, self.points)?)?;
        Ok(self.evaluate_with(w, v, g, &stencils))
    }

    pub fn evaluate_with(
        &self,
        w: &DMatrix<f64>,
        v: &DMatrix<f64>,
        g: &DMatrix<f64>,
        stencils: &BranchStencils,
    ) -> ObjectiveValue {
        let res = self.residual(w, v.as_slice(), g, stencils);
        self.split(&res)
    }

    pub fn split(&self, res: &[f64]) -> ObjectiveValue {
        let len = self.tensor.data().len();
        let tensor_term = res[..len].iter().map(|x| x * x).sum();
        let weighted: f64 = res[len..].iter().map(|x| x * x).sum();
        let penalty = if self.lambda > 0.0 {
            weighted / (self.lambda * self.lambda)
        } else {
            0.0
        };
        ObjectiveValue {
            tensor_term,
            penalty,
            lambda: self.lambda,
        }
    }

    /// Residual and its Jacobian with respect to `vec(V)` under frozen
    /// stencils, by forward-mode differentiation.
    pub fn residual_jacobian(
        &self,
        w: &DMatrix<f64>,
        v: &DMatrix<f64>,
        g: &DMatrix<f64>,
        stencils: &BranchStencils,
    ) -> (Vec<f64>, DMatrix<f64>) {
        let params = v.len();
        let mut jac = DMatrix::zeros(self.residual_len(w.ncols()), params);
        let mut res = Vec::new();
        let mut seeded: Vec<Dual> = v.iter().map(|&x| Dual::constant(x)).collect();
        for q in 0..params {
            seeded[q].eps = 1.0;
            let out = self.residual(w, &seeded, g, stencils);
            seeded[q].eps = 0.0;
            for (row, d) in out.iter().enumerate() {
                jac[(row, q)] = d.eps;
            }
            if q == 0 {
                res = out.iter().map(|d| d.re).collect();
            }
        }
        (res, jac)
    }
}

fn apply<T: Real>(stencil: &Stencil, z: &[T], g: &[f64]) -> Vec<T> {
    let weights = stencil.weights(z);
    stencil.apply(&weights, g)
}

/// The `V`-subproblem objective with sort orders frozen at a reference `V`.
///
/// Within a region where no two projected samples swap places this equals
/// the joint objective; its gradient is what the `V` update descends along.
pub struct FrozenObjective<'a> {
    problem: Problem<'a>,
    w: DMatrix<f64>,
    g: DMatrix<f64>,
    stencils: BranchStencils,
}

impl<'a> FrozenObjective<'a> {
    pub fn new(
        tensor: &'a Tensor3,
        points: &'a OperatingPointSet,
        lambda: f64,
        w: &DMatrix<f64>,
        v_ref: &DMatrix<f64>,
        g: &DMatrix<f64>,
    ) -> Result<Self> {
        let (n, m, big_n) = tensor.shape();
        check_dim("W rows", n, w.nrows())?;
        check_dim("V rows", m, v_ref.nrows())?;
        check_dim("G rows", big_n, g.nrows())?;
        check_dim("V columns", w.ncols(), v_ref.ncols())?;
        check_dim("G columns", w.ncols(), g.ncols())?;
        let stencils = BranchStencils::new(&project(v_ref, points)?)?;
        Ok(FrozenObjective {
            problem: Problem {
                tensor,
                points,
                lambda,
            },
            w: w.clone(),
            g: g.clone(),
            stencils,
        })
    }

    pub fn value(&self, v: &DMatrix<f64>) -> f64 {
        self.problem
            .evaluate_with(&self.w, v, &self.g, &self.stencils)
            .total()
    }

    /// `∇_V Φ = 2 J_rᵀ r`, shaped like `V`.
    pub fn gradient(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let (res, jac) = self
            .problem
            .residual_jacobian(&self.w, v, &self.g, &self.stencils);
        let grad = jac.transpose() * nalgebra::DVector::from_vec(res) * 2.0;
        DMatrix::from_column_slice(v.nrows(), v.ncols(), grad.as_slice())
    }
}
