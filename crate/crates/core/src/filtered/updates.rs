//! The three alternating updates of the filtered decomposition.

use nalgebra::{DMatrix, DVector};

use super::objective::{BranchStencils, Problem};
use crate::error::{check_dim, Result};
use crate::findiff::{project, rms, FilterBank};
use crate::linalg::{pinv, solve_psd, PINV_RTOL};
use crate::tensor3::khatri_rao;

/// `W⁺ = J₍₁₎ (H_C ⊙ V) ((H_CᵀH_C) ∗ (VᵀV))†` with `H_C = 𝓕_C(V)∘G`.
pub fn update_w(
    j1: &DMatrix<f64>,
    v: &DMatrix<f64>,
    g: &DMatrix<f64>,
    bank_c: &FilterBank,
) -> Result<DMatrix<f64>> {
    let hc = bank_c.apply(g)?;
    check_dim("J(1) columns", v.nrows() * hc.nrows(), j1.ncols())?;
    let gram = (hc.transpose() * &hc).component_mul(&(v.transpose() * v));
    Ok(j1 * khatri_rao(&hc, v)? * pinv(&gram, PINV_RTOL))
}

/// Left, central and right banks built on the same axes.
#[derive(Clone, Debug)]
pub struct Banks {
    pub left: FilterBank,
    pub central: FilterBank,
    pub right: FilterBank,
}

impl Banks {
    pub fn build(v: &DMatrix<f64>, points: &crate::polyfun::OperatingPointSet) -> Result<Self> {
        use crate::findiff::{build_filter_bank_on_axes, Scheme};
        let z = project(v, points)?;
        Ok(Banks {
            left: build_filter_bank_on_axes(&z, Scheme::Left)?,
            central: build_filter_bank_on_axes(&z, Scheme::Central)?,
            right: build_filter_bank_on_axes(&z, Scheme::Right)?,
        })
    }
}

/// Per-branch normalization `1/rms(F g_i)` of a bank, `0` for vanishing
/// branches so they drop out of the penalty.
pub fn rms_weights(bank: &FilterBank, g: &DMatrix<f64>) -> Result<Vec<f64>> {
    let h = bank.apply(g)?;
    Ok(h.column_iter()
        .map(|c| {
            let col: Vec<f64> = c.iter().copied().collect();
            let s = rms(&col);
            if s > 0.0 {
                1.0 / s
            } else {
                0.0
            }
        })
        .collect())
}

/// The stacked linear system for `vec(G)`:
///
/// ```text
/// K = [ ((V ⊙ W) ⊗ I_N) blkdiag(F_C)                       ]
///     [ λ (blkdiag(F_L / ρ_L) − blkdiag(F_R / ρ_R))         ]
/// ```
///
/// with the normalizations `ρ` taken from a reference `G` and held fixed.
/// Operators are applied matrix-free; only the `rN × rN` normal matrix is
/// formed.
pub struct GSystem<'a> {
    banks: &'a Banks,
    khatri: DMatrix<f64>,
    lambda: f64,
    scale_l: Vec<f64>,
    scale_r: Vec<f64>,
    samples: usize,
}

impl<'a> GSystem<'a> {
    pub fn new(
        w: &DMatrix<f64>,
        v: &DMatrix<f64>,
        lambda: f64,
        banks: &'a Banks,
        g_ref: &DMatrix<f64>,
    ) -> Result<Self> {
        let mut scale_l = rms_weights(&banks.left, g_ref)?;
        let mut scale_r = rms_weights(&banks.right, g_ref)?;
        for (l, r) in scale_l.iter_mut().zip(scale_r.iter_mut()) {
            if *l == 0.0 || *r == 0.0 {
                *l = 0.0;
                *r = 0.0;
            }
        }
        Ok(GSystem {
            banks,
            khatri: khatri_rao(v, w)?,
            lambda,
            scale_l,
            scale_r,
            samples: banks.central.samples(),
        })
    }

    pub fn rank(&self) -> usize {
        self.khatri.ncols()
    }

    /// Dense `K`, for verification on small instances.
    pub fn dense(&self) -> DMatrix<f64> {
        let (n_s, r, nm) = (self.samples, self.rank(), self.khatri.nrows());
        let bc = self.banks.central.to_block_diagonal();
        let kron = kron_identity(&self.khatri, n_s);
        let top = kron * bc;
        let mut bottom = DMatrix::zeros(r * n_s, r * n_s);
        for i in 0..r {
            let d = self.banks.left.filters()[i].to_dense() * self.scale_l[i]
                - self.banks.right.filters()[i].to_dense() * self.scale_r[i];
            bottom
                .view_mut((i * n_s, i * n_s), (n_s, n_s))
                .copy_from(&(d * self.lambda));
        }
        let mut k = DMatrix::zeros(nm * n_s + r * n_s, r * n_s);
        k.view_mut((0, 0), (nm * n_s, r * n_s)).copy_from(&top);
        k.view_mut((nm * n_s, 0), (r * n_s, r * n_s))
            .copy_from(&bottom);
        k
    }

    /// Right-hand side `[vec(J₍₃₎); 0]`.
    pub fn rhs(&self, j3: &DMatrix<f64>) -> DVector<f64> {
        let mut b = DVector::zeros(j3.len() + self.rank() * self.samples);
        b.rows_mut(0, j3.len()).copy_from_slice(j3.as_slice());
        b
    }

    /// `K x`, with `x = vec(G)`.
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let (n_s, r) = (self.samples, self.rank());
        let g = DMatrix::from_column_slice(n_s, r, x.as_slice());
        let hc = self.banks.central.apply(&g).expect("shapes fixed");
        let top = hc * self.khatri.transpose();
        let mut out = DVector::zeros(top.len() + r * n_s);
        out.rows_mut(0, top.len()).copy_from_slice(top.as_slice());
        for i in 0..r {
            let gi: Vec<f64> = g.column(i).iter().copied().collect();
            let hl = self.banks.left.filters()[i]
                .apply(&gi)
                .expect("shapes fixed");
            let hr = self.banks.right.filters()[i]
                .apply(&gi)
                .expect("shapes fixed");
            for l in 0..n_s {
                out[top.len() + i * n_s + l] =
                    self.lambda * (hl[l] * self.scale_l[i] - hr[l] * self.scale_r[i]);
            }
        }
        out
    }

    /// `Kᵀ y`.
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let (n_s, r, nm) = (self.samples, self.rank(), self.khatri.nrows());
        let y1 = DMatrix::from_column_slice(n_s, nm, &y.as_slice()[..n_s * nm]);
        let ym = y1 * &self.khatri;
        let mut out = DVector::zeros(r * n_s);
        for i in 0..r {
            let col: Vec<f64> = ym.column(i).iter().copied().collect();
            let a = self.banks.central.filters()[i]
                .apply_transpose(&col)
                .expect("shapes fixed");
            let y2 = &y.as_slice()[n_s * nm + i * n_s..n_s * nm + (i + 1) * n_s];
            let tl = self.banks.left.filters()[i]
                .apply_transpose(y2)
                .expect("shapes fixed");
            let tr = self.banks.right.filters()[i]
                .apply_transpose(y2)
                .expect("shapes fixed");
            for l in 0..n_s {
                out[i * n_s + l] =
                    a[l] + self.lambda * (tl[l] * self.scale_l[i] - tr[l] * self.scale_r[i]);
            }
        }
        out
    }

    /// `KᵀK`, assembled blockwise from the dense filters, plus a rank-`r`
    /// term on the per-branch constants that every filter annihilates.
    fn normal_matrix(&self) -> DMatrix<f64> {
        let (n_s, r) = (self.samples, self.rank());
        let gram = self.khatri.transpose() * &self.khatri;
        let fc: Vec<DMatrix<f64>> = self
            .banks
            .central
            .filters()
            .iter()
            .map(|f| f.to_dense())
            .collect();
        let mut a = DMatrix::zeros(r * n_s, r * n_s);
        for i in 0..r {
            for i2 in i..r {
                let block = fc[i].transpose() * &fc[i2] * gram[(i, i2)];
                a.view_mut((i * n_s, i2 * n_s), (n_s, n_s))
                    .copy_from(&block);
                if i2 != i {
                    a.view_mut((i2 * n_s, i * n_s), (n_s, n_s))
                        .copy_from(&block.transpose());
                }
            }
            let d = self.banks.left.filters()[i].to_dense() * self.scale_l[i]
                - self.banks.right.filters()[i].to_dense() * self.scale_r[i];
            let pen = d.transpose() * d * (self.lambda * self.lambda);
            let mut view = a.view_mut((i * n_s, i * n_s), (n_s, n_s));
            view += pen;
        }
        let scale = a.diagonal().iter().sum::<f64>() / (r * n_s) as f64;
        if scale > 0.0 {
            let c = scale / n_s as f64;
            for i in 0..r {
                let mut view = a.view_mut((i * n_s, i * n_s), (n_s, n_s));
                view.add_scalar_mut(c);
            }
        }
        a
    }

    /// Minimum-norm least-squares solution of `K vec(G) = b`.
    pub fn solve(&self, j3: &DMatrix<f64>) -> DMatrix<f64> {
        let b = self.rhs(j3);
        let a = self.normal_matrix();
        let atb = self.apply_transpose(&b);
        let mut x = solve_psd(
            &a,
            &DMatrix::from_column_slice(atb.len(), 1, atb.as_slice()),
        );
        // two steps of refinement against the unsquared system
        for _ in 0..2 {
            let xv = DVector::from_column_slice(x.as_slice());
            let res = &b - self.apply(&xv);
            let corr = self.apply_transpose(&res);
            let dx = solve_psd(
                &a,
                &DMatrix::from_column_slice(corr.len(), 1, corr.as_slice()),
            );
            x += dx;
        }
        // project out the per-branch constants, which the pinned term only
        // suppresses approximately
        let mut g = DMatrix::from_column_slice(self.samples, self.rank(), x.as_slice());
        for mut col in g.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        g
    }
}

/// `A ⊗ I_n`.
fn kron_identity(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() * n, a.ncols() * n);
    for c in 0..a.ncols() {
        for r in 0..a.nrows() {
            let x = a[(r, c)];
            for d in 0..n {
                out[(r * n + d, c * n + d)] = x;
            }
        }
    }
    out
}

/// Closed-form `G` update: the least-squares solution of the stacked system,
/// with left/right normalizations lagged at `g_prev`.
pub fn update_g(
    j3: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    lambda: f64,
    banks: &Banks,
    g_prev: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_dim("J(3) rows", banks.central.samples(), j3.nrows())?;
    check_dim("J(3) columns", w.nrows() * v.nrows(), j3.ncols())?;
    let system = GSystem::new(w, v, lambda, banks, g_prev)?;
    Ok(system.solve(j3))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for VOptions {
    fn default() -> Self {
        VOptions {
            max_iterations: 50,
            gradient_tolerance: 1e-10,
        }
    }
}

/// Outcome of the nonlinear `V` subproblem.
#[derive(Clone, Debug)]
pub struct VUpdate {
    pub v: DMatrix<f64>,
    pub objective: f64,
    pub accepted_steps: usize,
    /// Candidate steps discarded because two projected samples coincided.
    pub degenerate_candidates: usize,
}

/// Damped Gauss-Newton descent on `V`.
///
/// Each step is computed with the sort orders frozen at the incumbent and
/// accepted only if the objective re-evaluated with freshly sorted filters
/// decreases, so the returned `V` never does worse than `v_current`.
pub(crate) fn update_v(
    problem: &Problem<'_>,
    w: &DMatrix<f64>,
    g: &DMatrix<f64>,
    v_current: &DMatrix<f64>,
    opts: &VOptions,
) -> Result<VUpdate> {
    let (m, r) = v_current.shape();
    let mut v = v_current.clone();
    let mut stencils = BranchStencils::new(&project(&v, problem.points)?)?;
    let mut phi = problem.evaluate_with(w, &v, g, &stencils).total();
    let mut damping = 1e-3;
    let mut accepted = 0;
    let mut degenerate = 0;

    for _ in 0..opts.max_iterations {
        let (res, jac) = problem.residual_jacobian(w, &v, g, &stencils);
        let res = DVector::from_vec(res);
        let grad = jac.transpose() * &res;
        if 2.0 * grad.norm() <= opts.gradient_tolerance * (1.0 + phi) {
            break;
        }
        let jtj = jac.transpose() * &jac;
        let diag_floor = jtj.diagonal().max() * 1e-12 + f64::MIN_POSITIVE;
        let mut stepped = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for q in 0..a.nrows() {
                a[(q, q)] += damping * (jtj[(q, q)] + diag_floor);
            }
            let step = solve_psd(
                &a,
                &DMatrix::from_column_slice(grad.len(), 1, (-&grad).as_slice()),
            );
            let candidate = &v + DMatrix::from_column_slice(m, r, step.as_slice());
            let cand_stencils =
                match project(&candidate, problem.points).and_then(|z| BranchStencils::new(&z)) {
                    Ok(s) => s,
                    Err(_) => {
                        degenerate += 1;
                        damping *= 4.0;
                        continue;
                    }
                };
            let value = problem
                .evaluate_with(w, &candidate, g, &cand_stencils)
                .total();
            if value.is_finite() && value < phi {
                let rel = (phi - value) / phi.max(f64::MIN_POSITIVE);
                v = candidate;
                stencils = cand_stencils;
                phi = value;
                damping = (damping / 3.0).max(1e-12);
                accepted += 1;
                stepped = rel > 1e-14;
                break;
            }
            damping *= 4.0;
        }
        if !stepped {
            break;
        }
    }
    Ok(VUpdate {
        v,
        objective: phi,
        accepted_steps: accepted,
        degenerate_candidates: degenerate,
    })
}
