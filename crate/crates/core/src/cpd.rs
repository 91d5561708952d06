//! Unconstrained CP decomposition by alternating least squares.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{pinv, PINV_RTOL};
use crate::tensor3::{reconstruct, residual, FactorSet, Tensor3, ThirdFactor};

#[derive(Clone, Debug, PartialEq)]
pub struct AlsOptions {
    pub max_iterations: usize,
    /// Stop once the relative decrease of the objective falls below this.
    pub tolerance: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for AlsOptions {
    fn default() -> Self {
        AlsOptions {
            max_iterations: 500,
            tolerance: 1e-10,
            seed: 0,
            restarts: 1,
        }
    }
}

impl AlsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if self.restarts < 1 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CpdResult {
    pub factors: FactorSet,
    /// `‖T − ⟦W,V,H⟧‖²_F` after initialization and after every sweep.
    pub trace: Vec<f64>,
    pub restart: usize,
}

impl CpdResult {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }

    pub fn sweeps(&self) -> usize {
        self.trace.len() - 1
    }
}

/// Seed used for restart `restart` of a run seeded with `seed`.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    // splitmix64 step, so neighbouring restarts are decorrelated
    let mut z = seed.wrapping_add((restart as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Matricized-tensor times Khatri-Rao product for `mode`, e.g.
/// `J₍₁₎ (C ⊙ B)` for mode 1 where `B`, `C` are the factors of modes 2, 3.
pub(crate) fn mttkrp(t: &Tensor3, a: &DMatrix<f64>, b: &DMatrix<f64>, mode: usize) -> DMatrix<f64> {
    let (n, m, big_n) = t.shape();
    let r = a.ncols();
    let rows = [n, m, big_n][mode - 1];
    let mut out = DMatrix::zeros(rows, r);
    let data = t.data();
    for i in 0..r {
        for l in 0..big_n {
            for k in 0..m {
                let base = n * (k + m * l);
                for j in 0..n {
                    let x = data[base + j];
                    if x == 0.0 {
                        continue;
                    }
                    // (a, b) are the two fixed factors in increasing mode order
                    match mode {
                        1 => out[(j, i)] += x * a[(k, i)] * b[(l, i)],
                        2 => out[(k, i)] += x * a[(j, i)] * b[(l, i)],
                        _ => out[(l, i)] += x * a[(j, i)] * b[(k, i)],
                    }
                }
            }
        }
    }
    out
}

/// Least-squares update of the factor for `mode` with the other two fixed.
///
/// Uses `(A ⊙ B)ᵀ(A ⊙ B) = (AᵀA) ∗ (BᵀB)` so only an `r × r` Gram matrix is
/// pseudo-inverted.
pub fn als_update(t: &Tensor3, factors: &FactorSet, mode: usize) -> Result<DMatrix<f64>> {
    if t.shape() != factors.shape() {
        return Err(Error::invalid(format!(
            "tensor shape {:?} does not match factors {:?}",
            t.shape(),
            factors.shape()
        )));
    }
    let (w, v, h) = (&factors.w, &factors.v, &factors.third);
    let (a, b) = match mode {
        1 => (v, h),
        2 => (w, h),
        3 => (w, v),
        _ => return Err(Error::invalid(format!("mode {mode} not in 1..=3"))),
    };
    Ok(solve_mode(t, a, b, mode))
}

fn solve_mode(t: &Tensor3, a: &DMatrix<f64>, b: &DMatrix<f64>, mode: usize) -> DMatrix<f64> {
    let gram = (a.transpose() * a).component_mul(&(b.transpose() * b));
    mttkrp(t, a, b, mode) * pinv(&gram, PINV_RTOL)
}

/// Rescale columns of `w` and `v` to unit norm, absorbing the scale in `h`.
pub(crate) fn normalize_columns(w: &mut DMatrix<f64>, v: &mut DMatrix<f64>, h: &mut DMatrix<f64>) {
    for i in 0..w.ncols() {
        for m in [&mut *w, &mut *v] {
            let norm = m.column(i).norm();
            if norm > 0.0 {
                m.column_mut(i).scale_mut(1.0 / norm);
                h.column_mut(i).scale_mut(norm);
            }
        }
    }
}

fn single_run(t: &Tensor3, r: usize, opts: &AlsOptions, restart: usize) -> CpdResult {
    let (n, m, big_n) = t.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(opts.seed, restart));
    let mut w = uniform_matrix(&mut rng, n, r);
    let mut v = uniform_matrix(&mut rng, m, r);
    let mut h = uniform_matrix(&mut rng, big_n, r);
    let norm2 = t.frobenius_norm().powi(2);
    let objective = |w: &DMatrix<f64>, v: &DMatrix<f64>, h: &DMatrix<f64>| {
        let f = FactorSet {
            w: w.clone(),
            v: v.clone(),
            third: h.clone(),
            kind: ThirdFactor::Derivative,
        };
        crate::tensor3::residual_between(t, &reconstruct(&f)).squared
    };
    let mut trace = vec![objective(&w, &v, &h)];
    for _ in 0..opts.max_iterations {
        w = solve_mode(t, &v, &h, 1);
        v = solve_mode(t, &w, &h, 2);
        h = solve_mode(t, &w, &v, 3);
        normalize_columns(&mut w, &mut v, &mut h);
        let prev = *trace.last().unwrap();
        let cur = objective(&w, &v, &h);
        trace.push(cur);
        if cur <= norm2 * 1e-28 || (prev - cur).abs() <= opts.tolerance * prev {
            break;
        }
    }
    CpdResult {
        factors: FactorSet {
            w,
            v,
            third: h,
            kind: ThirdFactor::Derivative,
        },
        trace,
        restart,
    }
}

/// Rank-`r` CP decomposition `T ≈ ⟦W, V, H⟧`, best of `opts.restarts`
/// random initializations.
pub fn cpd_als(t: &Tensor3, r: usize, opts: &AlsOptions) -> Result<CpdResult> {
    if r < 1 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    opts.validate()?;
    if !t.is_finite() {
        return Err(Error::invalid("tensor contains non-finite entries"));
    }
    let runs: Vec<CpdResult> = (0..opts.restarts)
        .into_par_iter()
        .map(|restart| single_run(t, r, opts, restart))
        .collect();
    let best = runs
        .into_iter()
        .min_by(|a, b| a.objective().total_cmp(&b.objective()))
        .expect("at least one restart");
    debug_assert_eq!(best.factors.rank(), r);
    Ok(best)
}

/// Residual of a CPD result, re-evaluated from the factors.
pub fn cpd_residual(t: &Tensor3, res: &CpdResult) -> Result<crate::tensor3::Residual> {
    check_dim("cpd rank", res.factors.rank(), res.factors.w.ncols())?;
    residual(t, &res.factors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_tensor_gives_zero_update() {
        let t = Tensor3::zeros(2, 2, 3).unwrap();
        let f = FactorSet::new(
            DMatrix::from_element(2, 1, 1.0),
            DMatrix::from_element(2, 1, 1.0),
            DMatrix::from_element(3, 1, 1.0),
            ThirdFactor::Derivative,
        )
        .unwrap();
        for mode in 1..=3 {
            assert!(als_update(&t, &f, mode).unwrap().iter().all(|&x| x == 0.0));
        }
        assert!(als_update(&t, &f, 4).is_err());
    }

    #[test]
    fn rank_zero_and_nan_rejected() {
        let mut t = Tensor3::zeros(2, 2, 3).unwrap();
        assert!(cpd_als(&t, 0, &AlsOptions::default()).is_err());
        t[(0, 0, 0)] = f64::NAN;
        assert!(cpd_als(&t, 1, &AlsOptions::default()).is_err());
    }

    #[test]
    fn restart_seeds_differ() {
        assert_ne!(restart_seed(1, 0), restart_seed(1, 1));
        assert_eq!(restart_seed(5, 3), restart_seed(5, 3));
    }
}
