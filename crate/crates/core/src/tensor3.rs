//! Dense third-order tensors, Khatri-Rao products and rank-one
//! reconstruction.
//!
//! A tensor of shape `n × m × N` is stored with the first index fastest.
//! Matricizations follow the convention under which
//!
//! ```text
//! X₍₁₎ = W (T ⊙ V)ᵀ,   X₍₂₎ = V (T ⊙ W)ᵀ,   X₍₃₎ = T (V ⊙ W)ᵀ
//! ```
//!
//! hold for `X = ⟦W, V, T⟧`.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    shape: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize, m: usize, big_n: usize) -> Result<Self> {
        if n == 0 || m == 0 || big_n == 0 {
            return Err(Error::invalid(format!(
                "tensor shape ({n}, {m}, {big_n}) must be positive"
            )));
        }
        Ok(Tensor3 {
            shape: (n, m, big_n),
            data: vec![0.0; n * m * big_n],
        })
    }

    pub fn from_fn(
        shape: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut t = Self::zeros(shape.0, shape.1, shape.2)?;
        for l in 0..shape.2 {
            for k in 0..shape.1 {
                for j in 0..shape.0 {
                    t[(j, k, l)] = f(j, k, l);
                }
            }
        }
        Ok(t)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    #[inline]
    fn offset(&self, j: usize, k: usize, l: usize) -> usize {
        let (n, m, _) = self.shape;
        j + n * (k + m * l)
    }

    /// Unfold along `mode` (1, 2 or 3).
    pub fn matricize(&self, mode: usize) -> Result<DMatrix<f64>> {
        let (n, m, big_n) = self.shape;
        let out = match mode {
            1 => DMatrix::from_fn(n, m * big_n, |j, c| self[(j, c % m, c / m)]),
            2 => DMatrix::from_fn(m, n * big_n, |k, c| self[(c % n, k, c / n)]),
            3 => DMatrix::from_fn(big_n, n * m, |l, c| self[(c % n, c / n, l)]),
            _ => {
                return Err(Error::invalid(format!(
                    "matricization mode {mode} not in 1..=3"
                )))
            }
        };
        Ok(out)
    }
}

impl Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;

    #[inline]
    fn index(&self, (j, k, l): (usize, usize, usize)) -> &f64 {
        &self.data[self.offset(j, k, l)]
    }
}

impl IndexMut<(usize, usize, usize)> for Tensor3 {
    #[inline]
    fn index_mut(&mut self, (j, k, l): (usize, usize, usize)) -> &mut f64 {
        let o = self.offset(j, k, l);
        &mut self.data[o]
    }
}

/// Column-wise Kronecker product: column `i` of the result is `a_i ⊗ b_i`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("khatri_rao columns", a.ncols(), b.ncols())?;
    let (ia, jb) = (a.nrows(), b.nrows());
    Ok(DMatrix::from_fn(ia * jb, a.ncols(), |row, i| {
        a[(row / jb, i)] * b[(row % jb, i)]
    }))
}

/// What the third factor of a [`FactorSet`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThirdFactor {
    /// `H`: samples of the branch derivatives.
    Derivative,
    /// `G`: samples of the branch functions themselves.
    Function,
}

/// CP factors `W (n×r)`, `V (m×r)` and a third factor `(N×r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSet {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub third: DMatrix<f64>,
    pub kind: ThirdFactor,
}

impl FactorSet {
    pub fn new(
        w: DMatrix<f64>,
        v: DMatrix<f64>,
        third: DMatrix<f64>,
        kind: ThirdFactor,
    ) -> Result<Self> {
        let r = w.ncols();
        if r == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        check_dim("factor V columns", r, v.ncols())?;
        check_dim("third factor columns", r, third.ncols())?;
        Ok(FactorSet { w, v, third, kind })
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.w.nrows(), self.v.nrows(), self.third.nrows())
    }
}

/// `⟦W, V, T⟧` with entries `Σ_i w_ji v_ki t_li`.
pub fn reconstruct(f: &FactorSet) -> Tensor3 {
    reconstruct_parts(&f.w, &f.v, &f.third)
}

pub(crate) fn reconstruct_parts(w: &DMatrix<f64>, v: &DMatrix<f64>, t: &DMatrix<f64>) -> Tensor3 {
    let (n, m, big_n, r) = (w.nrows(), v.nrows(), t.nrows(), w.ncols());
    let mut out = Tensor3 {
        shape: (n, m, big_n),
        data: vec![0.0; n * m * big_n],
    };
    for i in 0..r {
        for l in 0..big_n {
            let tl = t[(l, i)];
            if tl == 0.0 {
                continue;
            }
            for k in 0..m {
                let vk = v[(k, i)] * tl;
                let base = n * (k + m * l);
                for j in 0..n {
                    out.data[base + j] += w[(j, i)] * vk;
                }
            }
        }
    }
    out
}

/// Fit of a factor set to a tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    /// `‖T − ⟦F⟧‖²_F`
    pub squared: f64,
    /// `‖T − ⟦F⟧‖_F / ‖T‖_F × 100`, `None` when `T = 0`.
    pub relative_percent: Option<f64>,
}

impl Residual {
    pub fn relative(&self) -> Result<f64> {
        self.relative_percent
            .ok_or_else(|| Error::Undefined("relative residual of a zero tensor".into()))
    }
}

pub fn residual(t: &Tensor3, f: &FactorSet) -> Result<Residual> {
    if t.shape() != f.shape() {
        return Err(Error::invalid(format!(
            "tensor shape {:?} does not match factor shape {:?}",
            t.shape(),
            f.shape()
        )));
    }
    let approx = reconstruct(f);
    Ok(residual_between(t, &approx))
}

pub(crate) fn residual_between(t: &Tensor3, approx: &Tensor3) -> Residual {
    let squared: f64 = t
        .data
        .iter()
        .zip(&approx.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let norm = t.frobenius_norm();
    let relative_percent = (norm > 0.0).then(|| squared.sqrt() / norm * 100.0);
    Residual {
        squared,
        relative_percent,
    }
}
