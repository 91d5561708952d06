//! Finite-difference filters on non-equidistant axes.
//!
//! A filter `F = S⁻¹ D S` sorts samples along an axis `z` (`S`), applies
//! banded derivative weights obtained by differentiating the Lagrange
//! interpolant of a sliding window (`D`), and scatters the result back to
//! the original sample order. The permutation is kept as an index vector and
//! `D` as `k` weights per row, so applying a filter costs `O(kN)`.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::polyfun::OperatingPointSet;
use crate::scalar::Real;

/// Window length used throughout the decomposition.
pub const DEFAULT_WINDOW: usize = 3;

/// Minimum admissible gap between sorted axis values, relative to the range.
pub const MIN_SEPARATION: f64 = 1e-12;

/// Placement of the window relative to the evaluation point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Window ends at the evaluation point.
    Left,
    /// Window centered on the evaluation point.
    Central,
    /// Window starts at the evaluation point.
    Right,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Left => "left",
            Scheme::Central => "central",
            Scheme::Right => "right",
        }
    }
}

/// First-derivative weights of the Lagrange interpolant through `window`,
/// evaluated at `window[eval_at]` (zero-based).
///
/// Applied to samples of any polynomial of degree below `window.len()`, the
/// weights return its exact derivative.
pub fn lagrange_weights<T: Real>(window: &[T], eval_at: usize) -> Result<Vec<T>> {
    let k = window.len();
    if k < 2 {
        return Err(Error::invalid(
            "a derivative window needs at least 2 points",
        ));
    }
    if eval_at >= k {
        return Err(Error::invalid(format!(
            "evaluation index {eval_at} outside window of length {k}"
        )));
    }
    for a in 0..k {
        for b in a + 1..k {
            if window[a].value() == window[b].value() {
                return Err(Error::DegenerateAxis {
                    branch: None,
                    first: a,
                    second: b,
                });
            }
        }
    }
    let mut out = vec![T::zero(); k];
    window_weights(window, eval_at, &mut out);
    Ok(out)
}

/// Unchecked kernel of [`lagrange_weights`]:
/// `l'_j(z) = Σ_{s≠j} 1/(z_j − z_s) · Π_{i∉{s,j}} (z − z_i)/(z_j − z_i)`.
#[inline]
fn window_weights<T: Real>(window: &[T], eval_at: usize, out: &mut [T]) {
    let k = window.len();
    let z = window[eval_at];
    for j in 0..k {
        let zj = window[j];
        let mut acc = T::zero();
        for s in 0..k {
            if s == j {
                continue;
            }
            let mut term = T::from_f64(1.0) / (zj - window[s]);
            for (i, &zi) in window.iter().enumerate() {
                if i != s && i != j {
                    term = term * (z - zi) / (zj - zi);
                }
            }
            acc += term;
        }
        out[j] = acc;
    }
}

/// Sort order and window placement of a filter, independent of the weights.
///
/// Keeping this fixed while the axis values move gives the "frozen
/// permutation" filter used when differentiating with respect to `V`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    order: Vec<usize>,
    starts: Vec<usize>,
    window: usize,
    scheme: Scheme,
}

impl Stencil {
    pub fn new(z: &[f64], scheme: Scheme, window: usize) -> Result<Self> {
        let n = z.len();
        if window < 2 {
            return Err(Error::invalid("window length must be at least 2"));
        }
        if n < window {
            return Err(Error::invalid(format!(
                "axis has {n} points, fewer than the window length {window}"
            )));
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("axis values must be finite"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
        let range = z[order[n - 1]] - z[order[0]];
        let min_gap = MIN_SEPARATION * range;
        for w in order.windows(2) {
            let gap = z[w[1]] - z[w[0]];
            if !(gap > min_gap) {
                return Err(Error::DegenerateAxis {
                    branch: None,
                    first: w[0].min(w[1]),
                    second: w[0].max(w[1]),
                });
            }
        }
        let last = n - window;
        let starts = (0..n)
            .map(|i| {
                let desired = match scheme {
                    Scheme::Left => i as isize - (window as isize - 1),
                    Scheme::Central => i as isize - (window as isize - 1) / 2,
                    Scheme::Right => i as isize,
                };
                desired.clamp(0, last as isize) as usize
            })
            .collect();
        Ok(Stencil {
            order,
            starts,
            window,
            scheme,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `order[i]` is the original index of the `i`-th smallest axis value.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Sorted position of the first point in the window of sorted row `i`.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Row weights of `D` (row-major, `window` per row) for axis values `z`
    /// given in original sample order.
    pub fn weights<T: Real>(&self, z: &[T]) -> Vec<T> {
        let k = self.window;
        let mut out = vec![T::zero(); self.len() * k];
        let mut buf = vec![T::zero(); k];
        for (i, &start) in self.starts.iter().enumerate() {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = z[self.order[start + j]];
            }
            window_weights(&buf, i - start, &mut out[i * k..(i + 1) * k]);
        }
        out
    }

    /// `S⁻¹ D S g` for row weights produced by [`Stencil::weights`].
    pub fn apply<T: Real>(&self, weights: &[T], g: &[f64]) -> Vec<T> {
        let k = self.window;
        let mut out = vec![T::zero(); self.len()];
        for (i, &start) in self.starts.iter().enumerate() {
            let mut acc = T::zero();
            for j in 0..k {
                acc += weights[i * k + j] * T::from_f64(g[self.order[start + j]]);
            }
            out[self.order[i]] = acc;
        }
        out
    }
}

/// A materialized filter `F = S⁻¹ D S` on one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterMatrix {
    axis: Vec<f64>,
    stencil: Stencil,
    weights: Vec<f64>,
}

/// Build the `k`-point filter of the given scheme on axis `z`.
///
/// Rows whose preferred window would run past either end of the sorted axis
/// use the nearest window that fits.
pub fn build_filter(z: &[f64], scheme: Scheme, window: usize) -> Result<FilterMatrix> {
    let stencil = Stencil::new(z, scheme, window)?;
    let weights = stencil.weights(z);
    Ok(FilterMatrix {
        axis: z.to_vec(),
        stencil,
        weights,
    })
}

impl FilterMatrix {
    /// The classical 2-point forward difference, last row backward.
    pub fn forward_two_point(z: &[f64]) -> Result<Self> {
        build_filter(z, Scheme::Right, 2)
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    pub fn scheme(&self) -> Scheme {
        self.stencil.scheme
    }

    pub fn window(&self) -> usize {
        self.stencil.window
    }

    /// The sort permutation `S` as an index vector.
    pub fn permutation(&self) -> &[usize] {
        &self.stencil.order
    }

    /// Weights of sorted row `i` and the sorted index of the first one.
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        let k = self.window();
        (self.stencil.starts[i], &self.weights[i * k..(i + 1) * k])
    }

    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_dim("filter input", self.len(), g.len())?;
        Ok(self.stencil.apply(&self.weights, g))
    }

    /// `Fᵀ y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("filter transpose input", self.len(), y.len())?;
        let k = self.window();
        let order = &self.stencil.order;
        let mut out = vec![0.0; self.len()];
        for (i, &start) in self.stencil.starts.iter().enumerate() {
            let yi = y[order[i]];
            for j in 0..k {
                out[order[start + j]] += self.weights[i * k + j] * yi;
            }
        }
        Ok(out)
    }

    /// Banded `D` acting on sorted samples, as a dense matrix.
    pub fn sorted_operator(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            let (start, w) = self.row(i);
            for (j, &wj) in w.iter().enumerate() {
                d[(i, start + j)] = wj;
            }
        }
        d
    }

    /// `F = S⁻¹ D S` as a dense matrix acting on unsorted samples.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let order = &self.stencil.order;
        let mut f = DMatrix::zeros(n, n);
        for i in 0..n {
            let (start, w) = self.row(i);
            for (j, &wj) in w.iter().enumerate() {
                f[(order[i], order[start + j])] += wj;
            }
        }
        f
    }
}

/// Branch axes `z_i = Pᵀ v_i`, one per column.
pub fn project(v: &DMatrix<f64>, points: &OperatingPointSet) -> Result<DMatrix<f64>> {
    check_dim("projection dimension", points.dim(), v.nrows())?;
    Ok(points.points().transpose() * v)
}

/// Cumulative trapezoidal integral of samples `h` along axis `z`, taken in
/// sorted order and shifted to zero mean. Inverts differentiation up to the
/// constant that every filter annihilates.
pub fn integrate(z: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    check_dim("integrand length", z.len(), h.len())?;
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
    let mut g = vec![0.0; z.len()];
    let mut acc = 0.0;
    for pair in order.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        acc += 0.5 * (h[a] + h[b]) * (z[b] - z[a]);
        g[b] = acc;
    }
    let mean = g.iter().sum::<f64>() / g.len().max(1) as f64;
    Ok(g.into_iter().map(|x| x - mean).collect())
}

/// One filter per branch, all of the same scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    filters: Vec<FilterMatrix>,
    scheme: Scheme,
}

pub fn build_filter_bank(
    v: &DMatrix<f64>,
    points: &OperatingPointSet,
    scheme: Scheme,
) -> Result<FilterBank> {
    let z = project(v, points)?;
    build_filter_bank_on_axes(&z, scheme)
}

/// Build a bank from precomputed axes (`N × r`).
pub fn build_filter_bank_on_axes(z: &DMatrix<f64>, scheme: Scheme) -> Result<FilterBank> {
    let filters = z
        .column_iter()
        .enumerate()
        .map(|(i, col)| {
            let axis: Vec<f64> = col.iter().copied().collect();
            build_filter(&axis, scheme, DEFAULT_WINDOW).map_err(|e| e.on_branch(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterBank { filters, scheme })
}

impl FilterBank {
    pub fn filters(&self) -> &[FilterMatrix] {
        &self.filters
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn rank(&self) -> usize {
        self.filters.len()
    }

    pub fn samples(&self) -> usize {
        self.filters.first().map_or(0, FilterMatrix::len)
    }

    /// Column-wise filtering: column `i` of the result is `F_i g_i`.
    pub fn apply(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("bank input columns", self.rank(), g.ncols())?;
        check_dim("bank input rows", self.samples(), g.nrows())?;
        let mut out = DMatrix::zeros(g.nrows(), g.ncols());
        for (i, f) in self.filters.iter().enumerate() {
            let col: Vec<f64> = g.column(i).iter().copied().collect();
            out.set_column(i, &nalgebra::DVector::from_vec(f.apply(&col)?));
        }
        Ok(out)
    }

    /// `blkdiag(F_1, …, F_r)`, acting on `vec(G)`.
    pub fn to_block_diagonal(&self) -> DMatrix<f64> {
        let n = self.samples();
        let r = self.rank();
        let mut out = DMatrix::zeros(n * r, n * r);
        for (i, f) in self.filters.iter().enumerate() {
            out.view_mut((i * n, i * n), (n, n))
                .copy_from(&f.to_dense());
        }
        out
    }
}

pub(crate) fn rms<T: Real>(h: &[T]) -> T {
    let mut acc = T::zero();
    for &x in h {
        acc += x * x;
    }
    (acc / T::from_f64(h.len() as f64)).sqrt()
}

/// `h_L/rms(h_L) − h_R/rms(h_R)`; all zeros when either estimate vanishes.
pub(crate) fn normalized_difference<T: Real>(hl: &[T], hr: &[T]) -> Vec<T> {
    let (rl, rr) = (rms(hl), rms(hr));
    if rl.value() == 0.0 || rr.value() == 0.0 {
        return vec![T::zero(); hl.len()];
    }
    hl.iter().zip(hr).map(|(&a, &b)| a / rl - b / rr).collect()
}

/// Per-branch normalized left/right discrepancy.
#[derive(Clone, Debug, PartialEq)]
pub struct Penalty {
    pub per_branch: Vec<f64>,
    /// Branches whose filtered samples vanish up to rounding (constant `g_i`).
    pub degenerate: Vec<usize>,
}

impl Penalty {
    pub fn total(&self) -> f64 {
        self.per_branch.iter().sum()
    }
}

/// `Σ_i ‖h_Li / rms(h_Li) − h_Ri / rms(h_Ri)‖²` with `h_·i = F_·i g_i`.
pub fn smoothness_penalty(
    bank_l: &FilterBank,
    bank_r: &FilterBank,
    g: &DMatrix<f64>,
) -> Result<f64> {
    Ok(smoothness_penalty_detail(bank_l, bank_r, g)?.total())
}

pub fn smoothness_penalty_detail(
    bank_l: &FilterBank,
    bank_r: &FilterBank,
    g: &DMatrix<f64>,
) -> Result<Penalty> {
    check_dim("penalty banks", bank_l.rank(), bank_r.rank())?;
    let hl = bank_l.apply(g)?;
    let hr = bank_r.apply(g)?;
    let mut per_branch = Vec::with_capacity(g.ncols());
    let mut degenerate = Vec::new();
    for i in 0..g.ncols() {
        let a: Vec<f64> = hl.column(i).iter().copied().collect();
        let b: Vec<f64> = hr.column(i).iter().copied().collect();
        let gmax = g.column(i).amax();
        if rms(&a) <= roundoff_level(&bank_l.filters()[i], gmax)
            || rms(&b) <= roundoff_level(&bank_r.filters()[i], gmax)
        {
            degenerate.push(i);
            per_branch.push(0.0);
            continue;
        }
        per_branch.push(normalized_difference(&a, &b).iter().map(|d| d * d).sum());
    }
    Ok(Penalty {
        per_branch,
        degenerate,
    })
}

/// Size of the rounding error in `F g` for `|g| ≤ gmax`; filtered samples
/// below it carry no derivative information.
fn roundoff_level(f: &FilterMatrix, gmax: f64) -> f64 {
    let widest = (0..f.len())
        .map(|l| f.row(l).1.iter().map(|w| w.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    64.0 * f64::EPSILON * widest * gmax
}

/// Normalized left/right penalty of `g` on precomputed axes `z` (`N × r`).
pub fn axis_penalty(z: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let left = build_filter_bank_on_axes(z, Scheme::Left)?;
    let right = build_filter_bank_on_axes(z, Scheme::Right)?;
    smoothness_penalty(&left, &right, g)
}

/// Column-wise [`integrate`]: branch samples from derivative samples.
pub fn integrate_columns(z: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("integrand columns", z.ncols(), h.ncols())?;
    check_dim("integrand rows", z.nrows(), h.nrows())?;
    let mut g = DMatrix::zeros(h.nrows(), h.ncols());
    for i in 0..h.ncols() {
        let zi: Vec<f64> = z.column(i).iter().copied().collect();
        let hi: Vec<f64> = h.column(i).iter().copied().collect();
        g.set_column(i, &nalgebra::DVector::from_vec(integrate(&zi, &hi)?));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn symmetric_window_weights() {
        let w = lagrange_weights(&[-1.0, 0.0, 1.0], 1).unwrap();
        assert!(close(&w, &[-0.5, 0.0, 0.5], 1e-15));
    }

    #[test]
    fn skewed_window_weights() {
        let w = lagrange_weights(&[0.0, 1.0, 3.0], 1).unwrap();
        assert!(close(&w, &[-2.0 / 3.0, 0.5, 1.0 / 6.0], 1e-15));
    }

    #[test]
    fn coincident_window_is_degenerate() {
        let err = lagrange_weights(&[0.0, 1.0, 1.0], 0).unwrap_err();
        assert!(matches!(
            err,
            Error::DegenerateAxis {
                first: 1,
                second: 2,
                ..
            }
        ));
        assert!(lagrange_weights(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn boundary_rows_use_nearest_window() {
        let z = [0.0, 1.0, 3.0, 4.0, 6.0];
        let c = Stencil::new(&z, Scheme::Central, 3).unwrap();
        assert_eq!(c.starts(), &[0, 0, 1, 2, 2]);
        let l = Stencil::new(&z, Scheme::Left, 3).unwrap();
        assert_eq!(l.starts(), &[0, 0, 0, 1, 2]);
        let r = Stencil::new(&z, Scheme::Right, 3).unwrap();
        assert_eq!(r.starts(), &[0, 1, 2, 2, 2]);
    }

    #[test]
    fn central_row_matches_window_weights() {
        let f = build_filter(&[0.0, 1.0, 3.0, 4.0], Scheme::Central, 3).unwrap();
        let (start, w) = f.row(1);
        assert_eq!(start, 0);
        assert!(close(w, &[-2.0 / 3.0, 0.5, 1.0 / 6.0], 1e-15));
    }

    #[test]
    fn sorted_axis_gives_identity_permutation() {
        let f = build_filter(&[0.0, 0.3, 0.4, 1.0], Scheme::Central, 3).unwrap();
        assert_eq!(f.permutation(), &[0, 1, 2, 3]);
    }

    #[test]
    fn equidistant_central_on_quadratic() {
        let z: Vec<f64> = (0..11).map(|i| i as f64 * 0.1 - 0.5).collect();
        let g: Vec<f64> = z.iter().map(|x| x * x).collect();
        let f = build_filter(&z, Scheme::Central, 3).unwrap();
        let h = f.apply(&g).unwrap();
        let expected: Vec<f64> = z.iter().map(|x| 2.0 * x).collect();
        assert!(close(&h, &expected, 1e-10));
    }

    #[test]
    fn duplicate_axis_and_short_axis_rejected() {
        assert!(matches!(
            build_filter(&[0.0, 2.0, 1.0, 2.0], Scheme::Central, 3),
            Err(Error::DegenerateAxis {
                first: 1,
                second: 3,
                ..
            })
        ));
        assert!(matches!(
            build_filter(&[0.0, 1.0], Scheme::Central, 3),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn transpose_matches_dense() {
        let z = [0.3, -0.2, 0.9, 0.1, 0.5, -0.7];
        let f = build_filter(&z, Scheme::Left, 3).unwrap();
        let y = [1.0, 2.0, -1.0, 0.5, 0.25, 3.0];
        let dense = f.to_dense().transpose() * nalgebra::DVector::from_row_slice(&y);
        assert!(close(
            &f.apply_transpose(&y).unwrap(),
            dense.as_slice(),
            1e-12
        ));
    }

    #[test]
    fn forward_two_point_is_plain_difference() {
        let z = [0.0, 0.5, 1.5];
        let f = FilterMatrix::forward_two_point(&z).unwrap();
        let h = f.apply(&[1.0, 2.0, 2.5]).unwrap();
        assert!(close(&h, &[2.0, 0.5, 0.5], 1e-14));
    }

    #[test]
    fn penalty_of_constant_branch_is_zero() {
        let z = DMatrix::from_column_slice(5, 1, &[0.0, 0.2, 0.5, 0.6, 1.0]);
        let l = build_filter_bank_on_axes(&z, Scheme::Left).unwrap();
        let r = build_filter_bank_on_axes(&z, Scheme::Right).unwrap();
        let g = DMatrix::from_element(5, 1, 4.0);
        let p = smoothness_penalty_detail(&l, &r, &g).unwrap();
        assert_eq!(p.total(), 0.0);
        assert_eq!(p.degenerate, vec![0]);
    }
}
