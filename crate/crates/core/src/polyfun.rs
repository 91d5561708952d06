//! Coupled multivariate polynomials in the monomial basis, their analytic
//! Jacobians, operating-point sampling and the Jacobian tensor.

use std::cmp::Reverse;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::tensor3::Tensor3;

/// One monomial `∏_j p_j^{e_j}` with a coefficient per output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub exponents: Vec<u32>,
    pub coeffs: Vec<f64>,
}

impl Term {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    fn monomial(&self, p: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(p)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

#[derive(Serialize, Deserialize)]
struct FunctionFile {
    m: usize,
    n: usize,
    terms: Vec<Term>,
}

/// A polynomial map `f: ℝᵐ → ℝⁿ`.
///
/// Terms are kept sorted by total degree and then by descending exponent
/// vector, so two functions with the same monomials compare equal term by
/// term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FunctionFile", into = "FunctionFile")]
pub struct MonomialFunction {
    input_dim: usize,
    output_dim: usize,
    terms: Vec<Term>,
}

impl TryFrom<FunctionFile> for MonomialFunction {
    type Error = Error;

    fn try_from(file: FunctionFile) -> Result<Self> {
        MonomialFunction::new(file.m, file.n, file.terms)
    }
}

impl From<MonomialFunction> for FunctionFile {
    fn from(f: MonomialFunction) -> Self {
        FunctionFile {
            m: f.input_dim,
            n: f.output_dim,
            terms: f.terms,
        }
    }
}

impl MonomialFunction {
    pub fn new(m: usize, n: usize, mut terms: Vec<Term>) -> Result<Self> {
        if m == 0 {
            return Err(Error::validation("m", "input dimension must be positive"));
        }
        if n == 0 {
            return Err(Error::validation("n", "output dimension must be positive"));
        }
        if terms.is_empty() {
            return Err(Error::validation("terms", "at least one term is required"));
        }
        for (t, term) in terms.iter().enumerate() {
            if term.exponents.len() != m {
                return Err(Error::validation(
                    format!("terms[{t}].exponents"),
                    format!("expected {m} exponents, got {}", term.exponents.len()),
                ));
            }
            if term.coeffs.len() != n {
                return Err(Error::validation(
                    format!("terms[{t}].coeffs"),
                    format!("expected {n} coefficients, got {}", term.coeffs.len()),
                ));
            }
            if term.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::validation(
                    format!("terms[{t}].coeffs"),
                    "coefficients must be finite",
                ));
            }
        }
        terms.sort_by(|a, b| {
            (a.degree(), Reverse(&a.exponents)).cmp(&(b.degree(), Reverse(&b.exponents)))
        });
        if let Some(w) = terms.windows(2).find(|w| w[0].exponents == w[1].exponents) {
            return Err(Error::validation(
                "terms",
                format!("duplicate exponent vector {:?}", w[0].exponents),
            ));
        }
        Ok(MonomialFunction {
            input_dim: m,
            output_dim: n,
            terms,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: FunctionFile = serde_json::from_str(s).map_err(Error::from_json)?;
        Self::try_from(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Largest absolute coefficient, used as the function's scale.
    pub fn coefficient_norm(&self) -> f64 {
        self.terms
            .iter()
            .flat_map(|t| t.coeffs.iter())
            .fold(0.0_f64, |acc, c| acc.max(c.abs()))
    }

    /// Multiply every coefficient by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                exponents: t.exponents.clone(),
                coeffs: t.coeffs.iter().map(|c| c * alpha).collect(),
            })
            .collect();
        MonomialFunction {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            terms,
        }
    }

    pub fn eval(&self, p: &[f64]) -> Result<DVector<f64>> {
        check_dim("eval_poly input", self.input_dim, p.len())?;
        let mut q = DVector::zeros(self.output_dim);
        for term in &self.terms {
            let mono = term.monomial(p);
            for (qi, c) in q.iter_mut().zip(&term.coeffs) {
                *qi += c * mono;
            }
        }
        Ok(q)
    }

    /// Analytic Jacobian `∂f_i/∂p_j` by exponent reduction.
    pub fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("eval_jacobian input", self.input_dim, p.len())?;
        let mut jac = DMatrix::zeros(self.output_dim, self.input_dim);
        for term in &self.terms {
            for j in 0..self.input_dim {
                let e = term.exponents[j];
                if e == 0 {
                    continue;
                }
                let mut d = e as f64;
                for (k, (&ek, &pk)) in term.exponents.iter().zip(p).enumerate() {
                    let power = if k == j { ek - 1 } else { ek };
                    d *= pk.powi(power as i32);
                }
                for (i, c) in term.coeffs.iter().enumerate() {
                    jac[(i, j)] += c * d;
                }
            }
        }
        Ok(jac)
    }
}

/// A set of operating points stored column-wise as an `m × N` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatingPointSet {
    points: DMatrix<f64>,
    bounds: (f64, f64),
    seed: Option<u64>,
}

impl OperatingPointSet {
    /// Wrap an explicit point matrix; every entry must lie inside `bounds`.
    pub fn from_matrix(points: DMatrix<f64>, bounds: (f64, f64)) -> Result<Self> {
        if points.ncols() < 2 {
            return Err(Error::invalid("at least two operating points are required"));
        }
        if points.nrows() == 0 {
            return Err(Error::invalid(
                "operating points must have positive dimension",
            ));
        }
        let (lo, hi) = bounds;
        if !(lo < hi) {
            return Err(Error::invalid(format!("empty bounds ({lo}, {hi})")));
        }
        if let Some(x) = points.iter().find(|&&x| !(x >= lo && x <= hi)) {
            return Err(Error::invalid(format!(
                "point coordinate {x} outside bounds ({lo}, {hi})"
            )));
        }
        Ok(OperatingPointSet {
            points,
            bounds,
            seed: None,
        })
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        self.points.column(k).iter().copied().collect()
    }
}

/// Draw `n_points` points uniformly from the open box `(lo, hi)ᵐ`.
///
/// Exact duplicates are rejected and redrawn so that every projection of
/// the set onto a generic direction has distinct entries.
pub fn sample_points(
    m: usize,
    n_points: usize,
    bounds: (f64, f64),
    seed: u64,
) -> Result<OperatingPointSet> {
    if n_points < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 operating points, got {n_points}"
        )));
    }
    if m == 0 {
        return Err(Error::invalid("point dimension must be positive"));
    }
    let (lo, hi) = bounds;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("empty bounds ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = DMatrix::zeros(m, n_points);
    let mut k = 0;
    while k < n_points {
        for j in 0..m {
            points[(j, k)] = loop {
                let x = rng.random_range(lo..hi);
                if x > lo {
                    break x;
                }
            };
        }
        let duplicate = (0..k).any(|prev| points.column(prev) == points.column(k));
        if !duplicate {
            k += 1;
        }
    }
    Ok(OperatingPointSet {
        points,
        bounds,
        seed: Some(seed),
    })
}

/// The `n × m × N` stack of Jacobians of a function at a point set.
#[derive(Clone, Debug)]
pub struct JacobianTensor {
    tensor: Tensor3,
    points: OperatingPointSet,
}

impl JacobianTensor {
    pub fn tensor(&self) -> &Tensor3 {
        &self.tensor
    }

    pub fn points(&self) -> &OperatingPointSet {
        &self.points
    }

    pub fn into_parts(self) -> (Tensor3, OperatingPointSet) {
        (self.tensor, self.points)
    }
}

pub fn build_jacobian_tensor(
    f: &MonomialFunction,
    points: &OperatingPointSet,
) -> Result<JacobianTensor> {
    check_dim("jacobian tensor points", f.input_dim(), points.dim())?;
    let (n, m, big_n) = (f.output_dim(), f.input_dim(), points.len());
    let mut tensor = Tensor3::zeros(n, m, big_n)?;
    for l in 0..big_n {
        let jac = f.jacobian(&points.point(l))?;
        for k in 0..m {
            for j in 0..n {
                tensor[(j, k, l)] = jac[(j, k)];
            }
        }
    }
    Ok(JacobianTensor {
        tensor,
        points: points.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> MonomialFunction {
        crate::fixtures::toy_coupled()
    }

    #[test]
    fn toy_values_at_unit_points() {
        let f = toy();
        assert_eq!(f.eval(&[0.0, 0.0]).unwrap().as_slice(), &[0.0, 0.0]);
        let q = f.eval(&[1.0, 0.0]).unwrap();
        assert!((q[0] - 35.125).abs() < 1e-12 && (q[1] - 130.125).abs() < 1e-12);
        let q = f.eval(&[0.0, 1.0]).unwrap();
        assert!((q[0] + 22.5).abs() < 1e-12 && (q[1] - 178.0).abs() < 1e-12);
    }

    #[test]
    fn toy_jacobian() {
        let f = toy();
        assert_eq!(f.jacobian(&[0.0, 0.0]).unwrap(), DMatrix::zeros(2, 2));
        let jac = f.jacobian(&[1.0, 0.0]).unwrap();
        assert!((jac[(0, 0)] - 100.125).abs() < 1e-12);
        assert!((jac[(0, 1)] - 42.75).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let f = toy();
        assert!(matches!(f.eval(&[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(
            f.jacobian(&[1.0, 2.0, 3.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn rejects_duplicate_exponents() {
        let terms = vec![
            Term {
                exponents: vec![1, 0],
                coeffs: vec![1.0],
            },
            Term {
                exponents: vec![1, 0],
                coeffs: vec![2.0],
            },
        ];
        assert!(MonomialFunction::new(2, 1, terms).is_err());
        assert!(MonomialFunction::new(2, 1, vec![]).is_err());
    }

    #[test]
    fn canonical_order_makes_equality_decidable() {
        let a = Term {
            exponents: vec![2, 0],
            coeffs: vec![1.0],
        };
        let b = Term {
            exponents: vec![0, 1],
            coeffs: vec![3.0],
        };
        let f1 = MonomialFunction::new(2, 1, vec![a.clone(), b.clone()]).unwrap();
        let f2 = MonomialFunction::new(2, 1, vec![b, a]).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let a = sample_points(2, 100, (-1.5, 1.5), 7).unwrap();
        let b = sample_points(2, 100, (-1.5, 1.5), 7).unwrap();
        assert_eq!(a, b);
        assert!(a.points().iter().all(|&x| x > -1.5 && x < 1.5));
        assert_eq!(a.points().len(), 200);
        assert!(sample_points(2, 1, (0.0, 1.0), 0).is_err());
        assert!(sample_points(2, 5, (1.0, 1.0), 0).is_err());
    }

    #[test]
    fn sampled_scalars_are_distinct() {
        for seed in 0..20 {
            let p = sample_points(1, 3, (0.0, 1.0), seed).unwrap();
            let v = p.points();
            assert!(v[0] != v[1] && v[1] != v[2] && v[0] != v[2]);
        }
    }

    #[test]
    fn linear_function_gives_constant_slices() {
        let f = MonomialFunction::new(
            2,
            2,
            vec![
                Term {
                    exponents: vec![1, 0],
                    coeffs: vec![1.0, -2.0],
                },
                Term {
                    exponents: vec![0, 1],
                    coeffs: vec![0.5, 4.0],
                },
            ],
        )
        .unwrap();
        let pts = sample_points(2, 10, (-1.0, 1.0), 3).unwrap();
        let jt = build_jacobian_tensor(&f, &pts).unwrap();
        let t = jt.tensor();
        for l in 1..10 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(t[(j, k, l)], t[(j, k, 0)]);
                }
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let f = toy();
        let text = f.to_json_string().unwrap();
        assert_eq!(MonomialFunction::from_json_str(&text).unwrap(), f);
        let bad = r#"{"m": 2, "n": 1, "terms": [{"exponents": [1], "coeffs": [1.0]}]}"#;
        let err = MonomialFunction::from_json_str(bad).unwrap_err();
        assert!(err.to_string().contains("exponents"));
    }
}
