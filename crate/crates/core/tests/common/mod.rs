#![allow(dead_code)]

use fcpd::findiff::{build_filter, Scheme, DEFAULT_WINDOW};
use fcpd::{khatri_rao, DMatrix, FactorSet, OperatingPointSet, Polynomial, Tensor3, ThirdFactor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_points(rng: &mut ChaCha8Rng, m: usize, n_points: usize) -> OperatingPointSet {
    OperatingPointSet::from_matrix(random_matrix(rng, m, n_points), (-1.0, 1.0)).unwrap()
}

/// Sorted axis with uneven spacing.
pub fn random_axis(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(len);
    let mut x = rng.random_range(-2.0..0.0);
    for _ in 0..len {
        x += rng.random_range(0.05..0.5);
        z.push(x);
    }
    z
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}

/// A tensor that decouples exactly into `r` random cubic branches, with
/// the factors that generate it (`G` holds the branch values).
pub struct Planted {
    pub tensor: Tensor3,
    pub points: OperatingPointSet,
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub branches: Vec<Polynomial>,
}

pub fn planted(seed: u64, n: usize, m: usize, r: usize, big_n: usize) -> Planted {
    let mut rng = rng(seed);
    let w = random_matrix(&mut rng, n, r);
    let v = random_matrix(&mut rng, m, r);
    let points = random_points(&mut rng, m, big_n);
    let branches: Vec<Polynomial> = (0..r)
        .map(|_| Polynomial::new((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let z = points.points().transpose() * &v;
    let g = DMatrix::from_fn(big_n, r, |l, i| branches[i].eval(z[(l, i)]));
    let h = DMatrix::from_fn(big_n, r, |l, i| derivative(&branches[i]).eval(z[(l, i)]));
    let f = FactorSet::new(w.clone(), v.clone(), h, ThirdFactor::Derivative).unwrap();
    Planted {
        tensor: fcpd::reconstruct(&f),
        points,
        w,
        v,
        g,
        branches,
    }
}

pub fn derivative(p: &Polynomial) -> Polynomial {
    Polynomial::new(
        p.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect(),
    )
}

pub fn add_noise(t: &mut Tensor3, rng: &mut ChaCha8Rng, relative: f64) {
    let (n, m, big_n) = t.shape();
    let scale = relative * t.frobenius_norm() / ((n * m * big_n) as f64).sqrt();
    for l in 0..big_n {
        for k in 0..m {
            for j in 0..n {
                t[(j, k, l)] += scale * rng.random_range(-1.0..1.0) * 3f64.sqrt();
            }
        }
    }
}

pub fn dense_filters(z: &DMatrix<f64>, scheme: Scheme) -> Vec<DMatrix<f64>> {
    z.column_iter()
        .map(|c| {
            let axis: Vec<f64> = c.iter().copied().collect();
            build_filter(&axis, scheme, DEFAULT_WINDOW)
                .unwrap()
                .to_dense()
        })
        .collect()
}

pub fn rms(x: &fcpd::DVector<f64>) -> f64 {
    (x.norm_squared() / x.len() as f64).sqrt()
}

/// Minimum-norm least-squares `G` of the stacked system, assembled entry by
/// entry and solved through a dense SVD.
pub fn dense_g_oracle(
    j3: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    z: &DMatrix<f64>,
    lambda: f64,
    g_ref: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (big_n, r) = z.shape();
    let nm = w.nrows() * v.nrows();
    let fc = dense_filters(z, Scheme::Central);
    let fl = dense_filters(z, Scheme::Left);
    let fr = dense_filters(z, Scheme::Right);
    let kr = khatri_rao(v, w).unwrap();
    let mut k = DMatrix::zeros(nm * big_n + r * big_n, r * big_n);
    for i in 0..r {
        let gi = g_ref.column(i).into_owned();
        let (rho_l, rho_r) = (rms(&(&fl[i] * &gi)), rms(&(&fr[i] * &gi)));
        let (sl, sr) = if rho_l > 0.0 && rho_r > 0.0 {
            (1.0 / rho_l, 1.0 / rho_r)
        } else {
            (0.0, 0.0)
        };
        for l in 0..big_n {
            for l2 in 0..big_n {
                for c in 0..nm {
                    k[(c * big_n + l, i * big_n + l2)] = kr[(c, i)] * fc[i][(l, l2)];
                }
                k[(nm * big_n + i * big_n + l, i * big_n + l2)] =
                    lambda * (fl[i][(l, l2)] * sl - fr[i][(l, l2)] * sr);
            }
        }
    }
    let mut b = DMatrix::zeros(k.nrows(), 1);
    b.rows_mut(0, j3.len()).copy_from_slice(j3.as_slice());
    let x = k
        .clone()
        .svd(true, true)
        .solve(&b, 1e-10 * k.norm())
        .unwrap();
    (DMatrix::from_column_slice(big_n, r, x.as_slice()), k)
}

pub fn stacked_residual(k: &DMatrix<f64>, j3: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let mut b = DMatrix::zeros(k.nrows(), 1);
    b.rows_mut(0, j3.len()).copy_from_slice(j3.as_slice());
    (k * DMatrix::from_column_slice(g.len(), 1, g.as_slice()) - b).norm()
}
