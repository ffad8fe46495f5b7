//! Independent oracles for the integration and acceptance tests. Nothing here
//! calls into the linear algebra of the crate under test.
#![allow(dead_code)]

use crossfit::basis::Dictionary;
use crossfit::data::Dataset;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, p);
    for i in 0..n {
        for k in 0..m {
            let aik = a[i][k];
            for j in 0..p {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn matvec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(u, v)| u * v).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: `(values, vectors)`
/// with eigenvectors in the columns.
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut a = a.clone();
    let mut v = zeros(n, n);
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Moore–Penrose inverse of a symmetric PSD matrix from the Jacobi oracle.
pub fn oracle_pinv(a: &Mat, rel_tol: f64) -> Mat {
    let n = a.len();
    let (vals, vecs) = jacobi_eigen(a);
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let mut out = zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        if top <= 0.0 || lam < rel_tol * top {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[i][j] += vecs[i][k] * vecs[j][k] / lam;
            }
        }
    }
    out
}

/// Dense design rows `p(x_i)`.
pub fn design(basis: &dyn Dictionary, data: &Dataset, idx: &[usize]) -> Mat {
    idx.iter().map(|&i| basis.eval(data.x(i)).unwrap()).collect()
}

/// `(1/n) Σ w_i p_i p_i'`.
pub fn oracle_gram(rows: &Mat, weights: Option<&[f64]>) -> Mat {
    let k = rows[0].len();
    let n = rows.len() as f64;
    let mut g = zeros(k, k);
    for (i, p) in rows.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        for a in 0..k {
            for b in 0..k {
                g[a][b] += w * p[a] * p[b] / n;
            }
        }
    }
    g
}

/// Least squares coefficients from the explicit normal equations.
pub fn oracle_regression(rows: &Mat, ys: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let n = rows.len() as f64;
    let g = oracle_gram(rows, None);
    let mut h = vec![0.0; k];
    for (p, y) in rows.iter().zip(ys) {
        for a in 0..k {
            h[a] += p[a] * y / n;
        }
    }
    matvec(&oracle_pinv(&g, 1e-10), &h)
}

/// Literal triple-loop HOIF estimate of the expected conditional covariance
/// with zero initial nuisances: `est` rows `(u_i, w_i, p_i)`, `sigma` the
/// training gram.
pub fn brute_hoif(u: &[f64], w: &[f64], p: &Mat, sigma: &Mat, q: usize) -> f64 {
    let n = u.len();
    let nf = n as f64;
    let k = sigma.len();
    let g = oracle_pinv(sigma, 1e-12);
    let gp: Mat = p.iter().map(|pi| matvec(&g, pi)).collect();
    let mut first = 0.0;
    for i in 0..n {
        first += u[i] * w[i];
    }
    first /= nf;
    let mut second = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                second += u[i] * dot(&p[i], &gp[j]) * w[j];
            }
        }
    }
    second /= nf * (nf - 1.0);
    let mut third = 0.0;
    if q == 1 && n >= 3 {
        for l in 0..n {
            // B(x_l) = G (p_l p_l' − Σ); middle = B(x_l) G
            let mut outer = zeros(k, k);
            for a in 0..k {
                for b in 0..k {
                    outer[a][b] = p[l][a] * p[l][b] - sigma[a][b];
                }
            }
            let middle = matmul(&matmul(&g, &outer), &g);
            for i in 0..n {
                if i == l {
                    continue;
                }
                let left = matvec(&middle, &p[i]);
                for j in 0..n {
                    if j == l || j == i {
                        continue;
                    }
                    // middle is symmetric, so p_i' M p_j = (M p_i)' p_j
                    third += u[i] * dot(&left, &p[j]) * w[j];
                }
            }
        }
        third /= nf * (nf - 1.0) * (nf - 2.0);
    }
    first - second + third
}

pub fn uniform_points<R: Rng>(rng: &mut R, n: usize, r: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..r).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// Random scalar-`a` dataset with covariates uniform on `[0,1]^r`.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, r: usize) -> Dataset {
    let rows: Vec<(f64, f64, Vec<f64>)> = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..r).map(|_| rng.gen::<f64>()).collect();
            let a = x[0] + rng.gen_range(-1.0..1.0);
            let y = (3.0 * x[0]).sin() + 0.5 * a + rng.gen_range(-1.0..1.0);
            (y, a, x)
        })
        .collect();
    Dataset::from_scalar(&rows).unwrap()
}

/// Random well-conditioned `k × k` matrix: identity plus a perturbation,
/// redrawn until its smallest singular value exceeds 0.2.
pub fn random_invertible<R: Rng>(rng: &mut R, k: usize) -> nalgebra::DMatrix<f64> {
    loop {
        let m = nalgebra::DMatrix::from_fn(k, k, |i, j| {
            let base = if i == j { 1.0 } else { 0.0 };
            base + 0.3 * rng.gen_range(-1.0..1.0)
        });
        if m.clone().svd(false, false).singular_values.min() > 0.2 {
            return m;
        }
    }
}
