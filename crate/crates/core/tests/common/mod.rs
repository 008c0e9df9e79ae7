//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the crate's numerical code.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn random_dense(rng: &mut StdRng, m: usize, n: usize) -> Dense {
    (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn gram(a: &Dense) -> Dense {
    let n = a[0].len();
    let mut g = vec![vec![0.0; n]; n];
    for row in a {
        for i in 0..n {
            for j in 0..n {
                g[i][j] += row[i] * row[j];
            }
        }
    }
    g
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations,
/// sorted descending.
pub fn symmetric_eigenvalues(mut a: Dense) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Singular values from the eigenvalues of `AᵀA` (or `AAᵀ` when wide).
pub fn oracle_singular_values(a: &Dense) -> Vec<f64> {
    let m = a.len();
    let n = a[0].len();
    let g = if m >= n { gram(a) } else { gram(&transpose(a)) };
    symmetric_eigenvalues(g)
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let m = a.len();
    let n = a[0].len();
    (0..n).map(|j| (0..m).map(|i| a[i][j]).collect()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let k = b.len();
    let n = b[0].len();
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| (0..k).map(|l| row[l] * b[l][j]).sum())
                .collect()
        })
        .collect()
}

pub fn frobenius_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)))
        .sum::<f64>()
        .sqrt()
}

/// Orthonormal basis (as columns, `m x k`) of the span of the columns of `x`,
/// by modified Gram–Schmidt. Columns that collapse are dropped.
pub fn orthonormal_columns(x: &Dense) -> Dense {
    let m = x.len();
    let k = x[0].len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..k {
        let mut v: Vec<f64> = (0..m).map(|i| x[i][j]).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(p, q)| p * q).sum();
            v.iter_mut().zip(b).for_each(|(p, q)| *p -= d * q);
        }
        let norm = v.iter().map(|p| p * p).sum::<f64>().sqrt();
        if norm > 1e-10 {
            basis.push(v.into_iter().map(|p| p / norm).collect());
        }
    }
    (0..m)
        .map(|i| basis.iter().map(|b| b[i]).collect())
        .collect()
}

/// `Q Qᵀ A`: the best approximation of `a` whose columns lie in span(`q`).
pub fn project_columns(q: &Dense, a: &Dense) -> Dense {
    let qt_a = matmul(&transpose(q), a);
    matmul(q, &qt_a)
}

/// Mean SSIM over every window position, each window computed directly from
/// its 11x11 Gaussian weights.
pub fn naive_ssim(a: &Dense, b: &Dense, peak: f64) -> f64 {
    const W: usize = 11;
    let sigma = 1.5f64;
    let mut w = [[0.0f64; W]; W];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let di = i as f64 - 5.0;
            let dj = j as f64 - 5.0;
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let rows = a.len();
    let cols = a[0].len();
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..=rows - W {
        for c in 0..=cols - W {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..W {
                for j in 0..W {
                    let wt = w[i][j] / total;
                    ma += wt * a[r + i][c + j];
                    mb += wt * b[r + i][c + j];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..W {
                for j in 0..W {
                    let wt = w[i][j] / total;
                    let da = a[r + i][c + j] - ma;
                    let db = b[r + i][c + j] - mb;
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// The natural-image set used for the quality criteria: `KODAK_DIR` when it
/// is set, otherwise the bundled public-domain photographs.
pub fn natural_image_dir() -> (PathBuf, &'static str) {
    match std::env::var_os("KODAK_DIR") {
        Some(d) => (PathBuf::from(d), "KODAK_DIR"),
        None => (
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/natural"),
            "bundled public-domain proxies",
        ),
    }
}
