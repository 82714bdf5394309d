// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::vec;
use alloc::vec::Vec;

use super::Mat;
use crate::error::{invalid, Result};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as columns.
pub fn symmetric_eigen(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = a.rows;
    if a.cols != n {
        return Err(invalid!("eigen of non-square {}x{}", a.rows, a.cols));
    }
    let mut m = a.clone();
    let mut vecs = Mat::zeros(n, n);
    for i in 0..n {
        vecs.set(i, i, 1.0);
    }
    let scale: f64 = m.data.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j) * m.get(i, j))
            .sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 { 1.0 } else { -1.0 }
                    / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = vecs.get(k, p);
                    let vkq = vecs.get(k, q);
                    vecs.set(k, p, c * vkp - s * vkq);
                    vecs.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut sorted = Mat::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            sorted.set(k, new, vecs.get(k, old));
        }
    }
    Ok((values, sorted))
}

/// Above this dimension the covariance is never formed; the leading axes
/// come from block power iteration instead.
const DENSE_LIMIT: usize = 64;

/// Top-`k` eigenpairs of `x^T x / n` by orthogonal iteration with a
/// Rayleigh-Ritz rotation, touching `x` only through products.
fn subspace_eigen(x: &Mat, k: usize) -> Result<(Vec<f64>, Mat)> {
    let (n, d) = (x.rows, x.cols);
    let b = (k + 2).min(d);
    let mut q = Mat::zeros(d, b);
    for r in 0..d {
        for c in 0..b {
            // fixed, well-spread start so results are reproducible
            let v = libm::sin((r * (c + 1) + c) as f64 * 0.618_033_988_75 + 0.5 * c as f64);
            q.set(r, c, v + if r % b == c { 1.0 } else { 0.0 });
        }
    }
    orthonormalize(&mut q);
    let mut prev = vec![f64::INFINITY; b];
    for _ in 0..2000 {
        let xq = x.matmul(&q)?;
        let mut cq = x.transpose().matmul(&xq)?;
        cq.data.iter_mut().for_each(|v| *v /= n as f64);
        let small = q.transpose().matmul(&cq)?;
        let (ritz, _) = symmetric_eigen(&small)?;
        q = cq;
        orthonormalize(&mut q);
        let scale = ritz[0].abs().max(f64::MIN_POSITIVE);
        let settled = ritz.iter().zip(&prev).take(k).all(|(a, p)| (a - p).abs() <= 1e-14 * scale);
        if settled {
            break;
        }
        prev.clone_from(&ritz);
    }
    let xq = x.matmul(&q)?;
    let mut small = xq.transpose().matmul(&xq)?;
    small.data.iter_mut().for_each(|v| *v /= n as f64);
    let (ritz, rot) = symmetric_eigen(&small)?;
    let axes = q.matmul(&rot)?;
    Ok((ritz, axes))
}

/// Modified Gram-Schmidt on the columns of `q`.
fn orthonormalize(q: &mut Mat) {
    let (d, b) = (q.rows, q.cols);
    for c in 0..b {
        for prev in 0..c {
            let proj: f64 = (0..d).map(|r| q.get(r, c) * q.get(r, prev)).sum();
            for r in 0..d {
                let v = q.get(r, c) - proj * q.get(r, prev);
                q.set(r, c, v);
            }
        }
        let norm = libm::sqrt((0..d).map(|r| q.get(r, c) * q.get(r, c)).sum::<f64>());
        if norm > 0.0 {
            for r in 0..d {
                let v = q.get(r, c) / norm;
                q.set(r, c, v);
            }
        }
    }
}

/// Fitted principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d x k`, one unit axis per column.
    pub axes: Mat,
    /// Variance explained by each axis (population covariance).
    pub explained: Vec<f64>,
    /// Projected data, `n x k`.
    pub projection: Mat,
}

/// Project mean-centred rows of `x` onto the top-`k` principal axes.
///
/// Axis signs are fixed so the largest-magnitude loading is positive.
pub fn pca_project(x: &Mat, k: usize) -> Result<Pca> {
    let (n, d) = (x.rows, x.cols);
    if n < 2 {
        return Err(invalid!("pca needs at least 2 rows, got {n}"));
    }
    if k > n.min(d) {
        return Err(invalid!("pca k={k} exceeds min(n={n}, d={d})"));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centred = x.clone();
    for r in 0..n {
        for (v, m) in centred.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let (values, vecs) = if d <= DENSE_LIMIT {
        let mut cov = centred.transpose().matmul(&centred)?;
        cov.data.iter_mut().for_each(|c| *c /= n as f64);
        symmetric_eigen(&cov)?
    } else {
        subspace_eigen(&centred, k)?
    };
    let mut axes = Mat::zeros(d, k);
    for c in 0..k {
        let mut best = 0;
        for r in 0..d {
            if vecs.get(r, c).abs() > vecs.get(best, c).abs() + 1e-12 {
                best = r;
            }
        }
        let sign = if vecs.get(best, c) < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            axes.set(r, c, sign * vecs.get(r, c));
        }
    }
    let projection = centred.matmul(&axes)?;
    Ok(Pca { mean, axes, explained: values[..k].iter().map(|v| v.max(0.0)).collect(), projection })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{euclidean, Rng};

    fn pairwise(m: &Mat) -> Vec<f64> {
        let mut out = vec![];
        for i in 0..m.rows {
            for j in (i + 1)..m.rows {
                out.push(euclidean(m.row(i), m.row(j)));
            }
        }
        out
    }

    #[test]
    fn collinear_points_keep_distances() {
        let x = Mat::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 2.0], vec![3.0, 6.0, 6.0]]).unwrap();
        let p = pca_project(&x, 1).unwrap();
        for (a, b) in pairwise(&x).iter().zip(pairwise(&p.projection).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn planar_data_is_rotated() {
        let x = Mat::from_rows(&[vec![1.0, 0.5], vec![-1.0, 0.2], vec![0.3, -0.4], vec![-0.3, -0.3]]).unwrap();
        let p = pca_project(&x, 2).unwrap();
        for (a, b) in pairwise(&x).iter().zip(pairwise(&p.projection).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Power iteration with deflation, independent of the Jacobi path.
    fn power_eigenvalues(a: &Mat, k: usize) -> Vec<f64> {
        let n = a.rows;
        let mut m = a.clone();
        let mut out = vec![];
        for _ in 0..k {
            let mut v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
            let mut lambda = 0.0;
            for _ in 0..5000 {
                let mut w = vec![0.0; n];
                for i in 0..n {
                    w[i] = (0..n).map(|j| m.get(i, j) * v[j]).sum();
                }
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                lambda = (0..n).map(|i| v[i] * w[i]).sum();
                v = w.iter().map(|x| x / norm).collect();
            }
            out.push(lambda);
            for i in 0..n {
                for j in 0..n {
                    let val = m.get(i, j) - lambda * v[i] * v[j];
                    m.set(i, j, val);
                }
            }
        }
        out
    }

    #[test]
    fn explained_variance_matches_power_iteration() {
        let mut rng = Rng::new(11);
        let x = Mat::from_vec(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap();
        let p = pca_project(&x, 2).unwrap();
        let mut c = x.clone();
        for col in 0..4 {
            let mean: f64 = (0..5).map(|r| x.get(r, col)).sum::<f64>() / 5.0;
            for r in 0..5 {
                c.set(r, col, x.get(r, col) - mean);
            }
        }
        let mut cov = c.transpose().matmul(&c).unwrap();
        cov.data.iter_mut().for_each(|v| *v /= 5.0);
        let oracle = power_eigenvalues(&cov, 2);
        for (a, b) in p.explained.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn reconstruction_error_non_increasing_in_k() {
        let mut rng = Rng::new(3);
        let x = Mat::from_vec(8, 5, (0..40).map(|_| rng.normal()).collect()).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=5 {
            let p = pca_project(&x, k).unwrap();
            let mut err = 0.0;
            for r in 0..8 {
                for c in 0..5 {
                    let mut rec = p.mean[c];
                    for a in 0..k {
                        rec += p.projection.get(r, a) * p.axes.get(c, a);
                    }
                    err += (rec - x.get(r, c)).powi(2);
                }
            }
            assert!(err <= prev + 1e-9);
            prev = err;
        }
        assert!(prev < 1e-18);
    }

    #[test]
    fn wide_data_matches_dense_path() {
        let mut rng = Rng::new(5);
        // three strong directions plus noise, 90 dims
        let dirs: Vec<Vec<f64>> = (0..3).map(|_| (0..90).map(|_| rng.normal()).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let a = [3.0 * rng.normal(), 2.0 * rng.normal(), rng.normal()];
                (0..90).map(|j| a[0] * dirs[0][j] + a[1] * dirs[1][j] + a[2] * dirs[2][j] + 0.05 * rng.normal()).collect()
            })
            .collect();
        let x = Mat::from_rows(&rows).unwrap();
        let p = pca_project(&x, 2).unwrap();
        // dense reference on the explicit covariance
        let mut c = x.clone();
        for r in 0..40 {
            for (v, m) in c.row_mut(r).iter_mut().zip(&p.mean) {
                *v -= m;
            }
        }
        let mut cov = c.transpose().matmul(&c).unwrap();
        cov.data.iter_mut().for_each(|v| *v /= 40.0);
        let (vals, vecs) = symmetric_eigen(&cov).unwrap();
        for a in 0..2 {
            assert!((p.explained[a] - vals[a]).abs() < 1e-8 * vals[0]);
            let dotp: f64 = (0..90).map(|r| p.axes.get(r, a) * vecs.get(r, a)).sum();
            assert!((dotp.abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn sign_convention_and_errors() {
        let x = Mat::from_rows(&[vec![0.0, 0.0], vec![-2.0, -1.0], vec![2.0, 1.0]]).unwrap();
        let p = pca_project(&x, 1).unwrap();
        assert!(p.axes.get(0, 0) > 0.0);
        assert!(pca_project(&x, 3).is_err());
        assert!(pca_project(&Mat::from_rows(&[vec![1.0]]).unwrap(), 1).is_err());
    }
}
