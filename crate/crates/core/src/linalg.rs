//! Small dense factorizations: cyclic Jacobi for symmetric eigenproblems and
//! Householder QR.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues, sorted by decreasing absolute value (ties keep the
    /// larger signed value first).
    pub values: Vec<f64>,
    /// `n × n` matrix whose column `j` is the unit eigenvector of `values[j]`.
    pub vectors: Tensor,
}

impl SymmetricEigen {
    pub fn vector(&self, j: usize) -> Vec<f64> {
        let n = self.values.len();
        (0..n).map(|i| self.vectors.get2(i, j)).collect()
    }
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigensolver for a symmetric `n × n` matrix.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first. Fails with a numeric error
/// if the off-diagonal mass does not vanish within the sweep budget.
pub fn symmetric_eigen(a: &Tensor) -> Result<SymmetricEigen> {
    let (n, c) = a.require_matrix("symmetric_eigen")?;
    if n != c {
        return Err(Error::dim("symmetric_eigen", a.shape(), &[n, n]));
    }
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a.get2(i, j) + a.get2(j, i));
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = f64::EPSILON * frob.max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // A ← Jᵀ A J on rows/columns p and q
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = cs * akp - sn * akq;
                    m[k * n + q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = cs * apk - sn * aqk;
                    m[q * n + k] = sn * apk + cs * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = cs * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::numeric(format!("Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (m[i * n + i], m[j * n + j]);
        b.abs().total_cmp(&a.abs()).then(b.total_cmp(&a)).then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (new_j, &old_j) in order.iter().enumerate() {
        // deterministic sign: largest-magnitude entry positive
        let col: Vec<f64> = (0..n).map(|i| v[i * n + old_j]).collect();
        let lead = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, &x)| if x.abs() > bv.abs() { (i, x) } else { (bi, bv) })
            .1;
        let s = if lead < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vecs[i * n + new_j] = s * col[i];
        }
    }
    Ok(SymmetricEigen { values, vectors: Tensor::from_op(vec![n, n], vecs)? })
}

/// Thin QR factorization `M = Q R` of an `m × k` matrix with `m ≥ k`,
/// computed with Householder reflections.
#[derive(Clone, Debug)]
pub struct Qr {
    pub q: Tensor,
    pub r: Tensor,
}

/// Columns whose residual norm falls below this fraction of `‖M‖_F` are
/// treated as linearly dependent.
const RANK_TOL: f64 = 1e-12;

pub fn householder_qr(mat: &Tensor) -> Result<Qr> {
    let (m, k) = mat.require_matrix("householder_qr")?;
    if k > m {
        return Err(Error::contract(format!("QR needs rows ≥ columns, got {m}×{k}")));
    }
    let scale = mat.norm2();
    if scale == 0.0 {
        return Err(Error::numeric("rank-deficient matrix: column 0 is zero"));
    }
    let mut a = mat.data().to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);

    for j in 0..k {
        let x: Vec<f64> = (j..m).map(|i| a[i * k + j]).collect();
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if xn <= RANK_TOL * scale {
            return Err(Error::numeric(format!("rank-deficient matrix: column {j} is linearly dependent")));
        }
        let alpha = if x[0] >= 0.0 { -xn } else { xn };
        let mut u = x;
        u[0] -= alpha;
        let un = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= un);
        // A[j.., j..] ← (I − 2uuᵀ) A[j.., j..]
        for c in j..k {
            let d: f64 = (j..m).map(|i| u[i - j] * a[i * k + c]).sum();
            for i in j..m {
                a[i * k + c] -= 2.0 * u[i - j] * d;
            }
        }
        reflectors.push(u);
    }

    let mut r = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            r[i * k + j] = a[i * k + j];
        }
    }

    // Q = H_0 H_1 … H_{k-1} applied to the first k columns of I.
    let mut q = vec![0.0; m * k];
    for i in 0..k {
        q[i * k + i] = 1.0;
    }
    for j in (0..k).rev() {
        let u = &reflectors[j];
        for c in 0..k {
            let d: f64 = (j..m).map(|i| u[i - j] * q[i * k + c]).sum();
            for i in j..m {
                q[i * k + c] -= 2.0 * u[i - j] * d;
            }
        }
    }
    Ok(Qr { q: Tensor::from_op(vec![m, k], q)?, r: Tensor::from_op(vec![k, k], r)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_eigen_sorted_by_magnitude() {
        let a = Tensor::matrix(3, 3, vec![3., 0., 0., 0., 1., 0., 0., 0., -2.]).unwrap();
        let e = symmetric_eigen(&a).unwrap();
        assert_eq!(e.values, vec![3.0, -2.0, 1.0]);
    }

    #[test]
    fn qr_reconstructs() {
        let m = Tensor::matrix(4, 2, vec![1., 2., 3., 4., 5., 6., 7., 9.]).unwrap();
        let Qr { q, r } = householder_qr(&m).unwrap();
        let back = q.matmul(&r).unwrap();
        for (x, y) in back.data().iter().zip(m.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let qtq = Tensor::matmul_t(&q, true, &q, false).unwrap();
        let i = Tensor::eye(2);
        for (x, y) in qtq.data().iter().zip(i.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn qr_reports_dependent_column() {
        let m = Tensor::matrix(3, 3, vec![1., 2., 3., 2., 4., 1., 3., 6., 0.]).unwrap();
        let err = householder_qr(&m).unwrap_err().to_string();
        assert!(err.contains("column 1"), "{err}");
    }
}
