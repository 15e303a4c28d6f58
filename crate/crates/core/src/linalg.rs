//! Small dense linear algebra kernels.
//!
//! Blocks in this crate are at most a few dozen columns wide, so plain
//! cache-oblivious loops over `ndarray` storage are fast enough and keep the
//! numerics fully deterministic.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Upper-triangular Cholesky factor `R` with `a = RᵀR`.
///
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky_upper(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let k = a.nrows();
    debug_assert_eq!(k, a.ncols());
    let mut r = Array2::<f64>::zeros((k, k));
    for j in 0..k {
        let mut d = a[[j, j]];
        for i in 0..j {
            d -= r[[i, j]] * r[[i, j]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let rjj = d.sqrt();
        r[[j, j]] = rjj;
        for c in (j + 1)..k {
            let mut s = a[[j, c]];
            for i in 0..j {
                s -= r[[i, j]] * r[[i, c]];
            }
            r[[j, c]] = s / rjj;
        }
    }
    Some(r)
}

/// Solves `R x = b` for upper-triangular `R`.
pub fn solve_upper(r: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let k = r.nrows();
    let mut x = b.to_owned();
    for i in (0..k).rev() {
        let mut s = x[i];
        for c in (i + 1)..k {
            s -= r[[i, c]] * x[c];
        }
        x[i] = s / r[[i, i]];
    }
    x
}

/// Solves `Rᵀ x = b` for upper-triangular `R`.
pub fn solve_upper_transpose(r: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let k = r.nrows();
    let mut x = b.to_owned();
    for i in 0..k {
        let mut s = x[i];
        for c in 0..i {
            s -= r[[c, i]] * x[c];
        }
        x[i] = s / r[[i, i]];
    }
    x
}

/// Computes `B R⁻¹` row by row.
pub fn right_solve_upper(b: ArrayView2<f64>, r: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(b.raw_dim());
    for (i, row) in b.rows().into_iter().enumerate() {
        // row of B R⁻¹ is x with xR = row, i.e. Rᵀxᵀ = rowᵀ
        out.row_mut(i).assign(&solve_upper_transpose(r, row));
    }
    out
}

/// `R⁻ᵀ A R⁻¹` for symmetric `A`.
pub fn congruence_inverse(a: ArrayView2<f64>, r: ArrayView2<f64>) -> Array2<f64> {
    // (A R⁻¹)ᵀ = R⁻ᵀA, so a second right-solve gives R⁻ᵀ A R⁻¹
    let ar = right_solve_upper(a, r);
    let t = right_solve_upper(ar.t(), r);
    let mut out = t.t().to_owned();
    symmetrize(&mut out);
    out
}

pub fn symmetrize(a: &mut Array2<f64>) {
    let k = a.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues (ascending) and the matrix whose columns are the
/// corresponding orthonormal eigenvectors.
pub fn symmetric_eigen(a: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let k = a.nrows();
    let mut m = a.to_owned();
    symmetrize(&mut m);
    let mut v = Array2::<f64>::eye(k);
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (Array1::zeros(k), v);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..k {
            for q in (p + 1)..k {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let mrp = m[[r, p]];
                    let mrq = m[[r, q]];
                    m[[r, p]] = c * mrp - s * mrq;
                    m[[r, q]] = s * mrp + c * mrq;
                }
                for r in 0..k {
                    let mpr = m[[p, r]];
                    let mqr = m[[q, r]];
                    m[[p, r]] = c * mpr - s * mqr;
                    m[[q, r]] = s * mpr + c * mqr;
                }
                for r in 0..k {
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = c * vrp - s * vrq;
                    v[[r, q]] = s * vrp + c * vrq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::<f64>::zeros((k, k));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    (values, vectors)
}

/// Solves a square system by Gaussian elimination with partial pivoting.
pub fn solve_dense(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Option<Array1<f64>> {
    let k = a.nrows();
    let mut m = a.to_owned();
    let mut x = b.to_owned();
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))?;
        if m[[piv, col]].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for c in 0..k {
                m.swap([col, c], [piv, c]);
            }
            x.swap(col, piv);
        }
        for r in (col + 1)..k {
            let f = m[[r, col]] / m[[col, col]];
            if f == 0.0 {
                continue;
            }
            for c in col..k {
                m[[r, c]] -= f * m[[col, c]];
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..k).rev() {
        let mut s = x[i];
        for c in (i + 1)..k {
            s -= m[[i, c]] * x[c];
        }
        x[i] = s / m[[i, i]];
    }
    Some(x)
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm2(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spd() -> Array2<f64> {
        array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]]
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd();
        let r = cholesky_upper(a.view()).unwrap();
        let back = r.t().dot(&r);
        assert!(frobenius((&back - &a).view()) < 1e-12);
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(r[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky_upper(a.view()).is_none());
    }

    #[test]
    fn triangular_solves() {
        let r = cholesky_upper(spd().view()).unwrap();
        let b = array![1.0, -2.0, 0.5];
        let x = solve_upper(r.view(), b.view());
        assert!(norm2((&r.dot(&x) - &b).view()) < 1e-12);
        let y = solve_upper_transpose(r.view(), b.view());
        assert!(norm2((&r.t().dot(&y) - &b).view()) < 1e-12);
    }

    #[test]
    fn eigen_reconstructs() {
        let a = spd();
        let (vals, vecs) = symmetric_eigen(a.view());
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        assert!(frobenius((&recon - &a).view()) < 1e-12);
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
    }

    #[test]
    fn dense_solve() {
        let a = array![[0.0, 2.0], [3.0, 1.0]];
        let x = solve_dense(a.view(), array![4.0, 5.0].view()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }
}
