//! Dense symmetric eigensolver (cyclic Jacobi) and the PSD matrix square
//! root built on it. f64 only; the matrices here are small covariance
//! matrices (d <= 128), where Jacobi is simple, accurate and fast enough.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Relative tolerance below which a negative eigenvalue is treated as
/// rounding noise and clamped to zero.
pub const EIG_CLAMP_REL_TOL: f64 = 1e-10;

/// Eigendecomposition of a symmetric matrix: returns eigenvalues ascending
/// and the matching orthonormal eigenvectors as columns.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "eigensolver needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let scale = a.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-8 * scale.max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }
    // Work on the exactly-symmetrized copy.
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let stop = 1e-15 * frob.max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if (2.0 * off).sqrt() <= stop {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                // Rotation angle that zeroes m[p][q].
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut eig: Vec<(f64, usize)> = (0..n).map(|i| (m[[i, i]], i)).collect();
    eig.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite eigenvalues"));
    let values = Array1::from_iter(eig.iter().map(|&(l, _)| l));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (new_col, &(_, old_col)) in eig.iter().enumerate() {
        for k in 0..n {
            vectors[[k, new_col]] = v[[k, old_col]];
        }
    }
    Ok((values, vectors))
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Eigenvalues within `EIG_CLAMP_REL_TOL` of zero (relative to the largest)
/// are clamped to zero; anything more negative is a hard error.
pub fn symmetric_sqrt(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (values, vectors) = symmetric_eigen(a)?;
    let max = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let floor = -EIG_CLAMP_REL_TOL * max.max(1e-300);
    let n = values.len();
    let mut roots = Array1::<f64>::zeros(n);
    for (i, &l) in values.iter().enumerate() {
        if l < floor {
            return Err(Error::Numerical(format!(
                "matrix is not positive semidefinite: eigenvalue {l} (max {max})"
            )));
        }
        roots[i] = l.max(0.0).sqrt();
    }
    // V . diag(sqrt(l)) . V^T
    let mut scaled = vectors.clone();
    for j in 0..n {
        for i in 0..n {
            scaled[[i, j]] *= roots[j];
        }
    }
    Ok(scaled.dot(&vectors.t()))
}

/// Sum of the diagonal.
pub fn trace(a: &Array2<f64>) -> f64 {
    a.diag().sum()
}
