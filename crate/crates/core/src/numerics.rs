//! Dense symmetric matrix primitives shared by the rest of the crate:
//! a cyclic Jacobi eigensolver, numerically stable row softmax, and
//! Frobenius norms.
//!
//! Everything here is a pure function on immutable inputs; matrices are
//! dense. Graphs at desk scale stay below a few hundred nodes, so the
//! O(n^3)-per-sweep Jacobi iteration is preferred for its determinism and
//! simplicity over faster factorizations.

use ndarray::Array2;

use crate::{Error, Result};

/// Hard cap on Jacobi sweeps before reporting non-convergence.
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// Default convergence tolerance for [`sym_eigendecompose`], applied to the
/// off-diagonal Frobenius mass relative to `1 + ||M||_F`.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-12;

/// A real square matrix with exact (bitwise) symmetry enforced at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    entries: Array2<f64>,
}

impl SymmetricMatrix {
    /// Wraps `entries`, rejecting non-square shapes, empty matrices,
    /// non-finite values, and any `entries[i][j] != entries[j][i]`.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::NotSquare(r, c));
        }
        if r == 0 {
            return Err(Error::EmptyMatrix);
        }
        for i in 0..r {
            for j in 0..c {
                let v = entries[[i, j]];
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if j > i && v != entries[[j, i]] {
                    return Err(Error::NotSymmetric {
                        i,
                        j,
                        a: entries[[i, j]],
                        b: entries[[j, i]],
                    });
                }
            }
        }
        Ok(Self { entries })
    }

    /// Builds an n-by-n symmetric matrix from `f(i, j)` evaluated once per
    /// unordered pair (i <= j); symmetry holds by construction.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                entries[[i, j]] = v;
                entries[[j, i]] = v;
            }
        }
        Self { entries }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.entries
    }
}

/// Full spectrum of a symmetric matrix: eigenvalues sorted descending,
/// eigenvectors as the matching columns of an orthonormal matrix.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Array2<f64>,
}

impl EigenDecomposition {
    /// Column `i` as an owned vector.
    pub fn eigenvector(&self, i: usize) -> ndarray::Array1<f64> {
        self.eigenvectors.column(i).to_owned()
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps rotate every off-diagonal pair in row-major order until the
/// off-diagonal Frobenius mass drops below `tol * (1 + ||M||_F)`, capped at
/// [`MAX_JACOBI_SWEEPS`]. Eigenvalues are sorted descending; ties keep the
/// pre-sort column order. Each eigenvector is sign-fixed so its first
/// component above 1e-12 in magnitude is positive.
pub fn sym_eigendecompose(m: &SymmetricMatrix, tol: f64) -> Result<EigenDecomposition> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eigensolver tol must be > 0, got {tol}"
        )));
    }
    let n = m.n();
    let mut a = m.entries().clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = 1.0 + frobenius_norm(m.entries());
    let threshold = tol * scale;

    let mut converged = n == 1 || off_diagonal_mass(&a) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_JACOBI_SWEEPS {
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for i in 0..n {
                    if i != p && i != q {
                        let aip = a[[i, p]];
                        let aiq = a[[i, q]];
                        a[[i, p]] = c * aip - s * aiq;
                        a[[p, i]] = a[[i, p]];
                        a[[i, q]] = s * aip + c * aiq;
                        a[[q, i]] = a[[i, q]];
                    }
                }
                a[[p, p]] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                a[[q, q]] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;

                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_mass(&a) <= threshold;
    }

    if !converged {
        return Err(Error::EigenNonConvergence {
            n,
            sweeps,
            residual: off_diagonal_mass(&a),
            tol: threshold,
        });
    }

    // Sort eigenpairs descending; sort_by is stable, so equal eigenvalues
    // keep their original column order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Array2::<f64>::zeros((n, n));
    for (col, &idx) in order.iter().enumerate() {
        eigenvalues.push(a[[idx, idx]]);
        let flip = match (0..n).find(|&i| v[[i, idx]].abs() > 1e-12) {
            Some(i) if v[[i, idx]] < 0.0 => -1.0,
            _ => 1.0,
        };
        for i in 0..n {
            eigenvectors[[i, col]] = flip * v[[i, idx]];
        }
    }

    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_mass(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[[i, j]] * a[[i, j]];
            }
        }
    }
    sum.sqrt()
}

/// Row-stochastic softmax of `scores / temperature` with per-row max
/// subtraction, so no intermediate overflows for |scores| up to roughly
/// `700 * temperature`.
pub fn stable_row_softmax(scores: &Array2<f64>, temperature: f64) -> Result<Array2<f64>> {
    stable_row_softmax_weighted(scores, temperature, None)
}

/// Like [`stable_row_softmax`] but with optional per-column multipliers
/// applied inside the normalization: `out[i][j] ∝ w[j] * exp(s[i][j] / t)`.
pub fn stable_row_softmax_weighted(
    scores: &Array2<f64>,
    temperature: f64,
    weights: Option<&[f64]>,
) -> Result<Array2<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::BadTemperature(temperature));
    }
    let (n, cols) = scores.dim();
    if let Some(w) = weights {
        if w.len() != cols {
            return Err(Error::ShapeMismatch {
                left: (n, cols),
                right: (w.len(), 1),
            });
        }
    }
    for i in 0..n {
        for j in 0..cols {
            if !scores[[i, j]].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }

    let mut out = Array2::<f64>::zeros((n, cols));
    for i in 0..n {
        let mut row_max = f64::NEG_INFINITY;
        for j in 0..cols {
            let z = scores[[i, j]] / temperature;
            if z > row_max {
                row_max = z;
            }
        }
        let mut denom = 0.0;
        for j in 0..cols {
            let e = ((scores[[i, j]] / temperature) - row_max).exp();
            let e = match weights {
                Some(w) => w[j] * e,
                None => e,
            };
            out[[i, j]] = e;
            denom += e;
        }
        for j in 0..cols {
            out[[i, j]] /= denom;
        }
    }
    Ok(out)
}

/// Frobenius norm of an arbitrary dense matrix.
pub fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Frobenius distance between two matrices of equal shape; zero iff equal.
pub fn frobenius_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        sum += d * d;
    }
    Ok(sum.sqrt())
}
