//! Small dense kernels shared by the tensor and solver modules.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = H`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T: Scalar> {
    l: DMatrix<T>,
}

/// Reason a Cholesky factorization stopped early.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyBreakdown {
    /// Column whose pivot was not positive (or fell below the relative cutoff).
    pub index: usize,
}

impl<T: Scalar> CholeskyFactor<T> {
    /// Plain Cholesky: fails on the first non-positive (or NaN) pivot.
    pub fn new(h: &DMatrix<T>) -> Result<Self, CholeskyBreakdown> {
        Self::factor(h, T::zero())
    }

    /// Cholesky that also rejects pivots below `rel_tol · max_i H_ii`.
    pub fn with_relative_cutoff(h: &DMatrix<T>, rel_tol: T) -> Result<Self, CholeskyBreakdown> {
        let max_diag = h.diagonal().iter().fold(T::zero(), |m, &x| m.max(x));
        Self::factor(h, rel_tol * max_diag)
    }

    fn factor(h: &DMatrix<T>, min_pivot: T) -> Result<Self, CholeskyBreakdown> {
        assert!(h.is_square(), "Cholesky of a non-square matrix");
        let n = h.nrows();
        let mut l = DMatrix::<T>::zeros(n, n);
        for j in 0..n {
            let mut pivot = h[(j, j)];
            for k in 0..j {
                pivot -= l[(j, k)] * l[(j, k)];
            }
            // `!(pivot > min)` also catches NaN.
            if !(pivot > min_pivot) || !(pivot > T::zero()) {
                return Err(CholeskyBreakdown { index: j });
            }
            let ljj = pivot.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = h[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn from_lower(l: DMatrix<T>) -> Self {
        Self { l }
    }

    pub fn l(&self) -> &DMatrix<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn min_diagonal(&self) -> T {
        self.l.diagonal().iter().fold(T::infinity(), |m, &x| m.min(x))
    }

    /// Solves `L Lᵀ x = b` by forward then backward substitution.
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let y = forward_substitute(&self.l, b);
        backward_substitute_transposed(&self.l, &y)
    }

    /// Reconstructs `L Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        &self.l * self.l.transpose()
    }
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn forward_substitute<T: Scalar>(l: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `Lᵀ x = y` for lower-triangular `L`.
pub fn backward_substitute_transposed<T: Scalar>(l: &DMatrix<T>, y: &DVector<T>) -> DVector<T> {
    let n = l.nrows();
    let mut x = y.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Flips the sign of `v` so that its largest-magnitude entry is positive.
/// Returns `true` if the sign was flipped. Ties go to the lowest index.
pub fn normalize_sign<T: Scalar>(v: &mut [T]) -> bool {
    let mut best = 0;
    let mut best_abs = T::zero();
    for (i, x) in v.iter().enumerate() {
        let a = x.abs();
        if a > best_abs {
            best = i;
            best_abs = a;
        }
    }
    if best_abs > T::zero() && v[best] < T::zero() {
        for x in v.iter_mut() {
            *x = -*x;
        }
        true
    } else {
        false
    }
}

/// The `k` dominant left singular vectors of `m` as an orthonormal `nrows × k`
/// matrix, each column sign-normalized.
///
/// Directions with zero singular value are an arbitrary orthonormal basis of
/// the null space of `mᵀ`. Ties keep the eigensolver's ordering.
pub fn dominant_left_singular_vectors<T: Scalar>(m: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let n = m.nrows();
    assert!(k <= n, "requested {k} singular vectors of a {n}-row matrix");
    if k == 0 {
        return DMatrix::zeros(n, 0);
    }
    let u = if n == 2 { two_row_left_singular_vectors(m) } else { gram_left_singular_vectors(m) };
    let mut out = DMatrix::<T>::zeros(n, k);
    for j in 0..k {
        let mut col: Vec<T> = u.column(j).iter().copied().collect();
        normalize_sign(&mut col);
        out.column_mut(j).copy_from_slice(&col);
    }
    out
}

/// Left singular vectors from the symmetric eigendecomposition of `M Mᵀ`,
/// ordered by decreasing eigenvalue.
///
/// The bidiagonal SVD loses orthogonality between singular vectors on some
/// exactly rank-deficient inputs, which are the norm for flattenings of
/// low-rank tensors; the symmetric eigensolver does not.
fn gram_left_singular_vectors<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = (m * m.transpose()).symmetric_eigen();
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap_or(std::cmp::Ordering::Equal));
    let cols: Vec<_> = idx.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    DMatrix::from_columns(&cols)
}

/// Left singular vectors of a two-row matrix from the Jacobi rotation that
/// diagonalizes its `2 × 2` Gram matrix.
///
/// The rotation angle is accurate to working precision relative to the row
/// norms, which the iterative SVD does not guarantee for strongly graded
/// entries such as the small cores of the rank-one retraction.
fn two_row_left_singular_vectors<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let (r0, r1) = (m.row(0), m.row(1));
    let g00 = r0.dot(&r0);
    let g11 = r1.dot(&r1);
    let g01 = r0.dot(&r1);
    let theta = T::of(0.5) * (T::of(2.0) * g01).atan2(g00 - g11);
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Orthonormal basis of the complement of the unit vector `a`: the first
/// `n - 1` columns of the Q factor of a column-pivoted QR of `I - a aᵀ`.
pub fn sphere_tangent_basis<T: Scalar>(unit: &DVector<T>) -> DMatrix<T> {
    let n = unit.len();
    if n <= 1 {
        return DMatrix::zeros(n, 0);
    }
    let projector = DMatrix::<T>::identity(n, n) - unit * unit.transpose();
    let q = projector.col_piv_qr().q();
    q.columns(0, n - 1).into_owned()
}

/// Frobenius norm of a slice.
pub fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |s, &x| s + x * x).sqrt()
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}
