//! Dense tensors and the multilinear kernels built on them.
//!
//! Storage is a flat buffer with the *last* index varying fastest. Under this
//! layout `vectorize(a ⊗ b ⊗ c)` is the Kronecker product `a ⊗ₖ b ⊗ₖ c`, so
//! Jacobian blocks of the addition map have the literal Kronecker structure.
//!
//! Mode-`k` flattenings place the remaining indices along the columns in the
//! same last-fastest order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// A `d`-way real array.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("order must be at least 1".into()));
    }
    if let Some(k) = shape.iter().position(|&n| n == 0) {
        return Err(Error::InvalidShape(format!("mode {k} has size 0")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::InvalidShape(format!("{shape:?} overflows")))
}

impl<T: Scalar> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self { shape: shape.to_vec(), data: vec![T::zero(); len] })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Outer product `v₁ ⊗ … ⊗ v_d`.
    pub fn outer(vectors: &[&[T]]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidShape("outer product of zero vectors".into()));
        }
        let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
        check_shape(&shape)?;
        let mut data = vec![T::one()];
        for v in vectors {
            data = kron(&data, v);
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    /// Number of entries `Π = n₁ ⋯ n_d`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `Σ = Σ_k (n_k − 1)`.
    pub fn sigma(&self) -> usize {
        self.shape.iter().map(|n| n - 1).sum()
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index order mismatch");
        idx.iter().zip(&self.shape).fold(0, |off, (&i, &n)| {
            assert!(i < n, "index {i} out of bounds for mode of size {n}");
            off * n + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: T) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    pub fn frobenius_norm(&self) -> T {
        linalg::norm(&self.data)
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other)?;
        Ok(linalg::dot(&self.data, &other.data))
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += alpha * y;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-T::one(), other)?;
        Ok(out)
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| alpha * x).collect() }
    }

    /// Vectorization in the storage order (last index fastest).
    pub fn vectorize(&self) -> DVector<T> {
        DVector::from_column_slice(&self.data)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::ModeOutOfRange { mode, order: self.order() });
        }
        Ok(())
    }

    /// Sizes of the blocks before and after `mode` in the flat layout.
    fn split(&self, mode: usize) -> (usize, usize, usize) {
        let pre: usize = self.shape[..mode].iter().product();
        let post: usize = self.shape[mode + 1..].iter().product();
        (pre, self.shape[mode], post)
    }

    /// Mode-`k` flattening, an `n_k × Π/n_k` matrix.
    pub fn flatten(&self, mode: usize) -> Result<DMatrix<T>> {
        self.check_mode(mode)?;
        let (pre, n, post) = self.split(mode);
        Ok(DMatrix::from_fn(n, pre * post, |i, col| {
            let (p, q) = (col / post, col % post);
            self.data[(p * n + i) * post + q]
        }))
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn from_flattening(m: &DMatrix<T>, mode: usize, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if mode >= shape.len() {
            return Err(Error::ModeOutOfRange { mode, order: shape.len() });
        }
        if m.nrows() != shape[mode] || m.nrows() * m.ncols() != len {
            return Err(Error::ShapeMismatch(format!(
                "{}×{} flattening does not fit shape {shape:?} in mode {mode}",
                m.nrows(),
                m.ncols()
            )));
        }
        let pre: usize = shape[..mode].iter().product();
        let post: usize = shape[mode + 1..].iter().product();
        let n = shape[mode];
        let mut data = vec![T::zero(); len];
        for p in 0..pre {
            for i in 0..n {
                for q in 0..post {
                    data[(p * n + i) * post + q] = m[(i, p * post + q)];
                }
            }
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Mode-`k` product `self ×_k M`: `flatten(result, k) = M · flatten(self, k)`.
    pub fn mode_multiply(&self, m: &DMatrix<T>, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let (pre, n, post) = self.split(mode);
        if m.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "matrix with {} columns applied to mode {mode} of size {n}",
                m.ncols()
            )));
        }
        let rows = m.nrows();
        let mut shape = self.shape.clone();
        shape[mode] = rows;
        check_shape(&shape)?;
        let mut data = vec![T::zero(); pre * rows * post];
        for p in 0..pre {
            for j in 0..rows {
                let out = &mut data[(p * rows + j) * post..(p * rows + j + 1) * post];
                for i in 0..n {
                    let c = m[(j, i)];
                    if c == T::zero() {
                        continue;
                    }
                    let src = &self.data[(p * n + i) * post..(p * n + i + 1) * post];
                    for (o, &s) in out.iter_mut().zip(src) {
                        *o += c * s;
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    /// Multilinear multiplication `(M₁, …, M_d) · self`.
    pub fn multilinear(&self, matrices: &[DMatrix<T>]) -> Result<Self> {
        if matrices.len() != self.order() {
            return Err(Error::ShapeMismatch(format!(
                "{} matrices for an order-{} tensor",
                matrices.len(),
                self.order()
            )));
        }
        let mut out = self.clone();
        for (k, m) in matrices.iter().enumerate() {
            out = out.mode_multiply(m, k)?;
        }
        Ok(out)
    }

    /// Contracts the last mode with `v`, removing it.
    pub fn contract_last(&self, v: &[T]) -> Result<Self> {
        let d = self.order();
        let n = self.shape[d - 1];
        if v.len() != n || d < 2 {
            return Err(Error::ShapeMismatch(format!(
                "cannot contract last mode of {:?} with a length-{} vector",
                self.shape,
                v.len()
            )));
        }
        let data = self.data.chunks_exact(n).map(|row| linalg::dot(row, v)).collect();
        Ok(Self { shape: self.shape[..d - 1].to_vec(), data })
    }

    /// Contracts the first mode with `v`, removing it.
    pub fn contract_first(&self, v: &[T]) -> Result<Self> {
        let d = self.order();
        let n = self.shape[0];
        if v.len() != n || d < 2 {
            return Err(Error::ShapeMismatch(format!(
                "cannot contract first mode of {:?} with a length-{} vector",
                self.shape,
                v.len()
            )));
        }
        let post = self.len() / n;
        let mut data = vec![T::zero(); post];
        for (block, &c) in self.data.chunks_exact(post).zip(v) {
            for (o, &x) in data.iter_mut().zip(block) {
                *o += c * x;
            }
        }
        Ok(Self { shape: self.shape[1..].to_vec(), data })
    }

    /// Full contraction `⟨self, v₁ ⊗ … ⊗ v_d⟩`.
    pub fn contract_all(&self, vectors: &[&[T]]) -> Result<T> {
        if vectors.len() != self.order() {
            return Err(Error::ShapeMismatch("one vector per mode required".into()));
        }
        let mut cur = self.clone();
        for k in (1..self.order()).rev() {
            cur = cur.contract_last(vectors[k])?;
        }
        if cur.len() != vectors[0].len() {
            return Err(Error::ShapeMismatch("first vector length".into()));
        }
        Ok(linalg::dot(&cur.data, vectors[0]))
    }
}

/// Kronecker product of two vectors, `a ⊗ₖ b` with `b` varying fastest.
pub fn kron<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

/// Columnwise Khatri–Rao product `A₁ ⊙ ⋯ ⊙ A_d`, a `Π × r` matrix whose
/// column `i` is `vectorize(a_i⁽¹⁾ ⊗ ⋯ ⊗ a_i⁽ᵈ⁾)`.
pub fn khatri_rao<T: Scalar>(factors: &[DMatrix<T>]) -> Result<DMatrix<T>> {
    let first = factors
        .first()
        .ok_or_else(|| Error::InvalidShape("Khatri-Rao product of no matrices".into()))?;
    let r = first.ncols();
    if let Some(bad) = factors.iter().find(|a| a.ncols() != r) {
        return Err(Error::ShapeMismatch(format!(
            "Khatri-Rao factors have {} and {} columns",
            r,
            bad.ncols()
        )));
    }
    let rows: usize = factors.iter().map(|a| a.nrows()).product();
    let mut out = DMatrix::<T>::zeros(rows, r);
    for i in 0..r {
        let mut col = vec![T::one()];
        for a in factors {
            let c: Vec<T> = a.column(i).iter().copied().collect();
            col = kron(&col, &c);
        }
        out.column_mut(i).copy_from_slice(&col);
    }
    Ok(out)
}

/// Orthogonal Tucker decomposition `(Q₁, …, Q_d) · S`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerDecomposition<T: Scalar> {
    pub core: DenseTensor<T>,
    /// Factor `k` is `n_k × r_k` with orthonormal columns.
    pub factors: Vec<DMatrix<T>>,
}

impl<T: Scalar> TuckerDecomposition<T> {
    pub fn new(core: DenseTensor<T>, factors: Vec<DMatrix<T>>) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(Error::ShapeMismatch("one factor per core mode required".into()));
        }
        for (k, q) in factors.iter().enumerate() {
            if q.ncols() != core.shape()[k] {
                return Err(Error::ShapeMismatch(format!(
                    "factor {k} has {} columns, core mode has size {}",
                    q.ncols(),
                    core.shape()[k]
                )));
            }
        }
        Ok(Self { core, factors })
    }

    /// Shape of the represented tensor.
    pub fn full_shape(&self) -> Vec<usize> {
        self.factors.iter().map(|q| q.nrows()).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.core.shape().to_vec()
    }

    pub fn expand(&self) -> DenseTensor<T> {
        self.core.multilinear(&self.factors).expect("validated at construction")
    }
}

/// Sequentially truncated HOSVD to multilinear rank `ranks`.
///
/// Modes are processed in `order` (default `0, 1, …, d−1`). At each step the
/// `r_k` dominant left singular vectors of the current, partially truncated
/// flattening are kept and the core is contracted with them before the next
/// mode is processed.
pub fn st_hosvd<T: Scalar>(
    t: &DenseTensor<T>,
    ranks: &[usize],
    order: Option<&[usize]>,
) -> Result<TuckerDecomposition<T>> {
    let d = t.order();
    if ranks.len() != d {
        return Err(Error::ShapeMismatch(format!("{} ranks for an order-{d} tensor", ranks.len())));
    }
    for (k, (&r, &n)) in ranks.iter().zip(t.shape()).enumerate() {
        if r == 0 || r > n {
            return Err(Error::RankTooLarge { mode: k, rank: r, size: n });
        }
    }
    let default_order: Vec<usize> = (0..d).collect();
    let order = order.unwrap_or(&default_order);
    let mut seen = vec![false; d];
    if order.len() != d || order.iter().any(|&k| k >= d || std::mem::replace(&mut seen[k], true)) {
        return Err(Error::InvalidShape(format!("{order:?} is not a permutation of 0..{d}")));
    }

    let mut core = t.clone();
    let mut factors: Vec<Option<DMatrix<T>>> = vec![None; d];
    for &k in order {
        let u = linalg::dominant_left_singular_vectors(&core.flatten(k)?, ranks[k]);
        core = core.mode_multiply(&u.transpose(), k)?;
        factors[k] = Some(u);
    }
    let factors = factors.into_iter().map(|f| f.expect("every mode processed")).collect();
    TuckerDecomposition::new(core, factors)
}

/// Maps the factor matrices of a CPD of a Tucker core back to the full
/// tensor: returns `Q_k · M_k` for every mode.
pub fn expand_core_factors<T: Scalar>(
    core_factors: &[DMatrix<T>],
    tucker_factors: &[DMatrix<T>],
) -> Result<Vec<DMatrix<T>>> {
    if core_factors.len() != tucker_factors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} core factors vs {} Tucker factors",
            core_factors.len(),
            tucker_factors.len()
        )));
    }
    core_factors
        .iter()
        .zip(tucker_factors)
        .enumerate()
        .map(|(k, (m, q))| {
            if q.ncols() != m.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "mode {k}: Tucker factor is {}×{}, core factor is {}×{}",
                    q.nrows(),
                    q.ncols(),
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(q * m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t222() -> DenseTensor<f64> {
        // t_{ijk} = 4(i-1) + 2(j-1) + k in one-based indices.
        DenseTensor::from_fn(&[2, 2, 2], |ix| (4 * ix[0] + 2 * ix[1] + ix[2] + 1) as f64).unwrap()
    }

    #[test]
    fn vectorize_convention() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(&[0, 1]), 2.0);
        assert_eq!(t.vectorize().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        let ab = DenseTensor::outer(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(ab.vectorize().as_slice(), &[3.0, 4.0, 6.0, 8.0]);
        let z = DenseTensor::<f64>::zeros(&[3, 1, 2]).unwrap();
        assert!(z.vectorize().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseTensor::<f64>::zeros(&[]).is_err());
        assert!(DenseTensor::<f64>::zeros(&[2, 0]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn flatten_first_row() {
        let m = t222().flatten(0).unwrap();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.row(1).iter().copied().collect::<Vec<_>>(), vec![5.0, 6.0, 7.0, 8.0]);
        assert!(matches!(t222().flatten(3), Err(Error::ModeOutOfRange { .. })));
    }

    #[test]
    fn flatten_rank_one_middle_mode() {
        let (a, b, c) = ([1.0, -2.0], [0.5, 3.0, 1.0], [2.0, -1.0]);
        let t = DenseTensor::outer(&[&a, &b, &c]).unwrap();
        let ac = DenseTensor::outer(&[&a, &c]).unwrap().vectorize();
        let expected = DVector::from_column_slice(&b) * ac.transpose();
        assert_relative_eq!(t.flatten(1).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn flatten_roundtrip_and_norm() {
        let t = DenseTensor::from_fn(&[2, 3, 4], |ix| (ix[0] * 7 + ix[1] * 3 + ix[2]) as f64 - 5.5).unwrap();
        for k in 0..3 {
            let m = t.flatten(k).unwrap();
            assert_relative_eq!(m.norm(), t.frobenius_norm(), epsilon = 1e-12);
            assert_eq!(DenseTensor::from_flattening(&m, k, t.shape()).unwrap(), t);
        }
    }

    #[test]
    fn mode_multiply_identity_and_rank_one() {
        let t = t222();
        assert_eq!(t.mode_multiply(&DMatrix::identity(2, 2), 1).unwrap(), t);

        let (a, b) = ([1.0, 2.0], [3.0, -1.0, 0.5]);
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 4.0]);
        let ab = DenseTensor::outer(&[&a, &b]).unwrap();
        let ma = &m * DVector::from_column_slice(&a);
        let expected = DenseTensor::outer(&[ma.as_slice(), &b]).unwrap();
        let got = ab.mode_multiply(&m, 0).unwrap();
        assert_eq!(got.shape(), &[3, 3]);
        for (x, y) in got.data().iter().zip(expected.data()) {
            assert_relative_eq!(x, y, epsilon = 1e-14);
        }
        assert!(ab.mode_multiply(&m, 1).is_err());
    }

    #[test]
    fn khatri_rao_examples() {
        let a1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a2 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let kr = khatri_rao(&[a1.clone(), a2.clone()]).unwrap();
        assert_eq!(kr.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(kr.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(khatri_rao(std::slice::from_ref(&a1)).unwrap(), a1);
        let ones = khatri_rao(&[DMatrix::from_element(2, 3, 1.0), DMatrix::from_element(3, 3, 1.0)]).unwrap();
        assert_eq!(ones, DMatrix::from_element(6, 3, 1.0));
        assert!(khatri_rao(&[a1, DMatrix::<f64>::zeros(2, 3)]).is_err());
    }

    #[test]
    fn st_hosvd_exact_multilinear_rank() {
        let core = DenseTensor::from_fn(&[2, 1, 2], |ix| 1.0 + ix[0] as f64 - 2.0 * ix[2] as f64).unwrap();
        let q0 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.6, 0.0, 0.8]);
        let q1 = DMatrix::from_row_slice(2, 1, &[0.6, -0.8]);
        let q2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let t = core.multilinear(&[q0, q1, q2]).unwrap();
        let tucker = st_hosvd(&t, &[2, 1, 2], None).unwrap();
        let back = tucker.expand();
        for (x, y) in back.data().iter().zip(t.data()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        for q in &tucker.factors {
            let g = q.transpose() * q;
            assert_relative_eq!(g, DMatrix::identity(q.ncols(), q.ncols()), epsilon = 1e-12);
        }
    }

    #[test]
    fn st_hosvd_rank_one_recovers_tensor() {
        let t = DenseTensor::outer(&[&[1.0, -2.0, 0.5], &[3.0, 1.0], &[-1.0, 2.0, 2.0, 1.0]]).unwrap();
        let tucker = st_hosvd(&t, &[1, 1, 1], Some(&[2, 0, 1])).unwrap();
        for (x, y) in tucker.expand().data().iter().zip(t.data()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn st_hosvd_rejects_bad_arguments() {
        let t = t222();
        assert!(matches!(st_hosvd(&t, &[3, 1, 1], None), Err(Error::RankTooLarge { .. })));
        assert!(st_hosvd(&t, &[1, 1], None).is_err());
        assert!(st_hosvd(&t, &[1, 1, 1], Some(&[0, 0, 1])).is_err());
    }

    #[test]
    fn expand_core_factors_identity() {
        let m = vec![DMatrix::from_row_slice(2, 1, &[1.0, 2.0]), DMatrix::from_row_slice(2, 1, &[3.0, 4.0])];
        let q = vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)];
        assert_eq!(expand_core_factors(&m, &q).unwrap(), m);
        assert!(expand_core_factors(&m, &[DMatrix::identity(3, 3), DMatrix::identity(2, 2)]).is_err());
    }

    #[test]
    fn contractions() {
        let t = t222();
        let v = [1.0, -1.0];
        let full = t.contract_all(&[&v, &v, &v]).unwrap();
        // Σ t_ijk (-1)^{i+j+k} on the 1..8 ramp is 0 by pairing.
        assert_relative_eq!(full, 0.0);
        let first = t.contract_first(&[1.0, 0.0]).unwrap();
        assert_eq!(first.data(), &[1.0, 2.0, 3.0, 4.0]);
        let last = t.contract_last(&[0.0, 1.0]).unwrap();
        assert_eq!(last.data(), &[2.0, 4.0, 6.0, 8.0]);
    }
}
