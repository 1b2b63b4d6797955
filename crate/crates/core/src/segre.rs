//! Rank-one tensors as points of the Segre manifold.
//!
//! A point is stored as a norm-balanced tuple `(a⁽¹⁾, …, a⁽ᵈ⁾)` with
//! `‖a⁽¹⁾‖ = … = ‖a⁽ᵈ⁾‖`. Its tangent space has the orthonormal basis
//!
//! ```text
//! T_p = [ I ⊗ â⁽²⁾ ⊗ ⋯ ⊗ â⁽ᵈ⁾ | â⁽¹⁾ ⊗ U₂ ⊗ ⋯ ⊗ â⁽ᵈ⁾ | ⋯ | â⁽¹⁾ ⊗ ⋯ ⊗ U_d ]
//! ```
//!
//! where `â⁽ᵏ⁾` are the unit factor vectors and `U_k` is an orthonormal basis
//! of the complement of `â⁽ᵏ⁾`. Tangent coordinates are the concatenation
//! `[x₁ (n₁) | x₂ (n₂−1) | ⋯ | x_d (n_d−1)]`, of total length `Σ + 1`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;
use crate::tensor::{self, DenseTensor};

/// Norm-balanced representative of a nonzero rank-one tensor, with the
/// tangent-space factors `U_k` cached.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOnePoint<T: Scalar> {
    vectors: Vec<DVector<T>>,
    units: Vec<DVector<T>>,
    /// `U_k` for `k ≥ 1`; entry 0 is an empty placeholder (`U₁ = I`).
    tangent: Vec<DMatrix<T>>,
    /// Common norm of the factor vectors.
    factor_norm: T,
}

/// Offsets of the per-mode blocks inside a tangent coordinate vector.
pub fn coordinate_blocks(shape: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    shape
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let len = if k == 0 { n } else { n - 1 };
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// `Σ + 1`, the dimension of the Segre manifold.
pub fn manifold_dim(shape: &[usize]) -> usize {
    1 + shape.iter().map(|n| n - 1).sum::<usize>()
}

impl<T: Scalar> RankOnePoint<T> {
    /// Builds the balanced representative of `v₁ ⊗ … ⊗ v_d`.
    ///
    /// Vectors are rescaled to the geometric mean of their norms. The sign of
    /// the tensor lives in the first vector: every later vector is flipped so
    /// that its largest-magnitude entry is positive.
    pub fn new(vectors: Vec<DVector<T>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidShape("rank-one point needs at least one vector".into()));
        }
        let norms: Vec<T> = vectors.iter().map(|v| v.norm()).collect();
        for (mode, &nv) in norms.iter().enumerate() {
            if !(nv > T::zero()) || !nv.is_finite_value() {
                return Err(Error::ZeroFactor { mode });
            }
        }
        let d = vectors.len();
        let log_mean = norms.iter().fold(T::zero(), |s, &nv| s + nv.ln()) / T::of(d as f64);
        let factor_norm = log_mean.exp();

        let mut units: Vec<DVector<T>> =
            vectors.iter().zip(&norms).map(|(v, &nv)| v / nv).collect();
        let mut flip = false;
        for u in units.iter_mut().skip(1) {
            if linalg::normalize_sign(u.as_mut_slice()) {
                flip = !flip;
            }
        }
        if flip {
            units[0].neg_mut();
        }
        let vectors = units.iter().map(|u| u * factor_norm).collect();
        let tangent = units
            .iter()
            .enumerate()
            .map(|(k, u)| if k == 0 { DMatrix::zeros(0, 0) } else { linalg::sphere_tangent_basis(u) })
            .collect();
        Ok(Self { vectors, units, tangent, factor_norm })
    }

    pub fn from_slices(vectors: &[&[T]]) -> Result<Self> {
        Self::new(vectors.iter().map(|v| DVector::from_column_slice(v)).collect())
    }

    pub fn order(&self) -> usize {
        self.vectors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.vectors.iter().map(|v| v.len()).collect()
    }

    /// Balanced factor vectors `a⁽ᵏ⁾`.
    pub fn vectors(&self) -> &[DVector<T>] {
        &self.vectors
    }

    pub fn vector(&self, mode: usize) -> &DVector<T> {
        &self.vectors[mode]
    }

    /// Unit vector `â⁽ᵏ⁾ = a⁽ᵏ⁾ / ‖a⁽ᵏ⁾‖`.
    pub fn unit(&self, mode: usize) -> &DVector<T> {
        &self.units[mode]
    }

    /// `U_k` for `k ≥ 1`, an `n_k × (n_k − 1)` matrix.
    pub fn tangent_factor(&self, mode: usize) -> &DMatrix<T> {
        assert!(mode >= 1, "U_1 is the identity and not stored");
        &self.tangent[mode]
    }

    /// Common norm of the balanced factor vectors.
    pub fn factor_norm(&self) -> T {
        self.factor_norm
    }

    /// Frobenius norm of the represented tensor, `α = ‖a⁽¹⁾‖ ⋯ ‖a⁽ᵈ⁾‖`.
    pub fn scale(&self) -> T {
        self.factor_norm.powi(self.order() as i32)
    }

    /// Length `Σ + 1` of a tangent coordinate vector.
    pub fn coordinate_len(&self) -> usize {
        manifold_dim(&self.shape())
    }

    pub fn to_tensor(&self) -> DenseTensor<T> {
        let slices: Vec<&[T]> = self.vectors.iter().map(|v| v.as_slice()).collect();
        DenseTensor::outer(&slices).expect("vectors are nonempty")
    }

    /// Mode-`k` component of the tangent direction: `x₁` itself for the first
    /// mode, `U_k x_k` otherwise.
    pub fn block_direction(&self, mode: usize, block: &[T]) -> DVector<T> {
        if mode == 0 {
            DVector::from_column_slice(block)
        } else {
            &self.tangent[mode] * DVector::from_column_slice(block)
        }
    }

    fn check_coords(&self, x: &[T]) -> Result<()> {
        if x.len() != self.coordinate_len() {
            return Err(Error::ShapeMismatch(format!(
                "tangent coordinates have length {}, expected {}",
                x.len(),
                self.coordinate_len()
            )));
        }
        Ok(())
    }

    /// `T_p · x` as a dense tensor.
    pub fn tangent_apply(&self, x: &[T]) -> Result<DenseTensor<T>> {
        self.check_coords(x)?;
        let mut out = DenseTensor::zeros(&self.shape())?;
        for (k, range) in coordinate_blocks(&self.shape()).into_iter().enumerate() {
            if range.is_empty() {
                continue;
            }
            let dir = self.block_direction(k, &x[range]);
            let slices: Vec<&[T]> = (0..self.order())
                .map(|m| if m == k { dir.as_slice() } else { self.units[m].as_slice() })
                .collect();
            out.axpy(T::one(), &DenseTensor::outer(&slices)?)?;
        }
        Ok(out)
    }

    /// ST-HOSVD retraction `R_p(T_p x)` in the default mode order.
    pub fn retract(&self, x: &[T]) -> Result<Self> {
        let order: Vec<usize> = (0..self.order()).collect();
        self.retract_with_order(x, &order)
    }

    /// ST-HOSVD retraction without forming the `Π`-sized tensor `p + T_p x`.
    ///
    /// `p + T_p x` has the orthogonal Tucker decomposition `(Q₁, …, Q_d) · S`
    /// with `Q₁ = [â⁽¹⁾ w]`, `Q_k = [â⁽ᵏ⁾ q_k]`, where `w` is the unit part of
    /// `x₁` orthogonal to `â⁽¹⁾` and `β_k q_k = U_k x_k`. The core `S` is
    /// `2 × ⋯ × 2` and has only `d + 1` nonzeros. Since ST-HOSVD commutes with
    /// orthogonal Tucker compression, truncating `S` and mapping back through
    /// `Q_k` gives the truncation of `p + T_p x`.
    pub fn retract_with_order(&self, x: &[T], order: &[usize]) -> Result<Self> {
        self.check_coords(x)?;
        if x.iter().all(|&v| v == T::zero()) {
            return Ok(self.clone());
        }
        let d = self.order();
        let alpha = self.scale();
        let blocks = coordinate_blocks(&self.shape());

        let mut bases: Vec<DMatrix<T>> = Vec::with_capacity(d);
        let mut second: Vec<Option<T>> = Vec::with_capacity(d);

        // First mode: x₁ + α â₁ = (α + c) â₁ + ω w.
        let a0 = &self.units[0];
        let x0 = DVector::from_column_slice(&x[blocks[0].clone()]);
        let c = a0.dot(&x0);
        let mut w = &x0 - a0 * c;
        w.axpy(-a0.dot(&w), a0, T::one());
        let omega = w.norm();
        let head = alpha + c;
        if omega > T::zero() {
            bases.push(DMatrix::from_columns(&[a0.clone(), w / omega]));
            second.push(Some(omega));
        } else {
            bases.push(DMatrix::from_columns(std::slice::from_ref(a0)));
            second.push(None);
        }
        for k in 1..d {
            let dir = self.block_direction(k, &x[blocks[k].clone()]);
            let beta = dir.norm();
            if beta > T::zero() {
                bases.push(DMatrix::from_columns(&[self.units[k].clone(), dir / beta]));
                second.push(Some(beta));
            } else {
                bases.push(DMatrix::from_columns(&[self.units[k].clone()]));
                second.push(None);
            }
        }

        let core_shape: Vec<usize> = bases.iter().map(|q| q.ncols()).collect();
        let mut core = DenseTensor::zeros(&core_shape)?;
        let mut idx = vec![0usize; d];
        core.set(&idx, head);
        for (k, coef) in second.iter().enumerate() {
            if let Some(v) = coef {
                idx[k] = 1;
                core.set(&idx, *v);
                idx[k] = 0;
            }
        }

        let truncated = tensor::st_hosvd(&core, &vec![1; d], Some(order))?;
        let lambda = truncated.core.data()[0];
        let mut vectors: Vec<DVector<T>> = bases
            .iter()
            .zip(&truncated.factors)
            .map(|(q, z)| q * z.column(0))
            .collect();
        let magnitude = truncated.core.frobenius_norm();
        if !(magnitude > T::epsilon() * (alpha + linalg::norm(x))) {
            return Err(Error::DegenerateRetraction);
        }
        vectors[0] *= lambda;
        Self::new(vectors)
    }
}
