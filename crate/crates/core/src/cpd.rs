//! Points of `S^{×r}` and the least-squares objective over them.
//!
//! For a target `B` the objective is `f(p) = ½‖Φ(p) − B‖²_F`, where `Φ` sums
//! the rank-one terms. Gradient and Gauss–Newton Hessian are expressed in the
//! orthonormal tangent coordinates of every term, ordered term-major: all
//! blocks of term 1, then all blocks of term 2, and so on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conditioning::{apply_gate, GateStrategy, GateVerdict};
use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;
use crate::scalar::Scalar;
use crate::segre::{coordinate_blocks, manifold_dim, RankOnePoint};
use crate::tensor::{self, DenseTensor};

/// Upper bound on `Π · r(Σ+1)` for explicit Jacobian assembly.
pub const EXPLICIT_ENTRY_LIMIT: usize = 50_000_000;

/// Relative Cholesky pivot below which the coefficient Gram matrix is
/// declared singular.
pub const GRAM_PIVOT_TOLERANCE: f64 = 1e-12;

/// A tuple of `r` rank-one tensors sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdPoint<T: Scalar> {
    shape: Vec<usize>,
    terms: Vec<RankOnePoint<T>>,
}

/// `Π / (Σ + 1)`, the strict upper bound on subgeneric ranks.
pub fn generic_rank_bound(shape: &[usize]) -> f64 {
    let pi: f64 = shape.iter().map(|&n| n as f64).product();
    pi / manifold_dim(shape) as f64
}

/// Checks that `r` is strictly subgeneric for `shape` and the order is ≥ 2.
pub fn check_rank(shape: &[usize], r: usize) -> Result<()> {
    if shape.len() < 2 {
        return Err(Error::InvalidShape("decompositions need order d ≥ 2".into()));
    }
    let bound = generic_rank_bound(shape);
    if r == 0 || (r as f64) >= bound {
        return Err(Error::NotSubgeneric { rank: r, shape: shape.to_vec(), bound });
    }
    Ok(())
}

impl<T: Scalar> CpdPoint<T> {
    pub fn new(terms: Vec<RankOnePoint<T>>) -> Result<Self> {
        let shape = terms
            .first()
            .ok_or_else(|| Error::InvalidShape("a decomposition needs at least one term".into()))?
            .shape();
        if let Some(bad) = terms.iter().find(|t| t.shape() != shape) {
            return Err(Error::ShapeMismatch(format!("term shapes {:?} and {:?}", shape, bad.shape())));
        }
        check_rank(&shape, terms.len())?;
        Ok(Self { shape, terms })
    }

    /// Builds the decomposition `⟦A₁, …, A_d⟧` from factor matrices.
    pub fn from_factor_matrices(factors: &[DMatrix<T>]) -> Result<Self> {
        let r = factors
            .first()
            .ok_or_else(|| Error::InvalidShape("no factor matrices".into()))?
            .ncols();
        if factors.iter().any(|a| a.ncols() != r) {
            return Err(Error::ShapeMismatch("factor matrices have different column counts".into()));
        }
        let terms = (0..r)
            .map(|i| RankOnePoint::new(factors.iter().map(|a| a.column(i).into_owned()).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[RankOnePoint<T>] {
        &self.terms
    }

    pub fn into_terms(self) -> Vec<RankOnePoint<T>> {
        self.terms
    }

    /// `Σ + 1`, coordinates per term.
    pub fn term_dim(&self) -> usize {
        manifold_dim(&self.shape)
    }

    /// `r(Σ + 1)`, the dimension of `S^{×r}`.
    pub fn dim(&self) -> usize {
        self.rank() * self.term_dim()
    }

    /// Factor matrix `A_k = [a_1⁽ᵏ⁾ ⋯ a_r⁽ᵏ⁾]` of the balanced representatives.
    pub fn factor_matrix(&self, mode: usize) -> DMatrix<T> {
        let cols: Vec<DVector<T>> = self.terms.iter().map(|t| t.vector(mode).clone()).collect();
        DMatrix::from_columns(&cols)
    }

    pub fn factor_matrices(&self) -> Vec<DMatrix<T>> {
        (0..self.order()).map(|k| self.factor_matrix(k)).collect()
    }

    /// `(Σ_k ‖A_k‖²_F)^{1/2}`.
    pub fn factor_norm(&self) -> T {
        self.terms
            .iter()
            .fold(T::zero(), |s, t| s + t.factor_norm() * t.factor_norm() * T::of(t.order() as f64))
            .sqrt()
    }

    /// Smallest radius `0.1 · sqrt((d/r) Σ_i ‖a_i⁽¹⁾‖²)`.
    pub fn min_radius(&self) -> T {
        let sum = self.terms.iter().fold(T::zero(), |s, t| s + t.factor_norm() * t.factor_norm());
        T::of(0.1) * (T::of(self.order() as f64) / T::of(self.rank() as f64) * sum).sqrt()
    }

    /// `Φ(p) = Σ_i p_i`.
    pub fn evaluate(&self) -> DenseTensor<T> {
        let mut out = DenseTensor::zeros(&self.shape).expect("validated shape");
        for t in &self.terms {
            out.axpy(T::one(), &t.to_tensor()).expect("common shape");
        }
        out
    }

    fn check_target(&self, target: &DenseTensor<T>) -> Result<()> {
        if target.shape() != self.shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "decomposition of shape {:?} vs target {:?}",
                self.shape,
                target.shape()
            )));
        }
        Ok(())
    }

    /// `Φ(p) − B`.
    pub fn residual(&self, target: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        self.check_target(target)?;
        self.evaluate().sub(target)
    }

    /// `½‖Φ(p) − B‖²_F`.
    pub fn objective(&self, target: &DenseTensor<T>) -> Result<T> {
        let r = self.residual(target)?;
        let n = r.frobenius_norm();
        Ok(T::of(0.5) * n * n)
    }

    /// Riemannian gradient `T_pᵀ vec(Φ(p) − B)`.
    pub fn gradient(&self, target: &DenseTensor<T>) -> Result<DVector<T>> {
        let residual = self.residual(target)?;
        self.gradient_from_residual(&residual)
    }

    /// Gradient for a precomputed residual `Φ(p) − B`.
    ///
    /// For each term the residual is contracted with all unit factor vectors
    /// but one: right partial contractions (last modes first) are formed
    /// once, then each mode's vector is finished by contracting the leading
    /// modes. The mode-`k` block is `U_kᵀ` (or the identity for the first
    /// mode) times that vector.
    pub fn gradient_from_residual(&self, residual: &DenseTensor<T>) -> Result<DVector<T>> {
        self.check_target(residual)?;
        let d = self.order();
        let n = self.term_dim();
        let blocks = coordinate_blocks(&self.shape);
        let mut g = DVector::<T>::zeros(self.dim());
        for (i, term) in self.terms.iter().enumerate() {
            // partial[k]: residual contracted over modes k+1..d, keeps modes 0..=k.
            let mut partial: Vec<DenseTensor<T>> = Vec::with_capacity(d);
            partial.push(residual.clone());
            for k in (1..d).rev() {
                let next = partial.last().expect("nonempty").contract_last(term.unit(k).as_slice())?;
                partial.push(next);
            }
            partial.reverse();
            for k in 0..d {
                let mut cur = partial[k].clone();
                for m in 0..k {
                    cur = cur.contract_first(term.unit(m).as_slice())?;
                }
                let v = DVector::from_column_slice(cur.data());
                let block = if k == 0 { v } else { term.tangent_factor(k).transpose() * v };
                g.rows_mut(i * n + blocks[k].start, blocks[k].len()).copy_from(&block);
            }
        }
        Ok(g)
    }

    /// Gauss–Newton Hessian `H_p = T_pᵀ T_p`, assembled block by block.
    ///
    /// With `V_{i,1} = I`, `V_{i,k} = U_{i,k}` and `γ_m = ⟨â_i⁽ᵐ⁾, â_j⁽ᵐ⁾⟩`, the
    /// `(i,k),(j,l)` block is
    ///
    /// * `V_{i,k}ᵀ V_{j,k} · Π_{m≠k} γ_m` when `k = l`,
    /// * `(V_{i,k}ᵀ â_j⁽ᵏ⁾)(V_{j,l}ᵀ â_i⁽ˡ⁾)ᵀ · Π_{m∉{k,l}} γ_m` otherwise.
    ///
    /// This is `Dᵀ(JᵀJ)D` with the Gram/Hadamard structure of `JᵀJ` written
    /// out directly in the orthonormal coordinates.
    pub fn gn_hessian(&self) -> DMatrix<T> {
        let d = self.order();
        let n = self.term_dim();
        let r = self.rank();
        let blocks = coordinate_blocks(&self.shape);
        let mut h = DMatrix::<T>::zeros(r * n, r * n);

        // V_{i,k}ᵀ applied to a vector.
        let project = |term: &RankOnePoint<T>, k: usize, v: &DVector<T>| -> DVector<T> {
            if k == 0 {
                v.clone()
            } else {
                term.tangent_factor(k).transpose() * v
            }
        };
        let product_except = |gamma: &[T], skip: &[usize]| -> T {
            gamma
                .iter()
                .enumerate()
                .filter(|(m, _)| !skip.contains(m))
                .fold(T::one(), |acc, (_, &g)| acc * g)
        };

        for i in 0..r {
            let ti = &self.terms[i];
            for j in i..r {
                let tj = &self.terms[j];
                let gamma: Vec<T> = (0..d).map(|m| ti.unit(m).dot(tj.unit(m))).collect();
                // cross[k] = V_{i,k}ᵀ â_j⁽ᵏ⁾ and back[l] = V_{j,l}ᵀ â_i⁽ˡ⁾.
                let cross: Vec<DVector<T>> = (0..d).map(|k| project(ti, k, tj.unit(k))).collect();
                let back: Vec<DVector<T>> = (0..d).map(|l| project(tj, l, ti.unit(l))).collect();
                for k in 0..d {
                    let rk = blocks[k].clone();
                    if rk.is_empty() {
                        continue;
                    }
                    for l in 0..d {
                        let rl = blocks[l].clone();
                        if rl.is_empty() {
                            continue;
                        }
                        let block = if k == l {
                            let scale = product_except(&gamma, &[k]);
                            let vv = if k == 0 {
                                DMatrix::identity(rk.len(), rl.len())
                            } else {
                                ti.tangent_factor(k).transpose() * tj.tangent_factor(k)
                            };
                            vv * scale
                        } else {
                            let scale = product_except(&gamma, &[k, l]);
                            &cross[k] * back[l].transpose() * scale
                        };
                        h.view_mut((i * n + rk.start, j * n + rl.start), (rk.len(), rl.len()))
                            .copy_from(&block);
                        if i != j {
                            h.view_mut((j * n + rl.start, i * n + rk.start), (rl.len(), rk.len()))
                                .copy_from(&block.transpose());
                        }
                    }
                }
            }
        }
        h
    }

    /// Gradient, Hessian and gate verdict in one pass.
    pub fn gn_system(&self, target: &DenseTensor<T>, gate: GateStrategy) -> Result<GnSystem<T>> {
        let gradient = self.gradient(target)?;
        let hessian = self.gn_hessian();
        let verdict = apply_gate(&hessian, gate);
        Ok(GnSystem { gradient, hessian, verdict })
    }

    /// Explicit `Π × r(Σ+1)` matrix `T_p = [T_{p₁} ⋯ T_{p_r}]`.
    ///
    /// Columns are formed as Kronecker products of the unit factor vectors
    /// and the tangent bases, independently of the contraction kernels.
    pub fn assemble_t_explicit(&self) -> Result<DMatrix<T>> {
        let pi: usize = self.shape.iter().product();
        let entries = pi.saturating_mul(self.dim());
        if entries > EXPLICIT_ENTRY_LIMIT {
            return Err(Error::SizeGuard { entries, limit: EXPLICIT_ENTRY_LIMIT });
        }
        let d = self.order();
        let n = self.term_dim();
        let blocks = coordinate_blocks(&self.shape);
        let mut t = DMatrix::<T>::zeros(pi, self.dim());
        for (i, term) in self.terms.iter().enumerate() {
            for (k, block) in blocks.iter().enumerate() {
                for c in 0..block.len() {
                    let basis_vec: Vec<T> = if k == 0 {
                        let mut e = vec![T::zero(); self.shape[0]];
                        e[c] = T::one();
                        e
                    } else {
                        term.tangent_factor(k).column(c).iter().copied().collect()
                    };
                    let mut col = vec![T::one()];
                    for m in 0..d {
                        col = if m == k {
                            tensor::kron(&col, &basis_vec)
                        } else {
                            tensor::kron(&col, term.unit(m).as_slice())
                        };
                    }
                    t.column_mut(i * n + block.start + c).copy_from_slice(&col);
                }
            }
        }
        Ok(t)
    }

    /// Applies the product retraction to coordinates `x ∈ ℝ^{r(Σ+1)}`.
    pub fn retract(&self, x: &DVector<T>) -> Result<Self> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "step has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let n = self.term_dim();
        let terms = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| t.retract(&x.as_slice()[i * n..(i + 1) * n]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { shape: self.shape.clone(), terms })
    }

    /// `T_p x` as a dense tensor.
    pub fn tangent_apply(&self, x: &DVector<T>) -> Result<DenseTensor<T>> {
        let n = self.term_dim();
        let mut out = DenseTensor::zeros(&self.shape)?;
        for (i, t) in self.terms.iter().enumerate() {
            out.axpy(T::one(), &t.tangent_apply(&x.as_slice()[i * n..(i + 1) * n])?)?;
        }
        Ok(out)
    }

    /// Replaces every term by `c_i · p_i`.
    pub fn scaled_terms(&self, coefficients: &DVector<T>) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .zip(coefficients.iter())
            .enumerate()
            .map(|(i, (t, &c))| {
                if c == T::zero() {
                    return Err(Error::ZeroCoefficient { term: i });
                }
                let mut vectors = t.vectors().to_vec();
                vectors[0] *= c;
                RankOnePoint::new(vectors)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms)
    }

    /// Optimal coefficients `x* = argmin ‖Σ x_i p_i − B‖` and the rescaled point.
    ///
    /// Solves `((A₁ᵀA₁) ∗ ⋯ ∗ (A_dᵀA_d)) x = (A₁ ⊙ ⋯ ⊙ A_d)ᵀ vec(B)` by Cholesky;
    /// the right-hand side is `r` full contractions of `B`.
    pub fn optimal_coefficients(&self, target: &DenseTensor<T>) -> Result<(DVector<T>, Self)> {
        let x = self.optimal_coefficient_values(target)?;
        let scaled = self.scaled_terms(&x)?;
        Ok((x, scaled))
    }

    pub fn optimal_coefficient_values(&self, target: &DenseTensor<T>) -> Result<DVector<T>> {
        self.check_target(target)?;
        let r = self.rank();
        let mut gram = DMatrix::<T>::from_element(r, r, T::one());
        for k in 0..self.order() {
            let a = self.factor_matrix(k);
            gram.component_mul_assign(&(a.transpose() * &a));
        }
        let rhs = DVector::from_iterator(
            r,
            self.terms.iter().map(|t| {
                let slices: Vec<&[T]> = t.vectors().iter().map(|v| v.as_slice()).collect();
                target.contract_all(&slices).expect("shapes checked")
            }),
        );
        let chol = CholeskyFactor::with_relative_cutoff(&gram, T::of(GRAM_PIVOT_TOLERANCE))
            .map_err(|b| Error::SingularGram { index: b.index })?;
        Ok(chol.solve(&rhs))
    }
}

/// Gradient, Gauss–Newton Hessian and the conditioning verdict at one point.
#[derive(Debug, Clone)]
pub struct GnSystem<T: Scalar> {
    pub gradient: DVector<T>,
    pub hessian: DMatrix<T>,
    pub verdict: GateVerdict<T>,
}

impl<T: Scalar> GnSystem<T> {
    pub fn cholesky(&self) -> Option<&CholeskyFactor<T>> {
        match &self.verdict {
            GateVerdict::WellConditioned(l) => Some(l),
            GateVerdict::IllConditioned(_) => None,
        }
    }
}

/// Serialized form: `{shape, r, factors}` with each factor matrix stored
/// column-major (column `i` is the mode-`k` vector of term `i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdFile {
    pub shape: Vec<usize>,
    pub r: usize,
    pub factors: Vec<Vec<f64>>,
}

impl CpdFile {
    pub fn from_cpd<T: Scalar>(p: &CpdPoint<T>) -> Self {
        let factors = (0..p.order())
            .map(|k| p.factor_matrix(k).as_slice().iter().map(|&x| x.as_f64()).collect())
            .collect();
        Self { shape: p.shape().to_vec(), r: p.rank(), factors }
    }

    pub fn factor_matrices<T: Scalar>(&self) -> Result<Vec<DMatrix<T>>> {
        if self.factors.len() != self.shape.len() {
            return Err(Error::Format(format!(
                "{} factor matrices for an order-{} shape",
                self.factors.len(),
                self.shape.len()
            )));
        }
        self.factors
            .iter()
            .zip(&self.shape)
            .map(|(f, &n)| {
                if f.len() != n * self.r {
                    return Err(Error::Format(format!("factor has {} entries, expected {}", f.len(), n * self.r)));
                }
                Ok(DMatrix::from_iterator(n, self.r, f.iter().map(|&x| T::of(x))))
            })
            .collect()
    }

    pub fn to_cpd<T: Scalar>(&self) -> Result<CpdPoint<T>> {
        CpdPoint::from_factor_matrices(&self.factor_matrices()?)
    }
}
