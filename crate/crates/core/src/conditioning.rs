//! Condition number of the CPD at a point and the Cholesky-based gate.
//!
//! `κ(p) = 1 / σ_min(T_p)`, where `T_p` has orthonormal tangent columns per
//! term. It is infinite when `T_p` is rank deficient or has more columns
//! than rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cpd::CpdPoint;
use crate::error::Result;
use crate::linalg::CholeskyFactor;
use crate::scalar::Scalar;

/// Diagonal entries of `L` below this value mark `H_p` as ill-conditioned.
pub const GATE_THRESHOLD: f64 = 1e-5;

/// Relative singular-value floor below which `T_p` counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionMethod {
    /// Singular values of the explicitly assembled `T_p`.
    SvdExplicit,
    /// `λ_min(H_p)^{1/2}` from a symmetric eigendecomposition.
    EigOfH,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport<T: Scalar> {
    pub kappa: T,
    pub sigma_min: T,
    pub sigma_max: T,
    pub method: ConditionMethod,
}

impl<T: Scalar> ConditionReport<T> {
    fn from_extremes(sigma_min: T, sigma_max: T, method: ConditionMethod) -> Self {
        let deficient = !(sigma_min > T::of(RANK_TOLERANCE) * sigma_max) || sigma_min <= T::zero();
        let kappa = if deficient { T::infinity() } else { T::one() / sigma_min };
        Self { kappa, sigma_min, sigma_max, method }
    }

    fn infinite(method: ConditionMethod) -> Self {
        Self { kappa: T::infinity(), sigma_min: T::zero(), sigma_max: T::zero(), method }
    }
}

/// `κ(p)` from the explicit Jacobian.
pub fn condition_number<T: Scalar>(p: &CpdPoint<T>) -> Result<ConditionReport<T>> {
    condition_number_with(p, ConditionMethod::SvdExplicit)
}

pub fn condition_number_with<T: Scalar>(
    p: &CpdPoint<T>,
    method: ConditionMethod,
) -> Result<ConditionReport<T>> {
    match method {
        ConditionMethod::SvdExplicit => {
            let rows: usize = p.shape().iter().product();
            if p.dim() > rows {
                return Ok(ConditionReport::infinite(method));
            }
            let t = p.assemble_t_explicit()?;
            Ok(condition_from_matrix(&t))
        }
        ConditionMethod::EigOfH => Ok(condition_number_from_hessian(&p.gn_hessian())),
    }
}

/// Extreme singular values of a tall matrix.
pub fn condition_from_matrix<T: Scalar>(t: &DMatrix<T>) -> ConditionReport<T> {
    if t.ncols() > t.nrows() || t.ncols() == 0 {
        return ConditionReport::infinite(ConditionMethod::SvdExplicit);
    }
    let s = t.singular_values();
    let smax = s.iter().fold(T::zero(), |m, &x| m.max(x));
    let smin = s.iter().fold(T::infinity(), |m, &x| m.min(x));
    ConditionReport::from_extremes(smin, smax, ConditionMethod::SvdExplicit)
}

/// `κ` from the eigenvalues of `H_p = T_pᵀ T_p`.
///
/// Cheaper than the explicit route but limited to about half the working
/// precision, since the eigenvalues are squares of singular values.
pub fn condition_number_from_hessian<T: Scalar>(h: &DMatrix<T>) -> ConditionReport<T> {
    if h.ncols() == 0 {
        return ConditionReport::infinite(ConditionMethod::EigOfH);
    }
    let eig = h.clone().symmetric_eigenvalues();
    let lmax = eig.iter().fold(T::zero(), |m, &x| m.max(x));
    let lmin = eig.iter().fold(T::infinity(), |m, &x| m.min(x));
    let smin = lmin.max(T::zero()).sqrt();
    let smax = lmax.max(T::zero()).sqrt();
    // Eigenvalues carry errors of order ε·λ_max, hence the squared floor.
    let floor = T::of(RANK_TOLERANCE).sqrt() * smax;
    let mut r = ConditionReport::from_extremes(smin, smax, ConditionMethod::EigOfH);
    if !(smin > floor) {
        r.kappa = T::infinity();
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IllReason {
    /// A pivot was not positive (or was NaN).
    Breakdown { index: usize },
    /// The factorization finished but some `L_ii` fell below the threshold.
    SmallDiagonal { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateVerdict<T: Scalar> {
    WellConditioned(CholeskyFactor<T>),
    IllConditioned(IllReason),
}

impl<T: Scalar> GateVerdict<T> {
    pub fn is_well_conditioned(&self) -> bool {
        matches!(self, GateVerdict::WellConditioned(_))
    }
}

/// How the solver decides whether `H_p` is too ill-conditioned to trust.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateStrategy {
    /// Cholesky of `H_p`, flag if any `L_ii < threshold`.
    CholeskyDiagonal { threshold: f64 },
    /// Flag if `κ` from the eigenvalues of `H_p` exceeds the bound.
    Eigen { max_kappa: f64 },
}

impl Default for GateStrategy {
    fn default() -> Self {
        GateStrategy::CholeskyDiagonal { threshold: GATE_THRESHOLD }
    }
}

/// Cholesky gate with the default threshold.
pub fn cholesky_gate<T: Scalar>(h: &DMatrix<T>) -> GateVerdict<T> {
    cholesky_gate_with(h, T::of(GATE_THRESHOLD))
}

pub fn cholesky_gate_with<T: Scalar>(h: &DMatrix<T>, threshold: T) -> GateVerdict<T> {
    match CholeskyFactor::new(h) {
        Err(b) => GateVerdict::IllConditioned(IllReason::Breakdown { index: b.index }),
        Ok(f) => {
            let small = f.l().diagonal().iter().position(|&x| x < threshold);
            match small {
                Some(index) => GateVerdict::IllConditioned(IllReason::SmallDiagonal { index }),
                None => GateVerdict::WellConditioned(f),
            }
        }
    }
}

/// Applies `strategy` to `H_p`. A well-conditioned verdict always carries the
/// Cholesky factor used for the Newton step.
pub fn apply_gate<T: Scalar>(h: &DMatrix<T>, strategy: GateStrategy) -> GateVerdict<T> {
    match strategy {
        GateStrategy::CholeskyDiagonal { threshold } => cholesky_gate_with(h, T::of(threshold)),
        GateStrategy::Eigen { max_kappa } => {
            let report = condition_number_from_hessian(h);
            if !(report.kappa <= T::of(max_kappa)) {
                return GateVerdict::IllConditioned(IllReason::SmallDiagonal { index: 0 });
            }
            match CholeskyFactor::new(h) {
                Ok(f) => GateVerdict::WellConditioned(f),
                Err(b) => GateVerdict::IllConditioned(IllReason::Breakdown { index: b.index }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segre::RankOnePoint;
    use nalgebra::DVector;

    #[test]
    fn gate_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!(cholesky_gate(&id).is_well_conditioned());
        let small = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-12]));
        assert_eq!(
            cholesky_gate(&small),
            GateVerdict::IllConditioned(IllReason::SmallDiagonal { index: 1 })
        );
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(
            cholesky_gate(&indefinite),
            GateVerdict::IllConditioned(IllReason::Breakdown { index: 1 })
        );
        let nan = DMatrix::from_element(1, 1, f64::NAN);
        assert!(!cholesky_gate(&nan).is_well_conditioned());
    }

    #[test]
    fn single_term_has_unit_condition() {
        let t = RankOnePoint::<f64>::from_slices(&[&[1.0, 2.0, 0.5][..], &[0.0, 1.0, -1.0], &[3.0, 1.0, 1.0]]).unwrap();
        let p = CpdPoint::new(vec![t]).unwrap();
        let r = condition_number(&p).unwrap();
        assert!((r.kappa - 1.0).abs() < 1e-12);
        let e = condition_number_with(&p, ConditionMethod::EigOfH).unwrap();
        assert!((e.kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_term_is_infinite() {
        let v: &[&[f64]] = &[&[1.0, 2.0, 0.5], &[0.0, 1.0, -1.0], &[3.0, 1.0, 1.0]];
        let w: &[&[f64]] = &[&[-2.0, -4.0, -1.0], &[0.0, 1.0, -1.0], &[3.0, 1.0, 1.0]];
        let p = CpdPoint::new(vec![RankOnePoint::from_slices(v).unwrap(), RankOnePoint::from_slices(w).unwrap()])
            .unwrap();
        assert!(condition_number(&p).unwrap().kappa.is_infinite());
    }
}
