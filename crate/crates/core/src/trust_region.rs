//! Dogleg steps and radius management for the Gauss–Newton model
//! `m(s) = f + gᵀs + ½ sᵀHs`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;
use crate::scalar::Scalar;

pub const ACCEPT_THRESHOLD: f64 = 0.2;
pub const ENLARGE_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionState<T: Scalar> {
    pub delta: T,
    pub delta_max: T,
    pub accept_threshold: T,
    pub enlarge_threshold: T,
}

impl<T: Scalar> TrustRegionState<T> {
    /// Starts at `min(delta_min, delta_max)`.
    pub fn new(delta_min: T, delta_max: T) -> Self {
        Self {
            delta: delta_min.min(delta_max),
            delta_max,
            accept_threshold: T::of(ACCEPT_THRESHOLD),
            enlarge_threshold: T::of(ENLARGE_THRESHOLD),
        }
    }

    pub fn reset(&mut self, delta_min: T) {
        self.delta = delta_min.min(self.delta_max);
    }

    pub fn accepts(&self, rho: T) -> bool {
        rho > self.accept_threshold
    }

    /// Updates `Δ` from `ρ` and the length of the step just tried.
    pub fn update(&mut self, rho: T, step_norm: T) -> T {
        self.delta = if rho > self.enlarge_threshold {
            (T::of(2.0) * step_norm).min(self.delta_max)
        } else {
            (shrink_factor(rho) * self.delta).min(self.delta_max)
        };
        self.delta
    }
}

/// `1/3 + (2/3) / (1 + e^{−14(ρ − 1/3)})`; `NaN` maps to the smallest factor.
pub fn shrink_factor<T: Scalar>(rho: T) -> T {
    let third = T::one() / T::of(3.0);
    if rho.partial_cmp(&rho).is_none() {
        return third;
    }
    let e = (-T::of(14.0) * (rho - third)).exp();
    third + (T::of(2.0) * third) / (T::one() + e)
}

/// Solves `L Lᵀ p = −g`.
pub fn newton_direction<T: Scalar>(l: &CholeskyFactor<T>, g: &DVector<T>) -> DVector<T> {
    -l.solve(g)
}

/// `p_C = −(gᵀg / gᵀHg) g`.
pub fn cauchy_point<T: Scalar>(h: &DMatrix<T>, g: &DVector<T>) -> Result<DVector<T>> {
    let gg = g.dot(g);
    let ghg = g.dot(&(h * g));
    if !(ghg > T::zero()) {
        return Err(Error::NonPositiveCurvature);
    }
    Ok(g * (-(gg / ghg)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Newton,
    Cauchy,
    Interpolated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoglegStep<T: Scalar> {
    pub direction: DVector<T>,
    pub kind: StepKind,
    /// `τ − 1` for interpolated steps, `None` otherwise.
    pub segment: Option<T>,
}

impl<T: Scalar> DoglegStep<T> {
    pub fn norm(&self) -> T {
        self.direction.norm()
    }

    /// `m(0) − m(s) = −(gᵀs + ½ sᵀHs)`.
    pub fn model_decrease(&self, h: &DMatrix<T>, g: &DVector<T>) -> T {
        model_decrease(h, g, &self.direction)
    }
}

pub fn model_decrease<T: Scalar>(h: &DMatrix<T>, g: &DVector<T>, s: &DVector<T>) -> T {
    -(g.dot(s) + T::of(0.5) * s.dot(&(h * s)))
}

/// Dogleg rule. A Cauchy point outside the ball is scaled back to its boundary.
pub fn dogleg<T: Scalar>(p_newton: &DVector<T>, p_cauchy: &DVector<T>, delta: T) -> DoglegStep<T> {
    let nn = p_newton.norm();
    if nn <= delta {
        return DoglegStep { direction: p_newton.clone(), kind: StepKind::Newton, segment: None };
    }
    let nc = p_cauchy.norm();
    if nc >= delta {
        let direction = if nc > T::zero() { p_cauchy * (delta / nc) } else { p_cauchy.clone() };
        return DoglegStep { direction, kind: StepKind::Cauchy, segment: None };
    }
    // ‖p_C + s·v‖ = Δ with v = p_N − p_C, s ∈ [0, 1].
    let v = p_newton - p_cauchy;
    let a = v.dot(&v);
    let b = T::of(2.0) * p_cauchy.dot(&v);
    let c = nc * nc - delta * delta;
    let disc = (b * b - T::of(4.0) * a * c).max(T::zero()).sqrt();
    // c < 0, so the positive root is taken; pick the cancellation-free form.
    let s = if b >= T::zero() { (T::of(2.0) * c) / (-b - disc) } else { (-b + disc) / (T::of(2.0) * a) };
    let s = s.max(T::zero()).min(T::one());
    let direction = p_cauchy + &v * s;
    DoglegStep { direction, kind: StepKind::Interpolated, segment: Some(s) }
}

/// `ρ = (f_old − f_new) / decrease`.
pub fn trustworthiness<T: Scalar>(f_old: T, f_new: T, model_decrease: T) -> Result<T> {
    if !(model_decrease > T::zero()) {
        return Err(Error::ZeroModelDecrease);
    }
    Ok((f_old - f_new) / model_decrease)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn newton_examples() {
        let l = CholeskyFactor::new(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(newton_direction(&l, &v(&[1.0, 0.0])), v(&[-1.0, 0.0]));
        let h = DMatrix::from_diagonal(&v(&[4.0, 1.0]));
        let l = CholeskyFactor::new(&h).unwrap();
        assert_relative_eq!(newton_direction(&l, &v(&[4.0, 1.0])), v(&[-1.0, -1.0]), epsilon = 1e-15);
    }

    #[test]
    fn cauchy_examples() {
        let g = v(&[0.3, -1.2, 2.0]);
        assert_relative_eq!(cauchy_point(&DMatrix::identity(3, 3), &g).unwrap(), -&g, epsilon = 1e-15);
        assert_relative_eq!(
            cauchy_point(&(DMatrix::identity(3, 3) * 2.0), &g).unwrap(),
            -&g / 2.0,
            epsilon = 1e-15
        );
        assert_eq!(cauchy_point(&DMatrix::zeros(3, 3), &g), Err(Error::NonPositiveCurvature));
    }

    #[test]
    fn dogleg_branches() {
        let pn = v(&[-3.0, 0.0]);
        let pc = v(&[-1.0, 0.0]);
        assert_eq!(dogleg(&pn, &pc, 10.0).kind, StepKind::Newton);

        let step = dogleg(&pn, &pc, 2.0);
        assert_eq!(step.kind, StepKind::Interpolated);
        assert_eq!(step.segment, Some(0.5));
        assert_eq!(step.direction, v(&[-2.0, 0.0]));

        let step = dogleg(&pn, &pc, 0.5);
        assert_eq!(step.kind, StepKind::Cauchy);
        assert_eq!(step.direction, v(&[-0.5, 0.0]));
    }

    #[test]
    fn radius_schedule() {
        assert_eq!(shrink_factor(1.0 / 3.0), 2.0 / 3.0);
        assert_relative_eq!(shrink_factor(-1e6), 1.0 / 3.0);
        let mut s = TrustRegionState::new(1.0, 10.0);
        assert_eq!(s.update(0.7, 1.0), 2.0);
        s.delta = 9.0;
        assert_eq!(s.update(0.9, 8.0), 10.0);
        assert!(s.accepts(0.21));
        assert!(!s.accepts(0.2));
    }

    #[test]
    fn trustworthiness_examples() {
        assert_relative_eq!(trustworthiness(1.0, 0.7, 0.5).unwrap(), 0.6, epsilon = 1e-15);
        assert!(trustworthiness(1.0, 1.5, 0.5).unwrap() < 0.0);
        assert_eq!(trustworthiness(1.0, 0.5, 0.0), Err(Error::ZeroModelDecrease));
    }
}
