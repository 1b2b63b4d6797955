//! Riemannian Gauss–Newton with a dogleg trust region for low-rank CPD
//! approximation, with hot restarts or Tikhonov regularization as the
//! remedy for ill-conditioned Hessians.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conditioning::{apply_gate, condition_number_with, ConditionMethod, GateStrategy, GateVerdict};
use crate::cpd::{check_rank, CpdPoint};
use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;
use crate::scalar::Scalar;
use crate::segre::RankOnePoint;
use crate::tensor::DenseTensor;
use crate::trust_region::{self, TrustRegionState};

/// Attempts at drawing a random start before giving up.
pub const MAX_INIT_ATTEMPTS: usize = 100;

/// Relative Tikhonov weight; the shift is `weight · (‖Φ−B‖/‖B‖)^{3/4} · ‖H‖_F`.
pub const TIKHONOV_WEIGHT: f64 = 1e-10;

const MAX_SHIFT_ESCALATIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    HotRestarts,
    TikhonovReg,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::HotRestarts => "rgn-hr",
            Variant::TikhonovReg => "rgn-reg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tau_f: f64,
    pub tau_df: f64,
    pub tau_dx: f64,
    pub k_max: usize,
    pub r_max: usize,
    pub variant: Variant,
    pub seed: u64,
    pub gate: GateStrategy,
    /// Compute `κ` of the final point (explicit SVD when affordable).
    pub final_kappa: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau_f: 0.0,
            tau_df: 1e-10,
            tau_dx: 1e-12,
            k_max: 1500,
            r_max: 500,
            variant: Variant::HotRestarts,
            seed: 0,
            gate: GateStrategy::default(),
            final_kappa: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let tolerances = [("tau_f", self.tau_f), ("tau_df", self.tau_df), ("tau_dx", self.tau_dx)];
        for (name, v) in tolerances {
            if !(v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    ConvergedF,
    ConvergedDf,
    ConvergedDx,
    MaxIter,
    MaxRestarts,
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub f: f64,
    pub delta: f64,
    pub rho: Option<f64>,
    pub accepted: bool,
    #[serde(rename = "restart")]
    pub restart_triggered: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport<T: Scalar> {
    pub iterations: Vec<IterationRecord>,
    pub final_point: CpdPoint<T>,
    pub final_f: T,
    pub final_kappa: Option<T>,
    pub status: Status,
    pub wall_time: f64,
    pub restarts: usize,
}

impl<T: Scalar> RunReport<T> {
    /// Writes the trace as CSV with header `k,f,delta,rho,accepted,restart`.
    pub fn write_trace<W: Write>(&self, w: W) -> Result<()> {
        write_trace(&self.iterations, w)
    }

    pub fn relative_residual(&self, target: &DenseTensor<T>) -> Result<T> {
        Ok(self.final_point.residual(target)?.frobenius_norm() / target.frobenius_norm())
    }
}

pub fn write_trace<W: Write>(records: &[IterationRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for rec in records {
        wtr.serialize(rec).map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// `n_rows × n_cols` matrix of i.i.d. standard normal entries, filled
/// column by column.
pub fn standard_normal_matrix<T: Scalar, R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<T> {
    let mut m = DMatrix::<T>::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let x: f64 = StandardNormal.sample(rng);
            m[(i, j)] = T::of(x);
        }
    }
    m
}

pub fn standard_normal_vector<T: Scalar, R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<T> {
    DVector::from_iterator(
        n,
        (0..n).map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            T::of(x)
        }),
    )
}

/// Random factor matrices, optimally rescaled against `target`.
///
/// Draws are repeated while the rescaling fails (singular Gram matrix or a
/// zero coefficient), up to [`MAX_INIT_ATTEMPTS`] times.
pub fn random_start<T: Scalar, R: rand::Rng + ?Sized>(
    shape: &[usize],
    r: usize,
    target: &DenseTensor<T>,
    rng: &mut R,
) -> Result<CpdPoint<T>> {
    check_rank(shape, r)?;
    if target.shape() != shape {
        return Err(Error::ShapeMismatch(format!("target {:?} vs shape {:?}", target.shape(), shape)));
    }
    for _ in 0..MAX_INIT_ATTEMPTS {
        let factors: Vec<DMatrix<T>> = shape.iter().map(|&n| standard_normal_matrix(rng, n, r)).collect();
        let attempt = CpdPoint::from_factor_matrices(&factors).and_then(|p| p.optimal_coefficients(target));
        match attempt {
            Ok((_, p)) => return Ok(p),
            Err(Error::SingularGram { .. } | Error::ZeroCoefficient { .. } | Error::ZeroFactor { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::InitializationFailed(MAX_INIT_ATTEMPTS))
}

/// `α̂ = min(1/4, 10 · ‖B − Φ(p)‖ / ‖B‖)`.
pub fn restart_step_size<T: Scalar>(residual_norm: T, target_norm: T) -> T {
    (T::of(10.0) * residual_norm / target_norm).min(T::of(0.25))
}

/// Moves every factor vector towards a random direction of the same norm:
/// `a ← (1 − α) a + α (‖a‖/‖n‖) n`.
pub fn perturb_terms<T: Scalar, R: rand::Rng + ?Sized>(p: &CpdPoint<T>, alpha: T, rng: &mut R) -> Result<CpdPoint<T>> {
    let terms = p
        .terms()
        .iter()
        .map(|t| {
            let vectors = t
                .vectors()
                .iter()
                .map(|a| {
                    let n: DVector<T> = standard_normal_vector(rng, a.len());
                    let nn = n.norm();
                    let scale = if nn > T::zero() { alpha * a.norm() / nn } else { T::zero() };
                    a * (T::one() - alpha) + n * scale
                })
                .collect();
            RankOnePoint::new(vectors)
        })
        .collect::<Result<Vec<_>>>()?;
    CpdPoint::new(terms)
}

/// Outcome of a successful hot restart.
#[derive(Debug, Clone)]
pub struct HotRestart<T: Scalar> {
    pub point: CpdPoint<T>,
    pub hessian: DMatrix<T>,
    pub cholesky: CholeskyFactor<T>,
    pub attempts: usize,
}

/// Perturbs `p` with growing step sizes `α = t·α̂`, `t = 1, 2, …` (capped at
/// 1), optimally rescales, and stops at the first point whose Hessian passes
/// the gate. Every attempt counts against `max_attempts`.
pub fn hot_restart<T: Scalar, R: rand::Rng + ?Sized>(
    p: &CpdPoint<T>,
    target: &DenseTensor<T>,
    rng: &mut R,
    gate: GateStrategy,
    max_attempts: usize,
) -> Result<HotRestart<T>> {
    let residual = p.residual(target)?.frobenius_norm();
    let alpha_hat = restart_step_size(residual, target.frobenius_norm());
    for t in 1..=max_attempts {
        let alpha = (T::of(t as f64) * alpha_hat).min(T::one());
        let candidate = match perturb_terms(p, alpha, rng).and_then(|q| q.optimal_coefficients(target)) {
            Ok((_, q)) => q,
            Err(Error::SingularGram { .. } | Error::ZeroCoefficient { .. } | Error::ZeroFactor { .. }) => continue,
            Err(e) => return Err(e),
        };
        let hessian = candidate.gn_hessian();
        if let GateVerdict::WellConditioned(cholesky) = apply_gate(&hessian, gate) {
            return Ok(HotRestart { point: candidate, hessian, cholesky, attempts: t });
        }
    }
    Err(Error::RestartBudgetExhausted(max_attempts))
}

/// Cholesky of `H + μI` with `μ = weight · (‖Φ−B‖/‖B‖)^{3/4} · ‖H‖_F`.
///
/// Rounding can leave `H + μI` indefinite when `μ` is tiny; the shift is
/// then raised tenfold until the factorization succeeds.
pub fn tikhonov_factor<T: Scalar>(h: &DMatrix<T>, relative_residual: T) -> CholeskyFactor<T> {
    let hf = h.norm();
    let mut mu = T::of(TIKHONOV_WEIGHT) * relative_residual.powf(T::of(0.75)) * hf;
    let floor = T::epsilon() * hf.max(T::one());
    let n = h.nrows();
    for _ in 0..MAX_SHIFT_ESCALATIONS {
        let shifted = h + DMatrix::<T>::identity(n, n) * mu;
        if let Ok(f) = CholeskyFactor::new(&shifted) {
            return f;
        }
        mu = (mu * T::of(10.0)).max(floor);
    }
    // Only reachable for non-finite `H`: fall back to a scaled gradient step.
    CholeskyFactor::from_lower(DMatrix::<T>::identity(n, n) * hf.max(T::one()).sqrt())
}

/// Runs the solver from a random start drawn with `config.seed`.
pub fn solve<T: Scalar>(target: &DenseTensor<T>, r: usize, config: &SolverConfig) -> Result<RunReport<T>> {
    config.validate()?;
    check_rank(target.shape(), r)?;
    if target.frobenius_norm() == T::zero() {
        return Err(Error::ZeroTensor);
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p0 = random_start(target.shape(), r, target, &mut rng)?;
    let mut report = iterate(target, p0, config, &mut rng)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Runs the solver from a given starting point.
pub fn solve_from<T: Scalar>(target: &DenseTensor<T>, p0: CpdPoint<T>, config: &SolverConfig) -> Result<RunReport<T>> {
    config.validate()?;
    if target.frobenius_norm() == T::zero() {
        return Err(Error::ZeroTensor);
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = iterate(target, p0, config, &mut rng)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

fn iterate<T: Scalar>(
    target: &DenseTensor<T>,
    mut p: CpdPoint<T>,
    config: &SolverConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RunReport<T>> {
    let b_norm = target.frobenius_norm();
    let mut tr = TrustRegionState::new(p.min_radius(), b_norm / T::of(2.0));
    let mut f = p.objective(target)?;
    let f1 = if f > T::zero() { f } else { T::one() };
    let tau_f = T::of(config.tau_f);
    let tau_df = T::of(config.tau_df);
    let tau_dx = T::of(config.tau_dx);

    let mut records = Vec::new();
    let mut restarts = 0usize;
    let mut k = 0usize;

    let status = loop {
        if f <= tau_f {
            break Status::ConvergedF;
        }
        if k >= config.k_max {
            break Status::MaxIter;
        }
        k += 1;

        let mut restart_triggered = false;
        let mut hessian = p.gn_hessian();
        let factor = match config.variant {
            Variant::HotRestarts => match apply_gate(&hessian, config.gate) {
                GateVerdict::WellConditioned(l) => l,
                GateVerdict::IllConditioned(_) => {
                    restart_triggered = true;
                    match hot_restart(&p, target, rng, config.gate, config.r_max - restarts) {
                        Ok(hr) => {
                            restarts += hr.attempts;
                            p = hr.point;
                            hessian = hr.hessian;
                            f = p.objective(target)?;
                            tr.reset(p.min_radius());
                            hr.cholesky
                        }
                        Err(Error::RestartBudgetExhausted(n)) => {
                            restarts += n;
                            records.push(record(k, f, tr.delta, None, false, true));
                            break Status::MaxRestarts;
                        }
                        Err(e) => return Err(e),
                    }
                }
            },
            Variant::TikhonovReg => {
                let rel = p.residual(target)?.frobenius_norm() / b_norm;
                tikhonov_factor(&hessian, rel)
            }
        };

        let g = p.gradient(target)?;
        if g.norm() == T::zero() {
            records.push(record(k, f, tr.delta, None, false, restart_triggered));
            break Status::ConvergedDx;
        }
        let p_newton = trust_region::newton_direction(&factor, &g);
        let p_cauchy = match trust_region::cauchy_point(&hessian, &g) {
            Ok(c) => c,
            Err(_) => &g * (-tr.delta / g.norm()),
        };
        let step = trust_region::dogleg(&p_newton, &p_cauchy, tr.delta);
        let step_norm = step.norm();
        let decrease = step.model_decrease(&hessian, &g);

        let (rho, tentative) = match p.retract(&step.direction) {
            Ok(q) => {
                let f_new = q.objective(target)?;
                let rho = trust_region::trustworthiness(f, f_new, decrease).unwrap_or(-T::infinity());
                (rho, Some((q, f_new)))
            }
            Err(Error::DegenerateRetraction) => (-T::infinity(), None),
            Err(e) => return Err(e),
        };

        if tentative.is_none() && config.variant == Variant::HotRestarts {
            match hot_restart(&p, target, rng, config.gate, config.r_max - restarts) {
                Ok(hr) => {
                    restarts += hr.attempts;
                    p = hr.point;
                    f = p.objective(target)?;
                    tr.reset(p.min_radius());
                    records.push(record(k, f, tr.delta, None, false, true));
                    continue;
                }
                Err(Error::RestartBudgetExhausted(n)) => {
                    restarts += n;
                    records.push(record(k, f, tr.delta, None, false, true));
                    break Status::MaxRestarts;
                }
                Err(e) => return Err(e),
            }
        }

        let accepted = tr.accepts(rho);
        tr.update(rho, step_norm);
        let f_prev = f;
        if accepted {
            let (q, f_new) = tentative.expect("accepted steps have a tentative point");
            p = q;
            f = f_new;
        }
        records.push(record(k, f, tr.delta, Some(rho), accepted, restart_triggered));

        if accepted && (f_prev - f).abs() / f1 <= tau_df {
            break Status::ConvergedDf;
        }
        if step_norm / p.factor_norm() <= tau_dx {
            break Status::ConvergedDx;
        }
    };

    let final_kappa = if config.final_kappa { Some(final_condition(&p)?) } else { None };
    Ok(RunReport {
        iterations: records,
        final_point: p,
        final_f: f,
        final_kappa,
        status,
        wall_time: 0.0,
        restarts,
    })
}

fn record<T: Scalar>(k: usize, f: T, delta: T, rho: Option<T>, accepted: bool, restart: bool) -> IterationRecord {
    IterationRecord {
        k,
        f: f.as_f64(),
        delta: delta.as_f64(),
        rho: rho.map(|x| x.as_f64()),
        accepted,
        restart_triggered: restart,
    }
}

/// `κ` by explicit SVD, falling back to the Hessian eigenvalues when the
/// explicit matrix would be too large.
pub fn final_condition<T: Scalar>(p: &CpdPoint<T>) -> Result<T> {
    match condition_number_with(p, ConditionMethod::SvdExplicit) {
        Ok(r) => Ok(r.kappa),
        Err(Error::SizeGuard { .. }) => Ok(condition_number_with(p, ConditionMethod::EigOfH)?.kappa),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tikhonov_factor_handles_singular_and_nan() {
        let singular = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = tikhonov_factor(&singular, 0.0);
        assert!((f.reconstruct() - &singular).norm() <= 1e-12);
        let nan = DMatrix::<f64>::from_element(2, 2, f64::NAN);
        assert_eq!(tikhonov_factor(&nan, 0.5).dim(), 2);
    }

    #[test]
    fn restart_step_examples() {
        assert_eq!(restart_step_size(1.0, 1.0), 0.25);
        assert!((restart_step_size(1e-3f64, 1.0) - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn zero_alpha_keeps_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = DenseTensor::from_fn(&[3, 3, 3], |ix| (ix[0] * 9 + ix[1] * 3 + ix[2]) as f64 - 13.0).unwrap();
        let p = random_start(&[3, 3, 3], 2, &b, &mut rng).unwrap();
        let q = perturb_terms(&p, 0.0, &mut rng).unwrap();
        assert!(q.evaluate().sub(&p.evaluate()).unwrap().frobenius_norm() < 1e-13);
    }

    #[test]
    fn random_start_is_deterministic_and_rescaled() {
        let b = DenseTensor::from_fn(&[3, 3, 3], |ix| ((ix[0] + 1) * (ix[1] + 2)) as f64 - ix[2] as f64).unwrap();
        let p = random_start(&[3, 3, 3], 2, &b, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let q = random_start(&[3, 3, 3], 2, &b, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(p, q);
        let zero = DenseTensor::<f64>::zeros(&[3, 3, 3]).unwrap();
        assert_eq!(
            random_start(&[3, 3, 3], 2, &zero, &mut ChaCha8Rng::seed_from_u64(9)).unwrap_err(),
            Error::InitializationFailed(MAX_INIT_ATTEMPTS)
        );
    }

    #[test]
    fn single_iteration_budget() {
        let b = DenseTensor::from_fn(&[3, 3, 3], |ix| ((ix[0] + 1) * (ix[1] + 2)) as f64 - ix[2] as f64).unwrap();
        let config = SolverConfig { k_max: 1, tau_df: 0.0, tau_dx: 0.0, ..SolverConfig::default() };
        let report = solve(&b, 2, &config).unwrap();
        assert_eq!(report.status, Status::MaxIter);
        assert_eq!(report.iterations.len(), 1);
    }

    #[test]
    fn invalid_config_rejected() {
        let b = DenseTensor::from_fn(&[3, 3, 3], |_| 1.0).unwrap();
        let config = SolverConfig { k_max: 0, ..SolverConfig::default() };
        assert!(matches!(solve(&b, 1, &config), Err(Error::InvalidConfig(_))));
        let config = SolverConfig { tau_df: -1.0, ..SolverConfig::default() };
        assert!(matches!(solve(&b, 1, &config), Err(Error::InvalidConfig(_))));
    }
}
