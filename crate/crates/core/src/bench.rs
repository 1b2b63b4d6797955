//! Synthetic CPD problems, success classification and expected time to
//! success (ETS).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::condition_number;
use crate::cpd::CpdPoint;
use crate::error::{Error, Result};
use crate::linalg::CholeskyFactor;
use crate::scalar::Scalar;
use crate::solver::{self, standard_normal_matrix, IterationRecord, SolverConfig, Status, Variant};
use crate::tensor::DenseTensor;

/// Residual tolerance relative to the noise level.
pub const RESIDUAL_FACTOR: f64 = 1.1;
/// Allowed growth of `κ` relative to the true decomposition.
pub const KAPPA_FACTOR: f64 = 50.0;
/// Inner rank of the low-rank perturbation in model G.
pub const MODEL_G_INNER_RANK: usize = 5;

pub const DEFAULT_SHAPE_F: [usize; 3] = [10, 10, 10];
pub const DEFAULT_SHAPE_G: [usize; 3] = [13, 11, 9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Model {
    /// Correlated columns (`c`) with geometrically spread norms (`s`).
    F { c: f64, s: f64 },
    /// Factor matrices close to rank 5 (`s` controls how close).
    G { s: f64 },
}

impl Model {
    pub fn default_shape(&self) -> Vec<usize> {
        match self {
            Model::F { .. } => DEFAULT_SHAPE_F.to_vec(),
            Model::G { .. } => DEFAULT_SHAPE_G.to_vec(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Model::F { c, s } => format!("F({c},{s})"),
            Model::G { s } => format!("G({s})"),
        }
    }

    pub fn sample<T: Scalar, R: rand::Rng + ?Sized>(&self, shape: &[usize], r: usize, rng: &mut R) -> Result<CpdPoint<T>> {
        match *self {
            Model::F { c, s } => sample_model_f(shape, r, c, s, rng),
            Model::G { s } => sample_model_g(shape, r, s, rng),
        }
    }
}

/// Upper Cholesky factor of `c·11ᵀ + (1 − c)I`.
pub fn correlation_factor<T: Scalar>(r: usize, c: f64) -> Result<DMatrix<T>> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::InvalidConfig(format!("correlation c = {c} outside [0, 1)")));
    }
    let c = T::of(c);
    let m = DMatrix::<T>::from_fn(r, r, |i, j| if i == j { T::one() } else { c });
    let l = CholeskyFactor::new(&m).map_err(|_| Error::InvalidConfig("correlation matrix not positive definite".into()))?;
    Ok(l.l().transpose())
}

/// `A_k = N_k R_c diag(10^{js/(3r)})`, `j = 1..r`.
pub fn sample_model_f<T: Scalar, R: rand::Rng + ?Sized>(
    shape: &[usize],
    r: usize,
    c: f64,
    s: f64,
    rng: &mut R,
) -> Result<CpdPoint<T>> {
    if !(s >= 0.0) {
        return Err(Error::InvalidConfig(format!("s = {s} must be ≥ 0")));
    }
    let rc = correlation_factor::<T>(r, c)?;
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(
        r,
        (1..=r).map(|j| T::of(10f64.powf(j as f64 * s / (3.0 * r as f64)))),
    ));
    let right = &rc * scale;
    let factors: Vec<DMatrix<T>> = shape
        .iter()
        .map(|&n| standard_normal_matrix::<T, _>(rng, n, r) * &right)
        .collect();
    CpdPoint::from_factor_matrices(&factors)
}

/// `A_k = N_k (10^{(2−s)/2} I + X_k Y_kᵀ) diag(5^{j/(r−1)})`, `j = 0..r−1`.
pub fn sample_model_g<T: Scalar, R: rand::Rng + ?Sized>(shape: &[usize], r: usize, s: f64, rng: &mut R) -> Result<CpdPoint<T>> {
    if r < 2 {
        return Err(Error::InvalidConfig("model G needs r ≥ 2".into()));
    }
    if !(s >= 0.0) {
        return Err(Error::InvalidConfig(format!("s = {s} must be ≥ 0")));
    }
    let shift = T::of(10f64.powf((2.0 - s) / 2.0));
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(
        r,
        (0..r).map(|j| T::of(5f64.powf(j as f64 / (r - 1) as f64))),
    ));
    let factors: Vec<DMatrix<T>> = shape
        .iter()
        .map(|&n| {
            let nk = standard_normal_matrix::<T, _>(rng, n, r);
            let x = standard_normal_matrix::<T, _>(rng, r, MODEL_G_INNER_RANK);
            let y = standard_normal_matrix::<T, _>(rng, r, MODEL_G_INNER_RANK);
            let inner = DMatrix::<T>::identity(r, r) * shift + x * y.transpose();
            nk * inner * &scale
        })
        .collect();
    CpdPoint::from_factor_matrices(&factors)
}

/// `A/‖A‖ + 10^{−e} E/‖E‖` with standard normal `E`.
pub fn perturb<T: Scalar, R: rand::Rng + ?Sized>(a: &DenseTensor<T>, e: f64, rng: &mut R) -> Result<DenseTensor<T>> {
    let na = a.frobenius_norm();
    if na == T::zero() {
        return Err(Error::ZeroTensor);
    }
    let noise = DenseTensor::new(
        a.shape().to_vec(),
        solver::standard_normal_vector::<T, _>(rng, a.len()).as_slice().to_vec(),
    )?;
    let level = T::of(10f64.powf(-e)) / noise.frobenius_norm();
    let mut b = a.scaled(T::one() / na);
    b.axpy(level, &noise)?;
    Ok(b)
}

/// Success test against a fixed clean tensor and reference condition number.
#[derive(Debug, Clone)]
pub struct SuccessCriterion<T: Scalar> {
    /// `A/‖A‖`.
    pub reference: DenseTensor<T>,
    pub kappa_truth: T,
    pub residual_bound: T,
}

impl<T: Scalar> SuccessCriterion<T> {
    pub fn new(a_clean: &DenseTensor<T>, kappa_truth: T, e: f64) -> Result<Self> {
        let na = a_clean.frobenius_norm();
        if na == T::zero() {
            return Err(Error::ZeroTensor);
        }
        Ok(Self {
            reference: a_clean.scaled(T::one() / na),
            kappa_truth,
            residual_bound: T::of(RESIDUAL_FACTOR * 10f64.powf(-e)),
        })
    }

    pub fn residual(&self, result: &CpdPoint<T>) -> Result<T> {
        Ok(result.residual(&self.reference)?.frobenius_norm())
    }

    pub fn accepts(&self, residual: T, kappa: T) -> bool {
        residual <= self.residual_bound && kappa <= T::of(KAPPA_FACTOR) * self.kappa_truth
    }
}

/// Residual within 10% of the noise level and `κ` within a factor 50 of the
/// truth's.
pub fn classify_success<T: Scalar>(
    result: &CpdPoint<T>,
    truth: &CpdPoint<T>,
    a_clean: &DenseTensor<T>,
    e: f64,
) -> Result<bool> {
    let criterion = SuccessCriterion::new(a_clean, condition_number(truth)?.kappa, e)?;
    let residual = criterion.residual(result)?;
    if !(residual <= criterion.residual_bound) {
        return Ok(false);
    }
    Ok(criterion.accepts(residual, condition_number(result)?.kappa))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtsEstimate {
    pub attempts: usize,
    pub p_success: f64,
    /// Mean seconds over successes (0 when there are none).
    pub t_success: f64,
    /// Mean seconds over failures (0 when there are none).
    pub t_fail: f64,
    /// Infinite when nothing succeeded; serialized as `null`.
    pub ets: f64,
}

/// `ETS = (p_fail·t_fail + p_success·t_success) / p_success`.
pub fn estimate_ets(outcomes: &[Outcome]) -> EtsEstimate {
    let n = outcomes.len();
    let mean = |ok: bool| {
        let xs: Vec<f64> = outcomes.iter().filter(|o| o.success == ok).map(|o| o.seconds).collect();
        if xs.is_empty() {
            (0, 0.0)
        } else {
            (xs.len(), xs.iter().sum::<f64>() / xs.len() as f64)
        }
    };
    let (ns, t_success) = mean(true);
    let (_, t_fail) = mean(false);
    let p_success = if n == 0 { 0.0 } else { ns as f64 / n as f64 };
    let ets = ets_formula(p_success, t_success, t_fail);
    EtsEstimate { attempts: n, p_success, t_success, t_fail, ets }
}

pub fn ets_formula(p_success: f64, t_success: f64, t_fail: f64) -> f64 {
    if p_success > 0.0 {
        ((1.0 - p_success) * t_fail + p_success * t_success) / p_success
    } else {
        f64::INFINITY
    }
}

/// A named solver configuration taking part in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub name: String,
    pub config: SolverConfig,
}

impl SolverSpec {
    /// Settings used for the exact-recovery experiments: `τ_f = 0`,
    /// `τ_Δf = 10^{−2e}`, `τ_Δx = 10^{−12}`, 1500 iterations, 500 restarts.
    pub fn standard(variant: Variant, e: f64) -> Self {
        Self {
            name: variant.label().to_string(),
            config: SolverConfig { variant, tau_df: 10f64.powf(-2.0 * e), ..SolverConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: Model,
    pub shape: Vec<usize>,
    pub rank: usize,
    pub e: f64,
    pub starts: usize,
    pub solvers: Vec<SolverSpec>,
    pub seed: u64,
    #[serde(default)]
    pub record_traces: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0) {
            return Err(Error::InvalidConfig(format!("noise exponent e = {} must be > 0", self.e)));
        }
        if self.starts == 0 {
            return Err(Error::InvalidConfig("at least one start per solver".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::InvalidConfig("no solvers to compare".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub solver: String,
    pub index: usize,
    pub seed: u64,
    pub success: bool,
    pub seconds: f64,
    pub status: Option<Status>,
    pub iterations: usize,
    pub restarts: usize,
    pub residual: Option<f64>,
    pub kappa: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub solver: String,
    pub ets: EtsEstimate,
    /// `ETS_solver / ETS_reference`; `null` when undefined.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: String,
    pub shape: Vec<usize>,
    pub shape_is_default: bool,
    pub rank: usize,
    pub e: f64,
    pub starts: usize,
    pub seed: u64,
    pub kappa_truth: f64,
    /// Solver whose ETS is the denominator of every speedup.
    pub reference_solver: String,
    pub solvers: Vec<SolverSummary>,
    pub attempts: Vec<AttemptRecord>,
}

impl ExperimentReport {
    pub fn summary(&self, solver: &str) -> Option<&SolverSummary> {
        self.solvers.iter().find(|s| s.solver == solver)
    }

    /// One row per solver: `solver,attempts,p_success,t_success,t_fail,ets,speedup`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            solver: &'a str,
            attempts: usize,
            p_success: f64,
            t_success: f64,
            t_fail: f64,
            ets: f64,
            speedup: Option<f64>,
        }
        let mut wtr = csv::Writer::from_writer(w);
        for s in &self.solvers {
            wtr.serialize(Row {
                solver: &s.solver,
                attempts: s.ets.attempts,
                p_success: s.ets.p_success,
                t_success: s.ets.t_success,
                t_fail: s.ets.t_fail,
                ets: s.ets.ets,
                speedup: s.speedup,
            })
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Seed of attempt `index`; shared by all solvers so they start from the
/// same random points.
pub fn attempt_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples one truth, perturbs it once, and runs every solver from
/// `starts` random points. Attempts run sequentially in index order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth: CpdPoint<f64> = spec.model.sample(&spec.shape, spec.rank, &mut rng)?;
    let clean = truth.evaluate();
    let target = perturb(&clean, spec.e, &mut rng)?;
    let kappa_truth = condition_number(&truth)?.kappa;
    let criterion = SuccessCriterion::new(&clean, kappa_truth, spec.e)?;

    let mut attempts = Vec::new();
    for solver in &spec.solvers {
        for index in 0..spec.starts {
            let seed = attempt_seed(spec.seed, index);
            let config = SolverConfig { seed, final_kappa: true, ..solver.config.clone() };
            attempts.push(run_attempt(&target, spec.rank, &config, &criterion, &solver.name, index, spec.record_traces));
        }
    }

    let reference = spec
        .solvers
        .iter()
        .find(|s| s.config.variant == Variant::HotRestarts)
        .unwrap_or(&spec.solvers[0])
        .name
        .clone();
    let mut solvers: Vec<SolverSummary> = spec
        .solvers
        .iter()
        .map(|s| {
            let outcomes: Vec<Outcome> = attempts
                .iter()
                .filter(|a| a.solver == s.name)
                .map(|a| Outcome { success: a.success, seconds: a.seconds })
                .collect();
            SolverSummary { solver: s.name.clone(), ets: estimate_ets(&outcomes), speedup: None }
        })
        .collect();
    let reference_ets = solvers.iter().find(|s| s.solver == reference).map(|s| s.ets.ets);
    for s in &mut solvers {
        s.speedup = reference_ets.and_then(|r| speedup(s.ets.ets, r));
    }

    Ok(ExperimentReport {
        model: spec.model.label(),
        shape: spec.shape.clone(),
        shape_is_default: spec.shape == spec.model.default_shape(),
        rank: spec.rank,
        e: spec.e,
        starts: spec.starts,
        seed: spec.seed,
        kappa_truth,
        reference_solver: reference,
        solvers,
        attempts,
    })
}

/// `ETS_M / ETS_ref`, `None` when both are infinite.
pub fn speedup(ets_m: f64, ets_ref: f64) -> Option<f64> {
    let s = ets_m / ets_ref;
    if s.is_nan() {
        None
    } else {
        Some(s)
    }
}

fn run_attempt(
    target: &DenseTensor<f64>,
    rank: usize,
    config: &SolverConfig,
    criterion: &SuccessCriterion<f64>,
    name: &str,
    index: usize,
    keep_trace: bool,
) -> AttemptRecord {
    let start = std::time::Instant::now();
    let result = solver::solve(target, rank, config);
    let mut rec = AttemptRecord {
        solver: name.to_string(),
        index,
        seed: config.seed,
        success: false,
        seconds: 0.0,
        status: None,
        iterations: 0,
        restarts: 0,
        residual: None,
        kappa: None,
        error: None,
        trace: Vec::new(),
    };
    match result {
        Ok(report) => {
            rec.seconds = report.wall_time;
            rec.status = Some(report.status);
            rec.iterations = report.iterations.len();
            rec.restarts = report.restarts;
            let kappa = report.final_kappa.unwrap_or(f64::INFINITY);
            rec.kappa = Some(kappa);
            match criterion.residual(&report.final_point) {
                Ok(res) => {
                    rec.residual = Some(res);
                    rec.success = criterion.accepts(res, kappa);
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            if keep_trace {
                rec.trace = report.iterations;
            }
        }
        Err(e) => {
            rec.seconds = start.elapsed().as_secs_f64();
            rec.error = Some(e.to_string());
        }
    }
    rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn correlation_factor_examples() {
        assert_eq!(correlation_factor::<f64>(3, 0.0).unwrap(), DMatrix::identity(3, 3));
        let r = correlation_factor::<f64>(2, 0.5).unwrap();
        assert_relative_eq!(r, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.75f64.sqrt()]), epsilon = 1e-15);
        assert!(correlation_factor::<f64>(2, 1.0).is_err());
    }

    #[test]
    fn model_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: CpdPoint<f64> = sample_model_g(&DEFAULT_SHAPE_G, 4, 1.0, &mut rng).unwrap();
        let shapes: Vec<_> = p.factor_matrices().iter().map(|a| a.shape()).collect();
        assert_eq!(shapes, vec![(13, 4), (11, 4), (9, 4)]);
        assert!(sample_model_g::<f64, _>(&DEFAULT_SHAPE_G, 1, 1.0, &mut rng).is_err());
        let q: CpdPoint<f64> = sample_model_f(&DEFAULT_SHAPE_F, 5, 0.25, 1.0, &mut rng).unwrap();
        assert_eq!(q.rank(), 5);
    }

    #[test]
    fn perturbation_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DenseTensor::from_fn(&[3, 4, 2], |ix| (ix[0] + 2 * ix[1]) as f64 - ix[2] as f64 * 3.0).unwrap();
        let b = perturb(&a, 3.0, &mut rng).unwrap();
        let a_unit = a.scaled(1.0 / a.frobenius_norm());
        assert_relative_eq!(b.sub(&a_unit).unwrap().frobenius_norm(), 1e-3, max_relative = 1e-12);
        let b2 = perturb(&a, 3.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(b, b2);
        assert_eq!(perturb(&DenseTensor::<f64>::zeros(&[2, 2]).unwrap(), 1.0, &mut rng), Err(Error::ZeroTensor));
    }

    #[test]
    fn ets_examples() {
        let all = [Outcome { success: true, seconds: 1.0 }; 4];
        assert_eq!(estimate_ets(&all).ets, 1.0);
        let half = [Outcome { success: true, seconds: 1.0 }, Outcome { success: false, seconds: 1.0 }];
        assert_eq!(estimate_ets(&half).ets, 2.0);
        let none = [Outcome { success: false, seconds: 1.0 }];
        assert!(estimate_ets(&none).ets.is_infinite());
    }

    #[test]
    fn criterion_thresholds() {
        let a = DenseTensor::from_fn(&[2, 2, 2], |ix| (ix[0] + ix[1] + ix[2]) as f64 + 1.0).unwrap();
        let c = SuccessCriterion::new(&a, 2.0, 5.0).unwrap();
        assert!(c.accepts(1.0e-5, 2.0));
        assert!(!c.accepts(1.2e-5, 2.0));
        assert!(!c.accepts(1e-9, 200.0));
        assert!(c.accepts(1e-9, 100.0));
    }
}
