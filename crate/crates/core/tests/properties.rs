use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use segre_cpd::bench::{estimate_ets, perturb, Outcome, SuccessCriterion};
use segre_cpd::conditioning::{condition_number, condition_number_with, ConditionMethod};
use segre_cpd::cpd::CpdFile;
use segre_cpd::io::{read_dten_record, read_dten_records, tucker_from_records, write_dten, write_tucker};
use segre_cpd::linalg::CholeskyFactor;
use segre_cpd::solver::{standard_normal_matrix, standard_normal_vector};
use segre_cpd::tensor::st_hosvd;
use segre_cpd::trust_region::{cauchy_point, dogleg, model_decrease, newton_direction, shrink_factor, StepKind};
use segre_cpd::{Cpd, RankOne, Tensor};

/// Shapes for which ranks up to 3 are strictly subgeneric.
fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(3usize..=5, 3..=4)
}

fn random_cpd(shape: &[usize], r: usize, rng: &mut ChaCha8Rng) -> Cpd {
    let factors: Vec<DMatrix<f64>> = shape.iter().map(|&n| standard_normal_matrix(rng, n, r)).collect();
    Cpd::from_factor_matrices(&factors).unwrap()
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), standard_normal_vector::<f64, _>(rng, len).as_slice().to_vec()).unwrap()
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a: DMatrix<f64> = standard_normal_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 1e-3
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn balanced_representative(shape in shape_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs: Vec<DVector<f64>> = shape.iter().map(|&n| standard_normal_vector(&mut rng, n)).collect();
        let slices: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let expected = Tensor::outer(&slices).unwrap();
        let p = RankOne::new(vs.clone()).unwrap();
        let nu = p.factor_norm();
        for (k, v) in p.vectors().iter().enumerate() {
            prop_assert!((v.norm() - nu).abs() <= 1e-12 * nu);
            prop_assert!((p.unit(k).norm() - 1.0).abs() <= 1e-12);
            if k > 0 {
                let imax = v.iamax();
                prop_assert!(v[imax] > 0.0);
            }
        }
        let scale: f64 = vs.iter().map(|v| v.norm()).product();
        prop_assert!((p.scale() - scale).abs() <= 1e-12 * scale);
        let diff = p.to_tensor().sub(&expected).unwrap().frobenius_norm();
        prop_assert!(diff <= 1e-12 * expected.frobenius_norm());
    }

    #[test]
    fn retraction_at_zero_is_identity(shape in shape_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_cpd(&shape, 2, &mut rng);
        let q = p.retract(&DVector::zeros(p.dim())).unwrap();
        prop_assert_eq!(q.evaluate(), p.evaluate());
    }

    #[test]
    fn gn_hessian_is_symmetric_psd(shape in shape_strategy(), r in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_cpd(&shape, r, &mut rng);
        let h = p.gn_hessian();
        prop_assert_eq!(h.nrows(), p.dim());
        let asym = (&h - h.transpose()).norm();
        prop_assert!(asym <= 1e-13 * h.norm());
        let eig = h.clone().symmetric_eigenvalues();
        let lmax = eig.max();
        prop_assert!(eig.min() >= -1e-12 * lmax, "λ_min {} vs λ_max {}", eig.min(), lmax);
    }

    #[test]
    fn gradient_matches_difference_quotient(shape in shape_strategy(), r in 1usize..=2, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_cpd(&shape, r, &mut rng);
        let b = random_tensor(&shape, &mut rng);
        let f0 = p.objective(&b).unwrap();
        let g = p.gradient(&b).unwrap();
        let mut x: DVector<f64> = standard_normal_vector(&mut rng, p.dim());
        x /= x.norm();
        let slope = g.dot(&x);
        let err = |h: f64| {
            let f = p.retract(&(&x * h)).unwrap().objective(&b).unwrap();
            ((f - f0) / h - slope).abs()
        };
        let (e1, e2) = (err(1e-3), err(1e-4));
        // Either first-order convergence or already at the rounding floor.
        prop_assert!(e2 <= 1e-7 * (1.0 + f0) || (e1 / e2).log10() >= 0.9, "errors {e1:e} {e2:e}");
    }

    #[test]
    fn dogleg_stays_in_ball_and_beats_cauchy(n in 1usize..=6, log_delta in -3.0f64..1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_spd(n, &mut rng);
        let g: DVector<f64> = standard_normal_vector(&mut rng, n);
        let delta = 10f64.powf(log_delta);
        let pn = newton_direction(&CholeskyFactor::new(&h).unwrap(), &g);
        let pc = cauchy_point(&h, &g).unwrap();
        let step = dogleg(&pn, &pc, delta);
        prop_assert!(step.norm() <= delta * (1.0 + 1e-12) || step.kind == StepKind::Newton);
        if let Some(s) = step.segment {
            prop_assert!((0.0..=1.0).contains(&s));
        }
        let clipped = if pc.norm() > delta { &pc * (delta / pc.norm()) } else { pc.clone() };
        let dec = model_decrease(&h, &g, &step.direction);
        let dec_c = model_decrease(&h, &g, &clipped);
        prop_assert!(dec >= dec_c - 1e-12 * dec_c.abs().max(1.0), "{dec} < {dec_c}");
        prop_assert!(dec > 0.0);
    }

    #[test]
    fn shrink_factor_is_monotone_and_bounded(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (fl, fh) = (shrink_factor(lo), shrink_factor(hi));
        prop_assert!(fl <= fh);
        for f in [fl, fh] {
            prop_assert!(f > 1.0 / 3.0 && f < 1.0);
        }
    }

    #[test]
    fn perturbation_has_requested_level(shape in shape_strategy(), e in 1.0f64..8.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cpd(&shape, 1, &mut rng).evaluate();
        let b = perturb(&a, e, &mut rng).unwrap();
        let clean = a.scaled(1.0 / a.frobenius_norm());
        let level = b.sub(&clean).unwrap().frobenius_norm();
        let target = 10f64.powf(-e);
        prop_assert!((level - target).abs() <= 1e-12 * target + 1e-15, "{level:e} vs {target:e}");
    }

    #[test]
    fn success_is_monotone(res in 0.0f64..3e-5, kappa in 0.5f64..500.0, dr in 0.0f64..1e-5, dk in 0.0f64..100.0) {
        let a = Tensor::outer(&[&[1.0, 0.0][..], &[0.0, 1.0]]).unwrap();
        let crit = SuccessCriterion::new(&a, 3.0, 5.0).unwrap();
        if crit.accepts(res, kappa) {
            prop_assert!(crit.accepts((res - dr).max(0.0), (kappa - dk).max(0.0)));
        }
    }

    #[test]
    fn kappa_routes_agree(shape in prop::collection::vec(3usize..=4, 3), r in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_cpd(&shape, r, &mut rng);
        let svd = condition_number(&p).unwrap().kappa;
        prop_assume!(svd.is_finite() && svd <= 1e6);
        let eig = condition_number_with(&p, ConditionMethod::EigOfH).unwrap().kappa;
        prop_assert!((svd - eig).abs() <= 1e-4 * svd, "svd {svd} eig {eig}");
    }

    #[test]
    fn dten_roundtrip(shape in prop::collection::vec(1usize..=4, 1..=4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tensor(&shape, &mut rng);
        let mut buf = Vec::new();
        write_dten(&t, &mut buf).unwrap();
        write_dten(&t, &mut buf).unwrap();
        let back: Vec<Tensor> = read_dten_records(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), 2);
        prop_assert_eq!(&back[0], &t);
        prop_assert_eq!(&back[1], &t);
    }

    #[test]
    fn tucker_roundtrip(shape in prop::collection::vec(2usize..=5, 3), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tensor(&shape, &mut rng);
        let ranks: Vec<usize> = shape.iter().map(|&n| n - 1).collect();
        let tucker = st_hosvd(&t, &ranks, None).unwrap();
        let mut buf = Vec::new();
        write_tucker(&tucker, &mut buf).unwrap();
        let back = tucker_from_records(read_dten_records::<f64, _>(&mut buf.as_slice()).unwrap()).unwrap();
        prop_assert_eq!(&back, &tucker);
        for q in &back.factors {
            let gram = q.transpose() * q;
            prop_assert!((gram - DMatrix::identity(q.ncols(), q.ncols())).norm() <= 1e-12);
        }
    }

    #[test]
    fn cpd_json_roundtrip(shape in shape_strategy(), r in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_cpd(&shape, r, &mut rng);
        let text = serde_json::to_string(&CpdFile::from_cpd(&p)).unwrap();
        let file: CpdFile = serde_json::from_str(&text).unwrap();
        let q: Cpd = file.to_cpd().unwrap();
        let a = p.evaluate();
        prop_assert!(q.evaluate().sub(&a).unwrap().frobenius_norm() <= 1e-13 * a.frobenius_norm());
    }

    #[test]
    fn flattening_roundtrip_and_isometry(shape in prop::collection::vec(1usize..=4, 2..=4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tensor(&shape, &mut rng);
        prop_assert!((t.vectorize().norm() - t.frobenius_norm()).abs() <= 1e-14 * t.frobenius_norm());
        for k in 0..shape.len() {
            let m = t.flatten(k).unwrap();
            prop_assert_eq!(m.nrows(), shape[k]);
            prop_assert_eq!(&Tensor::from_flattening(&m, k, &shape).unwrap(), &t);
        }
    }
}

#[test]
fn single_attempt_ets_is_degenerate() {
    assert_eq!(estimate_ets(&[Outcome { success: true, seconds: 2.0 }]).p_success, 1.0);
    let fail = estimate_ets(&[Outcome { success: false, seconds: 2.0 }]);
    assert_eq!(fail.p_success, 0.0);
    assert!(fail.ets.is_infinite());
}

#[test]
fn dten_reader_stops_at_end() {
    let mut empty: &[u8] = &[];
    assert!(read_dten_record::<f64, _>(&mut empty).unwrap().is_none());
}
