use nalgebra::DMatrix;
use proptest::prelude::*;

use spatavg::qp::inf_norm;
use spatavg::*;

fn panel_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..7, 4usize..25).prop_flat_map(|(n, steps)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..20.0, steps), n),
            prop::collection::vec(0.0f64..20.0, steps),
        )
    })
}

fn psd_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..7, 1usize..9).prop_flat_map(|(n, k)| {
        prop::collection::vec(-2.0f64..2.0, n * k).prop_map(move |a| {
            let a = DMatrix::from_vec(k, n, a);
            a.transpose() * a
        })
    })
}

fn moments(rows: &[Vec<f64>], truth: &[f64], alpha: f64, sigma: f64) -> (ObservationPanel, TruthSeries, MomentSet) {
    let panel = ObservationPanel::from_rows(rows).unwrap();
    let truth = TruthSeries::new(truth.to_vec()).unwrap();
    let m = estimate_moments(
        &panel,
        &truth,
        &NoiseModel::new(sigma).unwrap(),
        &AvailabilityModel::new(alpha).unwrap(),
    )
    .unwrap();
    (panel, truth, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qp_solutions_satisfy_kkt(q in psd_strategy()) {
        let p = QpProblem::new(q.clone()).unwrap();
        let s = solve_qp(&p).unwrap();
        let sum: f64 = s.beta.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(s.beta.as_slice().iter().all(|&b| b >= 0.0));
        let cert = kkt_certificate(p.matrix(), &s);
        prop_assert!(cert.passes(p.matrix()), "{cert:?}");
        prop_assert!(cert.stationarity <= 1e-8 * (1.0 + inf_norm(&q)));
    }

    #[test]
    fn qp_is_scale_equivariant(q in psd_strategy(), c in 0.01f64..100.0) {
        let a = solve_qp(&QpProblem::new(q.clone()).unwrap()).unwrap();
        let b = solve_qp(&QpProblem::new(&q * c).unwrap()).unwrap();
        let scale = 1.0 + inf_norm(&q) * c.max(1.0);
        prop_assert!((b.objective - c * a.objective).abs() <= 1e-8 * scale);
    }

    #[test]
    fn closed_form_balances_missing_bias(
        neg in prop::collection::vec(-5.0f64..-0.01, 1..5),
        pos in prop::collection::vec(0.01f64..5.0, 1..5),
    ) {
        let d: Vec<f64> = neg.iter().chain(&pos).copied().collect();
        let w = minimize_missing_bias_closed_form(&d).unwrap();
        let b = w.as_slice();
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let balance: f64 = b.iter().zip(&d).map(|(x, y)| y * x * x).sum();
        prop_assert!(balance.abs() <= 1e-10);
    }

    #[test]
    fn mse_is_bias_plus_variance(
        (rows, truth) in panel_strategy(),
        alpha in 0.3f64..=1.0,
        sigma in 0.0f64..1.0,
        raw in prop::collection::vec(0.01f64..1.0, 7),
    ) {
        let (_, _, m) = moments(&rows, &truth, alpha, sigma);
        let beta = WeightVector::normalized(raw[..rows.len()].to_vec()).unwrap();
        let avail = AvailabilityModel::new(alpha).unwrap();
        let r = stat_report(&m, &beta, &avail).unwrap();
        prop_assert!((r.mse - (r.bias_sq + r.variance)).abs() <= 1e-12 * r.mse.abs().max(1.0));
        prop_assert!(r.bias_sq >= -1e-12 && r.variance >= 0.0);
    }

    #[test]
    fn full_availability_reduces_to_panel_statistics((rows, truth) in panel_strategy()) {
        let (_, _, m) = moments(&rows, &truth, 1.0, 0.0);
        let beta = WeightVector::uniform(rows.len());
        let certain = AvailabilityModel::certain();
        let bias = delta_bias(&m, &beta, &certain).unwrap();
        prop_assert_eq!(bias.term_missing, 0.0);
        let b = beta.as_vector();
        let want = b.dot(&(&m.cov_obs * b));
        let v = delta_variance(&m, &beta, &certain).unwrap();
        prop_assert!((v - want).abs() <= 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn d1_is_positive_semidefinite((rows, truth) in panel_strategy()) {
        let (_, _, m) = moments(&rows, &truth, 1.0, 0.0);
        let min = m.d1.clone().symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10 * m.d1.trace().max(1.0), "{min}");
    }

    #[test]
    fn common_shift_leaves_statistics_unchanged(
        (rows, truth) in panel_strategy(),
        shift in -5.0f64..5.0,
        alpha in 0.3f64..=1.0,
    ) {
        let (_, _, m) = moments(&rows, &truth, alpha, 0.2);
        let rows2: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + shift).collect()).collect();
        let truth2: Vec<f64> = truth.iter().map(|x| x + shift).collect();
        let (_, _, m2) = moments(&rows2, &truth2, alpha, 0.2);
        let beta = WeightVector::uniform(rows.len());
        let avail = AvailabilityModel::new(alpha).unwrap();
        let a = stat_report(&m, &beta, &avail).unwrap();
        let b = stat_report(&m2, &beta, &avail).unwrap();
        let scale = a.mse.max(1.0);
        prop_assert!((a.bias_sq - b.bias_sq).abs() <= 1e-8 * scale);
        prop_assert!((a.variance - b.variance).abs() <= 1e-8 * scale);
        prop_assert!((&m.d1 - &m2.d1).amax() <= 1e-8 * m.d1.amax().max(1.0));
    }

    #[test]
    fn rs_moments_obey_cauchy_schwarz((rows, truth) in panel_strategy(), alpha in 0.1f64..=1.0) {
        let (_, _, m) = moments(&rows, &truth, alpha, 0.3);
        let avail = AvailabilityModel::new(alpha).unwrap();
        let rs = rs_moments(&m, &WeightVector::uniform(rows.len()), &avail).unwrap();
        prop_assert!(rs.satisfies_cauchy_schwarz(1e-9));
    }

    #[test]
    fn optimal_objectives_beat_uniform((rows, truth) in panel_strategy(), alpha in 0.5f64..=1.0) {
        let (_, _, m) = moments(&rows, &truth, alpha, 0.2);
        let avail = AvailabilityModel::new(alpha).unwrap();
        let uniform = WeightVector::uniform(rows.len());
        let bias = minimize_bias(&m).unwrap();
        let b = bias.beta.as_vector();
        let u = uniform.as_vector();
        prop_assert!(b.dot(&(&m.d1 * b)) <= u.dot(&(&m.d1 * u)) * (1.0 + 1e-12) + 1e-12);
        let q = spatavg::oa::mse_objective(&m, &avail, VarianceForm::default());
        let mse = minimize_mse(&m, &avail).unwrap();
        let x = mse.solution.beta.as_vector();
        prop_assert!(x.dot(&(&q * x)) <= u.dot(&(&q * u)) * (1.0 + 1e-12) + 1e-12);
    }
}
