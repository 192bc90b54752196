use polgmm_core::linalg::{dot, DenseMatrix};
use polgmm_core::nuisance::fit_linear_regression;
use polgmm_core::scenario::{
    oracle_policy_value, sample_scenario, FixtureSpec, OracleDraws, ScaleFn, ScenarioKind, ScenarioSpec,
};
use polgmm_core::stats::mean_and_se;
use polgmm_core::surrogate::sigmoid;
use polgmm_core::RngStream;

fn linear(seed: u64) -> polgmm_core::scenario::OutcomeScenario {
    match sample_scenario(ScenarioKind::Linear, seed) {
        ScenarioSpec::Linear(s) => s,
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn sampled_intercepts_are_centered() {
    let b0: Vec<f64> = (0..10_000).map(|s| linear(s).b0).collect();
    let (m, _) = mean_and_se(&b0);
    assert!(m.abs() <= 0.05, "mean b0 {m}");
}

#[test]
fn treated_arm_regression_recovers_coefficients() {
    let s = linear(3);
    let data = s.generate(100_000, 7).unwrap();
    let rows: Vec<usize> = (0..data.n()).filter(|&i| data.t()[i] > 0.0).collect();
    let arm = data.subset(&rows);
    let coef = fit_linear_regression(arm.x(), arm.y(), 0.0).unwrap();
    for j in 0..2 {
        assert!(
            (coef[j] - s.a_pos[j]).abs() <= 0.05,
            "coef {j}: {} vs {}",
            coef[j],
            s.a_pos[j]
        );
    }
    assert!((coef[2] - s.a0_pos).abs() <= 0.05);
}

#[test]
fn fixture_binned_ratio_matches_sigmoid() {
    let f = FixtureSpec::default();
    let data = f.generate(100_000, 11).unwrap();
    let bins = 10;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, x) in data.x().iter_rows().enumerate() {
        let s = sigmoid(f.g_star(x));
        groups[((s * bins as f64) as usize).min(bins - 1)].push(i);
    }
    for rows in groups.iter().filter(|r| r.len() >= 500) {
        let psi: Vec<f64> = rows.iter().map(|&i| data.psi()[i]).collect();
        let pos: Vec<f64> = psi.iter().map(|&p| f64::from(p > 0.0)).collect();
        let abs: Vec<f64> = psi.iter().map(|p| p.abs()).collect();
        let (pm, pse) = mean_and_se(&pos);
        let (am, ase) = mean_and_se(&abs);
        let ratio = pm / am;
        // delta method, ignoring the covariance term
        let se = ratio * ((pse / pm).powi(2) + (ase / am).powi(2)).sqrt();
        let expected: Vec<f64> = rows
            .iter()
            .map(|&i| {
                let x = data.x().row(i);
                f.scale.eval(x) * sigmoid(f.g_star(x))
            })
            .collect();
        let scales: Vec<f64> = rows.iter().map(|&i| f.scale.eval(data.x().row(i))).collect();
        let target = mean_and_se(&expected).0 / mean_and_se(&scales).0;
        assert!(
            (ratio - target).abs() <= 3.0 * se,
            "ratio {ratio} target {target} se {se}"
        );
    }
}

#[test]
fn unit_scale_fixture_is_logistic_classification() {
    let f = FixtureSpec {
        scale: ScaleFn::constant(1.0),
        ..Default::default()
    };
    let data = f.generate(20_000, 2).unwrap();
    assert!(data.psi().iter().all(|&p| p == 1.0 || p == -1.0));
    let pos: Vec<f64> = data.psi().iter().map(|&p| f64::from(p > 0.0)).collect();
    let expected: Vec<f64> = data.x().iter_rows().map(|x| sigmoid(f.g_star(x))).collect();
    let (pm, pse) = mean_and_se(&pos);
    assert!((pm - mean_and_se(&expected).0).abs() <= 3.0 * pse);
}

#[test]
fn boundary_points_are_positive_with_half_the_scale() {
    let f = FixtureSpec::default();
    // g*(x) = 1.5 x0 - x1 + 0.5 = 0
    let x = [0.2, 0.8];
    assert!(f.g_star(&x).abs() < 1e-12);
    let c = f.scale.eval(&x);
    let mut rng = RngStream::new(9, "boundary");
    let draws: Vec<f64> = (0..100_000)
        .map(|_| f64::from(f.draw_psi(&x, &mut rng) > 0.0))
        .collect();
    let (m, se) = mean_and_se(&draws);
    assert!((m - c / 2.0).abs() <= 3.0 * se, "{m} vs {}", c / 2.0);
}

#[test]
fn oracle_rule_and_its_negation() {
    let spec = sample_scenario(ScenarioKind::Linear, 0);
    let draws = OracleDraws::new(&spec, 50_000, 1).unwrap();
    let best = draws.evaluate(|x| spec.tau(x));
    assert_eq!(best.value, best.optimum);
    assert_eq!(best.regret, 0.0);
    let worst = draws.evaluate(|x| -spec.tau(x));
    assert!((worst.value + best.optimum).abs() <= 1e-12);
}

#[test]
fn oracle_value_matches_independent_reimplementation() {
    let ScenarioSpec::Linear(s) = sample_scenario(ScenarioKind::Linear, 0) else {
        unreachable!()
    };
    let spec = ScenarioSpec::Linear(s.clone());
    let theta = [0.7, -1.3, 0.2];
    let ours = oracle_policy_value(&spec, |x| dot(&theta[..2], x) + theta[2], 1_000_000, 5).unwrap();

    // Straight Box-Muller draws from a separate stream.
    let mut rng = RngStream::new(77, "independent");
    let m = 10_000_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..m {
        let (u1, u2) = (1.0 - rng.uniform(), rng.uniform());
        let r = (-2.0 * u1.ln()).sqrt();
        let ang = 2.0 * std::f64::consts::PI * u2;
        let (x0, x1) = (r * ang.cos(), r * ang.sin());
        let tau = (s.a_pos[0] - s.a_neg[0]) * x0 + (s.a_pos[1] - s.a_neg[1]) * x1 + s.a0_pos - s.a0_neg;
        let act = if theta[0] * x0 + theta[1] * x1 + theta[2] > 0.0 {
            1.0
        } else {
            -1.0
        };
        let v = act * tau;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / m as f64;
    let se_ref = ((sum_sq / m as f64 - mean * mean) / m as f64).sqrt();
    let se = (ours.value_se.powi(2) + se_ref.powi(2)).sqrt();
    assert!(
        (ours.value - mean).abs() <= 3.0 * se,
        "{} vs {mean} (se {se})",
        ours.value
    );
}

#[test]
fn regret_is_nonnegative_for_random_policies() {
    let spec = sample_scenario(ScenarioKind::Quadratic, 4);
    let draws = OracleDraws::new(&spec, 20_000, 2).unwrap();
    let mut rng = RngStream::new(4, "policies");
    for _ in 0..50 {
        let th = rng.normal_vec(3);
        let v = draws.evaluate(|x| th[0] * x[0] + th[1] * x[1] + th[2]);
        assert!(v.regret >= 0.0);
        assert!(v.value <= v.optimum + 1e-12);
    }
}

#[test]
fn generated_data_has_declared_shape() {
    let s = linear(1);
    let d = s.generate(500, 3).unwrap();
    assert_eq!((d.n(), d.dim()), (500, 2));
    assert!(d.t().iter().all(|&t| t == 1.0 || t == -1.0));
    assert_eq!(s.generate(500, 3).unwrap().y(), d.y());
    let m = DenseMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
    assert!((s.propensity(m.row(0)) - sigmoid(s.b0)).abs() < 1e-15);
}

#[test]
fn regret_is_scale_invariant_for_linear_policies() {
    let spec = sample_scenario(ScenarioKind::Linear, 6);
    let draws = OracleDraws::new(&spec, 20_000, 3).unwrap();
    let th = [0.4, -2.0, 0.3];
    let once = draws.evaluate(|x| dot(&th[..2], x) + th[2]);
    let twice = draws.evaluate(|x| 2.0 * (dot(&th[..2], x) + th[2]));
    assert_eq!(once, twice);
}
