use polgmm_core::data::ScoredDataset;
use polgmm_core::esprm::{esprm_fit, EsprmConfig, EsprmOptions};
use polgmm_core::linalg::DenseMatrix;
use polgmm_core::nn::{objective_grad_check, MlpSpec};
use polgmm_core::scenario::{normalize_params, normalized_sq_error, FixtureSpec};
use polgmm_core::surrogate::{empirical_risk, erm_fit, ErmSettings};
use polgmm_core::{ParamVector, RngStream};

#[test]
fn risk_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(3, "risk");
    let x: Vec<Vec<f64>> = (0..20).map(|_| rng.normal_vec(2)).collect();
    let psi = (0..20).map(|_| 2.0 * rng.normal()).collect();
    let data = ScoredDataset::given(DenseMatrix::from_rows(&x).unwrap(), psi).unwrap();
    for spec in [MlpSpec::linear(2), MlpSpec::flexible(2)] {
        let theta = spec.init_params(&mut rng);
        let err = objective_grad_check(
            |p| {
                let (l, g) = empirical_risk(&spec, &ParamVector(p.to_vec()), &data).unwrap();
                (l, g.into_inner())
            },
            theta.as_slice(),
            1e-5,
        );
        assert!(err <= 1e-6, "{err}");
    }
}

#[test]
fn erm_recovers_fixture_parameters() {
    let f = FixtureSpec::default();
    let data = f.generate(50_000, 8).unwrap();
    let fit = erm_fit(&data, &MlpSpec::linear(2), &ErmSettings::default(), 8, None).unwrap();
    assert!(!fit.model.is_degraded());
    let est = normalize_params(fit.model.params.as_slice());
    let truth = normalize_params(&f.theta_star);
    let dist: f64 = est.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(dist <= 0.05, "distance {dist}");
}

#[test]
fn esprm_is_no_less_accurate_than_erm_on_the_fixture() {
    let f = FixtureSpec::default();
    let spec = MlpSpec::linear(2);
    let reps = 64;
    let (mut mse_esprm, mut mse_erm) = (0.0, 0.0);
    for rep in 0..reps {
        let seed = 500 + rep;
        let data = f.generate(2000, seed).unwrap();
        let erm = erm_fit(&data, &spec, &ErmSettings::default(), seed, None).unwrap();
        let adv = esprm_fit(&data, &spec, &EsprmConfig::default(), seed, EsprmOptions::default()).unwrap();
        mse_erm += normalized_sq_error(erm.model.params.as_slice(), &f.theta_star);
        mse_esprm += normalized_sq_error(adv.model.params.as_slice(), &f.theta_star);
    }
    mse_erm /= reps as f64;
    mse_esprm /= reps as f64;
    assert!(mse_esprm <= mse_erm, "esprm {mse_esprm} vs erm {mse_erm}");
}
