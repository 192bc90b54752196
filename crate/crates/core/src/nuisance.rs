//! Propensity and outcome nuisance models, and the plug-in scores built from
//! them.
//!
//! With `e_t(x) = P(T = t | x)` and `mu_t(x) = E[Y(t) | x]`:
//!
//! ```text
//! psi_DM  = mu_1(x) - mu_-1(x)
//! psi_IPS = T Y / e_T(x)
//! psi_DR  = psi_DM + psi_IPS - T mu_T(x) / e_T(x)
//! ```
//!
//! Propensities are clipped to `[delta, 1 - delta]` before use.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ScoreKind, ScoredDataset};
use crate::error::{Error, Result};
use crate::gmm::basis::monomials;
use crate::linalg::{norm2, Cholesky, DenseMatrix, LinalgError};
use crate::nn::{Mlp, MlpSpec, ParamVector, Workspace};
use crate::optim::{lbfgs_minimize, LbfgsConfig, LbfgsStatus};
use crate::rng::RngStream;
use crate::surrogate::{sigmoid, softplus};
use crate::training::{refine_with_adam, AdamRefine};

pub const DEFAULT_CLIP: f64 = 0.01;

/// Design matrix `[features | 1]`.
fn with_intercept(features: &DenseMatrix) -> DenseMatrix {
    let (n, d) = (features.rows(), features.cols());
    let mut data = Vec::with_capacity(n * (d + 1));
    for row in features.iter_rows() {
        data.extend_from_slice(row);
        data.push(1.0);
    }
    if d == 0 {
        data = vec![1.0; n];
    }
    DenseMatrix::from_vec(n, d + 1, data).expect("finite by construction")
}

/// Least squares with a ridge penalty on every coefficient. Returns the
/// feature coefficients followed by the intercept.
pub fn fit_linear_regression(features: &DenseMatrix, targets: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if targets.len() != features.rows() {
        return Err(Error::InvalidConfig(format!(
            "{} targets for {} rows",
            targets.len(),
            features.rows()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidConfig(format!("ridge penalty {ridge} < 0")));
    }
    let design = with_intercept(features);
    let p = design.cols();
    let mut gram = DenseMatrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    for (row, &y) in design.iter_rows().zip(targets) {
        for a in 0..p {
            rhs[a] += row[a] * y;
            for b in 0..=a {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    gram.add_diagonal(ridge);
    match Cholesky::new(&gram, 1e-12) {
        Ok(chol) => Ok(chol.solve(&rhs)),
        Err(LinalgError::NotPositiveDefinite { .. }) if ridge == 0.0 => Err(Error::SingularDesign),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Feature coefficients followed by the intercept.
    pub coef: Vec<f64>,
    pub grad_norm: f64,
    pub status: LbfgsStatus,
}

impl LogisticFit {
    pub fn is_degraded(&self) -> bool {
        self.status != LbfgsStatus::Converged
    }
}

fn logistic_nll(design: &DenseMatrix, labels: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
    let n = design.rows() as f64;
    let mut f = 0.0;
    let mut g = vec![0.0; w.len()];
    for (row, &y) in design.iter_rows().zip(labels) {
        let z: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
        f += softplus(-y * z);
        let coef = -y * sigmoid(-y * z);
        for (gi, xi) in g.iter_mut().zip(row) {
            *gi += coef * xi;
        }
    }
    g.iter_mut().for_each(|v| *v /= n);
    (f / n, g)
}

/// Maximum-likelihood logistic regression for labels in `{-1, +1}`.
pub fn fit_logistic_regression(features: &DenseMatrix, labels: &[f64]) -> Result<LogisticFit> {
    if labels.len() != features.rows() {
        return Err(Error::InvalidConfig(format!(
            "{} labels for {} rows",
            labels.len(),
            features.rows()
        )));
    }
    if labels.iter().any(|&l| l != 1.0 && l != -1.0) {
        return Err(Error::InvalidConfig("labels must be -1 or +1".into()));
    }
    if !(labels.contains(&1.0) && labels.contains(&-1.0)) {
        return Err(Error::SingleClass);
    }
    let design = with_intercept(features);
    let cfg = LbfgsConfig {
        tolerance: 1e-8,
        max_iterations: 1000,
        ..Default::default()
    };
    let res = lbfgs_minimize(
        |w: &[f64]| logistic_nll(&design, labels, w),
        vec![0.0; design.cols()],
        &cfg,
    )?;
    Ok(LogisticFit {
        coef: res.params,
        grad_norm: res.grad_norm,
        status: res.status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceFamily {
    /// Linear / logistic regression on `x`.
    Linear,
    /// Linear / logistic regression on all monomials of `x` up to degree 2.
    Quadratic,
    /// One-hidden-layer networks with validation early stopping.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    Identity,
    Quadratic,
}

impl FeatureMap {
    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Identity => x.to_vec(),
            FeatureMap::Quadratic => monomials(x, 2).into_iter().skip(1).collect(),
        }
    }

    pub fn apply_rows(self, x: &DenseMatrix) -> DenseMatrix {
        match self {
            FeatureMap::Identity => x.clone(),
            FeatureMap::Quadratic => {
                let rows: Vec<Vec<f64>> = x.iter_rows().map(|r| self.apply(r)).collect();
                DenseMatrix::from_rows(&rows).expect("finite features")
            }
        }
    }
}

/// A fitted real-valued function of the context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    Affine { map: FeatureMap, coef: Vec<f64> },
    Network { spec: MlpSpec, params: ParamVector },
}

impl Predictor {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Predictor::Affine { map, coef } => {
                let f = map.apply(x);
                let (w, b) = coef.split_at(coef.len() - 1);
                f.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b[0]
            }
            Predictor::Network { spec, params } => Mlp::new(spec, params.as_slice())
                .and_then(|m| m.value(x))
                .unwrap_or(f64::NAN),
        }
    }
}

/// Anything that supplies propensities and outcome regressions.
pub trait Nuisance {
    /// `P(T = +1 | x)` before clipping.
    fn propensity(&self, x: &[f64]) -> f64;
    fn outcome(&self, x: &[f64], t: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSummary {
    pub initial_validation: f64,
    pub best_validation: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceModels {
    pub family: NuisanceFamily,
    /// Logit of `P(T = +1 | x)`.
    pub propensity_logit: Predictor,
    pub outcome_pos: Predictor,
    pub outcome_neg: Predictor,
    /// Set when the propensity fit did not converge (e.g. separable arms).
    pub propensity_degraded: bool,
    /// Early-stopping summaries for network families, in the order
    /// propensity, outcome(+1), outcome(-1).
    pub refinement: Vec<RefineSummary>,
}

impl Nuisance for NuisanceModels {
    fn propensity(&self, x: &[f64]) -> f64 {
        sigmoid(self.propensity_logit.eval(x))
    }

    fn outcome(&self, x: &[f64], t: f64) -> f64 {
        if t > 0.0 {
            self.outcome_pos.eval(x)
        } else {
            self.outcome_neg.eval(x)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceSettings {
    pub ridge: f64,
    pub mlp_hidden: usize,
    pub mlp_lbfgs: LbfgsConfig,
    pub mlp_refine: AdamRefine,
}

impl Default for NuisanceSettings {
    fn default() -> Self {
        Self {
            ridge: 0.0,
            mlp_hidden: crate::nn::FLEXIBLE_HIDDEN,
            mlp_lbfgs: LbfgsConfig {
                max_iterations: 300,
                tolerance: 1e-7,
                ..Default::default()
            },
            mlp_refine: AdamRefine::default(),
        }
    }
}

#[derive(Clone, Copy)]
enum NetLoss {
    Logistic,
    Squared,
}

fn net_loss(
    spec: &MlpSpec,
    params: &[f64],
    x: &DenseMatrix,
    target: &[f64],
    rows: &[usize],
    kind: NetLoss,
) -> (f64, Vec<f64>) {
    let net = Mlp::new(spec, params).expect("shape checked");
    let mut ws = Workspace::new(spec);
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for &i in rows {
        let z = net.forward(x.row(i), &mut ws);
        let (l, d) = match kind {
            NetLoss::Logistic => {
                let y = target[i];
                (softplus(-y * z), -y * sigmoid(-y * z))
            }
            NetLoss::Squared => {
                let r = z - target[i];
                (0.5 * r * r, r)
            }
        };
        total += l;
        net.backward_accumulate(&mut ws, d, &mut grad);
    }
    let inv = 1.0 / rows.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (total * inv, grad)
}

fn fit_network(
    x: &DenseMatrix,
    target: &[f64],
    train: &[usize],
    valid: &[usize],
    kind: NetLoss,
    settings: &NuisanceSettings,
    rng: &mut RngStream,
) -> Result<(Predictor, RefineSummary)> {
    let spec = MlpSpec {
        input_dim: x.cols(),
        hidden_sizes: vec![settings.mlp_hidden],
        leaky_slope: crate::nn::DEFAULT_LEAKY_SLOPE,
    };
    let init = spec.init_params(rng);
    let res = lbfgs_minimize(
        |p: &[f64]| net_loss(&spec, p, x, target, train, kind),
        init.into_inner(),
        &settings.mlp_lbfgs,
    )?;
    let out = refine_with_adam(
        res.params,
        train.len(),
        |p, rows| match rows {
            Some(r) => {
                let sub: Vec<usize> = r.iter().map(|&k| train[k]).collect();
                net_loss(&spec, p, x, target, &sub, kind)
            }
            None => net_loss(&spec, p, x, target, train, kind),
        },
        |p| net_loss(&spec, p, x, target, valid, kind).0,
        &settings.mlp_refine,
        rng,
    )?;
    let summary = RefineSummary {
        initial_validation: out.initial_validation,
        best_validation: out.best_validation,
        epochs: out.epochs,
    };
    Ok((
        Predictor::Network {
            spec,
            params: ParamVector(out.params),
        },
        summary,
    ))
}

/// Fits `e_1` and `mu_{+1}`, `mu_{-1}` on the rows in `tuning`; each outcome
/// model uses only its own arm.
pub fn fit_nuisances(
    data: &Dataset,
    tuning: &[usize],
    family: NuisanceFamily,
    settings: &NuisanceSettings,
    seed: u64,
) -> Result<NuisanceModels> {
    if tuning.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let tune = data.subset(tuning);
    let pos: Vec<usize> = (0..tune.n()).filter(|&i| tune.t()[i] > 0.0).collect();
    let neg: Vec<usize> = (0..tune.n()).filter(|&i| tune.t()[i] < 0.0).collect();
    if pos.is_empty() {
        return Err(Error::EmptyArm(1));
    }
    if neg.is_empty() {
        return Err(Error::EmptyArm(-1));
    }
    match family {
        NuisanceFamily::Linear | NuisanceFamily::Quadratic => {
            let map = if family == NuisanceFamily::Linear {
                FeatureMap::Identity
            } else {
                FeatureMap::Quadratic
            };
            let feats = map.apply_rows(tune.x());
            let logit = fit_logistic_regression(&feats, tune.t())?;
            let arm = |idx: &[usize]| -> Result<Predictor> {
                let f = feats.select_rows(idx);
                let y: Vec<f64> = idx.iter().map(|&i| tune.y()[i]).collect();
                Ok(Predictor::Affine {
                    map,
                    coef: fit_linear_regression(&f, &y, settings.ridge)?,
                })
            };
            Ok(NuisanceModels {
                family,
                propensity_degraded: logit.is_degraded(),
                propensity_logit: Predictor::Affine { map, coef: logit.coef },
                outcome_pos: arm(&pos)?,
                outcome_neg: arm(&neg)?,
                refinement: Vec::new(),
            })
        }
        NuisanceFamily::Mlp => {
            let mut rng = RngStream::new(seed, "nuisance/mlp");
            let halves = |idx: &[usize], rng: &mut RngStream| {
                let mut v = idx.to_vec();
                rng.shuffle(&mut v);
                let cut = (v.len() / 2).max(1).min(v.len());
                let (a, b) = v.split_at(cut);
                let valid = if b.is_empty() { a.to_vec() } else { b.to_vec() };
                (a.to_vec(), valid)
            };
            let all: Vec<usize> = (0..tune.n()).collect();
            let (tr, va) = halves(&all, &mut rng);
            let (prop, s0) = fit_network(tune.x(), tune.t(), &tr, &va, NetLoss::Logistic, settings, &mut rng)?;
            let (tr, va) = halves(&pos, &mut rng);
            let (mu_pos, s1) = fit_network(tune.x(), tune.y(), &tr, &va, NetLoss::Squared, settings, &mut rng)?;
            let (tr, va) = halves(&neg, &mut rng);
            let (mu_neg, s2) = fit_network(tune.x(), tune.y(), &tr, &va, NetLoss::Squared, settings, &mut rng)?;
            Ok(NuisanceModels {
                family,
                propensity_logit: prop,
                outcome_pos: mu_pos,
                outcome_neg: mu_neg,
                propensity_degraded: false,
                refinement: vec![s0, s1, s2],
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub kind: ScoreKind,
    pub clip: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            kind: ScoreKind::Dr,
            clip: DEFAULT_CLIP,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "propensity clip {} outside (0, 0.5)",
                self.clip
            )));
        }
        if self.kind == ScoreKind::Given {
            return Err(Error::InvalidConfig(
                "given scores cannot be computed from nuisances".into(),
            ));
        }
        Ok(())
    }
}

/// One row's score from already-clipped `e1 = P(T = +1 | x)`.
pub fn score_row(kind: ScoreKind, t: f64, y: f64, e1: f64, mu_pos: f64, mu_neg: f64) -> f64 {
    let e_t = if t > 0.0 { e1 } else { 1.0 - e1 };
    let mu_t = if t > 0.0 { mu_pos } else { mu_neg };
    let dm = mu_pos - mu_neg;
    let ips = t * y / e_t;
    match kind {
        ScoreKind::Dm => dm,
        ScoreKind::Ips => ips,
        ScoreKind::Dr | ScoreKind::Given => dm + ips - t * mu_t / e_t,
    }
}

pub fn compute_scores(data: &Dataset, nuisance: &impl Nuisance, config: &ScoreConfig) -> Result<ScoredDataset> {
    config.validate()?;
    let mut clipped = 0;
    let psi: Vec<f64> = data
        .x()
        .iter_rows()
        .zip(data.t().iter().zip(data.y()))
        .map(|(x, (&t, &y))| {
            let raw = nuisance.propensity(x);
            let e1 = raw.clamp(config.clip, 1.0 - config.clip);
            if e1 != raw {
                clipped += 1;
            }
            score_row(
                config.kind,
                t,
                y,
                e1,
                nuisance.outcome(x, 1.0),
                nuisance.outcome(x, -1.0),
            )
        })
        .collect();
    Ok(ScoredDataset::build(
        data.x().clone(),
        Some(data.t().to_vec()),
        Some(data.y().to_vec()),
        psi,
        config.kind,
        clipped,
    )?)
}

/// Gradient norm helper used in diagnostics of fitted logistic models.
pub fn logistic_gradient_norm(features: &DenseMatrix, labels: &[f64], coef: &[f64]) -> f64 {
    norm2(&logistic_nll(&with_intercept(features), labels, coef).1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_features(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = RngStream::new(seed, "feat");
        DenseMatrix::from_vec(n, d, rng.normal_vec(n * d)).unwrap()
    }

    #[test]
    fn exact_linear_recovery() {
        let x = random_features(40, 2, 1);
        let y: Vec<f64> = x.iter_rows().map(|r| 2.0 * r[0] - r[1] + 3.0).collect();
        let c = fit_linear_regression(&x, &y, 0.0).unwrap();
        for (a, b) in c.iter().zip([2.0, -1.0, 3.0]) {
            assert!((a - b).abs() < 1e-10, "{c:?}");
        }
    }

    #[test]
    fn constant_targets() {
        let x = random_features(30, 2, 2);
        let c = fit_linear_regression(&x, &[4.5; 30], 0.0).unwrap();
        assert!(c[0].abs() < 1e-10 && c[1].abs() < 1e-10);
        assert!((c[2] - 4.5).abs() < 1e-10);
    }

    #[test]
    fn duplicated_column_is_singular() {
        let x = random_features(30, 1, 3);
        let dup = DenseMatrix::from_rows(&x.iter_rows().map(|r| vec![r[0], r[0]]).collect::<Vec<_>>()).unwrap();
        let y = vec![1.0; 30];
        let err = fit_linear_regression(&dup, &y, 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularDesign));
        assert!(err.to_string().contains("positive ridge"));
        assert!(fit_linear_regression(&dup, &y, 1e-3).is_ok());
    }

    #[test]
    fn intercept_only_logistic_is_log_odds() {
        let labels: Vec<f64> = (0..400).map(|i| if i % 4 == 0 { -1.0 } else { 1.0 }).collect();
        let fit = fit_logistic_regression(&DenseMatrix::zeros(400, 0), &labels).unwrap();
        assert!((fit.coef[0] - 3f64.ln()).abs() < 1e-4, "{:?}", fit.coef);
        assert!(fit.grad_norm <= 1e-6);
    }

    #[test]
    fn balanced_independent_labels_give_small_coefficients() {
        let x = random_features(4000, 2, 4);
        let labels: Vec<f64> = (0..4000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let fit = fit_logistic_regression(&x, &labels).unwrap();
        assert!(fit.coef.iter().all(|c| c.abs() < 0.1), "{:?}", fit.coef);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = random_features(10, 2, 5);
        assert!(matches!(
            fit_logistic_regression(&x, &[1.0; 10]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn score_formulas() {
        assert_eq!(score_row(ScoreKind::Dm, 1.0, 0.0, 0.5, 2.0, 0.5), 1.5);
        assert_eq!(score_row(ScoreKind::Ips, 1.0, 2.0, 0.5, 0.0, 0.0), 4.0);
        assert_eq!(score_row(ScoreKind::Dr, 1.0, 2.0, 0.5, 1.0, 0.0), 3.0);
        // treated-as-control row uses 1 - e1
        assert_eq!(score_row(ScoreKind::Ips, -1.0, 2.0, 0.75, 0.0, 0.0), -8.0);
    }

    struct Fixed;
    impl Nuisance for Fixed {
        fn propensity(&self, x: &[f64]) -> f64 {
            if x[0] > 0.0 {
                0.999
            } else {
                0.5
            }
        }
        fn outcome(&self, _: &[f64], t: f64) -> f64 {
            t
        }
    }

    #[test]
    fn clipping_bounds_denominators() {
        let x = DenseMatrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let data = Dataset::new(x, vec![-1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let s = compute_scores(
            &data,
            &Fixed,
            &ScoreConfig {
                kind: ScoreKind::Ips,
                clip: 0.01,
            },
        )
        .unwrap();
        assert_eq!(s.clipped_rows(), 1);
        assert!((s.psi()[0] - (-1.0 / 0.01)).abs() < 1e-9);
        assert!(ScoreConfig {
            kind: ScoreKind::Dr,
            clip: 0.5
        }
        .validate()
        .is_err());
    }

    #[test]
    fn empty_arm_is_rejected() {
        let x = random_features(6, 2, 6);
        let data = Dataset::new(x, vec![1.0; 6], vec![0.0; 6]).unwrap();
        let all: Vec<usize> = (0..6).collect();
        assert!(matches!(
            fit_nuisances(&data, &all, NuisanceFamily::Linear, &NuisanceSettings::default(), 0),
            Err(Error::EmptyArm(-1))
        ));
    }

    #[test]
    fn constant_outcomes_fit_exactly() {
        let mut rng = RngStream::new(9, "t");
        let x = random_features(200, 2, 7);
        let t: Vec<f64> = (0..200).map(|_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 }).collect();
        let data = Dataset::new(x, t, vec![1.0; 200]).unwrap();
        let all: Vec<usize> = (0..200).collect();
        for fam in [NuisanceFamily::Linear, NuisanceFamily::Quadratic] {
            let m = fit_nuisances(&data, &all, fam, &NuisanceSettings::default(), 0).unwrap();
            for row in data.x().iter_rows().take(20) {
                assert!((m.outcome(row, 1.0) - 1.0).abs() < 1e-9);
                assert!((m.outcome(row, -1.0) - 1.0).abs() < 1e-9);
            }
        }
    }
}
