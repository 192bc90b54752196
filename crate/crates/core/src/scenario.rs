//! Synthetic scenarios with known nuisances and oracle policy values.
//!
//! Outcome scenarios draw `X ~ N(0, I_2)`, `T = +1` with probability
//! `e_1(x)`, and `Y = mu_T(X) + N(0, 1)`, where
//!
//! * Linear: `mu_t(x) = a_t' x + a_t0`, `e_1(x) = sigma(b' x + b_0)`;
//! * Quadratic: `mu_t(x) = x' A_t x + a_t' x + a_t0`,
//!   `e_1(x) = sigma(x' B x + b' x + b_0)`.
//!
//! The well-specified fixture emits scores directly. With
//! `s(x) = sigma(g_theta*(x))` and a scale `c(x)` in `(0, 1]`, each row has
//! `psi = 1` with probability `c s` and otherwise
//! `psi = -c (1 - s) / (1 - c s)`. Then `E[|psi| | x] = c`,
//! `E[psi 1{psi > 0} | x] / E[|psi| | x] = s` and
//! `P(psi > 0 | x) / E[|psi| | x] = s`, so the population surrogate risk is
//! minimized exactly at `theta*` inside the linear class while the scale of
//! the scores varies with `x`.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ScoredDataset};
use crate::error::{Error, Result};
use crate::gmm::Conditionals;
use crate::linalg::{dot, norm2, DenseMatrix};
use crate::nuisance::{Nuisance, NuisanceFamily};
use crate::rng::RngStream;
use crate::stats::mean_and_se;
use crate::surrogate::{sigmoid, softplus};

pub const DIM: usize = 2;

type Mat2 = [[f64; DIM]; DIM];

fn quad_form(m: &Mat2, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..DIM {
        for j in 0..DIM {
            s += x[i] * m[i][j] * x[j];
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Linear,
    Quadratic,
    WellSpecFixture,
}

impl ScenarioKind {
    /// The nuisance family that is correctly specified for this scenario.
    pub fn matched_family(self) -> NuisanceFamily {
        match self {
            ScenarioKind::Quadratic => NuisanceFamily::Quadratic,
            _ => NuisanceFamily::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTerms {
    pub a_pos: Mat2,
    pub a_neg: Mat2,
    pub b: Mat2,
}

/// Coefficients of an outcome scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScenario {
    pub a_pos: [f64; DIM],
    pub a0_pos: f64,
    pub a_neg: [f64; DIM],
    pub a0_neg: f64,
    pub b: [f64; DIM],
    pub b0: f64,
    pub quadratic: Option<QuadraticTerms>,
}

impl OutcomeScenario {
    pub fn mu(&self, x: &[f64], t: f64) -> f64 {
        let (a, a0) = if t > 0.0 {
            (&self.a_pos, self.a0_pos)
        } else {
            (&self.a_neg, self.a0_neg)
        };
        let mut v = dot(a, x) + a0;
        if let Some(q) = &self.quadratic {
            v += quad_form(if t > 0.0 { &q.a_pos } else { &q.a_neg }, x);
        }
        v
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        let mut z = dot(&self.b, x) + self.b0;
        if let Some(q) = &self.quadratic {
            z += quad_form(&q.b, x);
        }
        sigmoid(z)
    }

    pub fn tau(&self, x: &[f64]) -> f64 {
        self.mu(x, 1.0) - self.mu(x, -1.0)
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut rng = RngStream::new(seed, "scenario/data");
        let mut xs = Vec::with_capacity(n * DIM);
        let mut t = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.normal_vec(DIM);
            let ti = if rng.bernoulli(self.propensity(&x)) { 1.0 } else { -1.0 };
            y.push(self.mu(&x, ti) + rng.normal());
            t.push(ti);
            xs.extend(x);
        }
        Ok(Dataset::new(DenseMatrix::from_vec(n, DIM, xs)?, t, y)?)
    }

    /// Best linear-class parameters `(w, b)` for `sign(w' x + b)` when the
    /// effect is linear; `None` for quadratic outcomes.
    pub fn linear_optimum(&self) -> Option<Vec<f64>> {
        if self.quadratic.is_some() {
            return None;
        }
        let mut v: Vec<f64> = self.a_pos.iter().zip(&self.a_neg).map(|(p, q)| p - q).collect();
        v.push(self.a0_pos - self.a0_neg);
        Some(v)
    }
}

impl Nuisance for OutcomeScenario {
    fn propensity(&self, x: &[f64]) -> f64 {
        OutcomeScenario::propensity(self, x)
    }

    fn outcome(&self, x: &[f64], t: f64) -> f64 {
        self.mu(x, t)
    }
}

/// `c(x) = base + amplitude * sigma(w' x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFn {
    pub base: f64,
    pub amplitude: f64,
    pub weights: Vec<f64>,
}

impl ScaleFn {
    pub fn constant(c: f64) -> Self {
        Self {
            base: c,
            amplitude: 0.0,
            weights: vec![0.0; DIM],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.base + self.amplitude * sigmoid(dot(&self.weights, x))
    }

    pub fn validate(&self) -> Result<()> {
        let lo = self.base + self.amplitude.min(0.0);
        let hi = self.base + self.amplitude.max(0.0);
        if !(lo > 0.0 && hi <= 1.0) || self.weights.len() != DIM {
            return Err(Error::InvalidConfig(format!(
                "scale function must map into (0, 1]; range is ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

impl Default for ScaleFn {
    fn default() -> Self {
        Self {
            base: 0.5,
            amplitude: 0.4,
            weights: vec![1.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    /// Linear policy parameters `(w_0, w_1, bias)`.
    pub theta_star: Vec<f64>,
    pub scale: ScaleFn,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            theta_star: vec![1.5, -1.0, 0.5],
            scale: ScaleFn::default(),
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.theta_star.len() != DIM + 1 {
            return Err(Error::InvalidConfig(format!(
                "fixture theta* needs {} entries",
                DIM + 1
            )));
        }
        self.scale.validate()
    }

    pub fn g_star(&self, x: &[f64]) -> f64 {
        dot(&self.theta_star[..DIM], x) + self.theta_star[DIM]
    }

    /// Draws one score at `x`.
    pub fn draw_psi(&self, x: &[f64], rng: &mut RngStream) -> f64 {
        let s = sigmoid(self.g_star(x));
        let c = self.scale.eval(x);
        if rng.uniform() < c * s {
            1.0
        } else {
            -c * (1.0 - s) / (1.0 - c * s)
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<ScoredDataset> {
        self.validate()?;
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut rng = RngStream::new(seed, "fixture/data");
        let mut xs = Vec::with_capacity(n * DIM);
        let mut psi = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.normal_vec(DIM);
            psi.push(self.draw_psi(&x, &mut rng));
            xs.extend(x);
        }
        Ok(ScoredDataset::given(DenseMatrix::from_vec(n, DIM, xs)?, psi)?)
    }

    /// `E[psi | x] = c (2 s - 1)`.
    pub fn tau(&self, x: &[f64]) -> f64 {
        self.scale.eval(x) * (2.0 * sigmoid(self.g_star(x)) - 1.0)
    }

    /// `E[|psi| l(g, sign psi) | x]` for a policy value `g`.
    pub fn conditional_risk(&self, x: &[f64], g: f64) -> f64 {
        let s = sigmoid(self.g_star(x));
        let c = self.scale.eval(x);
        c * s * 2.0 * softplus(-g) + c * (1.0 - s) * 2.0 * softplus(g)
    }
}

impl Conditionals for FixtureSpec {
    fn pos_sq(&self, x: &[f64]) -> f64 {
        self.scale.eval(x) * sigmoid(self.g_star(x))
    }

    fn neg_sq(&self, x: &[f64]) -> f64 {
        let s = sigmoid(self.g_star(x));
        let c = self.scale.eval(x);
        (c * (1.0 - s)).powi(2) / (1.0 - c * s)
    }

    fn abs_mean(&self, x: &[f64]) -> f64 {
        self.scale.eval(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSpec {
    Linear(OutcomeScenario),
    Quadratic(OutcomeScenario),
    WellSpecFixture(FixtureSpec),
}

impl ScenarioSpec {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            ScenarioSpec::Linear(_) => ScenarioKind::Linear,
            ScenarioSpec::Quadratic(_) => ScenarioKind::Quadratic,
            ScenarioSpec::WellSpecFixture(_) => ScenarioKind::WellSpecFixture,
        }
    }

    pub fn tau(&self, x: &[f64]) -> f64 {
        match self {
            ScenarioSpec::Linear(s) | ScenarioSpec::Quadratic(s) => s.tau(x),
            ScenarioSpec::WellSpecFixture(f) => f.tau(x),
        }
    }

    /// Reference parameters for the linear policy class, when known.
    pub fn theta_star(&self) -> Option<Vec<f64>> {
        match self {
            ScenarioSpec::Linear(s) | ScenarioSpec::Quadratic(s) => s.linear_optimum(),
            ScenarioSpec::WellSpecFixture(f) => Some(f.theta_star.clone()),
        }
    }

    pub fn outcome(&self) -> Option<&OutcomeScenario> {
        match self {
            ScenarioSpec::Linear(s) | ScenarioSpec::Quadratic(s) => Some(s),
            ScenarioSpec::WellSpecFixture(_) => None,
        }
    }
}

fn normal_array(rng: &mut RngStream) -> [f64; DIM] {
    let mut a = [0.0; DIM];
    a.iter_mut().for_each(|v| *v = rng.normal());
    a
}

fn symmetric(rng: &mut RngStream) -> Mat2 {
    let mut m = [[0.0; DIM]; DIM];
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.normal();
        }
    }
    let mut s = m;
    for i in 0..DIM {
        for j in 0..DIM {
            s[i][j] = 0.5 * (m[i][j] + m[j][i]);
        }
    }
    s
}

/// All coefficients independent standard normal; quadratic matrices are
/// symmetrized. The fixture kind returns the default fixture.
pub fn sample_scenario(kind: ScenarioKind, seed: u64) -> ScenarioSpec {
    let mut rng = RngStream::new(seed, "scenario/spec");
    let mut outcome = || OutcomeScenario {
        a_pos: normal_array(&mut rng),
        a0_pos: rng.normal(),
        a_neg: normal_array(&mut rng),
        a0_neg: rng.normal(),
        b: normal_array(&mut rng),
        b0: rng.normal(),
        quadratic: None,
    };
    match kind {
        ScenarioKind::Linear => ScenarioSpec::Linear(outcome()),
        ScenarioKind::Quadratic => {
            let mut s = outcome();
            s.quadratic = Some(QuadraticTerms {
                a_pos: symmetric(&mut rng),
                a_neg: symmetric(&mut rng),
                b: symmetric(&mut rng),
            });
            ScenarioSpec::Quadratic(s)
        }
        ScenarioKind::WellSpecFixture => ScenarioSpec::WellSpecFixture(FixtureSpec::default()),
    }
}

/// Unit norm. Only positive rescaling leaves a policy unchanged, so the sign
/// is kept.
pub fn normalize_params(v: &[f64]) -> Vec<f64> {
    let norm = norm2(v);
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / norm).collect()
}

pub fn normalized_sq_error(estimate: &[f64], truth: &[f64]) -> f64 {
    let a = normalize_params(estimate);
    let b = normalize_params(truth);
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// A fixed set of covariate draws with the true effect at each.
#[derive(Debug, Clone)]
pub struct OracleDraws {
    x: DenseMatrix,
    tau: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub value_se: f64,
    /// `mean |tau|`, the value of the oracle sign rule on the same draws.
    pub optimum: f64,
    pub regret: f64,
    pub regret_se: f64,
}

impl OracleDraws {
    pub fn new(spec: &ScenarioSpec, mc_size: usize, seed: u64) -> Result<Self> {
        if mc_size < 2 {
            return Err(Error::InvalidConfig("oracle needs at least two draws".into()));
        }
        let mut rng = RngStream::new(seed, "oracle/draws");
        let data = rng.normal_vec(mc_size * DIM);
        let x = DenseMatrix::from_vec(mc_size, DIM, data)?;
        let tau = x.iter_rows().map(|r| spec.tau(r)).collect();
        Ok(Self { x, tau })
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Value of `x -> sign(g(x))` given the policy values at each draw.
    /// `g = 0` is treated as action -1.
    pub fn evaluate_values(&self, g: &[f64]) -> OracleValue {
        let act = |v: f64| if v > 0.0 { 1.0 } else { -1.0 };
        let values: Vec<f64> = g.iter().zip(&self.tau).map(|(&gi, t)| act(gi) * t).collect();
        let regrets: Vec<f64> = values.iter().zip(&self.tau).map(|(v, t)| t.abs() - v).collect();
        let (value, value_se) = mean_and_se(&values);
        let (regret, regret_se) = mean_and_se(&regrets);
        OracleValue {
            value,
            value_se,
            optimum: crate::stats::mean(&self.tau.iter().map(|t| t.abs()).collect::<Vec<_>>()),
            regret,
            regret_se,
        }
    }

    pub fn evaluate(&self, mut g: impl FnMut(&[f64]) -> f64) -> OracleValue {
        let values: Vec<f64> = self.x.iter_rows().map(&mut g).collect();
        self.evaluate_values(&values)
    }
}

/// Monte-Carlo value of `sign(g)` on fresh draws.
pub fn oracle_policy_value(
    spec: &ScenarioSpec,
    g: impl FnMut(&[f64]) -> f64,
    mc_size: usize,
    seed: u64,
) -> Result<OracleValue> {
    Ok(OracleDraws::new(spec, mc_size, seed)?.evaluate(g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_spec() {
        for kind in [ScenarioKind::Linear, ScenarioKind::Quadratic] {
            assert_eq!(sample_scenario(kind, 4), sample_scenario(kind, 4));
            assert_ne!(sample_scenario(kind, 4), sample_scenario(kind, 5));
        }
    }

    #[test]
    fn quadratic_matrices_are_symmetric() {
        let ScenarioSpec::Quadratic(s) = sample_scenario(ScenarioKind::Quadratic, 1) else {
            panic!()
        };
        let q = s.quadratic.unwrap();
        for m in [q.a_pos, q.a_neg, q.b] {
            assert_eq!(m[0][1], m[1][0]);
        }
    }

    #[test]
    fn fixture_conditionals_are_consistent() {
        let f = FixtureSpec::default();
        let mut rng = RngStream::new(1, "x");
        for _ in 0..50 {
            let x = rng.normal_vec(2);
            let s = sigmoid(f.g_star(&x));
            let c = f.scale.eval(&x);
            let neg = c * (1.0 - s) / (1.0 - c * s);
            // E[psi 1{psi>0}] / E|psi| = s and E|psi| = c
            let e_abs = c * s + (1.0 - c * s) * neg;
            assert!((e_abs - c).abs() < 1e-12);
            assert!((c * s / e_abs - s).abs() < 1e-12);
            assert!((f.tau(&x) - (c * s - (1.0 - c * s) * neg)).abs() < 1e-12);
            assert!((f.neg_sq(&x) - (1.0 - c * s) * neg * neg).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_scale_fixture_is_classification() {
        let f = FixtureSpec {
            scale: ScaleFn::constant(1.0),
            ..Default::default()
        };
        let d = f.generate(500, 3).unwrap();
        assert!(d.psi().iter().all(|p| *p == 1.0 || *p == -1.0));
    }

    #[test]
    fn bad_scale_is_rejected() {
        let f = FixtureSpec {
            scale: ScaleFn::constant(1.2),
            ..Default::default()
        };
        assert!(f.generate(10, 0).is_err());
    }

    #[test]
    fn oracle_rule_attains_optimum() {
        let spec = sample_scenario(ScenarioKind::Linear, 2);
        let draws = OracleDraws::new(&spec, 10_000, 1).unwrap();
        let best = draws.evaluate(|x| spec.tau(x));
        assert_eq!(best.value, best.optimum);
        assert_eq!(best.regret, 0.0);
        let worst = draws.evaluate(|x| -spec.tau(x));
        assert!((worst.value + best.optimum).abs() < 1e-12);
    }

    #[test]
    fn normalization() {
        let v = normalize_params(&[-3.0, 4.0]);
        assert!((v[0] + 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert!(normalized_sq_error(&[2.0, 1.0], &[4.0, 2.0]) < 1e-24);
        assert!((normalized_sq_error(&[2.0, 1.0], &[-4.0, -2.0]) - 4.0).abs() < 1e-12);
    }
}
