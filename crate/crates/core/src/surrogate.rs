//! The logistic surrogate loss, its empirical risk, and the ERM learner.
//!
//! For a score `psi` with sign `s` the per-row loss is `|psi| l(g(x), s)`
//! where `l(g, s) = 2 log(1 + e^g) - (s + 1) g = 2 softplus(-s g)`.

use serde::{Deserialize, Serialize};

use crate::data::ScoredDataset;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec, ParamVector, Workspace};
use crate::optim::{lbfgs_minimize, LbfgsConfig, LbfgsStatus};
use crate::rng::RngStream;
use crate::training::{refine_with_adam, AdamRefine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Neg,
    Pos,
}

impl Sign {
    /// `None` for zero, whose row weight `|psi|` vanishes anyway.
    pub fn of(v: f64) -> Option<Sign> {
        if v > 0.0 {
            Some(Sign::Pos)
        } else if v < 0.0 {
            Some(Sign::Neg)
        } else {
            None
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }
}

pub fn sigmoid(g: f64) -> f64 {
    if g >= 0.0 {
        1.0 / (1.0 + (-g).exp())
    } else {
        let e = g.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^g)` without overflow.
pub fn softplus(g: f64) -> f64 {
    if g > 0.0 {
        g + (-g).exp().ln_1p()
    } else {
        g.exp().ln_1p()
    }
}

pub fn loss(g: f64, s: Sign) -> f64 {
    2.0 * softplus(-s.value() * g)
}

pub fn loss_d1(g: f64, s: Sign) -> f64 {
    2.0 * sigmoid(g) - (s.value() + 1.0)
}

/// Second derivative in `g`; the same for both signs.
pub fn loss_d2(g: f64, _s: Sign) -> f64 {
    let p = sigmoid(g);
    2.0 * p * (1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyClass {
    Linear,
    Flexible,
}

impl PolicyClass {
    pub fn spec(self, input_dim: usize) -> MlpSpec {
        match self {
            PolicyClass::Linear => MlpSpec::linear(input_dim),
            PolicyClass::Flexible => MlpSpec::flexible(input_dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    Degraded,
}

/// `pi(x) = sign(g_theta(x))`, with `g = 0` mapped to `-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub spec: MlpSpec,
    pub params: ParamVector,
    pub status: FitStatus,
}

impl PolicyModel {
    pub fn new(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        Mlp::new(&spec, params.as_slice())?;
        Ok(Self {
            spec,
            params,
            status: FitStatus::Converged,
        })
    }

    pub fn net(&self) -> Mlp<'_> {
        Mlp::new(&self.spec, self.params.as_slice()).expect("validated at construction")
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net().value(x)?)
    }

    pub fn action(&self, x: &[f64]) -> Result<f64> {
        Ok(if self.value(x)? > 0.0 { 1.0 } else { -1.0 })
    }

    /// Evaluates `g` over many rows, reusing one workspace.
    pub fn values<'a>(&self, rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
        let net = self.net();
        let mut ws = Workspace::new(&self.spec);
        rows.map(|x| net.forward(x, &mut ws)).collect()
    }

    pub fn is_degraded(&self) -> bool {
        self.status == FitStatus::Degraded
    }
}

fn check_dims(spec: &MlpSpec, params: &[f64], data: &ScoredDataset) -> Result<()> {
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    Mlp::new(spec, params)?;
    if data.dim() != spec.input_dim {
        return Err(crate::nn::NnError::DimensionMismatch {
            what: "input vector",
            expected: spec.input_dim,
            actual: data.dim(),
        }
        .into());
    }
    Ok(())
}

/// `L_n` over the rows in `rows` (all rows when `None`), with its gradient.
pub(crate) fn risk_on(spec: &MlpSpec, params: &[f64], data: &ScoredDataset, rows: Option<&[usize]>) -> (f64, Vec<f64>) {
    let net = Mlp::new(spec, params).expect("checked by caller");
    let mut ws = Workspace::new(spec);
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    let x = data.x();
    let psi = data.psi();
    let mut visit = |i: usize| {
        let Some(s) = Sign::of(psi[i]) else { return };
        let w = psi[i].abs();
        let g = net.forward(x.row(i), &mut ws);
        total += w * loss(g, s);
        net.backward_accumulate(&mut ws, w * loss_d1(g, s), &mut grad);
    };
    let count = match rows {
        Some(idx) => {
            idx.iter().copied().for_each(&mut visit);
            idx.len()
        }
        None => {
            (0..data.n()).for_each(&mut visit);
            data.n()
        }
    };
    let inv = 1.0 / count as f64;
    grad.iter_mut().for_each(|v| *v *= inv);
    (total * inv, grad)
}

/// Mean of `|psi_i| l(g_theta(x_i), sign(psi_i))` and its gradient in theta.
pub fn empirical_risk(spec: &MlpSpec, params: &ParamVector, data: &ScoredDataset) -> Result<(f64, ParamVector)> {
    check_dims(spec, params.as_slice(), data)?;
    let (l, g) = risk_on(spec, params.as_slice(), data, None);
    Ok((l, ParamVector(g)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErmSettings {
    pub lbfgs: LbfgsConfig,
    /// Adam refinement, used only when a validation split is supplied.
    pub refine: Option<AdamRefine>,
    /// Gradient norm above which the returned model is flagged degraded.
    pub stationarity_tolerance: f64,
}

impl Default for ErmSettings {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsConfig {
                max_iterations: 500,
                tolerance: 1e-9,
                ..Default::default()
            },
            refine: Some(AdamRefine::default()),
            stationarity_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ErmFit {
    pub model: PolicyModel,
    pub loss: f64,
    pub grad_norm: f64,
    pub lbfgs_iterations: usize,
}

/// Minimizes the empirical surrogate risk from a seeded random start.
pub fn erm_fit(
    data: &ScoredDataset,
    spec: &MlpSpec,
    settings: &ErmSettings,
    seed: u64,
    validation: Option<&ScoredDataset>,
) -> Result<ErmFit> {
    spec.validate()?;
    let init = spec.init_params(&mut RngStream::new(seed, "erm/init"));
    check_dims(spec, init.as_slice(), data)?;
    if let Some(v) = validation {
        check_dims(spec, init.as_slice(), v)?;
    }
    let res = lbfgs_minimize(
        |p: &[f64]| risk_on(spec, p, data, None),
        init.into_inner(),
        &settings.lbfgs,
    )?;
    let mut params = res.params;
    if let (Some(refine), Some(val)) = (&settings.refine, validation) {
        let mut rng = RngStream::new(seed, "erm/refine");
        params = refine_with_adam(
            params,
            data.n(),
            |p, rows| risk_on(spec, p, data, rows),
            |p| risk_on(spec, p, val, None).0,
            refine,
            &mut rng,
        )?
        .params;
    }
    let (loss, grad) = risk_on(spec, &params, data, None);
    let grad_norm = crate::linalg::norm2(&grad);
    // The loss is positive everywhere, so a near-zero value means the
    // parameters are running off to infinity (separable data) even when the
    // gradient has vanished.
    let scale = data.psi().iter().map(|p| p.abs()).sum::<f64>() / data.n() as f64;
    let unbounded = loss <= 1e-6 * scale;
    let status =
        if grad_norm <= settings.stationarity_tolerance && res.status != LbfgsStatus::MaxIterations && !unbounded {
            FitStatus::Converged
        } else {
            FitStatus::Degraded
        };
    Ok(ErmFit {
        model: PolicyModel {
            spec: spec.clone(),
            params: ParamVector(params),
            status,
        },
        loss,
        grad_norm,
        lbfgs_iterations: res.iterations,
    })
}
