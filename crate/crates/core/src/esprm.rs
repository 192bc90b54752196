//! Adversarial estimator over a neural critic class.
//!
//! With `u(x, psi; theta, f) = |psi| l'(g_theta(x), sign psi) f(x)` the game is
//!
//! ```text
//! U(theta, f; anchor) = mean u(theta, f) - 1/4 mean u(anchor, f)^2
//! ```
//!
//! minimized over `theta` and maximized over `f`. Both players take
//! alternating optimistic Adam steps (critic first) and the anchor follows
//! the policy, lagging one step behind.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::ScoredDataset;
use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::nn::{Mlp, MlpSpec, ParamVector, Workspace, DEFAULT_LEAKY_SLOPE, FLEXIBLE_HIDDEN};
use crate::optim::{AdamConfig, OAdamState};
use crate::rng::RngStream;
use crate::surrogate::{loss_d1, loss_d2, risk_on, FitStatus, PolicyModel, Sign};

pub const LINEAR_POLICY_LR: f64 = 1e-3;
pub const FLEXIBLE_POLICY_LR: f64 = 2e-4;

/// `|psi| l'(g, sign psi) f`, zero when `psi = 0`.
pub fn u_term(psi: f64, g: f64, f: f64) -> f64 {
    match Sign::of(psi) {
        Some(s) => psi.abs() * loss_d1(g, s) * f,
        None => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    Network,
    /// The constant zero function; the policy never moves.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Critic {
    Network { spec: MlpSpec, params: Vec<f64> },
    Zero,
}

impl Critic {
    pub fn param_count(&self) -> usize {
        match self {
            Critic::Network { params, .. } => params.len(),
            Critic::Zero => 0,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Critic::Network { params, .. } => params,
            Critic::Zero => &[],
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Critic::Network { params, .. } => params,
            Critic::Zero => &mut [],
        }
    }
}

/// `U` on the given rows with its gradients in the policy and critic
/// parameters. The anchor term does not depend on `theta`.
pub fn game_objective(
    data: &ScoredDataset,
    policy: &MlpSpec,
    theta: &[f64],
    critic: &Critic,
    anchor: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    Mlp::new(policy, theta)?;
    Mlp::new(policy, anchor)?;
    if let Critic::Network { spec, params } = critic {
        Mlp::new(spec, params)?;
    }
    Ok(game_on(data, None, policy, theta, critic, anchor))
}

fn game_on(
    data: &ScoredDataset,
    rows: Option<&[usize]>,
    policy: &MlpSpec,
    theta: &[f64],
    critic: &Critic,
    anchor: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    let mut g_theta = vec![0.0; theta.len()];
    let mut g_omega = vec![0.0; critic.param_count()];
    let Critic::Network {
        spec: cspec,
        params: omega,
    } = critic
    else {
        return (0.0, g_theta, g_omega);
    };
    let pnet = Mlp::new(policy, theta).expect("checked");
    let anet = Mlp::new(policy, anchor).expect("checked");
    let cnet = Mlp::new(cspec, omega).expect("checked");
    let mut pws = Workspace::new(policy);
    let mut aws = Workspace::new(policy);
    let mut cws = Workspace::new(cspec);
    let x = data.x();
    let psi = data.psi();
    let mut lin = 0.0;
    let mut quad = 0.0;
    let mut visit = |i: usize| {
        let Some(s) = Sign::of(psi[i]) else { return };
        let w = psi[i].abs();
        let xi = x.row(i);
        let g = pnet.forward(xi, &mut pws);
        let ga = anet.forward(xi, &mut aws);
        let f = cnet.forward(xi, &mut cws);
        let w1 = w * loss_d1(g, s);
        let wa = w * loss_d1(ga, s);
        let ua = wa * f;
        lin += w1 * f;
        quad += ua * ua;
        cnet.backward_accumulate(&mut cws, w1 - 0.5 * ua * wa, &mut g_omega);
        pnet.backward_accumulate(&mut pws, w * loss_d2(g, s) * f, &mut g_theta);
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
    g_theta.iter_mut().for_each(|v| *v *= inv);
    g_omega.iter_mut().for_each(|v| *v *= inv);
    (lin * inv - 0.25 * quad * inv, g_theta, g_omega)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsprmConfig {
    /// Policy learning rate; defaults by policy class when absent.
    pub policy_lr: Option<f64>,
    pub critic_lr_ratio: f64,
    pub critic: CriticKind,
    pub critic_hidden: Vec<usize>,
    /// Epochs are `min(epoch_budget / n, max_epochs)`, at least one.
    pub epoch_budget: f64,
    pub max_epochs: usize,
    /// Rows per step; full batch up to 1000 rows and 256 beyond when absent.
    pub batch_size: Option<usize>,
}

impl Default for EsprmConfig {
    fn default() -> Self {
        Self {
            policy_lr: None,
            critic_lr_ratio: 5.0,
            critic: CriticKind::Network,
            critic_hidden: vec![FLEXIBLE_HIDDEN],
            epoch_budget: 8_000_000.0,
            max_epochs: 8000,
            batch_size: None,
        }
    }
}

impl EsprmConfig {
    pub fn epochs(&self, n: usize) -> usize {
        ((self.epoch_budget / n.max(1) as f64).floor() as usize)
            .min(self.max_epochs)
            .max(1)
    }

    pub fn batch(&self, n: usize) -> usize {
        let b = self.batch_size.unwrap_or(if n <= 1000 { n } else { 256 });
        b.clamp(1, n.max(1))
    }

    pub fn policy_rate(&self, policy: &MlpSpec) -> f64 {
        self.policy_lr.unwrap_or(if policy.is_linear() {
            LINEAR_POLICY_LR
        } else {
            FLEXIBLE_POLICY_LR
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if let Some(lr) = self.policy_lr {
            if !(lr > 0.0) {
                return bad(format!("policy learning rate {lr} <= 0"));
            }
        }
        if !(self.critic_lr_ratio > 0.0) {
            return bad(format!("critic rate ratio {} <= 0", self.critic_lr_ratio));
        }
        if !(self.epoch_budget > 0.0) || self.max_epochs == 0 {
            return bad("epoch budget and cap must be positive".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch size 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Full-data game value at the end of the epoch.
    pub game_value: f64,
    pub policy_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub validation_risk: Option<f64>,
}

pub fn write_training_log<W: Write>(writer: W, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| Error::Data(e.into());
    w.write_record([
        "epoch",
        "game_value",
        "policy_grad_norm",
        "critic_grad_norm",
        "validation_risk",
    ])
    .map_err(io)?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.game_value.to_string(),
            e.policy_grad_norm.to_string(),
            e.critic_grad_norm.to_string(),
            e.validation_risk.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Data(e.into()))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EsprmFit {
    pub model: PolicyModel,
    pub critic: Critic,
    pub epochs: usize,
    /// Per-epoch diagnostics; empty unless logging was requested.
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, Default)]
pub struct EsprmOptions<'a> {
    /// Keep the policy iterate with the lowest validation risk.
    pub validation: Option<&'a ScoredDataset>,
    pub record_log: bool,
    /// Overrides the seeded random policy initialization.
    pub init: Option<Vec<f64>>,
}

pub fn esprm_fit(
    data: &ScoredDataset,
    policy: &MlpSpec,
    config: &EsprmConfig,
    seed: u64,
    options: EsprmOptions<'_>,
) -> Result<EsprmFit> {
    config.validate()?;
    policy.validate()?;
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut theta = match options.init {
        Some(v) => v,
        None => policy
            .init_params(&mut RngStream::new(seed, "esprm/policy"))
            .into_inner(),
    };
    let mut critic = match config.critic {
        CriticKind::Network => {
            let spec = MlpSpec {
                input_dim: data.dim(),
                hidden_sizes: config.critic_hidden.clone(),
                leaky_slope: DEFAULT_LEAKY_SLOPE,
            };
            spec.validate()?;
            let params = spec.init_params(&mut RngStream::new(seed, "esprm/critic")).into_inner();
            Critic::Network { spec, params }
        }
        CriticKind::Zero => Critic::Zero,
    };
    game_objective(data, policy, &theta, &critic, &theta)?;
    if let Some(v) = options.validation {
        crate::surrogate::empirical_risk(policy, &ParamVector(theta.clone()), v)?;
    }

    let n = data.n();
    let epochs = config.epochs(n);
    let batch = config.batch(n);
    let lr = config.policy_rate(policy);
    let mut policy_opt = OAdamState::new(theta.len(), AdamConfig::with_lr(lr));
    let mut critic_opt = OAdamState::new(critic.param_count(), AdamConfig::with_lr(lr * config.critic_lr_ratio));
    let mut anchor = theta.clone();
    let mut rng = RngStream::new(seed, "esprm/batches");
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;

    for epoch in 0..epochs {
        if batch < n {
            rng.shuffle(&mut order);
        }
        let mut last = (0.0, 0.0);
        for (b, rows) in order.chunks(batch).enumerate() {
            let rows = (batch < n).then_some(rows);
            let (u, _, g_omega) = game_on(data, rows, policy, &theta, &critic, &anchor);
            if !u.is_finite() {
                return Err(Error::NonFiniteGame { epoch, batch: b });
            }
            let ascent: Vec<f64> = g_omega.iter().map(|g| -g).collect();
            critic_opt.step(critic.params_mut(), &ascent)?;
            let (u, g_theta, _) = game_on(data, rows, policy, &theta, &critic, &anchor);
            if !u.is_finite() {
                return Err(Error::NonFiniteGame { epoch, batch: b });
            }
            anchor.clone_from(&theta);
            policy_opt.step(&mut theta, &g_theta)?;
            last = (norm2(&g_theta), norm2(&g_omega));
        }
        let validation_risk = options.validation.map(|v| risk_on(policy, &theta, v, None).0);
        if let Some(r) = validation_risk {
            if best.as_ref().is_none_or(|(b, _)| r < *b) {
                best = Some((r, theta.clone()));
            }
        }
        if options.record_log {
            let (value, _, _) = game_on(data, None, policy, &theta, &critic, &anchor);
            log.push(EpochLog {
                epoch: epoch + 1,
                game_value: value,
                policy_grad_norm: last.0,
                critic_grad_norm: last.1,
                validation_risk,
            });
        }
    }
    if let Some((_, params)) = best {
        theta = params;
    }
    Ok(EsprmFit {
        model: PolicyModel {
            spec: policy.clone(),
            params: ParamVector(theta),
            status: FitStatus::Converged,
        },
        critic,
        epochs,
        log,
    })
}
