//! Multi-stage GMM over a finite set of critic functions.
//!
//! For critics `f_1..f_k` the moments and weighting base are
//!
//! ```text
//! m_j(theta)   = mean_i |psi_i| l'(g_theta(x_i), sign psi_i) f_j(x_i)
//! C_jk(anchor) = mean_i psi_i^2 l'(g_anchor(x_i), sign psi_i)^2 f_j(x_i) f_k(x_i)
//! ```
//!
//! and each stage minimizes `m' (C + rho I)^-1 m` with `rho = 1e-6 tr(C) / k`
//! before moving the anchor to the stage solution.

pub mod basis;
pub mod instruments;

use serde::{Deserialize, Serialize};

use crate::data::ScoredDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Cholesky, DenseMatrix};
use crate::nn::{Mlp, MlpSpec, ParamVector, Workspace};
use crate::optim::{lbfgs_minimize, LbfgsConfig, LbfgsStatus};
use crate::rng::RngStream;
use crate::surrogate::{loss_d1, loss_d2, FitStatus, PolicyModel, Sign};

pub use basis::{monomials, BasisSpec, CriticBasis, RandomFourier};
pub use instruments::{
    efficient_instruments, Conditionals, EfficientInstruments, KernelConditionals, DEFAULT_OMEGA_FLOOR,
};

fn check_features(data: &ScoredDataset, features: &DenseMatrix) -> Result<()> {
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    if features.rows() != data.n() {
        return Err(crate::linalg::LinalgError::DimensionMismatch {
            context: "critic features",
            expected: data.n(),
            actual: features.rows(),
        }
        .into());
    }
    Ok(())
}

fn policy_values(spec: &MlpSpec, params: &[f64], x: &DenseMatrix) -> Result<Vec<f64>> {
    let net = Mlp::new(spec, params)?;
    let mut ws = Workspace::new(spec);
    Ok(x.iter_rows().map(|r| net.forward(r, &mut ws)).collect())
}

pub fn moment_vector(data: &ScoredDataset, spec: &MlpSpec, params: &[f64], features: &DenseMatrix) -> Result<Vec<f64>> {
    check_features(data, features)?;
    let g = policy_values(spec, params, data.x())?;
    Ok(moments_from_values(data.psi(), &g, features))
}

fn moments_from_values(psi: &[f64], g: &[f64], features: &DenseMatrix) -> Vec<f64> {
    let mut m = vec![0.0; features.cols()];
    for (i, f) in features.iter_rows().enumerate() {
        let Some(s) = Sign::of(psi[i]) else { continue };
        let w = psi[i].abs() * loss_d1(g[i], s);
        crate::linalg::axpy(w, f, &mut m);
    }
    let inv = 1.0 / psi.len() as f64;
    m.iter_mut().for_each(|v| *v *= inv);
    m
}

pub fn weighting_matrix(
    data: &ScoredDataset,
    spec: &MlpSpec,
    anchor: &[f64],
    features: &DenseMatrix,
) -> Result<DenseMatrix> {
    check_features(data, features)?;
    let g = policy_values(spec, anchor, data.x())?;
    let k = features.cols();
    let mut c = DenseMatrix::zeros(k, k);
    let psi = data.psi();
    for (i, f) in features.iter_rows().enumerate() {
        let Some(s) = Sign::of(psi[i]) else { continue };
        let w = (psi[i] * loss_d1(g[i], s)).powi(2);
        for a in 0..k {
            let wa = w * f[a];
            for b in 0..=a {
                c[(a, b)] += wa * f[b];
            }
        }
    }
    let inv = 1.0 / data.n() as f64;
    for a in 0..k {
        for b in 0..=a {
            let v = c[(a, b)] * inv;
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmWeighting {
    /// `m' (C + rho I)^-1 m`.
    Inverse,
    /// `m' C m`, kept for comparison.
    Literal,
}

/// The weighting matrix `W` used in `m' W m`, applied lazily.
#[derive(Debug, Clone)]
pub enum Weight {
    Inverse(Cholesky),
    Literal(DenseMatrix),
}

impl Weight {
    /// `ridge_scale` sets `rho = ridge_scale * tr(C) / k`.
    pub fn new(c: &DenseMatrix, weighting: GmmWeighting, ridge_scale: f64) -> Result<Self> {
        match weighting {
            GmmWeighting::Literal => Ok(Weight::Literal(c.clone())),
            GmmWeighting::Inverse => {
                let k = c.rows().max(1) as f64;
                let mut rho = ridge_scale * c.trace() / k;
                if !(rho > 0.0) {
                    rho = f64::MIN_POSITIVE.sqrt();
                }
                let mut reg = c.clone();
                reg.add_diagonal(rho);
                Ok(Weight::Inverse(Cholesky::new(&reg, 0.0)?))
            }
        }
    }

    pub fn apply(&self, m: &[f64]) -> Vec<f64> {
        match self {
            Weight::Inverse(ch) => ch.solve(m),
            Weight::Literal(c) => c.matvec(m),
        }
    }

    /// `(m' W m, W m)`.
    pub fn quadratic_form(&self, m: &[f64]) -> (f64, Vec<f64>) {
        let a = self.apply(m);
        (dot(m, &a), a)
    }
}

/// Scalar version of the weighted objective for a given moment vector and
/// weighting base.
pub fn weighted_norm(m: &[f64], c: &DenseMatrix, weighting: GmmWeighting, ridge_scale: f64) -> Result<f64> {
    Ok(Weight::new(c, weighting, ridge_scale)?.quadratic_form(m).0)
}

/// `m(theta)' W m(theta)` and its gradient in `theta`.
pub fn gmm_objective(
    data: &ScoredDataset,
    spec: &MlpSpec,
    params: &[f64],
    features: &DenseMatrix,
    weight: &Weight,
) -> Result<(f64, Vec<f64>)> {
    check_features(data, features)?;
    Mlp::new(spec, params)?;
    Ok(objective_unchecked(data, spec, params, features, weight))
}

fn objective_unchecked(
    data: &ScoredDataset,
    spec: &MlpSpec,
    params: &[f64],
    features: &DenseMatrix,
    weight: &Weight,
) -> (f64, Vec<f64>) {
    let net = Mlp::new(spec, params).expect("checked");
    let mut ws = Workspace::new(spec);
    let psi = data.psi();
    let x = data.x();
    let g: Vec<f64> = x.iter_rows().map(|r| net.forward(r, &mut ws)).collect();
    let m = moments_from_values(psi, &g, features);
    let (value, a) = weight.quadratic_form(&m);
    let mut grad = vec![0.0; params.len()];
    let scale = 2.0 / data.n() as f64;
    for i in 0..data.n() {
        if psi[i] == 0.0 {
            continue;
        }
        let up = scale * psi[i].abs() * loss_d2(g[i], Sign::Pos) * dot(features.row(i), &a);
        if up == 0.0 {
            continue;
        }
        net.forward(x.row(i), &mut ws);
        net.backward_accumulate(&mut ws, up, &mut grad);
    }
    (value, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorInit {
    /// Standard normal entries drawn from the fit seed.
    Random,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSettings {
    pub stages: usize,
    pub weighting: GmmWeighting,
    pub ridge_scale: f64,
    pub anchor: AnchorInit,
    /// Starting point of the first stage; the anchor when `None`. Later
    /// stages start from the previous solution.
    pub start: Option<Vec<f64>>,
    pub lbfgs: LbfgsConfig,
}

impl Default for GmmSettings {
    fn default() -> Self {
        Self {
            stages: 3,
            weighting: GmmWeighting::Inverse,
            ridge_scale: 1e-6,
            anchor: AnchorInit::Random,
            start: None,
            lbfgs: LbfgsConfig {
                max_iterations: 500,
                tolerance: 1e-10,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: PolicyModel,
    /// Objective value at each stage's solution.
    pub stage_objectives: Vec<f64>,
    pub moments: Vec<f64>,
}

pub fn finite_gmm_fit(
    data: &ScoredDataset,
    spec: &MlpSpec,
    features: &DenseMatrix,
    settings: &GmmSettings,
    seed: u64,
) -> Result<GmmFit> {
    spec.validate()?;
    check_features(data, features)?;
    let p = spec.param_count();
    if features.cols() < p {
        return Err(Error::InvalidConfig(format!(
            "{} critics cannot identify {p} policy parameters",
            features.cols()
        )));
    }
    if settings.stages == 0 {
        return Err(Error::InvalidConfig("GMM needs at least one stage".into()));
    }
    let mut anchor = match &settings.anchor {
        AnchorInit::Random => RngStream::new(seed, "gmm/anchor").normal_vec(p),
        AnchorInit::Given(v) => v.clone(),
    };
    Mlp::new(spec, &anchor)?;
    let mut theta = settings.start.clone().unwrap_or_else(|| anchor.clone());
    Mlp::new(spec, &theta)?;
    let mut stage_objectives = Vec::with_capacity(settings.stages);
    let mut status = LbfgsStatus::Converged;
    for stage in 0..settings.stages {
        let wrap = |e: Error| Error::GmmStage {
            stage,
            source: Box::new(e),
        };
        let c = weighting_matrix(data, spec, &anchor, features).map_err(wrap)?;
        let weight = Weight::new(&c, settings.weighting, settings.ridge_scale).map_err(wrap)?;
        let res = lbfgs_minimize(
            |t: &[f64]| objective_unchecked(data, spec, t, features, &weight),
            theta,
            &settings.lbfgs,
        )
        .map_err(|e| wrap(e.into()))?;
        stage_objectives.push(res.loss);
        status = res.status;
        theta = res.params;
        anchor.clone_from(&theta);
    }
    let moments = moment_vector(data, spec, &theta, features)?;
    let status = if status == LbfgsStatus::Converged || norm2(&moments) <= 1e-8 {
        FitStatus::Converged
    } else {
        FitStatus::Degraded
    };
    Ok(GmmFit {
        model: PolicyModel {
            spec: spec.clone(),
            params: ParamVector(theta),
            status,
        },
        stage_objectives,
        moments,
    })
}

/// Fits with a basis evaluated on the data's covariates.
pub fn finite_gmm_fit_basis(
    data: &ScoredDataset,
    spec: &MlpSpec,
    basis: &CriticBasis,
    settings: &GmmSettings,
    seed: u64,
) -> Result<GmmFit> {
    finite_gmm_fit(data, spec, &basis.features(data.x()), settings, seed)
}
