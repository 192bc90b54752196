//! Plug-in efficient instruments `f*(x) = D(x) / Omega(x)` with
//!
//! ```text
//! Omega(x) = E[psi^2 l'(g(x), sign psi)^2 | x]
//!          = (2 sigma - 2)^2 E[psi^2 1{psi > 0} | x] + (2 sigma)^2 E[psi^2 1{psi < 0} | x]
//! D(x)     = l''(g(x)) E[|psi| | x] grad_theta g(x)
//! ```

use crate::data::ScoredDataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nn::{Mlp, MlpSpec, Workspace};
use crate::surrogate::{loss_d2, sigmoid, Sign};

pub const DEFAULT_OMEGA_FLOOR: f64 = 1e-10;

/// Conditional expectations of the score given `x`.
pub trait Conditionals {
    /// `E[psi^2 1{psi > 0} | x]`.
    fn pos_sq(&self, x: &[f64]) -> f64;
    /// `E[psi^2 1{psi < 0} | x]`.
    fn neg_sq(&self, x: &[f64]) -> f64;
    /// `E[|psi| | x]`.
    fn abs_mean(&self, x: &[f64]) -> f64;
}

/// Nadaraya-Watson estimates with a Gaussian kernel.
#[derive(Debug, Clone)]
pub struct KernelConditionals<'a> {
    data: &'a ScoredDataset,
    bandwidth: f64,
}

impl<'a> KernelConditionals<'a> {
    pub fn new(data: &'a ScoredDataset, bandwidth: f64) -> Result<Self> {
        if data.n() == 0 {
            return Err(Error::EmptyDataset);
        }
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidConfig(format!("kernel bandwidth {bandwidth} <= 0")));
        }
        Ok(Self { data, bandwidth })
    }

    /// Scott's rule `n^(-1/(d+4))` times the average covariate standard
    /// deviation.
    pub fn with_default_bandwidth(data: &'a ScoredDataset) -> Result<Self> {
        let n = data.n();
        let d = data.dim();
        let mut sd = 0.0;
        for j in 0..d {
            let col: Vec<f64> = data.x().iter_rows().map(|r| r[j]).collect();
            let m = crate::stats::mean(&col);
            sd += (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n.max(2) as f64).sqrt();
        }
        let sd = if d > 0 { sd / d as f64 } else { 1.0 };
        let bw = sd.max(1e-3) * (n as f64).powf(-1.0 / (d as f64 + 4.0));
        Self::new(data, bw)
    }

    fn smooth(&self, x: &[f64], value: impl Fn(f64) -> f64) -> f64 {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut num = 0.0;
        let mut den = 0.0;
        for (row, &psi) in self.data.x().iter_rows().zip(self.data.psi()) {
            let d2: f64 = row.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            let w = (-d2 * inv).exp();
            num += w * value(psi);
            den += w;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

impl Conditionals for KernelConditionals<'_> {
    fn pos_sq(&self, x: &[f64]) -> f64 {
        self.smooth(x, |p| if p > 0.0 { p * p } else { 0.0 })
    }

    fn neg_sq(&self, x: &[f64]) -> f64 {
        self.smooth(x, |p| if p < 0.0 { p * p } else { 0.0 })
    }

    fn abs_mean(&self, x: &[f64]) -> f64 {
        self.smooth(x, f64::abs)
    }
}

#[derive(Debug, Clone)]
pub struct EfficientInstruments {
    pub omega: Vec<f64>,
    /// One row of `D(x)` per evaluation point.
    pub d: DenseMatrix,
    /// One row of `f*(x)` per evaluation point.
    pub f: DenseMatrix,
}

pub fn efficient_instruments(
    points: &DenseMatrix,
    spec: &MlpSpec,
    params: &[f64],
    conditionals: &impl Conditionals,
    floor: f64,
) -> Result<EfficientInstruments> {
    let net = Mlp::new(spec, params)?;
    let mut ws = Workspace::new(spec);
    let p = params.len();
    let mut omega = Vec::with_capacity(points.rows());
    let mut d_rows = Vec::with_capacity(points.rows() * p);
    let mut f_rows = Vec::with_capacity(points.rows() * p);
    for (i, x) in points.iter_rows().enumerate() {
        let g = net.forward(x, &mut ws);
        let mut h = vec![0.0; p];
        net.backward_accumulate(&mut ws, 1.0, &mut h);
        let s = sigmoid(g);
        let om = (2.0 * s - 2.0).powi(2) * conditionals.pos_sq(x) + (2.0 * s).powi(2) * conditionals.neg_sq(x);
        if !(om > floor) {
            return Err(Error::OmegaFloor {
                index: i,
                x: x.to_vec(),
                value: om,
            });
        }
        let scale = loss_d2(g, Sign::Pos) * conditionals.abs_mean(x);
        for hk in &h {
            d_rows.push(scale * hk);
            f_rows.push(scale * hk / om);
        }
        omega.push(om);
    }
    let n = points.rows();
    Ok(EfficientInstruments {
        omega,
        d: DenseMatrix::from_vec(n, p, d_rows)?,
        f: DenseMatrix::from_vec(n, p, f_rows)?,
    })
}
