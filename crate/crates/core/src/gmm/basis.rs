//! Finite critic bases: polynomial monomials and random kitchen sinks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::linalg::DenseMatrix;
use crate::rng::RngStream;

/// All monomials of total degree `<= degree`, graded, and within a degree in
/// lexicographic order of the index multiset. For two inputs and degree 2
/// this is `(1, x0, x1, x0^2, x0 x1, x1^2)`.
pub fn monomials(x: &[f64], degree: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    // values of the previous degree, with the smallest variable index each
    // monomial may still be multiplied by
    let mut prev: Vec<(f64, usize)> = vec![(1.0, 0)];
    for _ in 0..degree {
        let mut next = Vec::new();
        for &(v, start) in &prev {
            for (j, xj) in x.iter().enumerate().skip(start) {
                next.push((v * xj, j));
            }
        }
        out.extend(next.iter().map(|p| p.0));
        prev = next;
    }
    out
}

pub fn monomial_count(dim: usize, degree: usize) -> usize {
    // C(dim + degree, degree)
    (1..=degree).fold(1usize, |acc, k| acc * (dim + k) / k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    Polynomial {
        degree: usize,
    },
    RandomFourier {
        count: usize,
        sigma: f64,
        seed: u64,
        /// Use `(cos, sin)` pairs instead of cosines with random offsets.
        #[serde(default)]
        paired: bool,
    },
}

impl BasisSpec {
    pub fn build(&self, dim: usize) -> CriticBasis {
        match *self {
            BasisSpec::Polynomial { degree } => CriticBasis::Polynomial { dim, degree },
            BasisSpec::RandomFourier {
                count,
                sigma,
                seed,
                paired,
            } => CriticBasis::RandomFourier(RandomFourier::new(dim, count, sigma, seed, paired)),
        }
    }
}

/// Random Fourier features for the Gaussian kernel
/// `exp(-|x - y|^2 / (2 sigma^2))`. Frequencies are drawn once at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFourier {
    freqs: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    paired: bool,
    count: usize,
}

impl RandomFourier {
    /// `count` is the number of output features. In paired mode it must be
    /// even and `count / 2` frequencies are drawn.
    pub fn new(dim: usize, count: usize, sigma: f64, seed: u64, paired: bool) -> Self {
        let mut rng = RngStream::new(seed, "rks");
        let n_freq = if paired { count / 2 } else { count };
        let freqs = (0..n_freq)
            .map(|_| rng.normal_vec(dim).into_iter().map(|w| w / sigma).collect())
            .collect();
        let offsets = if paired {
            Vec::new()
        } else {
            (0..n_freq).map(|_| rng.uniform_range(0.0, 2.0 * PI)).collect()
        };
        Self {
            freqs,
            offsets,
            paired,
            count: if paired { 2 * n_freq } else { n_freq },
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count);
        if self.paired {
            let scale = (1.0 / self.freqs.len() as f64).sqrt();
            for w in &self.freqs {
                let z = crate::linalg::dot(w, x);
                out.push(scale * z.cos());
                out.push(scale * z.sin());
            }
        } else {
            let scale = (2.0 / self.count as f64).sqrt();
            for (w, b) in self.freqs.iter().zip(&self.offsets) {
                out.push(scale * (crate::linalg::dot(w, x) + b).cos());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CriticBasis {
    Polynomial { dim: usize, degree: usize },
    RandomFourier(RandomFourier),
}

impl CriticBasis {
    pub fn len(&self) -> usize {
        match self {
            CriticBasis::Polynomial { dim, degree } => monomial_count(*dim, *degree),
            CriticBasis::RandomFourier(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            CriticBasis::Polynomial { degree, .. } => monomials(x, *degree),
            CriticBasis::RandomFourier(r) => r.eval(x),
        }
    }

    /// Feature matrix with one row per row of `x`.
    pub fn features(&self, x: &DenseMatrix) -> DenseMatrix {
        let k = self.len();
        let mut data = Vec::with_capacity(x.rows() * k);
        for row in x.iter_rows() {
            data.extend(self.eval(row));
        }
        DenseMatrix::from_vec(x.rows(), k, data).expect("finite features")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_monomials() {
        assert_eq!(monomials(&[1.0, 2.0], 2), vec![1.0, 1.0, 2.0, 1.0, 2.0, 4.0]);
        assert_eq!(monomials(&[3.0, 5.0], 0), vec![1.0]);
    }

    #[test]
    fn monomial_counts() {
        for dim in 1..4 {
            for deg in 0..5 {
                assert_eq!(monomials(&vec![0.5; dim], deg).len(), monomial_count(dim, deg));
            }
        }
        assert_eq!(monomial_count(2, 3), 10);
    }

    #[test]
    fn cubic_order() {
        let m = monomials(&[2.0, 3.0], 3);
        assert_eq!(&m[6..], &[8.0, 12.0, 18.0, 27.0]);
    }

    #[test]
    fn paired_features_have_unit_diagonal() {
        let rff = RandomFourier::new(2, 512, 0.5, 1, true);
        let mut rng = RngStream::new(2, "x");
        for _ in 0..20 {
            let x = rng.normal_vec(2);
            let phi = rff.eval(&x);
            assert!((crate::linalg::dot(&phi, &phi) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn offset_features_approximate_unit_diagonal() {
        let rff = RandomFourier::new(2, 512, 0.5, 1, false);
        let phi = rff.eval(&[0.3, -0.2]);
        assert!((crate::linalg::dot(&phi, &phi) - 1.0).abs() < 0.15);
    }

    #[test]
    fn rks_is_frozen_by_seed() {
        let a = RandomFourier::new(2, 16, 0.5, 9, false);
        let b = RandomFourier::new(2, 16, 0.5, 9, false);
        assert_eq!(a, b);
        assert_ne!(a, RandomFourier::new(2, 16, 0.5, 10, false));
    }
}
