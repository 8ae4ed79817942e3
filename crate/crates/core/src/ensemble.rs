//! LDPC degree distributions in edge perspective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edge-perspective degree distributions `λ(x) = Σ λ_i x^{i-1}` and
/// `ρ(x) = Σ ρ_i x^{i-1}`.
///
/// `lambda[k]` is the coefficient of `x^k`, i.e. the fraction of edges
/// attached to variable nodes of degree `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    lambda: Vec<f64>,
    rho: Vec<f64>,
}

const COEFF_TOL: f64 = 1e-9;

impl EnsembleSpec {
    /// The `(l, r)`-regular ensemble.
    pub fn regular(l: usize, r: usize) -> Result<Self> {
        if l < 2 || r < 2 {
            return Err(Error::param("ensemble", format!("degrees must be at least 2, got ({l}, {r})")));
        }
        let mut lambda = vec![0.0; l];
        lambda[l - 1] = 1.0;
        let mut rho = vec![0.0; r];
        rho[r - 1] = 1.0;
        Self::from_edge_perspective(lambda, rho)
    }

    pub fn from_edge_perspective(lambda: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        let lambda = trim(lambda);
        let rho = trim(rho);
        for (name, c) in [("lambda", &lambda), ("rho", &rho)] {
            if c.is_empty() {
                return Err(Error::param(name, "no coefficients"));
            }
            if c.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(Error::param(name, "coefficients must be finite and non-negative"));
            }
            let s: f64 = c.iter().sum();
            if (s - 1.0).abs() > COEFF_TOL {
                return Err(Error::param(name, format!("coefficients sum to {s}, expected 1")));
            }
            if c[0] != 0.0 {
                return Err(Error::param(name, "degree-one nodes are not allowed"));
            }
        }
        Ok(EnsembleSpec { lambda, rho })
    }

    /// Convert node-perspective fractions (`nodes[k]` = fraction of nodes of
    /// degree `k + 1`) to edge perspective.
    pub fn from_node_perspective(var_nodes: &[f64], check_nodes: &[f64]) -> Result<Self> {
        fn to_edge(v: &[f64]) -> Vec<f64> {
            let total: f64 = v.iter().enumerate().map(|(k, f)| (k + 1) as f64 * f).sum();
            v.iter()
                .enumerate()
                .map(|(k, f)| (k + 1) as f64 * f / total)
                .collect()
        }
        Self::from_edge_perspective(to_edge(var_nodes), to_edge(check_nodes))
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// `(degree, edge fraction)` for every variable degree present.
    pub fn var_degrees(&self) -> Vec<(usize, f64)> {
        degrees(&self.lambda)
    }

    pub fn check_degrees(&self) -> Vec<(usize, f64)> {
        degrees(&self.rho)
    }

    /// Minimum variable degree `d_l`.
    pub fn min_var_degree(&self) -> usize {
        self.var_degrees()[0].0
    }

    pub fn max_var_degree(&self) -> usize {
        self.var_degrees().last().unwrap().0
    }

    /// Maximum check degree `d_r`.
    pub fn max_check_degree(&self) -> usize {
        self.check_degrees().last().unwrap().0
    }

    /// Edge fraction on variable nodes of the given degree (`λ_2`, `λ_3`, ...).
    pub fn lambda_of_degree(&self, degree: usize) -> f64 {
        self.lambda.get(degree.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    /// `ρ'(1)`.
    pub fn rho_prime_one(&self) -> f64 {
        self.rho.iter().enumerate().map(|(k, c)| k as f64 * c).sum()
    }

    /// `λ'(1)`.
    pub fn lambda_prime_one(&self) -> f64 {
        self.lambda.iter().enumerate().map(|(k, c)| k as f64 * c).sum()
    }

    pub fn lambda_at(&self, x: f64) -> f64 {
        poly(&self.lambda, x)
    }

    pub fn rho_at(&self, x: f64) -> f64 {
        poly(&self.rho, x)
    }

    /// `(l, r)` if both sides are regular.
    pub fn regular_pair(&self) -> Option<(usize, usize)> {
        match (self.var_degrees().as_slice(), self.check_degrees().as_slice()) {
            ([(l, _)], [(r, _)]) => Some((*l, *r)),
            _ => None,
        }
    }

    /// Check degree if the ensemble is right-regular.
    pub fn right_regular_degree(&self) -> Option<usize> {
        match self.check_degrees().as_slice() {
            [(r, _)] => Some(*r),
            _ => None,
        }
    }

    /// Design rate `1 - ∫ρ / ∫λ`.
    pub fn design_rate(&self) -> f64 {
        let int = |c: &[f64]| -> f64 { c.iter().enumerate().map(|(k, v)| v / (k + 1) as f64).sum() };
        1.0 - int(&self.rho) / int(&self.lambda)
    }
}

fn trim(mut v: Vec<f64>) -> Vec<f64> {
    while v.len() > 1 && v.last() == Some(&0.0) {
        v.pop();
    }
    v
}

fn degrees(c: &[f64]) -> Vec<(usize, f64)> {
    c.iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(k, &v)| (k + 1, v))
        .collect()
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}
