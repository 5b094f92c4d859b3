//! Synthetic sparse mixture-of-experts regression data.
//!
//! Covariates are `N(0, I_d)`. Allocations come from a softmax gate with
//! logits `(xᵀc_k + b_k) / T`: the first `s` experts are active (`b_k = 0`,
//! `c_k ~ N(0, I_d)`), the rest carry the bias `b_inactive` and zero gate
//! coefficients. Responses are `y = xᵀβ_z + ε`, `ε ~ N(0, σ²_z)`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::{log_sum_exp, sample_log_categorical};
use crate::error::{Error, Result};
use crate::expert::{Dataset, Observation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_experts: usize,
    pub n_active: usize,
    pub n: usize,
    pub d: usize,
    pub b_inactive: f64,
    pub temperature: f64,
    /// Noise variance shared by all experts.
    pub sigma2: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// K = 10 experts, 3 active, n = 500, d = 5, inactive bias -3.0,
    /// temperature 0.70.
    pub fn table1(seed: u64) -> Self {
        Self {
            n_experts: 10,
            n_active: 3,
            n: 500,
            d: 5,
            b_inactive: -3.0,
            temperature: 0.70,
            sigma2: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_active == 0 || self.n_active > self.n_experts {
            return Err(Error::Config(format!(
                "need 1 <= active experts <= K (got s={}, K={})",
                self.n_active, self.n_experts
            )));
        }
        if self.d == 0 {
            return Err(Error::Config(
                "feature dimension must be positive".to_string(),
            ));
        }
        if !(self.temperature > 0.0) || !(self.sigma2 > 0.0) || !self.b_inactive.is_finite() {
            return Err(Error::Config(
                "temperature and noise variance must be positive, bias finite".to_string(),
            ));
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::table1(0)
    }
}

/// Generator-side parameters, written alongside the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub betas: Vec<Vec<f64>>,
    pub sigma2s: Vec<f64>,
    pub gate_coeffs: Vec<Vec<f64>>,
    pub gate_bias: Vec<f64>,
    pub temperature: f64,
}

impl GroundTruth {
    /// Softmax gate probabilities at `x`.
    pub fn gate_probabilities(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .gate_coeffs
            .iter()
            .zip(&self.gate_bias)
            .map(|(c, b)| (dot(c, x) + b) / self.temperature)
            .collect();
        let norm = log_sum_exp(&logits);
        logits.iter().map(|l| (l - norm).exp()).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: GroundTruth,
    /// Zero-based generating expert of every observation.
    pub z: Vec<usize>,
}

pub fn generate<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<SyntheticData> {
    cfg.validate()?;
    let normal = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    let k = cfg.n_experts;

    let betas: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..cfg.d).map(|_| normal(rng)).collect())
        .collect();
    let gate_coeffs: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            if j < cfg.n_active {
                (0..cfg.d).map(|_| normal(rng)).collect()
            } else {
                vec![0.0; cfg.d]
            }
        })
        .collect();
    let truth = GroundTruth {
        betas,
        sigma2s: vec![cfg.sigma2; k],
        gate_bias: (0..k)
            .map(|j| {
                if j < cfg.n_active {
                    0.0
                } else {
                    cfg.b_inactive
                }
            })
            .collect(),
        gate_coeffs,
        temperature: cfg.temperature,
    };

    let mut observations = Vec::with_capacity(cfg.n);
    let mut z = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x: Vec<f64> = (0..cfg.d).map(|_| normal(rng)).collect();
        let logits: Vec<f64> = truth
            .gate_coeffs
            .iter()
            .zip(&truth.gate_bias)
            .map(|(c, b)| (dot(c, &x) + b) / truth.temperature)
            .collect();
        let zi = sample_log_categorical(&logits, rng);
        let y = dot(&x, &truth.betas[zi]) + truth.sigma2s[zi].sqrt() * normal(rng);
        observations.push(Observation {
            x: DVector::from_vec(x),
            y,
        });
        z.push(zi);
    }
    Ok(SyntheticData {
        dataset: Dataset::new(cfg.d, observations)?,
        truth,
        z,
    })
}

/// Normalized counts of the zero-based allocations `z` over `n_experts`.
pub fn empirical_allocation_frequencies(z: &[usize], n_experts: usize) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Precondition(
            "allocation sequence is empty".to_string(),
        ));
    }
    let mut freq = vec![0.0; n_experts];
    for &zi in z {
        *freq.get_mut(zi).ok_or_else(|| {
            Error::Precondition(format!(
                "allocation {zi} out of range for {n_experts} experts"
            ))
        })? += 1.0;
    }
    let n = z.len() as f64;
    Ok(freq.into_iter().map(|f| f / n).collect())
}
