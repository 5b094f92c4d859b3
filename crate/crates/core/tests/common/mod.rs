//! Independent oracles shared by the integration tests. Nothing here calls
//! the sequential update or predictive code it is used to check.

#![allow(dead_code)]

use hsmoe::expert::{Dataset, Observation};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

/// Closed-form Normal-inverse-gamma posterior from the full design matrix.
pub struct BatchPosterior {
    pub m: DVector<f64>,
    pub p: DMatrix<f64>,
    pub a: f64,
    pub b: f64,
    /// log p(y_{1:n}) under the prior.
    pub log_evidence: f64,
}

pub fn batch_posterior(
    m0: &DVector<f64>,
    p0: &DMatrix<f64>,
    a0: f64,
    b0: f64,
    data: &[Observation],
) -> BatchPosterior {
    let n = data.len();
    let d = m0.len();
    let x = DMatrix::from_fn(n, d, |i, j| data[i].x[j]);
    let y = DVector::from_iterator(n, data.iter().map(|o| o.y));
    let p = p0 + x.transpose() * &x;
    let rhs = p0 * m0 + x.transpose() * &y;
    let m = p
        .clone()
        .lu()
        .solve(&rhs)
        .expect("posterior precision invertible");
    let a = a0 + 0.5 * n as f64;
    let b = b0 + 0.5 * (y.dot(&y) + m0.dot(&(p0 * m0)) - m.dot(&(&p * &m)));
    let log_evidence = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
        + 0.5 * p0.determinant().ln()
        - 0.5 * p.determinant().ln()
        + a0 * b0.ln()
        - a * b.ln()
        + ln_gamma(a)
        - ln_gamma(a0);
    BatchPosterior {
        m,
        p,
        a,
        b,
        log_evidence,
    }
}

pub fn random_spd<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::identity(d, d) * 0.5
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Linear-Gaussian data `y = xᵀβ + 0.5ε` with `x ~ N(0, I)`.
pub fn linear_dataset<R: Rng>(n: usize, d: usize, rng: &mut R) -> Dataset {
    let beta: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let obs = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
            let y = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + 0.5 * normal(rng);
            Observation::new(x, y).unwrap()
        })
        .collect();
    Dataset::new(d, obs).unwrap()
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_means(xs: &[f64], n_batches: usize) -> (f64, f64) {
    let size = xs.len() / n_batches;
    let means: Vec<f64> = xs
        .chunks_exact(size)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let k = means.len() as f64;
    let grand = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (k - 1.0);
    (grand, (var / k).sqrt())
}

/// Prints one acceptance line and fails the test when `pass` is false.
pub fn verdict(id: &str, pass: bool, detail: &str) {
    println!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{id} failed: {detail}");
}

/// `verdict` with a wall-clock budget in seconds.
pub fn timed_verdict(id: &str, pass: bool, detail: &str, start: std::time::Instant, budget: f64) {
    let secs = start.elapsed().as_secs_f64();
    verdict(
        id,
        pass && secs < budget,
        &format!("{detail}, {secs:.1}s (budget {budget}s)"),
    );
}
