//! Sequential Normal-inverse-gamma updates for a single linear expert and
//! its Student-t one-step-ahead predictive.

use hsmoe::dist::RngStream;
use hsmoe::expert::{nig_prior, Observation};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> hsmoe::Result<()> {
    let beta = [1.5, -0.5];
    let mut rng = RngStream::new(1, 0);
    let mut expert = nig_prior(DVector::zeros(2), &DMatrix::identity(2, 2), 1.0, 1.0)?;
    let mut log_evidence = 0.0;
    for t in 1..=200 {
        let x = vec![
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ];
        let y = beta[0] * x[0] + beta[1] * x[1] + 0.3 * rng.sample::<f64, _>(StandardNormal);
        let obs = Observation::new(x, y)?;
        log_evidence += expert.log_predictive(&obs)?;
        expert.update(&obs)?;
        if t % 50 == 0 {
            let sigma2 = expert.b / (expert.a - 1.0);
            println!(
                "t = {t:3}  m = [{:+.3}, {:+.3}]  E[σ²] = {sigma2:.4}  log p(y_1:t) = {log_evidence:.3}",
                expert.m[0], expert.m[1]
            );
        }
    }
    let p = expert.predictive_params(&DVector::from_vec(vec![1.0, 1.0]))?;
    println!(
        "predictive at x = (1, 1): t_{:.0}(μ = {:.3}, s² = {:.4})",
        p.nu, p.mu, p.s2
    );
    Ok(())
}
