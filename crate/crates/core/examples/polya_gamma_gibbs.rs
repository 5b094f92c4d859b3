//! Pólya–Gamma data augmentation for a one-coefficient logistic model,
//! using the gate's stick update machinery.

use hsmoe::dist::{sample_polya_gamma_1, RngStream};
use hsmoe::gate::{PhiRefresh, StickState};
use nalgebra::{DMatrix, DVector};

fn main() -> hsmoe::Result<()> {
    let xs = [0.5, 1.0, -0.7, 1.5, 2.0, -1.2, 0.3, 0.8, -0.4, 1.1];
    let labels = [
        true, true, false, true, true, false, false, true, true, false,
    ];
    let mut rng = RngStream::new(3, 0);

    let mut stick = StickState {
        lambda_data: DMatrix::zeros(1, 1),
        h: DVector::from_element(
            1,
            xs.iter()
                .zip(&labels)
                .map(|(x, &l)| if l { 0.5 * x } else { -0.5 * x })
                .sum(),
        ),
        phi: DVector::zeros(1),
        prior_precision: DVector::from_element(1, 1.0),
    };
    let (burn, sweeps) = (500, 20_000);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for it in 0..burn + sweeps {
        let phi = stick.phi[0];
        stick.lambda_data[(0, 0)] = xs
            .iter()
            .map(|x| sample_polya_gamma_1(x * phi, &mut rng) * x * x)
            .sum();
        stick.refresh_phi(PhiRefresh::Sample, &mut rng)?;
        if it >= burn {
            sum += stick.phi[0];
            sum_sq += stick.phi[0] * stick.phi[0];
        }
    }
    let mean = sum / sweeps as f64;
    println!("posterior mean of φ: {mean:.4}");
    println!(
        "posterior sd of φ:   {:.4}",
        (sum_sq / sweeps as f64 - mean * mean).sqrt()
    );
    Ok(())
}
