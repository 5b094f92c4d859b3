//! Particle-learning fit of a horseshoe-gated mixture on the ten-expert
//! benchmark. Pass a particle count as the first argument (default 300).

use hsmoe::dist::RngStream;
use hsmoe::engine::{run, FilterConfig};
use hsmoe::synthgen::{empirical_allocation_frequencies, generate, SynthConfig};

fn main() -> hsmoe::Result<()> {
    let n_particles = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(300);
    let synth = SynthConfig::table1(7);
    let data = generate(&synth, &mut RngStream::new(synth.seed, 0))?;
    let cfg = FilterConfig {
        n_particles,
        n_experts: 10,
        seed: 7,
        ..FilterConfig::default()
    };
    let fs = run(&cfg, &data.dataset)?;
    let fitted = fs.allocation_frequencies()?;
    let truth = empirical_allocation_frequencies(&data.z, 10)?;
    println!("log marginal likelihood: {:.4}", fs.log_ml);
    println!(
        "min ESS: {:.1} of {n_particles}",
        fs.ess_history.iter().copied().fold(f64::INFINITY, f64::min)
    );
    println!("expert  fitted  generator");
    for k in 0..10 {
        println!("{:6}  {:6.3}  {:9.3}", k + 1, fitted[k], truth[k]);
    }
    println!(
        "mass on experts 1-3: {:.4}",
        fitted[..3].iter().sum::<f64>()
    );
    Ok(())
}
