//! Choose the number of experts by the particle estimate of the marginal
//! likelihood, on data from a single linear expert.

use hsmoe::dist::RngStream;
use hsmoe::engine::{select_k, FilterConfig};
use hsmoe::synthgen::{generate, SynthConfig};

fn main() -> hsmoe::Result<()> {
    let synth = SynthConfig {
        n_experts: 1,
        n_active: 1,
        n: 300,
        d: 3,
        ..SynthConfig::table1(0)
    };
    let data = generate(&synth, &mut RngStream::new(synth.seed, 0))?;
    let base = FilterConfig {
        n_particles: 300,
        ..FilterConfig::default()
    };
    for row in select_k(&base, &[1, 2, 4], &data.dataset)? {
        println!(
            "K = {}  log_ml = {:10.4}{}",
            row.k,
            row.log_ml,
            if row.winner { "  <- selected" } else { "" }
        );
    }
    Ok(())
}
