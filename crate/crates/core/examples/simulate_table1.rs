//! Generate the sparse ten-expert benchmark and summarize who generated
//! what.

use hsmoe::dist::RngStream;
use hsmoe::synthgen::{empirical_allocation_frequencies, generate, SynthConfig};

fn main() -> hsmoe::Result<()> {
    let cfg = SynthConfig::table1(7);
    let data = generate(&cfg, &mut RngStream::new(cfg.seed, 0))?;
    let freq = empirical_allocation_frequencies(&data.z, cfg.n_experts)?;
    println!(
        "n = {}, d = {}, K = {} ({} active)",
        cfg.n, cfg.d, cfg.n_experts, cfg.n_active
    );
    for (k, f) in freq.iter().enumerate() {
        println!(
            "expert {:2}: {:5.1}%  bias {:+.1}",
            k + 1,
            100.0 * f,
            data.truth.gate_bias[k]
        );
    }
    let x = data.dataset.observations[0].x.as_slice();
    println!(
        "gate at first x: {:?}",
        data.truth
            .gate_probabilities(x)
            .iter()
            .map(|p| format!("{p:.3}"))
            .collect::<Vec<_>>()
    );
    Ok(())
}
