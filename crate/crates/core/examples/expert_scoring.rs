//! Rank experts for a query covariate by mean gate logit minus a multiple
//! of its posterior standard deviation.

use hsmoe::dist::RngStream;
use hsmoe::engine::{run, top_k, FilterConfig};
use hsmoe::synthgen::{generate, SynthConfig};
use nalgebra::DVector;

fn main() -> hsmoe::Result<()> {
    let synth = SynthConfig {
        n_experts: 4,
        n_active: 4,
        n: 200,
        d: 2,
        ..SynthConfig::table1(5)
    };
    let data = generate(&synth, &mut RngStream::new(synth.seed, 0))?;
    let cfg = FilterConfig {
        n_particles: 200,
        n_experts: 4,
        seed: 5,
        ..FilterConfig::default()
    };
    let fs = run(&cfg, &data.dataset)?;
    let x = DVector::from_vec(vec![1.0, -0.5]);
    for alpha in [0.0, 1.0, 3.0] {
        let scores = fs.expert_scores(&x, alpha, false)?;
        let best: Vec<usize> = top_k(&scores, 4).into_iter().map(|k| k + 1).collect();
        let shown: Vec<String> = scores.iter().map(|s| format!("{s:+.3}")).collect();
        println!(
            "alpha = {alpha}: scores [{}], ranking {best:?}",
            shown.join(", ")
        );
    }
    Ok(())
}
