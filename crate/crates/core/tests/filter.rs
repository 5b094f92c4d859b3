mod common;

use common::linear_dataset;
use hsmoe::dist::{ResampleScheme, RngStream};
use hsmoe::engine::{self, FilterConfig, FilterState};
use hsmoe::synthgen::{self, SynthConfig};

fn three_expert_data(n: usize) -> hsmoe::expert::Dataset {
    let cfg = SynthConfig {
        n_experts: 3,
        n_active: 3,
        n,
        d: 2,
        ..SynthConfig::table1(9)
    };
    synthgen::generate(&cfg, &mut RngStream::new(9, 0))
        .unwrap()
        .dataset
}

#[test]
fn ess_stays_in_bounds() {
    let data = three_expert_data(80);
    for (scheme, threshold) in [
        (ResampleScheme::Systematic, 1.0),
        (ResampleScheme::Multinomial, 1.0),
        (ResampleScheme::Systematic, 0.5),
    ] {
        let cfg = FilterConfig {
            n_particles: 150,
            resample: scheme,
            resample_threshold: threshold,
            seed: 2,
            ..FilterConfig::default()
        };
        let fs = engine::run(&cfg, &data).unwrap();
        assert_eq!(fs.ess_history.len(), 80);
        assert!(fs.ess_history.iter().all(|e| (1.0..=150.0).contains(e)));
        assert!(fs.log_ml.is_finite());
    }
}

#[test]
fn evidence_increment_ignores_particle_order() {
    let data = three_expert_data(30);
    let cfg = FilterConfig {
        n_particles: 64,
        seed: 1,
        ..FilterConfig::default()
    };
    let mut fs = FilterState::new(cfg, 2).unwrap();
    for o in &data.observations[..29] {
        fs.step(o).unwrap();
    }
    let mut reversed = fs.clone();
    reversed.particles.reverse();
    reversed.log_weights.reverse();
    let last = &data.observations[29];
    let before = fs.log_ml;
    fs.step(last).unwrap();
    reversed.step(last).unwrap();
    assert!(((fs.log_ml - before) - (reversed.log_ml - before)).abs() < 1e-12);
}

#[test]
fn adaptive_resampling_keeps_single_expert_exact() {
    let data = linear_dataset(60, 3, &mut RngStream::new(4, 0));
    let run = |threshold: f64| {
        let cfg = FilterConfig {
            n_experts: 1,
            n_particles: 20,
            resample_threshold: threshold,
            ..FilterConfig::default()
        };
        engine::run(&cfg, &data).unwrap().log_ml
    };
    assert!((run(1.0) - run(0.3)).abs() < 1e-9);
}

#[test]
fn more_particles_reduce_evidence_variance() {
    let data = three_expert_data(60);
    let spread = |n: usize| {
        let lml: Vec<f64> = (0..20u64)
            .map(|seed| {
                let cfg = FilterConfig {
                    n_particles: n,
                    seed,
                    ..FilterConfig::default()
                };
                engine::run(&cfg, &data).unwrap().log_ml
            })
            .collect();
        let mean = lml.iter().sum::<f64>() / 20.0;
        lml.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / 19.0
    };
    let (small, large) = (spread(100), spread(1000));
    assert!(large < small, "var(N=1000) = {large}, var(N=100) = {small}");
}

#[test]
fn frequencies_are_a_distribution() {
    let data = three_expert_data(50);
    let cfg = FilterConfig {
        n_particles: 100,
        store_paths: true,
        ..FilterConfig::default()
    };
    let fs = engine::run(&cfg, &data).unwrap();
    let f = fs.allocation_frequencies().unwrap();
    assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for p in &fs.particles {
        let path = p.path.as_ref().unwrap();
        assert_eq!(path.len(), 50);
        assert_eq!(p.alloc_counts.iter().sum::<u64>(), 50);
    }
}

#[test]
fn select_k_reports_one_winner() {
    let data = linear_dataset(80, 2, &mut RngStream::new(6, 0));
    let base = FilterConfig {
        n_particles: 100,
        ..FilterConfig::default()
    };
    let rows = engine::select_k(&base, &[3, 1, 2, 1], &data).unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(rows.iter().filter(|r| r.winner).count(), 1);
    let best = rows
        .iter()
        .map(|r| r.log_ml)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(rows.iter().find(|r| r.winner).unwrap().log_ml == best);
}
