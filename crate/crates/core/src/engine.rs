//! Particle learning for the horseshoe mixture of experts.
//!
//! Each step runs resample, allocate, propagate over `N` particles:
//!
//! 1. weight every particle by its one-step mixture predictive
//!    `Σ_k g_k(x; φ) t(y; expert k)`, evaluated at the particle's current
//!    stick draws;
//! 2. fold the mean weight into the running log marginal likelihood;
//! 3. resample ancestors in proportion to the weights;
//! 4. in every offspring draw an allocation `z`, update expert `z`, update
//!    the visited sticks through Pólya–Gamma augmentation, and refresh the
//!    horseshoe scales on schedule.
//!
//! Particles are processed in parallel. Every random draw comes from a
//! stream keyed by `(seed, role, step, lineage)`, so results do not depend on
//! the number of threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{
    log_sum_exp, mix_stream_id, resample_indices, sample_log_categorical, ResampleScheme, RngStream,
};
use crate::error::{Error, Result};
use crate::expert::{nig_prior, Dataset, NIGStats, Observation};
use crate::gate::{horseshoe_rejuvenate, pg_stick_update, visited_sticks, GateState, PhiRefresh};

const ROLE_INIT: u64 = 1;
const ROLE_RESAMPLE: u64 = 2;
const ROLE_PROPAGATE: u64 = 3;

/// Normal-inverse-gamma prior shared by all experts: `m₀`, `V₀ = v0_scale·I`,
/// `a₀`, `b₀`. A missing `m0` means the zero vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub m0: Option<Vec<f64>>,
    pub v0_scale: f64,
    pub a0: f64,
    pub b0: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            m0: None,
            v0_scale: 1.0,
            a0: 1.0,
            b0: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn stats(&self, d: usize) -> Result<NIGStats> {
        let m0 = match &self.m0 {
            Some(m) if m.len() != d => {
                return Err(Error::Config(format!(
                    "prior mean has length {}, data has dimension {d}",
                    m.len()
                )))
            }
            Some(m) => DVector::from_vec(m.clone()),
            None => DVector::zeros(d),
        };
        if !(self.v0_scale > 0.0) {
            return Err(Error::Config("v0_scale must be positive".to_string()));
        }
        nig_prior(
            m0,
            &(DMatrix::identity(d, d) * self.v0_scale),
            self.a0,
            self.b0,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub n_particles: usize,
    pub n_experts: usize,
    pub prior: PriorConfig,
    pub resample: ResampleScheme,
    pub phi_refresh: PhiRefresh,
    /// Rejuvenate horseshoe scales every `r` observations; 0 disables.
    pub rejuvenate_every: usize,
    /// Resample when ESS < threshold·N. Values ≥ 1 resample every step.
    pub resample_threshold: f64,
    /// Keep each particle's full allocation path.
    pub store_paths: bool,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            n_experts: 3,
            prior: PriorConfig::default(),
            resample: ResampleScheme::Systematic,
            phi_refresh: PhiRefresh::Sample,
            rejuvenate_every: 1,
            resample_threshold: 1.0,
            store_paths: false,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::Config("need at least one particle".to_string()));
        }
        if self.n_experts == 0 {
            return Err(Error::Config("need at least one expert".to_string()));
        }
        if !(self.resample_threshold >= 0.0) {
            return Err(Error::Config(
                "resample threshold must be nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub experts: Vec<NIGStats>,
    pub gate: GateState,
    pub alloc_counts: Vec<u64>,
    pub last_z: Option<usize>,
    /// Full allocation path, kept only when `store_paths` is set.
    pub path: Option<Vec<u32>>,
    /// Identity used to key this particle's random stream.
    pub lineage: u64,
}

impl Particle {
    /// Per-expert `log g_k(x) + log p(y | expert k)`.
    fn log_components(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut comps = self.gate.log_probabilities(&obs.x);
        for (c, e) in comps.iter_mut().zip(&self.experts) {
            *c += e.log_predictive(obs)?;
        }
        Ok(comps)
    }

    /// Propagate with allocation drawn from `comps`; returns whether the
    /// expert update clamped `b`.
    fn propagate(
        &mut self,
        obs: &Observation,
        comps: &[f64],
        rejuvenate: bool,
        policy: PhiRefresh,
        rng: &mut RngStream,
    ) -> Result<bool> {
        let z = sample_log_categorical(comps, rng);
        let clamped = self.experts[z].update(obs)?;
        for (k, label) in visited_sticks(z, self.experts.len())? {
            pg_stick_update(&mut self.gate.sticks[k], &obs.x, label, policy, rng)?;
        }
        if rejuvenate && !self.gate.sticks.is_empty() {
            horseshoe_rejuvenate(&mut self.gate, rng)?;
            self.gate.refresh_all(policy, rng)?;
        }
        self.alloc_counts[z] += 1;
        self.last_z = Some(z);
        if let Some(path) = &mut self.path {
            path.push(z as u32);
        }
        Ok(clamped)
    }
}

/// Log mixture predictive of one particle, `log p(y | S_{t-1})`.
pub fn predictive_weight(p: &Particle, obs: &Observation) -> Result<f64> {
    Ok(log_sum_exp(&p.log_components(obs)?))
}

/// Draw an allocation from `p(z | x, y, S_{t-1}) ∝ g_z(x) p(y | z)`.
pub fn allocate(p: &Particle, obs: &Observation, rng: &mut RngStream) -> Result<usize> {
    Ok(sample_log_categorical(&p.log_components(obs)?, rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub config: FilterConfig,
    pub d: usize,
    pub particles: Vec<Particle>,
    pub log_ml: f64,
    pub t: usize,
    pub ess_history: Vec<f64>,
    /// Log weights carried between steps when resampling is skipped.
    pub log_weights: Vec<f64>,
    /// Number of expert updates whose `b` had to be clamped.
    pub b_clamps: u64,
}

impl FilterState {
    /// Particles drawn from the prior.
    pub fn new(config: FilterConfig, d: usize) -> Result<Self> {
        config.validate()?;
        let expert_prior = config.prior.stats(d)?;
        let particles = (0..config.n_particles)
            .into_par_iter()
            .map(|i| {
                let lineage = mix_stream_id(&[i as u64]);
                let mut rng = RngStream::derived(config.seed, &[ROLE_INIT, lineage]);
                Ok(Particle {
                    experts: vec![expert_prior.clone(); config.n_experts],
                    gate: GateState::sample_prior(config.n_experts, d, &mut rng)?,
                    alloc_counts: vec![0; config.n_experts],
                    last_z: None,
                    path: config.store_paths.then(Vec::new),
                    lineage,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            log_weights: vec![0.0; config.n_particles],
            config,
            d,
            particles,
            log_ml: 0.0,
            t: 0,
            ess_history: Vec::new(),
            b_clamps: 0,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.particles.len()
    }

    pub fn n_experts(&self) -> usize {
        self.config.n_experts
    }

    /// Process one observation.
    pub fn step(&mut self, obs: &Observation) -> Result<()> {
        if obs.dim() != self.d {
            return Err(Error::Precondition(format!(
                "observation has dimension {}, filter expects {}",
                obs.dim(),
                self.d
            )));
        }
        let n = self.n_particles();
        let step = self.t as u64;

        let comps: Vec<Vec<f64>> = self
            .particles
            .par_iter()
            .map(|p| p.log_components(obs))
            .collect::<Result<_>>()?;
        let total: Vec<f64> = comps
            .iter()
            .zip(&self.log_weights)
            .map(|(c, carried)| carried + log_sum_exp(c))
            .collect();

        let increment = log_sum_exp(&total) - log_sum_exp(&self.log_weights);
        if !increment.is_finite() {
            return Err(Error::Degenerate(format!(
                "all particle weights vanished at observation {}",
                self.t + 1
            )));
        }
        self.log_ml += increment;

        let max = total.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = total.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = weights.iter().sum();
        let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
        let ess = (sum * sum / sum_sq).clamp(1.0, n as f64);
        self.ess_history.push(ess);

        let resample = self.config.resample_threshold >= 1.0
            || ess < self.config.resample_threshold * n as f64;
        let ancestors = if resample {
            let mut rng = RngStream::derived(self.config.seed, &[ROLE_RESAMPLE, step]);
            let idx = resample_indices(&weights, n, self.config.resample, &mut rng)?;
            self.log_weights = vec![0.0; n];
            idx
        } else {
            self.log_weights = total;
            (0..n).collect()
        };

        // Offspring lineage: ancestor lineage plus how many copies of that
        // ancestor came before it in this step.
        let mut copies = vec![0u64; n];
        let lineages: Vec<u64> = ancestors
            .iter()
            .map(|&a| {
                let c = copies[a];
                copies[a] += 1;
                mix_stream_id(&[self.particles[a].lineage, step, c])
            })
            .collect();

        let rejuvenate =
            self.config.rejuvenate_every > 0 && (self.t + 1).is_multiple_of(self.config.rejuvenate_every);
        let seed = self.config.seed;
        let policy = self.config.phi_refresh;
        let parents = &self.particles;
        let results: Vec<(Particle, bool)> = ancestors
            .par_iter()
            .zip(lineages.par_iter())
            .map(|(&a, &lineage)| {
                let mut child = parents[a].clone();
                child.lineage = lineage;
                let mut rng = RngStream::derived(seed, &[ROLE_PROPAGATE, lineage]);
                let clamped = child.propagate(obs, &comps[a], rejuvenate, policy, &mut rng)?;
                Ok((child, clamped))
            })
            .collect::<Result<_>>()?;

        self.b_clamps += results.iter().filter(|(_, c)| *c).count() as u64;
        self.particles = results.into_iter().map(|(p, _)| p).collect();
        self.t += 1;
        Ok(())
    }

    /// Posterior mean allocation frequency of each expert,
    /// `(1/N) Σ_i counts_i / t`.
    pub fn allocation_frequencies(&self) -> Result<Vec<f64>> {
        if self.t == 0 {
            return Err(Error::Precondition(
                "allocation frequencies need at least one observation".to_string(),
            ));
        }
        let scale = 1.0 / (self.t as f64 * self.n_particles() as f64);
        let mut freq = vec![0.0; self.n_experts()];
        for p in &self.particles {
            for (f, c) in freq.iter_mut().zip(&p.alloc_counts) {
                *f += *c as f64;
            }
        }
        Ok(freq.into_iter().map(|f| f * scale).collect())
    }

    /// Particle average of each expert's posterior mean coefficients.
    pub fn expert_mean_coefficients(&self) -> Vec<DVector<f64>> {
        let n = self.n_particles() as f64;
        (0..self.n_experts())
            .map(|k| {
                self.particles
                    .iter()
                    .fold(DVector::zeros(self.d), |acc, p| acc + &p.experts[k].m)
                    / n
            })
            .collect()
    }

    /// Uncertainty-aware router scores at `x`: for every stick, the particle
    /// mean of the logit `xᵀφ_k` minus `alpha` times its particle standard
    /// deviation. The last expert has no logit of its own and is scored by
    /// the particle mean of `log P(z = K | x)`.
    ///
    /// With `within_particle`, the variance also includes each particle's
    /// Gaussian uncertainty `xᵀΛ⁻¹x` about its stick coefficients.
    pub fn expert_scores(
        &self,
        x: &DVector<f64>,
        alpha: f64,
        within_particle: bool,
    ) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::Precondition(format!(
                "query has dimension {}, filter expects {}",
                x.len(),
                self.d
            )));
        }
        if !(alpha >= 0.0) {
            return Err(Error::Precondition("alpha must be nonnegative".to_string()));
        }
        let n = self.n_particles() as f64;
        let mut scores = Vec::with_capacity(self.n_experts());
        for k in 0..self.n_experts() - 1 {
            let logits: Vec<f64> = self
                .particles
                .iter()
                .map(|p| x.dot(&p.gate.sticks[k].phi))
                .collect();
            let mean = logits.iter().sum::<f64>() / n;
            let mut var = logits.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
            if within_particle {
                let mut extra = 0.0;
                for p in &self.particles {
                    let chol = p.gate.sticks[k].precision().cholesky().ok_or_else(|| {
                        Error::Degenerate("stick precision is not positive definite".to_string())
                    })?;
                    extra += x.dot(&chol.solve(x));
                }
                var += extra / n;
            }
            scores.push(mean - alpha * var.sqrt());
        }
        let last = self
            .particles
            .iter()
            .map(|p| {
                *p.gate
                    .log_probabilities(x)
                    .last()
                    .expect("gate has K entries")
            })
            .sum::<f64>()
            / n;
        scores.push(last);
        Ok(scores)
    }
}

/// Indices of the `k` highest scores, best first; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Run the filter over `data` from prior-initialized particles.
pub fn run(config: &FilterConfig, data: &Dataset) -> Result<FilterState> {
    let mut fs = FilterState::new(config.clone(), data.d)?;
    for obs in &data.observations {
        fs.step(obs)?;
    }
    Ok(fs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub log_ml: f64,
    pub winner: bool,
}

/// Log marginal likelihood for each candidate number of experts, sorted by
/// `K`. The winner is the largest evidence, smaller `K` on ties.
pub fn select_k(base: &FilterConfig, ks: &[usize], data: &Dataset) -> Result<Vec<SelectionRow>> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::Config("no candidate K given".to_string()));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for k in ks {
        let cfg = FilterConfig {
            n_experts: k,
            ..base.clone()
        };
        rows.push(SelectionRow {
            k,
            log_ml: run(&cfg, data)?.log_ml,
            winner: false,
        });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.log_ml > rows[best].log_ml {
            best = i;
        }
    }
    rows[best].winner = true;
    Ok(rows)
}
