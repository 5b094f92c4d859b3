//! Densities and samplers shared by the expert, gate and engine modules.
//!
//! Every sampler draws from an explicit [`RngStream`]. A stream is a ChaCha8
//! generator keyed by `(seed, stream_id)`, so each particle can own an
//! independent stream that does not depend on how work is scheduled.

use std::f64::consts::{FRAC_2_PI, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::{erf::erfc, gamma::ln_gamma};

use crate::error::{Error, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Distinct stream ids select distinct ChaCha keystreams under the same key,
/// which gives independent sequences without any jump-ahead bookkeeping.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    /// Stream whose id is a hash of `parts`, e.g. `(role, step, slot)`.
    pub fn derived(seed: u64, parts: &[u64]) -> Self {
        Self::new(seed, mix_stream_id(parts))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a tuple of integers into a stream id.
pub fn mix_stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6a09_e667_f3bc_c908, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

/// Location-scale Student-t parameters: degrees of freedom, location and
/// squared scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentTParams {
    pub nu: f64,
    pub mu: f64,
    pub s2: f64,
}

impl StudentTParams {
    pub fn new(nu: f64, mu: f64, s2: f64) -> Result<Self> {
        let p = Self { nu, mu, s2 };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !(self.s2 > 0.0) || !self.mu.is_finite() {
            return Err(Error::Precondition(format!(
                "student-t requires nu > 0, s2 > 0 and finite mu (got nu={}, mu={}, s2={})",
                self.nu, self.mu, self.s2
            )));
        }
        Ok(())
    }
}

pub fn student_t_logpdf(y: f64, p: &StudentTParams) -> Result<f64> {
    p.validate()?;
    let StudentTParams { nu, mu, s2 } = *p;
    let z2 = (y - mu) * (y - mu) / (nu * s2);
    Ok(ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * PI * s2).ln()
        - 0.5 * (nu + 1.0) * z2.ln_1p())
}

/// Draw from IG(shape, scale), the density proportional to
/// `x^-(shape+1) exp(-scale/x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) || !scale.is_finite() || !shape.is_finite() {
        return Err(Error::Precondition(format!(
            "inverse-gamma requires shape > 0 and scale > 0 (got {shape}, {scale})"
        )));
    }
    let g: f64 = Gamma::new(shape, 1.0)
        .map_err(|e| Error::Precondition(e.to_string()))?
        .sample(rng);
    // A gamma draw can underflow to zero for tiny shapes.
    Ok(scale / g.max(f64::MIN_POSITIVE))
}

/// Draw from `N(Λ⁻¹h, Λ⁻¹)` using the Cholesky factor of `Λ`.
pub fn sample_gaussian_from_precision<R: Rng + ?Sized>(
    h: &DVector<f64>,
    precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = precision.clone().cholesky().ok_or_else(|| {
        Error::Degenerate("precision matrix is not positive definite".to_string())
    })?;
    let l = chol.l();
    // Λ = L Lᵀ: mean = L⁻ᵀ L⁻¹ h, noise = L⁻ᵀ ε.
    let mut v = l
        .solve_lower_triangular(h)
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".to_string()))?;
    for vi in v.iter_mut() {
        let e: f64 = StandardNormal.sample(rng);
        *vi += e;
    }
    l.tr_solve_lower_triangular(&v)
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".to_string()))
}

/// Mean of a Gaussian in information form, `Λ⁻¹h`.
pub fn precision_mean(h: &DVector<f64>, precision: &DMatrix<f64>) -> Result<DVector<f64>> {
    let chol = precision.clone().cholesky().ok_or_else(|| {
        Error::Degenerate("precision matrix is not positive definite".to_string())
    })?;
    Ok(chol.solve(h))
}

// ---------------------------------------------------------------------------
// Pólya–Gamma PG(1, c)
//
// Devroye-type exact sampler for J*(1, z) with z = |c|/2, then
// PG(1, c) = J*(1, |c|/2) / 4. The proposal is a mixture of a truncated
// exponential (right of TRUNC) and a truncated inverse Gaussian (left of
// TRUNC); acceptance evaluates the alternating series until it decides.

const PG_TRUNC: f64 = 0.64;

fn pg_series_coef(n: u32, x: f64) -> f64 {
    let k = n as f64 + 0.5;
    if x > PG_TRUNC {
        PI * k * (-0.5 * k * k * PI * PI * x).exp()
    } else {
        (FRAC_2_PI / x).powf(1.5) * PI * k * (-2.0 * k * k / x).exp()
    }
}

fn ln_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic Mills-ratio expansion.
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Probability of proposing from the exponential piece.
fn pg_exponential_mass(z: f64) -> f64 {
    let t = PG_TRUNC;
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let rt = (1.0 / t).sqrt();
    let b = rt * (t * z - 1.0);
    let a = -rt * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_normal_cdf(b);
    let xa = x0 + z + ln_normal_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian IG(1/z, 1) truncated to (0, TRUNC).
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = PG_TRUNC;
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > t {
        loop {
            let (mut e1, mut e2): (f64, f64);
            loop {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / t {
                    break;
                }
            }
            let denom = 1.0 + t * e1;
            let x = t / (denom * denom);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let mut x =
                mu + 0.5 * mu * mu * y - 0.5 * mu * (4.0 * mu * y + (mu * y).powi(2)).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}

/// Exact draw from PG(1, c).
pub fn sample_polya_gamma_1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    debug_assert!(c.is_finite(), "PG tilt must be finite");
    let z = 0.5 * c.abs();
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let p_exp = pg_exponential_mass(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            let e: f64 = Exp1.sample(rng);
            PG_TRUNC + e / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = pg_series_coef(0, x);
        let u = rng.random::<f64>() * s;
        let mut n = 0u32;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= pg_series_coef(n, x);
                if u <= s {
                    return 0.25 * x;
                }
            } else {
                s += pg_series_coef(n, x);
                if u > s {
                    break;
                }
            }
        }
    }
}

/// `E[PG(1, c)] = tanh(c/2) / (2c)`, with the limit 1/4 at zero.
pub fn polya_gamma_1_mean(c: f64) -> f64 {
    if c.abs() < 1e-8 {
        0.25
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

// ---------------------------------------------------------------------------
// Resampling and categorical draws

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ResampleScheme {
    Multinomial,
    #[default]
    Systematic,
}

/// Draw `n_out` ancestor indices with probabilities proportional to `weights`.
pub fn resample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    n_out: usize,
    scheme: ResampleScheme,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Precondition(
            "resampling weights must be finite and nonnegative".to_string(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "all resampling weights are zero".to_string(),
        ));
    }
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w / total;
        cdf.push(acc);
    }
    let last = cdf.len() - 1;
    let pick = |u: f64| cdf.partition_point(|&c| c <= u).min(last);
    // Never select a zero-weight index through a rounding gap at the top end.
    let fix = |mut i: usize| {
        while weights[i] == 0.0 && i > 0 {
            i -= 1;
        }
        i
    };

    let out = match scheme {
        ResampleScheme::Multinomial => (0..n_out).map(|_| fix(pick(rng.random::<f64>()))).collect(),
        ResampleScheme::Systematic => {
            let offset = rng.random::<f64>();
            (0..n_out)
                .map(|j| fix(pick((j as f64 + offset) / n_out as f64)))
                .collect()
        }
    };
    Ok(out)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Draw an index with probabilities proportional to `exp(log_weights)`.
///
/// Normalization happens in log space, so the draw is well defined even when
/// every weight underflows on the linear scale.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0;
    }
    let probs: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
