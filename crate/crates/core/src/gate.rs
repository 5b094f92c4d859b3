//! Stick-breaking logistic gate with Pólya–Gamma augmentation and horseshoe
//! shrinkage on the stick coefficients.
//!
//! Stick `k` (of `K - 1`) carries a logit `η_k(x) = xᵀφ_k`. Expert `k` is
//! selected with probability `σ(η_k) ∏_{ℓ<k} (1 - σ(η_ℓ))`, and the last
//! expert takes whatever mass is left. Stick ordering matters: experts are
//! used in index order, so lower indices are favored a priori.
//!
//! Each stick keeps its data accumulators `(Λ_data, h)` apart from the prior
//! precision `Λ₀ = (τ² diag(λ²))⁻¹`, so the horseshoe scales can be refreshed
//! without subtracting a stale prior term.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{
    precision_mean, sample_gaussian_from_precision, sample_inverse_gamma, sample_polya_gamma_1,
    softplus,
};
use crate::error::{Error, Result};

/// Bounds applied to every sampled horseshoe scale. Half-Cauchy scales
/// outside this range have probability below 1e-15 and would otherwise
/// overflow the prior precision.
const SCALE_MIN: f64 = 1e-30;
const SCALE_MAX: f64 = 1e30;

/// How a stick's coefficient vector is refreshed after its accumulators move.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PhiRefresh {
    /// Draw `φ ~ N(Λ⁻¹h, Λ⁻¹)`.
    #[default]
    Sample,
    /// Set `φ = Λ⁻¹h`.
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StickState {
    /// Sum of `ω xxᵀ` over visits (prior excluded).
    pub lambda_data: DMatrix<f64>,
    /// Sum of `κ x` over visits.
    pub h: DVector<f64>,
    /// Current coefficient vector.
    pub phi: DVector<f64>,
    /// Diagonal of the horseshoe prior precision `Λ₀`.
    pub prior_precision: DVector<f64>,
}

impl StickState {
    fn empty(d: usize) -> Self {
        Self {
            lambda_data: DMatrix::zeros(d, d),
            h: DVector::zeros(d),
            phi: DVector::zeros(d),
            prior_precision: DVector::from_element(d, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    /// `Λ₀ + Λ_data`.
    pub fn precision(&self) -> DMatrix<f64> {
        let mut p = self.lambda_data.clone();
        for (j, v) in self.prior_precision.iter().enumerate() {
            p[(j, j)] += v;
        }
        p
    }

    pub fn posterior_mean(&self) -> Result<DVector<f64>> {
        precision_mean(&self.h, &self.precision())
    }

    pub fn refresh_phi<R: Rng + ?Sized>(&mut self, policy: PhiRefresh, rng: &mut R) -> Result<()> {
        self.phi = match policy {
            PhiRefresh::Sample => sample_gaussian_from_precision(&self.h, &self.precision(), rng)?,
            PhiRefresh::Mean => self.posterior_mean()?,
        };
        Ok(())
    }
}

/// Global and local horseshoe scales with their inverse-gamma auxiliaries.
#[derive(Clone, Debug, PartialEq)]
pub struct HorseshoeState {
    pub tau2: f64,
    pub xi: f64,
    /// `(K-1) x d` local scales squared.
    pub lambda2: DMatrix<f64>,
    pub nu: DMatrix<f64>,
}

fn clamp_scale(v: f64) -> f64 {
    v.clamp(SCALE_MIN, SCALE_MAX)
}

impl HorseshoeState {
    /// Draw all scales from the prior, auxiliaries first.
    pub fn sample_prior<R: Rng + ?Sized>(n_sticks: usize, d: usize, rng: &mut R) -> Result<Self> {
        let xi = clamp_scale(sample_inverse_gamma(0.5, 1.0, rng)?);
        let tau2 = clamp_scale(sample_inverse_gamma(0.5, 1.0 / xi, rng)?);
        let mut nu = DMatrix::zeros(n_sticks, d);
        let mut lambda2 = DMatrix::zeros(n_sticks, d);
        for k in 0..n_sticks {
            for j in 0..d {
                nu[(k, j)] = clamp_scale(sample_inverse_gamma(0.5, 1.0, rng)?);
                lambda2[(k, j)] = clamp_scale(sample_inverse_gamma(0.5, 1.0 / nu[(k, j)], rng)?);
            }
        }
        Ok(Self {
            tau2,
            xi,
            lambda2,
            nu,
        })
    }

    /// Prior precision diagonal for stick `k`.
    pub fn prior_precision(&self, k: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.lambda2.ncols(),
            self.lambda2.row(k).iter().map(|l2| 1.0 / (self.tau2 * l2)),
        )
    }
}

/// `(shape, scale)` of `λ²_{k,j} | ν, φ, τ²`.
pub fn local_scale_conditional(nu: f64, phi: f64, tau2: f64) -> (f64, f64) {
    (1.0, 1.0 / nu + phi * phi / (2.0 * tau2))
}

/// `(shape, scale)` of `ν_{k,j} | λ²`.
pub fn local_aux_conditional(lambda2: f64) -> (f64, f64) {
    (1.0, 1.0 + 1.0 / lambda2)
}

/// `(shape, scale)` of `τ² | ξ, φ, λ²`; `weighted_ss = Σ φ²/λ²`.
pub fn global_scale_conditional(n_coef: usize, xi: f64, weighted_ss: f64) -> (f64, f64) {
    (0.5 * (n_coef as f64 + 1.0), 1.0 / xi + 0.5 * weighted_ss)
}

/// `(shape, scale)` of `ξ | τ²`.
pub fn global_aux_conditional(tau2: f64) -> (f64, f64) {
    (1.0, 1.0 + 1.0 / tau2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateState {
    pub sticks: Vec<StickState>,
    pub hs: HorseshoeState,
}

impl GateState {
    /// Prior draw for a gate over `n_experts` experts: scales from the
    /// horseshoe prior, then each `φ_k ~ N(0, τ² diag(λ²_k))`.
    pub fn sample_prior<R: Rng + ?Sized>(n_experts: usize, d: usize, rng: &mut R) -> Result<Self> {
        if n_experts == 0 {
            return Err(Error::Config("need at least one expert".to_string()));
        }
        let n_sticks = n_experts - 1;
        let hs = HorseshoeState::sample_prior(n_sticks, d, rng)?;
        let mut sticks = Vec::with_capacity(n_sticks);
        for k in 0..n_sticks {
            let mut s = StickState::empty(d);
            s.prior_precision = hs.prior_precision(k);
            s.refresh_phi(PhiRefresh::Sample, rng)?;
            sticks.push(s);
        }
        Ok(Self { sticks, hs })
    }

    pub fn n_experts(&self) -> usize {
        self.sticks.len() + 1
    }

    pub fn phis(&self) -> Vec<DVector<f64>> {
        self.sticks.iter().map(|s| s.phi.clone()).collect()
    }

    pub fn log_probabilities(&self, x: &DVector<f64>) -> Vec<f64> {
        log_stick_probabilities(self.sticks.iter().map(|s| &s.phi), x)
    }

    pub fn refresh_all<R: Rng + ?Sized>(&mut self, policy: PhiRefresh, rng: &mut R) -> Result<()> {
        for s in &mut self.sticks {
            s.refresh_phi(policy, rng)?;
        }
        Ok(())
    }
}

/// Log gate probabilities for the stick coefficients `phis` at `x`.
pub fn log_stick_probabilities<'a, I>(phis: I, x: &DVector<f64>) -> Vec<f64>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let mut out = Vec::new();
    // log ∏_{ℓ<k} (1 - σ(η_ℓ))
    let mut log_rest = 0.0;
    for phi in phis {
        let eta = x.dot(phi);
        // log σ(η) = -softplus(-η), log(1 - σ(η)) = -softplus(η)
        out.push(log_rest - softplus(-eta));
        log_rest -= softplus(eta);
    }
    out.push(log_rest);
    out
}

pub fn stick_probabilities(phis: &[DVector<f64>], x: &DVector<f64>) -> Result<Vec<f64>> {
    if let Some(phi) = phis.iter().find(|p| p.len() != x.len()) {
        return Err(Error::Precondition(format!(
            "stick coefficients have dimension {}, covariate has {}",
            phi.len(),
            x.len()
        )));
    }
    Ok(log_stick_probabilities(phis, x)
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Sticks touched by allocation `z` (zero-based, among `n_experts`), each
/// with its binary label `z == k`.
pub fn visited_sticks(z: usize, n_experts: usize) -> Result<Vec<(usize, bool)>> {
    if z >= n_experts {
        return Err(Error::Precondition(format!(
            "expert index {z} out of range for {n_experts} experts"
        )));
    }
    let last = (z + 1).min(n_experts - 1);
    Ok((0..last).map(|k| (k, k == z)).collect())
}

/// Pólya–Gamma augmented update of one stick after observing `label` at `x`.
pub fn pg_stick_update<R: Rng + ?Sized>(
    s: &mut StickState,
    x: &DVector<f64>,
    label: bool,
    policy: PhiRefresh,
    rng: &mut R,
) -> Result<()> {
    let omega = sample_polya_gamma_1(x.dot(&s.phi), rng);
    let kappa = if label { 0.5 } else { -0.5 };
    s.lambda_data.ger(omega, x, x, 1.0);
    s.h.axpy(kappa, x, 1.0);
    s.refresh_phi(policy, rng)
}

/// One Gibbs sweep over `(λ², ν, τ², ξ)` given the current `φ` draws, then
/// rebuild each stick's prior precision.
pub fn horseshoe_rejuvenate<R: Rng + ?Sized>(g: &mut GateState, rng: &mut R) -> Result<()> {
    let GateState { sticks, hs } = g;
    let d = hs.lambda2.ncols();
    for (k, stick) in sticks.iter().enumerate() {
        for j in 0..d {
            let (sh, sc) = local_scale_conditional(hs.nu[(k, j)], stick.phi[j], hs.tau2);
            hs.lambda2[(k, j)] = clamp_scale(sample_inverse_gamma(sh, sc, rng)?);
            let (sh, sc) = local_aux_conditional(hs.lambda2[(k, j)]);
            hs.nu[(k, j)] = clamp_scale(sample_inverse_gamma(sh, sc, rng)?);
        }
    }
    let mut weighted_ss = 0.0;
    for (k, stick) in sticks.iter().enumerate() {
        for j in 0..d {
            weighted_ss += stick.phi[j] * stick.phi[j] / hs.lambda2[(k, j)];
        }
    }
    let (sh, sc) = global_scale_conditional(sticks.len() * d, hs.xi, weighted_ss);
    hs.tau2 = clamp_scale(sample_inverse_gamma(sh, sc, rng)?);
    let (sh, sc) = global_aux_conditional(hs.tau2);
    hs.xi = clamp_scale(sample_inverse_gamma(sh, sc, rng)?);

    for (k, stick) in sticks.iter_mut().enumerate() {
        stick.prior_precision = hs.prior_precision(k);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::RngStream;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn zero_sticks_halve_repeatedly() {
        let x = v(&[0.3, -2.0]);
        let p = stick_probabilities(&vec![DVector::zeros(2); 2], &x).unwrap();
        assert_eq!(p, vec![0.5, 0.25, 0.25]);
        for k in 1..8 {
            let p = stick_probabilities(&vec![DVector::zeros(2); k - 1], &x).unwrap();
            assert_eq!(p.len(), k);
            for (i, pi) in p.iter().enumerate().take(k - 1) {
                assert_abs_diff_eq!(*pi, 0.5f64.powi(i as i32 + 1), epsilon = 1e-15);
            }
            let tail = if k == 1 {
                1.0
            } else {
                0.5f64.powi(k as i32 - 1)
            };
            assert_abs_diff_eq!(p[k - 1], tail, epsilon = 1e-15);
        }
    }

    #[test]
    fn saturated_first_stick_takes_everything() {
        let x = v(&[1.0]);
        let p = stick_probabilities(&[v(&[800.0]), v(&[0.0]), v(&[3.0])], &x).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert!(p[1..].iter().all(|q| *q < 1e-300));
    }

    #[test]
    fn stick_probabilities_form_simplex() {
        use rand::Rng;
        let mut rng = RngStream::new(1, 0);
        for _ in 0..1000 {
            let k = rng.random_range(1..8usize);
            let d = rng.random_range(1..5usize);
            let phis: Vec<DVector<f64>> = (0..k - 1)
                .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-20.0..20.0)))
                .collect();
            let x = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
            let p = stick_probabilities(&phis, &x).unwrap();
            assert!(p.iter().all(|q| *q >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn stick_probabilities_dimension_mismatch() {
        assert!(stick_probabilities(&[v(&[1.0, 2.0])], &v(&[1.0])).is_err());
    }

    #[test]
    fn visited_stick_labels() {
        assert_eq!(visited_sticks(0, 4).unwrap(), vec![(0, true)]);
        assert_eq!(
            visited_sticks(2, 4).unwrap(),
            vec![(0, false), (1, false), (2, true)]
        );
        assert_eq!(
            visited_sticks(3, 4).unwrap(),
            vec![(0, false), (1, false), (2, false)]
        );
        assert!(visited_sticks(0, 1).unwrap().is_empty());
        assert!(visited_sticks(4, 4).is_err());
    }

    #[test]
    fn pg_update_increments() {
        let mut rng = RngStream::new(3, 0);
        let x = v(&[1.0, -2.0]);
        let base = StickState {
            phi: v(&[0.4, 0.1]),
            ..StickState::empty(2)
        };
        for label in [true, false] {
            let mut s = base.clone();
            pg_stick_update(&mut s, &x, label, PhiRefresh::Sample, &mut rng).unwrap();
            let expected = if label { &x * 0.5 } else { &x * -0.5 };
            assert_abs_diff_eq!((&s.h - &base.h - expected).amax(), 0.0, epsilon = 1e-15);

            let delta = &s.lambda_data - &base.lambda_data;
            let omega = delta[(0, 0)] / (x[0] * x[0]);
            assert!(omega > 0.0);
            assert_abs_diff_eq!(
                (&delta - &x * x.transpose() * omega).amax(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn pg_update_with_zero_covariate() {
        let mut rng = RngStream::new(4, 0);
        let mut s = StickState {
            lambda_data: DMatrix::identity(2, 2) * 3.0,
            h: v(&[1.0, 2.0]),
            ..StickState::empty(2)
        };
        let before = s.clone();
        pg_stick_update(&mut s, &DVector::zeros(2), true, PhiRefresh::Mean, &mut rng).unwrap();
        assert_eq!(s.lambda_data, before.lambda_data);
        assert_eq!(s.h, before.h);
        // Mean policy: φ = (Λ₀ + Λ_data)⁻¹ h = h / 4.
        assert_abs_diff_eq!((&s.phi - v(&[0.25, 0.5])).amax(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn conditionals_reduce_without_signal() {
        assert_eq!(local_scale_conditional(2.0, 0.0, 5.0), (1.0, 0.5));
        assert_eq!(local_aux_conditional(0.5), (1.0, 3.0));
        assert_eq!(global_scale_conditional(3, 0.25, 0.0), (2.0, 4.0));
        assert_eq!(global_aux_conditional(1.0), (1.0, 2.0));
    }

    #[test]
    fn rejuvenation_rebuilds_prior_precision() {
        let mut rng = RngStream::new(5, 0);
        let mut g = GateState::sample_prior(4, 3, &mut rng).unwrap();
        horseshoe_rejuvenate(&mut g, &mut rng).unwrap();
        for (k, s) in g.sticks.iter().enumerate() {
            for j in 0..3 {
                let expect = 1.0 / (g.hs.tau2 * g.hs.lambda2[(k, j)]);
                assert_abs_diff_eq!(s.prior_precision[j], expect, epsilon = expect * 1e-15);
            }
        }
    }

    #[test]
    fn global_scale_stays_positive_over_many_sweeps() {
        let mut rng = RngStream::new(6, 0);
        let mut g = GateState::sample_prior(2, 1, &mut rng).unwrap();
        for _ in 0..1_000_000 {
            horseshoe_rejuvenate(&mut g, &mut rng).unwrap();
            assert!(g.hs.tau2.is_finite() && g.hs.tau2 > 0.0);
        }
    }

    #[test]
    fn accumulators_stay_symmetric_psd() {
        use rand::Rng;
        let mut rng = RngStream::new(7, 0);
        let mut g = GateState::sample_prior(4, 3, &mut rng).unwrap();
        for _ in 0..500 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let z = rng.random_range(0..4usize);
            for (k, label) in visited_sticks(z, 4).unwrap() {
                pg_stick_update(&mut g.sticks[k], &x, label, PhiRefresh::Sample, &mut rng).unwrap();
            }
        }
        for s in &g.sticks {
            let l = &s.lambda_data;
            assert!((l - l.transpose()).amax() <= 1e-12 * l.amax().max(1.0));
            let eig = l.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|e| *e >= -1e-9 * l.amax()));
        }
    }
}
