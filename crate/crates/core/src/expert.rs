//! Conjugate Gaussian linear experts.
//!
//! An expert models `y = xᵀβ + ε`, `ε ~ N(0, σ²)`, under the prior
//! `β | σ² ~ N(m₀, σ² V₀)`, `σ² ~ IG(a₀, b₀)`. Its posterior stays in the
//! Normal-inverse-gamma family and is carried as `(m, P, a, b)` with
//! `P = V⁻¹`, so each observation is a rank-one precision increment.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dist::{student_t_logpdf, StudentTParams};
use crate::error::{Error, Result};

/// Smallest value `b` may take after an update.
pub const B_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub x: DVector<f64>,
    pub y: f64,
}

impl Observation {
    pub fn new(x: impl Into<Vec<f64>>, y: f64) -> Result<Self> {
        let x = DVector::from_vec(x.into());
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition(
                "observation must be finite".to_string(),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// An ordered sequence of observations sharing one covariate dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(d: usize, observations: Vec<Observation>) -> Result<Self> {
        if let Some((i, o)) = observations.iter().enumerate().find(|(_, o)| o.dim() != d) {
            return Err(Error::Precondition(format!(
                "observation {i} has dimension {}, expected {d}",
                o.dim()
            )));
        }
        Ok(Self { d, observations })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Normal-inverse-gamma posterior state of one expert.
#[derive(Clone, Debug, PartialEq)]
pub struct NIGStats {
    /// Posterior mean of the coefficients.
    pub m: DVector<f64>,
    /// Posterior precision (up to σ²) of the coefficients.
    pub p: DMatrix<f64>,
    pub a: f64,
    pub b: f64,
}

fn cholesky(p: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    p.clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("expert precision is not positive definite".to_string()))
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

pub fn nig_prior(m0: DVector<f64>, v0: &DMatrix<f64>, a0: f64, b0: f64) -> Result<NIGStats> {
    if v0.nrows() != m0.len() || v0.ncols() != m0.len() {
        return Err(Error::Config(format!(
            "prior covariance must be {0}x{0}, got {1}x{2}",
            m0.len(),
            v0.nrows(),
            v0.ncols()
        )));
    }
    if !(a0 > 0.0) || !(b0 > 0.0) {
        return Err(Error::Config(format!(
            "prior needs a0 > 0 and b0 > 0 (got {a0}, {b0})"
        )));
    }
    let chol = v0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("prior covariance V0 is not positive definite".to_string()))?;
    let mut p = chol.inverse();
    symmetrize(&mut p);
    Ok(NIGStats {
        m: m0,
        p,
        a: a0,
        b: b0,
    })
}

impl NIGStats {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Student-t one-step predictive at covariate `x`.
    pub fn predictive_params(&self, x: &DVector<f64>) -> Result<StudentTParams> {
        let chol = cholesky(&self.p)?;
        // xᵀP⁻¹x = |L⁻¹x|² with P = LLᵀ.
        let w = chol
            .l_dirty()
            .solve_lower_triangular(x)
            .ok_or_else(|| Error::Degenerate("singular expert factor".to_string()))?;
        let quad = w.norm_squared();
        StudentTParams::new(2.0 * self.a, x.dot(&self.m), self.b / self.a * (1.0 + quad))
    }

    pub fn log_predictive(&self, obs: &Observation) -> Result<f64> {
        student_t_logpdf(obs.y, &self.predictive_params(&obs.x)?)
    }

    /// Conjugate update with one observation, in place.
    ///
    /// Returns `true` when rounding drove `b` to a nonpositive value and it
    /// was clamped to [`B_FLOOR`].
    pub fn update(&mut self, obs: &Observation) -> Result<bool> {
        let x = &obs.x;
        let pm = &self.p * &self.m;
        let old_quad = self.m.dot(&pm);

        let mut p_new = &self.p + x * x.transpose();
        symmetrize(&mut p_new);
        let rhs = pm + x * obs.y;
        let m_new = cholesky(&p_new)?.solve(&rhs);
        // m'ᵀP'm' = m'ᵀ(Pm + xy)
        let new_quad = m_new.dot(&rhs);

        let mut b = self.b + 0.5 * (obs.y * obs.y + old_quad - new_quad);
        let clamped = !(b > 0.0);
        if clamped {
            b = B_FLOOR;
        }
        self.p = p_new;
        self.m = m_new;
        self.a += 0.5;
        self.b = b;
        Ok(clamped)
    }
}

pub fn predictive_params(s: &NIGStats, x: &DVector<f64>) -> Result<StudentTParams> {
    s.predictive_params(x)
}

pub fn nig_update(s: &NIGStats, obs: &Observation) -> Result<NIGStats> {
    let mut next = s.clone();
    next.update(obs)?;
    Ok(next)
}

pub fn nig_log_predictive(s: &NIGStats, obs: &Observation) -> Result<f64> {
    s.log_predictive(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_prior(d: usize) -> NIGStats {
        nig_prior(DVector::zeros(d), &DMatrix::identity(d, d), 1.0, 1.0).unwrap()
    }

    #[test]
    fn prior_inverts_covariance() {
        let s = unit_prior(3);
        assert_eq!(s.p, DMatrix::identity(3, 3));
        let s = nig_prior(
            DVector::zeros(2),
            &(DMatrix::identity(2, 2) * 2.0),
            1.0,
            1.0,
        )
        .unwrap();
        assert_abs_diff_eq!(s.p[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.p[(1, 1)], 0.5, epsilon = 1e-15);
        assert_eq!(s.p[(0, 1)], 0.0);
    }

    #[test]
    fn prior_rejects_non_spd() {
        let v0 = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        assert!(matches!(
            nig_prior(DVector::zeros(2), &v0, 1.0, 1.0),
            Err(Error::Config(_))
        ));
        assert!(nig_prior(DVector::zeros(2), &DMatrix::identity(2, 2), 0.0, 1.0).is_err());
    }

    #[test]
    fn predictive_direct_substitution() {
        let s = unit_prior(1);
        let t = s.predictive_params(&DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!((t.nu, t.mu), (2.0, 0.0));
        assert_abs_diff_eq!(t.s2, 2.0, epsilon = 1e-15);

        let s = NIGStats {
            a: 3.0,
            b: 1.5,
            ..unit_prior(2)
        };
        let t = s.predictive_params(&DVector::zeros(2)).unwrap();
        assert_eq!((t.nu, t.mu, t.s2), (6.0, 0.0, 0.5));
    }

    #[test]
    fn single_update_by_hand() {
        let s = unit_prior(1);
        let obs = Observation::new(vec![1.0], 1.0).unwrap();
        let u = nig_update(&s, &obs).unwrap();
        assert_abs_diff_eq!(u.m[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(u.p[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.a, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(u.b, 1.25, epsilon = 1e-15);
    }

    #[test]
    fn zero_covariate_only_moves_a() {
        let s = NIGStats {
            m: DVector::from_vec(vec![0.3, -1.0]),
            ..unit_prior(2)
        };
        let u = nig_update(&s, &Observation::new(vec![0.0, 0.0], 0.0).unwrap()).unwrap();
        assert_eq!(u.p, s.p);
        assert_abs_diff_eq!((u.m - &s.m).amax(), 0.0, epsilon = 1e-15);
        assert_eq!(u.a, s.a + 0.5);
        assert_abs_diff_eq!(u.b, s.b, epsilon = 1e-15);
    }

    #[test]
    fn update_sharpens_predictive_on_agreeing_point() {
        let s = nig_prior(
            DVector::from_vec(vec![0.5, -0.2]),
            &DMatrix::identity(2, 2),
            2.0,
            1.0,
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let y = x.dot(&s.m);
        let before = s.predictive_params(&x).unwrap();
        let after = nig_update(&s, &Observation { x: x.clone(), y })
            .unwrap()
            .predictive_params(&x)
            .unwrap();
        assert!(after.nu > before.nu);
        assert!(after.s2 < before.s2);
    }

    #[test]
    fn log_predictive_matches_t_density() {
        let s = unit_prior(1);
        let obs = Observation::new(vec![1.0], 0.0).unwrap();
        assert_abs_diff_eq!(
            s.log_predictive(&obs).unwrap(),
            0.25f64.ln(),
            epsilon = 1e-12
        );
        let mut prev = f64::INFINITY;
        for y in [0.0, 0.5, 1.0, 3.0, 30.0] {
            let lp = nig_log_predictive(&s, &Observation::new(vec![1.0], y).unwrap()).unwrap();
            assert!(lp < prev);
            prev = lp;
        }
    }

    #[test]
    fn precision_stays_symmetric() {
        use rand::Rng;
        let mut rng = crate::dist::RngStream::new(1, 1);
        let mut s = unit_prior(4);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = rng.random_range(-5.0..5.0);
            s.update(&Observation::new(x, y).unwrap()).unwrap();
        }
        assert!((&s.p - s.p.transpose()).amax() <= 1e-12);
        assert!(s.b > 0.0);
    }

    #[test]
    fn nonpositive_b_is_clamped() {
        // b can only cross zero through rounding; force it by starting below.
        let mut s = NIGStats {
            b: -1.0,
            ..unit_prior(1)
        };
        let clamped = s
            .update(&Observation::new(vec![1.0], 0.0).unwrap())
            .unwrap();
        assert!(clamped);
        assert_eq!(s.b, B_FLOOR);
    }

    #[test]
    fn dataset_checks_dimensions() {
        let obs = vec![
            Observation::new(vec![1.0, 2.0], 0.0).unwrap(),
            Observation::new(vec![1.0], 0.0).unwrap(),
        ];
        assert!(Dataset::new(2, obs).is_err());
        assert!(Observation::new(vec![f64::NAN], 0.0).is_err());
    }
}
