//! Incremental weighted ridge regression with Sherman-Morrison updates.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Number of rank-1 updates between full refactorizations.
pub const REFRESH_PERIOD: usize = 512;

/// Default value of the constant inside the logarithms of the radius.
pub const DEFAULT_BETA_CONSTANT: f64 = 128.0;

/// Anything carrying a positive-definite Gram matrix inverse.
pub trait GramInverse {
    fn gram_inverse(&self) -> &DMatrix<f64>;

    /// `||phi||_{Sigma^{-1}} = sqrt(phi^T Sigma^{-1} phi)`.
    fn ellipsoid_norm(&self, phi: &DVector<f64>) -> f64 {
        phi.dot(&(self.gram_inverse() * phi)).max(0.0).sqrt()
    }
}

/// Regression accumulators of one moment level.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionLevel {
    level: usize,
    lambda: f64,
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    b: DVector<f64>,
    theta: DVector<f64>,
    log_det: f64,
    updates: usize,
}

impl RegressionLevel {
    pub fn new(level: usize, d: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "ridge parameter must be positive, got {lambda}"
            )));
        }
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        Ok(Self {
            level,
            lambda,
            sigma: DMatrix::identity(d, d) * lambda,
            sigma_inv: DMatrix::identity(d, d) / lambda,
            b: DVector::zeros(d),
            theta: DVector::zeros(d),
            log_det: d as f64 * lambda.ln(),
            updates: 0,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }
    pub fn dim(&self) -> usize {
        self.b.len()
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }
    pub fn response(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }
    pub fn log_det(&self) -> f64 {
        self.log_det
    }
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Absorbs one observation with regression weight `sigma_bar` (the
    /// observation enters with factor `sigma_bar^-2`).
    pub fn rank1_update(
        &mut self,
        phi: &DVector<f64>,
        sigma_bar: f64,
        response: f64,
    ) -> Result<()> {
        if !(sigma_bar > 0.0 && sigma_bar.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "regression weight must be positive, got {sigma_bar}"
            )));
        }
        self.rank1_update_inv_sq(phi, 1.0 / (sigma_bar * sigma_bar), response)
    }

    /// Same as [`Self::rank1_update`] with the factor `sigma_bar^-2` given directly.
    pub fn rank1_update_inv_sq(
        &mut self,
        phi: &DVector<f64>,
        inv_sq: f64,
        response: f64,
    ) -> Result<()> {
        if phi.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "feature has length {}, expected {}",
                phi.len(),
                self.dim()
            )));
        }
        if !(inv_sq > 0.0 && inv_sq.is_finite())
            || !response.is_finite()
            || phi.iter().any(|x| !x.is_finite())
        {
            return Err(Error::InvalidInput("non-finite regression input".into()));
        }
        let u = &self.sigma_inv * phi;
        let quad = phi.dot(&u).max(0.0);
        let denom = 1.0 + inv_sq * quad;

        self.sigma.ger(inv_sq, phi, phi, 1.0);
        self.sigma_inv.ger(-inv_sq / denom, &u, &u, 1.0);
        self.b.axpy(inv_sq * response, phi, 1.0);
        self.log_det += (inv_sq * quad).ln_1p();
        self.updates += 1;

        if self.updates % REFRESH_PERIOD == 0 {
            self.refactor()?;
        } else {
            self.theta = &self.sigma_inv * &self.b;
        }
        Ok(())
    }

    /// Recomputes the inverse, log-determinant and estimate from a fresh Cholesky factorization.
    pub fn refactor(&mut self) -> Result<()> {
        let fresh = FreshFactorization::of(&self.sigma, &self.b)?;
        self.sigma_inv = fresh.sigma_inv;
        self.theta = fresh.theta;
        self.log_det = fresh.log_det;
        Ok(())
    }

    pub fn snapshot(&self) -> LevelSnapshot {
        LevelSnapshot {
            sigma: self.sigma.clone(),
            sigma_inv: self.sigma_inv.clone(),
            theta: self.theta.clone(),
            log_det: self.log_det,
        }
    }
}

impl GramInverse for RegressionLevel {
    fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }
}

/// Results of factorizing a Gram matrix from scratch.
#[derive(Debug, Clone)]
pub struct FreshFactorization {
    pub sigma_inv: DMatrix<f64>,
    pub theta: DVector<f64>,
    pub log_det: f64,
}

impl FreshFactorization {
    pub fn of(sigma: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("Gram matrix lost positive definiteness".into()))?;
        let log_det = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|x| x.ln())
                .sum::<f64>();
        Ok(Self {
            sigma_inv: chol.inverse(),
            theta: chol.solve(b),
            log_det,
        })
    }
}

/// Frozen copy of one level at the start of an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSnapshot {
    pub sigma: DMatrix<f64>,
    pub sigma_inv: DMatrix<f64>,
    pub theta: DVector<f64>,
    pub log_det: f64,
}

impl GramInverse for LevelSnapshot {
    fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }
}

/// All levels frozen at the step `t_j` an interval started.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSnapshot {
    pub t_j: u64,
    pub levels: Vec<LevelSnapshot>,
}

impl IntervalSnapshot {
    pub fn take(t_j: u64, levels: &[RegressionLevel]) -> Self {
        Self {
            t_j,
            levels: levels.iter().map(RegressionLevel::snapshot).collect(),
        }
    }

    pub fn level(&self, l: usize) -> &LevelSnapshot {
        &self.levels[l]
    }
}

/// True once the live log-determinant has grown by at least `ln 2` since the snapshot.
pub fn det_doubled(state: &RegressionLevel, snapshot: &LevelSnapshot) -> bool {
    state.log_det() - snapshot.log_det >= LN_2 - 1e-12
}

/// Confidence radius for step `t`. The inner `log(t/d)` is clamped at zero so the
/// radius stays real for `t < d`; `log_constant` is the `128` of the standard form.
pub fn confidence_radius(
    t: u64,
    d: usize,
    lambda: f64,
    fail_prob: f64,
    log_constant: f64,
) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidInput("confidence radius needs t >= 1".into()));
    }
    if !(fail_prob > 0.0 && fail_prob < 1.0) {
        return Err(Error::InvalidInput(format!(
            "failure probability must lie in (0,1), got {fail_prob}"
        )));
    }
    if !(lambda > 0.0) || d == 0 || !(log_constant > 0.0) {
        return Err(Error::InvalidInput(
            "confidence radius needs lambda > 0, d > 0, constant > 0".into(),
        ));
    }
    let t = t as f64;
    let d = d as f64;
    let log_term = (log_constant * ((t / d).ln().max(0.0) + 2.0) * t.powi(4) / fail_prob).ln();
    Ok(
        12.0 * (d * (t * t / (d * lambda)).ln_1p() * log_term).sqrt()
            + 30.0 * d.sqrt() * log_term
            + 1.0,
    )
}

/// `{theta : ||shape^{1/2} (theta - center)||_2 <= radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEllipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
    shape_inv: DMatrix<f64>,
    radius: f64,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
}

impl ConfidenceEllipsoid {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "radius must be finite and nonnegative, got {radius}"
            )));
        }
        if shape.nrows() != center.len() || shape.ncols() != center.len() {
            return Err(Error::InvalidInput("shape does not match center".into()));
        }
        let shape_inv = shape
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("ellipsoid shape is not positive definite".into()))?
            .inverse();
        let eigen = SymmetricEigen::new(shape.clone());
        Ok(Self {
            center,
            shape,
            shape_inv,
            radius,
            eigvecs: eigen.eigenvectors,
            eigvals: eigen.eigenvalues,
        })
    }

    /// Ellipsoid of a level snapshot.
    pub fn from_snapshot(snapshot: &LevelSnapshot, radius: f64) -> Result<Self> {
        Self::new(snapshot.theta.clone(), snapshot.sigma.clone(), radius)
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }
    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `||shape^{1/2} (theta - center)||_2`.
    pub fn distance(&self, theta: &DVector<f64>) -> f64 {
        let diff = theta - &self.center;
        diff.dot(&(&self.shape * &diff)).max(0.0).sqrt()
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        self.distance(theta) <= self.radius
    }

    /// `min_{theta in ellipsoid} <theta, phi> = <center, phi> - radius ||phi||_{shape^{-1}}`.
    pub fn support_min(&self, phi: &DVector<f64>) -> f64 {
        self.center.dot(phi) - self.radius * self.ellipsoid_norm(phi)
    }

    /// Euclidean projection onto the ellipsoid.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let diff = x - &self.center;
        if diff.dot(&(&self.shape * &diff)) <= self.radius * self.radius {
            return x.clone();
        }
        if self.radius == 0.0 {
            return self.center.clone();
        }
        let q = &self.eigvecs;
        let lam = &self.eigvals;
        let z = q.transpose() * &diff;
        let r2 = self.radius * self.radius;
        // g(mu) = sum lam_i z_i^2 / (1 + mu lam_i)^2 is decreasing; find g(mu) = r^2
        let g = |mu: f64| -> f64 {
            z.iter()
                .zip(lam.iter())
                .map(|(zi, li)| li * zi * zi / (1.0 + mu * li).powi(2))
                .sum()
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while g(hi) > r2 {
            hi *= 2.0;
            if hi > 1e300 {
                break;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > r2 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let w = DVector::from_iterator(
            z.len(),
            z.iter()
                .zip(lam.iter())
                .map(|(zi, li)| zi / (1.0 + hi * li)),
        );
        &self.center + q * w
    }
}

impl GramInverse for ConfidenceEllipsoid {
    fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.shape_inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_feature_is_noop() {
        let mut st = RegressionLevel::new(0, 3, 0.5).unwrap();
        let before = st.clone();
        st.rank1_update(&DVector::zeros(3), 2.0, 7.0).unwrap();
        assert_eq!(st.log_det(), before.log_det());
        assert_eq!(st.sigma(), before.sigma());
        assert_eq!(st.theta(), before.theta());
    }

    #[test]
    fn rank1_on_identity() {
        let mut st = RegressionLevel::new(0, 2, 1.0).unwrap();
        st.rank1_update(&DVector::from_vec(vec![1.0, 0.0]), 1.0, 0.0)
            .unwrap();
        assert!((st.log_det() - LN_2).abs() < 1e-15);
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0]));
        assert!((st.sigma_inv() - expect).norm() < 1e-15);
    }

    #[test]
    fn rejects_bad_weights() {
        let mut st = RegressionLevel::new(0, 2, 1.0).unwrap();
        let phi = DVector::from_vec(vec![1.0, 0.0]);
        assert!(st.rank1_update(&phi, 0.0, 1.0).is_err());
        assert!(st.rank1_update(&phi, -1.0, 1.0).is_err());
        assert!(st.rank1_update(&phi, 1.0, f64::NAN).is_err());
        assert!(st
            .rank1_update(&DVector::from_vec(vec![f64::INFINITY, 0.0]), 1.0, 1.0)
            .is_err());
    }

    #[test]
    fn theta_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (d, lambda) = (4, 1.0);
        let mut st = RegressionLevel::new(0, d, lambda).unwrap();
        let mut gram = DMatrix::<f64>::identity(d, d) * lambda;
        let mut rhs = DVector::<f64>::zeros(d);
        for _ in 0..50 {
            let phi = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let w: f64 = rng.gen_range(0.3..3.0);
            let y: f64 = rng.gen_range(-2.0..2.0);
            st.rank1_update(&phi, w, y).unwrap();
            gram += &phi * phi.transpose() / (w * w);
            rhs += &phi * (y / (w * w));
        }
        let direct = gram.lu().solve(&rhs).unwrap();
        assert!((st.theta() - &direct).norm() <= 1e-8 * direct.norm());
    }

    #[test]
    fn isotropic_ellipsoid_norm() {
        let st = RegressionLevel::new(0, 3, 4.0).unwrap();
        let phi = DVector::from_vec(vec![1.0, -2.0, 2.0]);
        assert!((st.ellipsoid_norm(&phi) - 3.0 / 2.0).abs() < 1e-15);
        assert_eq!(st.ellipsoid_norm(&DVector::zeros(3)), 0.0);
    }

    #[test]
    fn ellipsoid_norm_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut st = RegressionLevel::new(0, 4, 0.7).unwrap();
        for _ in 0..9 {
            let phi = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            st.rank1_update(&phi, 0.8, 0.0).unwrap();
        }
        let inv = st.sigma().clone().try_inverse().unwrap();
        let phi = DVector::from_vec(vec![0.3, -0.2, 0.9, 0.1]);
        let dense = phi.dot(&(&inv * &phi)).sqrt();
        assert!((st.ellipsoid_norm(&phi) - dense).abs() < 1e-10);
    }

    #[test]
    fn det_doubling_threshold() {
        let mut st = RegressionLevel::new(0, 2, 1.0).unwrap();
        let snap = st.snapshot();
        assert!(!det_doubled(&st, &snap));
        st.rank1_update(&DVector::from_vec(vec![0.6, 0.8]), 1.0, 0.0)
            .unwrap();
        assert!(det_doubled(&st, &snap));

        let mut st = RegressionLevel::new(0, 1, 1.0).unwrap();
        let snap = st.snapshot();
        // gain ln(1 + x) = 0.69
        let x = 0.69f64.exp() - 1.0;
        st.rank1_update(&DVector::from_vec(vec![x.sqrt()]), 1.0, 0.0)
            .unwrap();
        assert!((st.log_det() - snap.log_det - 0.69).abs() < 1e-12);
        assert!(!det_doubled(&st, &snap));
    }

    #[test]
    fn radius_rejects_bad_arguments() {
        assert!(confidence_radius(0, 4, 1.0, 0.01, 128.0).is_err());
        assert!(confidence_radius(5, 4, 1.0, 0.0, 128.0).is_err());
        assert!(confidence_radius(5, 4, 1.0, 1.0, 128.0).is_err());
    }

    #[test]
    fn radius_nondecreasing_after_d() {
        let mut prev = 0.0;
        for t in 4..2000 {
            let r = confidence_radius(t, 4, 1.0, 0.01, 128.0).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn ellipsoid_projection_lands_on_boundary() {
        let shape = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let e = ConfidenceEllipsoid::new(DVector::from_vec(vec![1.0, -1.0]), shape, 0.5).unwrap();
        let x = DVector::from_vec(vec![3.0, 2.0]);
        let p = e.project(&x);
        assert!((e.distance(&p) - 0.5).abs() < 1e-9);
        // optimality: x - p is parallel to the outward normal shape (p - c)
        let normal = e.shape() * (&p - e.center());
        let r = &x - &p;
        let cross = r[0] * normal[1] - r[1] * normal[0];
        assert!(cross.abs() < 1e-8 * r.norm() * normal.norm());
        assert!(r.dot(&normal) > 0.0);
        let inside = DVector::from_vec(vec![1.05, -1.0]);
        assert_eq!(e.project(&inside), inside);
    }
}
