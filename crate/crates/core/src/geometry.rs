//! Geometric and probabilistic kernels shared by the rest of the crate.
//!
//! Everything here is a pure function over immutable inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Unit, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;
pub type Direction3 = Unit<Vector3<f64>>;

/// Default absolute tolerance for Gaussian-mass integration.
pub const DEFAULT_INTEGRATION_TOL: f64 = 1e-4;
/// Maximum number of series terms before falling back to quasi-random sampling.
pub const MAX_SERIES_TERMS: usize = 10_000;
/// Diagonal loading applied to singular covariances.
pub const COV_REGULARIZATION: f64 = 1e-12;

const QMC_POINTS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point3,
    pub b: Point3,
}

impl Segment {
    pub fn new(a: Point3, b: Point3) -> Self {
        Self { a, b }
    }

    pub fn point(p: Point3) -> Self {
        Self { a: p, b: p }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn at(&self, s: f64) -> Point3 {
        self.a + (self.b - self.a) * s
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// Cylinder with hemispherical caps around a segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub seg: Segment,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Point3, b: Point3, radius: f64) -> Self {
        Self {
            seg: Segment::new(a, b),
            radius,
        }
    }

    /// Signed clearance between two capsules (negative when penetrating).
    pub fn clearance(&self, other: &Capsule) -> f64 {
        segment_segment_distance(&self.seg, &other.seg) - self.radius - other.radius
    }

    /// Signed clearance to a sphere.
    pub fn sphere_clearance(&self, center: &Point3, radius: f64) -> f64 {
        point_segment_distance(center, &self.seg) - self.radius - radius
    }
}

/// Ball of combined radius `w` in one or three dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinkowskiBall {
    pub w: f64,
    pub dim: usize,
}

impl MinkowskiBall {
    pub fn new(w: f64, dim: usize) -> Result<Self> {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidInput(format!("ball radius must be >= 0, got {w}")));
        }
        if dim != 1 && dim != 3 {
            return Err(Error::InvalidInput(format!("ball dimension must be 1 or 3, got {dim}")));
        }
        Ok(Self { w, dim })
    }

    pub fn sphere_pair(ri: f64, rj: f64) -> Self {
        Self { w: ri + rj, dim: 3 }
    }
}

/// Mean and covariance of a Gaussian distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "covariance is {}x{}, mean has {} entries",
                cov.nrows(),
                cov.ncols(),
                n
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("belief has non-finite entries".into()));
        }
        let cov = symmetrize(&cov);
        let min_eig = SymmetricEigen::new(cov.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if n > 0 && min_eig < -1e-12 {
            return Err(Error::InvalidInput(format!(
                "covariance is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn point3(mean: Point3, cov: nalgebra::Matrix3<f64>) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(mean.as_slice()),
            DMatrix::from_fn(3, 3, |r, c| cov[(r, c)]),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal over the first `dim` coordinates.
    pub fn head(&self, dim: usize) -> GaussianBelief {
        GaussianBelief {
            mean: self.mean.rows(0, dim).into_owned(),
            cov: self.cov.view((0, 0), (dim, dim)).into_owned(),
        }
    }

    /// Belief of `self - other` for independent variables.
    pub fn relative_to(&self, other: &GaussianBelief) -> Result<GaussianBelief> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidInput(format!(
                "belief dimensions differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(GaussianBelief {
            mean: &self.mean - &other.mean,
            cov: &self.cov + &other.cov,
        })
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Projects a symmetric matrix onto the PSD cone by flooring eigenvalues at zero.
pub fn floor_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&rebuilt)
}

pub fn point_segment_distance(p: &Point3, s: &Segment) -> f64 {
    let d = s.b - s.a;
    let len2 = d.norm_squared();
    if len2 <= f64::EPSILON * f64::EPSILON {
        return (p - s.a).norm();
    }
    let t = ((p - s.a).dot(&d) / len2).clamp(0.0, 1.0);
    (p - s.at(t)).norm()
}

/// Closest points between two segments, returned as parameters `(s, t)` on `s1`, `s2`.
pub fn closest_segment_params(s1: &Segment, s2: &Segment) -> (f64, f64) {
    let d1 = s1.b - s1.a;
    let d2 = s2.b - s2.a;
    let r = s1.a - s2.a;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = 1e-300;

    if a <= eps && e <= eps {
        return (0.0, 0.0);
    }
    if a <= eps {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= eps {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > 1e-14 * a * e {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

/// Minimum Euclidean distance between two segments. Symmetric, exact for point segments.
pub fn segment_segment_distance(s1: &Segment, s2: &Segment) -> f64 {
    let (s, t) = closest_segment_params(s1, s2);
    let d = (s1.at(s) - s2.at(t)).norm();
    // Clamped parameters can miss the true optimum by rounding; the endpoint
    // projections bound it from above and keep the result symmetric.
    d.min(point_segment_distance(&s1.a, s2))
        .min(point_segment_distance(&s1.b, s2))
        .min(point_segment_distance(&s2.a, s1))
        .min(point_segment_distance(&s2.b, s1))
}

/// Gaussian mass of `N(mu_i - mu_j, var_i + var_j)` over `[-w, w]` with `w = l_i + l_j`.
pub fn collision_prob_1d(mu_i: f64, var_i: f64, mu_j: f64, var_j: f64, l_i: f64, l_j: f64) -> f64 {
    let w = l_i + l_j;
    let delta = mu_i - mu_j;
    let var = var_i + var_j;
    if var <= 0.0 {
        return if delta.abs() <= w { 1.0 } else { 0.0 };
    }
    if w <= 0.0 {
        return 0.0;
    }
    let sd = var.sqrt();
    let upper = (w - delta.abs()) / sd;
    let lower = (-w - delta.abs()) / sd;
    (std_normal_cdf(upper) - std_normal_cdf(lower)).clamp(0.0, 1.0)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Volume `V_B` and second-moment matrix `C_B` of a uniform ball.
///
/// `C_B / V_B` is `w^2/3` in one dimension and `(w^2/5) I` in three.
pub fn minkowski_moments(ball: &MinkowskiBall) -> (f64, DMatrix<f64>) {
    let w = ball.w;
    match ball.dim {
        1 => {
            let v = 2.0 * w;
            (v, DMatrix::from_element(1, 1, v * w * w / 3.0))
        }
        _ => {
            let v = 4.0 / 3.0 * std::f64::consts::PI * w.powi(3);
            (v, DMatrix::identity(3, 3) * (v * w * w / 5.0))
        }
    }
}

/// Per-unit-volume second moment `C_B / V_B` (well defined at `w = 0`).
pub fn minkowski_normalized_moment(ball: &MinkowskiBall) -> DMatrix<f64> {
    let w2 = ball.w * ball.w;
    match ball.dim {
        1 => DMatrix::from_element(1, 1, w2 / 3.0),
        d => DMatrix::identity(d, d) * (w2 / 5.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrationMethod {
    Exact,
    Series,
    QuasiMonteCarlo,
}

/// Result of a Gaussian-over-ball integration with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallProbability {
    pub probability: f64,
    pub method: IntegrationMethod,
    pub terms: usize,
    pub regularized: bool,
}

/// `P(|x| <= w)` for `x ~ rel`.
///
/// The covariance is diagonalised so that `|x|^2` becomes a weighted sum of
/// non-central chi-square variables, which is then evaluated with Ruben's
/// mixture-of-chi-square series. Each series coefficient is non-negative and
/// they sum to one, so the tail after `K` terms is bounded by
/// `(1 - sum c_k) * F_{n+2K+2}(t/beta)`; the loop stops once that bound drops
/// below `tol`.
pub fn gaussian_ball_probability(rel: &GaussianBelief, ball: &MinkowskiBall, tol: f64) -> BallProbability {
    let exact = |p: f64| BallProbability {
        probability: p,
        method: IntegrationMethod::Exact,
        terms: 0,
        regularized: false,
    };
    if ball.w <= 0.0 {
        return exact(0.0);
    }
    let n = rel.dim();
    if n == 0 {
        return exact(1.0);
    }
    let tol = if tol > 0.0 { tol } else { DEFAULT_INTEGRATION_TOL };

    let mut cov = symmetrize(&rel.cov);
    let mut eig = SymmetricEigen::new(cov.clone());
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let regularized = min_eig < COV_REGULARIZATION;
    if regularized {
        cov = floor_psd(&cov) + DMatrix::identity(n, n) * COV_REGULARIZATION;
        eig = SymmetricEigen::new(cov);
    }
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let rotated = eig.eigenvectors.transpose() * &rel.mean;
    let t = ball.w * ball.w;

    // A distribution 40 standard deviations away from the ball boundary is
    // numerically a point mass.
    let gap = rel.mean.norm() - ball.w;
    if lambda_max.sqrt() * 40.0 < gap.abs() {
        return BallProbability {
            regularized,
            ..exact(if gap < 0.0 { 1.0 } else { 0.0 })
        };
    }

    // Directions whose variance is negligible next to the largest one behave
    // as constants and shift the threshold.
    let mut weights = Vec::with_capacity(n);
    let mut noncentral = Vec::with_capacity(n);
    let mut fixed = 0.0;
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam <= 1e-10 * lambda_max {
            fixed += rotated[k] * rotated[k];
        } else {
            weights.push(lam);
            noncentral.push(rotated[k] * rotated[k] / lam);
        }
    }
    let threshold = t - fixed;
    if threshold <= 0.0 {
        return BallProbability {
            regularized,
            ..exact(0.0)
        };
    }
    if weights.is_empty() {
        return BallProbability {
            regularized,
            ..exact(1.0)
        };
    }
    match ruben_series(&weights, &noncentral, threshold, tol, MAX_SERIES_TERMS) {
        Some((p, terms)) => BallProbability {
            probability: p.clamp(0.0, 1.0),
            method: IntegrationMethod::Series,
            terms,
            regularized,
        },
        None => BallProbability {
            probability: qmc_ball_probability(rel, ball.w, regularized),
            method: IntegrationMethod::QuasiMonteCarlo,
            terms: MAX_SERIES_TERMS,
            regularized,
        },
    }
}

/// Lower-tail CDF of `sum_j weights[j] * chi2_1(noncentral[j])` at `t`.
///
/// Returns `None` when the series has not converged within `max_terms`.
pub fn ruben_series(weights: &[f64], noncentral: &[f64], t: f64, tol: f64, max_terms: usize) -> Option<(f64, usize)> {
    let n = weights.len();
    let beta = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let x = t / beta;
    let gammas: Vec<f64> = weights.iter().map(|&l| 1.0 - beta / l).collect();
    let nc_total: f64 = noncentral.iter().sum();
    // g_m decays geometrically once m exceeds 1/|ln gamma_max|; after it
    // underflows, older coefficients no longer feed the recursion.
    let gamma_max = gammas.iter().cloned().fold(0.0, f64::max);
    let decay_onset = if gamma_max > 0.0 { 1.0 / -gamma_max.ln() + 1.0 } else { 1.0 };
    let mut lag_limit: Option<usize> = None;

    // True coefficients are c_k = stored[k] * exp(log_scale).
    let mut log_scale: f64 = weights.iter().map(|&l| 0.5 * (beta / l).ln()).sum::<f64>() - 0.5 * nc_total;
    let mut stored: Vec<f64> = vec![1.0];
    let mut g: Vec<f64> = vec![0.0];

    // Central chi-square CDF F_{n+2k}(x) advanced by F_{v+2} = F_v - x^{v/2} e^{-x/2} / (2^{v/2} Gamma(v/2+1)).
    let mut nu = n as f64;
    let mut cdf = gamma_lr(nu / 2.0, x / 2.0);
    let mut log_term = (nu / 2.0) * (x / 2.0).ln() - x / 2.0 - ln_gamma(nu / 2.0 + 1.0);

    let mut total = 0.0;
    let mut coeff_sum = 0.0;
    for k in 0..max_terms {
        if k > 0 {
            let m = k as f64;
            let mut gk = 0.0;
            for j in 0..n {
                let gam = gammas[j];
                let pow_m1 = if k == 1 { 1.0 } else { gam.powi(k as i32 - 1) };
                gk += gam * pow_m1 + m * noncentral[j] * (1.0 - gam) * pow_m1;
            }
            g.push(gk);
            if lag_limit.is_none() && gk.abs() < 1e-300 && m > decay_onset {
                lag_limit = Some(k);
            }
            let lo = lag_limit.map_or(0, |l| k.saturating_sub(l));
            let mut acc = 0.0;
            for r in lo..k {
                acc += g[k - r] * stored[r];
            }
            let ck = acc / (2.0 * m);
            stored.push(ck);
            if ck > 1e250 {
                for v in stored.iter_mut() {
                    *v *= 1e-250;
                }
                log_scale += 250.0 * std::f64::consts::LN_10;
            }
            // Advance F to n + 2k.
            cdf -= log_term.exp();
            log_term += (x / 2.0).ln() - (nu / 2.0 + 1.0).ln();
            nu += 2.0;
        }
        let true_c = stored[k] * log_scale.exp();
        coeff_sum += true_c;
        total += true_c * cdf.max(0.0);

        let next_cdf = (cdf - log_term.exp()).max(0.0);
        let remaining = (1.0 - coeff_sum).max(0.0);
        if remaining * next_cdf <= tol {
            return Some((total, k + 1));
        }
    }
    None
}

/// Deterministic Halton-sequence estimate of `P(|x| <= w)`.
fn qmc_ball_probability(rel: &GaussianBelief, w: f64, regularized: bool) -> f64 {
    let n = rel.dim();
    let mut cov = symmetrize(&rel.cov);
    if regularized {
        cov = floor_psd(&cov) + DMatrix::identity(n, n) * COV_REGULARIZATION;
    }
    let eig = SymmetricEigen::new(cov);
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    const PRIMES: [u32; 6] = [2, 3, 5, 7, 11, 13];
    let w2 = w * w;
    let mut hits = 0usize;
    let mut z = DVector::zeros(n);
    for i in 1..=QMC_POINTS {
        for d in 0..n {
            z[d] = normal.inverse_cdf(radical_inverse(i as u64, PRIMES[d % PRIMES.len()]));
        }
        let x = &rel.mean + &root * &z;
        if x.norm_squared() <= w2 {
            hits += 1;
        }
    }
    hits as f64 / QMC_POINTS as f64
}

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn seg(a: [f64; 3], b: [f64; 3]) -> Segment {
        Segment::new(Point3::from(a), Point3::from(b))
    }

    #[test]
    fn parallel_offset_segments() {
        let d = segment_segment_distance(&seg([0., 0., 0.], [1., 0., 0.]), &seg([0., 1., 0.], [1., 1., 0.]));
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_segments_touch() {
        let d = segment_segment_distance(&seg([-1., 0., 0.], [1., 0., 0.]), &seg([0., -1., 0.], [0., 1., 0.]));
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn offset_collinear_pair_is_sqrt2() {
        // Frozen from a 1000x1000 parameter-grid minimisation.
        let d = segment_segment_distance(&seg([0., 0., 0.], [1., 0., 0.]), &seg([2., 1., 0.], [3., 1., 0.]));
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn point_segments_are_exact() {
        let p = seg([1., 2., 3.], [1., 2., 3.]);
        let q = seg([4., 6., 3.], [4., 6., 3.]);
        assert!((segment_segment_distance(&p, &q) - 5.0).abs() < 1e-12);
        let line = seg([0., 0., 0.], [0., 0., 10.]);
        assert!((segment_segment_distance(&p, &line) - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_ball_has_no_mass() {
        let b = GaussianBelief::point3(Point3::zeros(), Matrix3::identity()).unwrap();
        let p = gaussian_ball_probability(&b, &MinkowskiBall::new(0.0, 3).unwrap(), 1e-6);
        assert_eq!(p.probability, 0.0);
    }

    #[test]
    fn chi_square_reference() {
        let b = GaussianBelief::point3(Point3::zeros(), Matrix3::identity()).unwrap();
        let p = gaussian_ball_probability(&b, &MinkowskiBall::new(1.0, 3).unwrap(), 1e-8);
        assert!((p.probability - 0.198_748_043_098_799).abs() < 1e-7, "{p:?}");
        assert_eq!(p.method, IntegrationMethod::Series);
    }

    #[test]
    fn far_separation_is_negligible() {
        let b = GaussianBelief::point3(Point3::new(5., 0., 0.), Matrix3::identity() * 0.01).unwrap();
        let p = gaussian_ball_probability(&b, &MinkowskiBall::new(1.0, 3).unwrap(), 1e-10);
        assert!(p.probability < 1e-9, "{p:?}");
    }

    #[test]
    fn far_mean_inside_large_ball_is_certain() {
        // Noncentrality ~2500 underflows a naive leading coefficient.
        let b = GaussianBelief::point3(Point3::new(5., 0., 0.), Matrix3::identity() * 0.01).unwrap();
        let p = gaussian_ball_probability(&b, &MinkowskiBall::new(6.0, 3).unwrap(), 1e-6);
        assert!((p.probability - 1.0).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn singular_covariance_is_regularized() {
        let b = GaussianBelief::point3(Point3::new(0.5, 0., 0.), Matrix3::zeros()).unwrap();
        let p = gaussian_ball_probability(&b, &MinkowskiBall::new(1.0, 3).unwrap(), 1e-6);
        assert!(p.regularized);
        assert!((p.probability - 1.0).abs() < 1e-9);
        let b = GaussianBelief::point3(Point3::new(1.5, 0., 0.), Matrix3::zeros()).unwrap();
        let p = gaussian_ball_probability(&b, &MinkowskiBall::new(1.0, 3).unwrap(), 1e-6);
        assert!(p.probability < 1e-12);
    }

    #[test]
    fn extreme_anisotropy_falls_back_to_sampling() {
        let cov = Matrix3::from_diagonal(&Vector3::new(1.0, 1e-7, 1e-7));
        let b = GaussianBelief::point3(Point3::new(0.0, 0.5, 0.0), cov).unwrap();
        let p = gaussian_ball_probability(&b, &MinkowskiBall::new(1.0, 3).unwrap(), 1e-4);
        assert_eq!(p.method, IntegrationMethod::QuasiMonteCarlo);
        // |x_1| <= sqrt(1 - 0.25)
        let expected = 2.0 * std_normal_cdf(0.75f64.sqrt()) - 1.0;
        assert!((p.probability - expected).abs() < 5e-3, "{} vs {expected}", p.probability);
    }

    #[test]
    fn one_dimensional_reference() {
        // Phi(1) - Phi(-1)
        let p = collision_prob_1d(0.3, 0.5, 0.3, 0.5, 0.4, 0.6);
        assert!((p - 0.682_689_492_137_086).abs() < 1e-12);
        assert_eq!(collision_prob_1d(0.0, 1.0, 0.2, 1.0, 0.0, 0.0), 0.0);
        assert_eq!(collision_prob_1d(0.0, 0.0, 0.5, 0.0, 0.5, 0.5), 1.0);
        assert_eq!(collision_prob_1d(0.0, 0.0, 1.5, 0.0, 0.5, 0.5), 0.0);
    }

    #[test]
    fn series_agrees_with_1d_closed_form() {
        for &(mu, var, w) in &[(0.0, 1.0, 1.0), (0.7, 0.3, 0.5), (-2.0, 4.0, 1.5), (3.0, 0.2, 0.1)] {
            let b = GaussianBelief::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, var)).unwrap();
            let p = gaussian_ball_probability(&b, &MinkowskiBall::new(w, 1).unwrap(), 1e-9);
            let q = collision_prob_1d(mu, var, 0.0, 0.0, w, 0.0);
            assert!((p.probability - q).abs() < 1e-7, "mu={mu} var={var} w={w}: {} vs {q}", p.probability);
        }
    }

    #[test]
    fn minkowski_moment_values() {
        let (v, c) = minkowski_moments(&MinkowskiBall::new(0.0, 3).unwrap());
        assert_eq!(v, 0.0);
        assert!(c.iter().all(|x| *x == 0.0));
        let ball = MinkowskiBall::new(1.0, 3).unwrap();
        let (v, c) = minkowski_moments(&ball);
        assert!(((&c / v) - DMatrix::identity(3, 3) * 0.2).norm() < 1e-15);
        let ball = MinkowskiBall::new(3.0, 1).unwrap();
        let (v, c) = minkowski_moments(&ball);
        assert_eq!(v, 6.0);
        assert!((c[(0, 0)] / v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_beliefs_are_rejected() {
        let cov = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(GaussianBelief::point3(Point3::zeros(), cov).is_err());
        assert!(MinkowskiBall::new(-1.0, 3).is_err());
        assert!(MinkowskiBall::new(1.0, 2).is_err());
    }
}
