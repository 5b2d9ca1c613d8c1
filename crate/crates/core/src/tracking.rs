//! Constant-velocity Kalman tracking of spherical objects.
//!
//! State is `(p, v)` in metres and metres per second. The transition is
//! `A = [[I, dt I], [0, I]]`, the observation picks out the position.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, Matrix6, Matrix6x3, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GaussianBelief, Point3};

pub type ObjectId = u32;

/// Default tick used throughout (33 ms).
pub const DEFAULT_DT: f64 = 0.033;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Hazard,
    Protected,
    Neutral,
    #[serde(rename = "self")]
    SelfLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub p: Point3,
    pub v: Vector3<f64>,
}

impl ObjectState {
    pub fn new(p: Point3, v: Vector3<f64>) -> Self {
        Self { p, v }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z)
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            p: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
        }
    }
}

/// Filter noise parameters.
///
/// `sigma_d` and `sigma_alpha` are the velocity-disturbance and acceleration
/// covariances; they enter the per-tick process noise as
/// `blockdiag(sigma_d * dt^2, sigma_alpha * dt^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    pub dt: f64,
    pub sigma_d: Matrix3<f64>,
    pub sigma_alpha: Matrix3<f64>,
    pub sigma_s: Matrix3<f64>,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            sigma_d: Matrix3::identity() * 0.01,
            sigma_alpha: Matrix3::identity() * 1.5,
            sigma_s: Matrix3::identity() * 0.01,
        }
    }
}

impl KalmanConfig {
    pub fn noiseless(dt: f64) -> Self {
        Self {
            dt,
            sigma_d: Matrix3::zeros(),
            sigma_alpha: Matrix3::zeros(),
            sigma_s: Matrix3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        for (name, m) in [("sigma_d", &self.sigma_d), ("sigma_alpha", &self.sigma_alpha), ("sigma_s", &self.sigma_s)] {
            if (m - m.transpose()).abs().max() > 1e-12 {
                return Err(Error::InvalidInput(format!("{name} is not symmetric")));
            }
            if m.symmetric_eigenvalues().min() < -1e-12 {
                return Err(Error::InvalidInput(format!("{name} is not positive semidefinite")));
            }
        }
        Ok(())
    }

    pub fn transition(&self) -> Matrix6<f64> {
        let mut a = Matrix6::identity();
        for k in 0..3 {
            a[(k, k + 3)] = self.dt;
        }
        a
    }

    pub fn observation(&self) -> Matrix3x6<f64> {
        let mut c = Matrix3x6::zeros();
        c.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        c
    }

    /// Per-tick process noise `Sigma_w`.
    pub fn process_noise(&self) -> Matrix6<f64> {
        let dt2 = self.dt * self.dt;
        let mut w = Matrix6::zeros();
        w.fixed_view_mut::<3, 3>(0, 0).copy_from(&(self.sigma_d * dt2));
        w.fixed_view_mut::<3, 3>(3, 3).copy_from(&(self.sigma_alpha * dt2));
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub id: ObjectId,
    pub radius: f64,
    pub role: Role,
    pub state: ObjectState,
    pub cov: Matrix6<f64>,
    /// Consecutive ticks without an observation.
    pub misses: u32,
}

impl TrackedObject {
    /// Starts a track at the first observation with zero velocity.
    pub fn initialize(id: ObjectId, radius: f64, role: Role, y: Point3, cfg: &KalmanConfig) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidInput(format!("object {id}: radius must be positive")));
        }
        let mut cov = Matrix6::zeros();
        cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&cfg.sigma_s);
        cov.fixed_view_mut::<3, 3>(3, 3).copy_from(&Matrix3::identity());
        Ok(Self {
            id,
            radius,
            role,
            state: ObjectState::new(y, Vector3::zeros()),
            cov,
            misses: 0,
        })
    }

    /// Joint position/velocity belief.
    pub fn belief(&self) -> GaussianBelief {
        GaussianBelief {
            mean: DVector::from_column_slice(self.state.as_vector().as_slice()),
            cov: DMatrix::from_fn(6, 6, |r, c| self.cov[(r, c)]),
        }
    }

    pub fn position_belief(&self) -> GaussianBelief {
        self.belief().head(3)
    }
}

pub fn symmetrize6(m: &Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrises and floors tiny negative eigenvalues produced by rounding.
fn clean_cov(m: &Matrix6<f64>) -> Matrix6<f64> {
    let sym = symmetrize6(m);
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.min() >= 0.0 {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    symmetrize6(&(eig.eigenvectors * Matrix6::from_diagonal(&clamped) * eig.eigenvectors.transpose()))
}

pub fn kalman_predict(obj: &TrackedObject, cfg: &KalmanConfig) -> TrackedObject {
    let a = cfg.transition();
    let x = a * obj.state.as_vector();
    let cov = a * obj.cov * a.transpose() + cfg.process_noise();
    TrackedObject {
        state: ObjectState::from_vector(&x),
        cov: clean_cov(&cov),
        ..obj.clone()
    }
}

const S_FLOOR: f64 = 1e-12;

pub fn kalman_update(obj: &TrackedObject, y: &Point3, cfg: &KalmanConfig) -> TrackedObject {
    let c = cfg.observation();
    let x = obj.state.as_vector();
    let mut s = c * obj.cov * c.transpose() + cfg.sigma_s;
    s = (s + s.transpose()) * 0.5;
    let min_eig = s.symmetric_eigenvalues().min();
    if min_eig < S_FLOOR {
        s += Matrix3::identity() * (S_FLOOR - min_eig);
    }
    let s_inv = s.try_inverse().unwrap_or_else(Matrix3::zeros);
    let gain: Matrix6x3<f64> = obj.cov * c.transpose() * s_inv;
    let innovation = y - c * x;
    let x_new = x + gain * innovation;
    let cov = (Matrix6::identity() - gain * c) * obj.cov;
    TrackedObject {
        state: ObjectState::from_vector(&x_new),
        cov: clean_cov(&cov),
        misses: 0,
        ..obj.clone()
    }
}

/// Open-loop propagation `mean <- A mean`, `cov <- A cov A^T + Sigma_w` for `steps` ticks.
///
/// Accepts position+velocity beliefs in one or three spatial dimensions.
pub fn propagate_belief(belief: &GaussianBelief, steps: usize, cfg: &KalmanConfig) -> Result<Vec<GaussianBelief>> {
    let (a, w) = dynamics_for(belief.dim(), cfg)?;
    let mut out = Vec::with_capacity(steps);
    let mut cur = belief.clone();
    for _ in 0..steps {
        cur = propagate_once(&cur, &a, &w);
        out.push(cur.clone());
    }
    Ok(out)
}

pub(crate) fn propagate_once(b: &GaussianBelief, a: &DMatrix<f64>, w: &DMatrix<f64>) -> GaussianBelief {
    let mean = a * &b.mean;
    let cov = a * &b.cov * a.transpose() + w;
    GaussianBelief {
        mean,
        cov: crate::geometry::symmetrize(&cov),
    }
}

/// Transition and process-noise matrices for a `2d`-dimensional belief.
pub(crate) fn dynamics_for(dim: usize, cfg: &KalmanConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if dim != 2 && dim != 6 {
        return Err(Error::InvalidInput(format!(
            "propagation needs a position+velocity belief of dimension 2 or 6, got {dim}"
        )));
    }
    let d = dim / 2;
    let mut a = DMatrix::identity(dim, dim);
    for k in 0..d {
        a[(k, k + d)] = cfg.dt;
    }
    let full = cfg.process_noise();
    let mut w = DMatrix::zeros(dim, dim);
    for r in 0..d {
        for c in 0..d {
            w[(r, c)] = full[(r, c)];
            w[(r + d, c + d)] = full[(r + 3, c + 3)];
        }
    }
    Ok((a, w))
}

/// Registry of independent per-object filters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tracker {
    pub cfg: KalmanConfig,
    pub max_misses: u32,
    pub objects: BTreeMap<ObjectId, TrackedObject>,
}

/// Identity and shape of an object the tracker should follow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub id: ObjectId,
    pub radius: f64,
    pub role: Role,
}

impl Tracker {
    pub const DEFAULT_MAX_MISSES: u32 = 15;

    pub fn new(cfg: KalmanConfig) -> Self {
        Self {
            cfg,
            max_misses: Self::DEFAULT_MAX_MISSES,
            objects: BTreeMap::new(),
        }
    }

    /// One tick: predict every live track, update those observed, start new
    /// tracks for first sightings and drop tracks that missed too often.
    pub fn step(&mut self, infos: &[ObjectInfo], observations: &BTreeMap<ObjectId, Point3>) -> Result<()> {
        let mut next = BTreeMap::new();
        for info in infos {
            let obs = observations.get(&info.id);
            match (self.objects.get(&info.id), obs) {
                (Some(track), Some(y)) => {
                    let predicted = kalman_predict(track, &self.cfg);
                    next.insert(info.id, kalman_update(&predicted, y, &self.cfg));
                }
                (Some(track), None) => {
                    let mut predicted = kalman_predict(track, &self.cfg);
                    predicted.misses += 1;
                    if predicted.misses <= self.max_misses {
                        next.insert(info.id, predicted);
                    }
                }
                (None, Some(y)) => {
                    next.insert(info.id, TrackedObject::initialize(info.id, info.radius, info.role, *y, &self.cfg)?);
                }
                (None, None) => {}
            }
        }
        self.objects = next;
        Ok(())
    }

    pub fn get(&self, id: ObjectId) -> Option<&TrackedObject> {
        self.objects.get(&id)
    }
}
