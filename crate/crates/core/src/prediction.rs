//! Pairwise collision-probability prediction.
//!
//! For every pair of tracked objects the beliefs are propagated tick by tick.
//! At each tick the instantaneous overlap probability `p_ic` is computed from
//! the collision-free beliefs of both objects, accumulated into
//! `p_ac <- p_ac + (1 - p_ac) p_ic`, and the colliding mass is removed from
//! each belief before the next propagation.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    floor_psd, gaussian_ball_probability, minkowski_normalized_moment, symmetrize, GaussianBelief, MinkowskiBall,
    Point3, DEFAULT_INTEGRATION_TOL,
};
use crate::tracking::{dynamics_for, propagate_once, KalmanConfig, ObjectId, ObjectState, Role, TrackedObject};

/// Largest `p_ic` for which the collision-free belief is still defined.
pub const CERTAIN_COLLISION: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    /// Probability threshold.
    pub eta: f64,
    /// Decision time threshold (s).
    pub t_th: f64,
    /// Length of the predicted series (s).
    pub horizon: f64,
    pub dt: f64,
    /// Absolute tolerance of the Gaussian-over-ball integration.
    pub tol: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            t_th: 4.0,
            horizon: 5.0,
            dt: crate::tracking::DEFAULT_DT,
            tol: DEFAULT_INTEGRATION_TOL,
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidInput(format!("eta must be in (0, 1], got {}", self.eta)));
        }
        if !(self.t_th > 0.0) || !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::InvalidInput("t_th, horizon and dt must be positive".into()));
        }
        Ok(())
    }

    /// Number of predicted steps `K = ceil(horizon / dt)`.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    /// Step index (1-based) at which the decision threshold time falls.
    pub fn threshold_step(&self) -> usize {
        ((self.t_th / self.dt).round() as usize).clamp(1, self.steps().max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRisk {
    pub i: ObjectId,
    pub j: ObjectId,
    pub role_i: Role,
    pub role_j: Role,
    /// Index `k - 1` holds the value at step `k`.
    pub p_ic_series: Vec<f64>,
    pub p_ac_series: Vec<f64>,
    /// First step with `p_ac >= eta`.
    pub k_c: Option<usize>,
    pub t_c: Option<f64>,
}

impl PairRisk {
    pub fn pair(&self) -> (ObjectId, ObjectId) {
        (self.i, self.j)
    }

    /// Cumulative probability at 1-based `step`, clamped to the series end.
    pub fn p_ac_at(&self, step: usize) -> f64 {
        if self.p_ac_series.is_empty() || step == 0 {
            return 0.0;
        }
        self.p_ac_series[step.min(self.p_ac_series.len()) - 1]
    }

    pub fn p_ac_at_threshold(&self, cfg: &PredictionConfig) -> f64 {
        self.p_ac_at(cfg.threshold_step())
    }

    pub fn involves_self(&self) -> bool {
        self.role_i == Role::SelfLink || self.role_j == Role::SelfLink
    }
}

/// Gaussian approximation of a collision-free position+velocity belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBelief {
    pub belief: GaussianBelief,
}

impl ConditionalBelief {
    pub fn new(belief: GaussianBelief) -> Result<Self> {
        if belief.dim() != 2 && belief.dim() != 6 {
            return Err(Error::InvalidInput(format!(
                "conditional belief must hold position and velocity, got dimension {}",
                belief.dim()
            )));
        }
        Ok(Self { belief })
    }

    pub fn position_dim(&self) -> usize {
        self.belief.dim() / 2
    }

    pub fn position(&self) -> GaussianBelief {
        self.belief.head(self.position_dim())
    }
}

/// Probability that two spheres with position beliefs `bi`, `bj` overlap.
pub fn instantaneous_probability(bi: &GaussianBelief, bj: &GaussianBelief, ri: f64, rj: f64) -> Result<f64> {
    instantaneous_probability_tol(bi, bj, ri, rj, DEFAULT_INTEGRATION_TOL)
}

pub fn instantaneous_probability_tol(bi: &GaussianBelief, bj: &GaussianBelief, ri: f64, rj: f64, tol: f64) -> Result<f64> {
    let rel = bi.relative_to(bj)?;
    let dim = rel.dim();
    let ball = MinkowskiBall::new(ri + rj, if dim == 1 { 1 } else { 3 })?;
    if dim != 1 && dim != 3 {
        return Err(Error::InvalidInput(format!("position beliefs must be 1D or 3D, got {dim}")));
    }
    Ok(gaussian_ball_probability(&rel, &ball, tol).probability)
}

/// Removes the colliding component from `cond_i`.
///
/// The collision region seen by `i` is approximated by
/// `N(mu_j, Sigma_j + C_B/V_B)`. Its Gaussian product with `i`'s position
/// belief gives the removed component `(mu_p, Sigma_p)`; subtracting it with
/// weight `p_ic` and renormalising yields
///
/// ```text
/// mean = (mu_i - p mu_p) / (1 - p)
/// cov  = (Sigma_i - p Sigma_p) / (1 - p) - p (mu_i - mu_p)(mu_i - mu_p)^T / (1 - p)^2
/// ```
///
/// which is the centred form of the mixture second moment. Velocity and
/// position/velocity cross blocks are carried over unchanged.
pub fn collision_free_update(
    cond_i: &ConditionalBelief,
    cond_j: &ConditionalBelief,
    ri: f64,
    rj: f64,
    p_ic: f64,
) -> Result<ConditionalBelief> {
    if !(0.0..=1.0).contains(&p_ic) {
        return Err(Error::InvalidInput(format!("p_ic must be a probability, got {p_ic}")));
    }
    if p_ic >= CERTAIN_COLLISION {
        return Err(Error::CertainCollision);
    }
    if cond_i.belief.dim() != cond_j.belief.dim() {
        return Err(Error::InvalidInput("conditional beliefs differ in dimension".into()));
    }
    if p_ic == 0.0 {
        return Ok(cond_i.clone());
    }
    let d = cond_i.position_dim();
    let ball = MinkowskiBall::new(ri + rj, if d == 1 { 1 } else { 3 })?;
    let pi = cond_i.position();
    let pj = cond_j.position();

    let sigma_1 = &pi.cov;
    let sigma_2 = &pj.cov + minkowski_normalized_moment(&ball);
    let mut s = sigma_1 + &sigma_2;
    s = symmetrize(&s);
    let solve = |rhs: &DMatrix<f64>| -> DMatrix<f64> {
        match s.clone().cholesky() {
            Some(ch) => ch.solve(rhs),
            None => {
                let reg = &s + DMatrix::identity(d, d) * 1e-12;
                reg.clone()
                    .cholesky()
                    .map(|ch| ch.solve(rhs))
                    .unwrap_or_else(|| reg.pseudo_inverse(1e-15).unwrap_or_else(|_| DMatrix::zeros(d, d)) * rhs)
            }
        }
    };
    // gain = Sigma_1 S^-1 (S symmetric so solve S gain^T = Sigma_1)
    let gain = solve(sigma_1).transpose();
    let mu_p: DVector<f64> = &pi.mean + &gain * (&pj.mean - &pi.mean);
    let sigma_p = symmetrize(&(sigma_1 - &gain * sigma_1));

    let q = 1.0 - p_ic;
    let delta = &pi.mean - &mu_p;
    let mean = (&pi.mean - &mu_p * p_ic) / q;
    let cov = (sigma_1 - &sigma_p * p_ic) / q - &delta * delta.transpose() * (p_ic / (q * q));

    let mut full_mean = cond_i.belief.mean.clone();
    full_mean.rows_mut(0, d).copy_from(&mean);
    let mut full_cov = cond_i.belief.cov.clone();
    full_cov.view_mut((0, 0), (d, d)).copy_from(&cov);
    Ok(ConditionalBelief {
        belief: GaussianBelief {
            mean: full_mean,
            cov: floor_psd(&full_cov),
        },
    })
}

pub fn cumulative_step(p_ac_prev: f64, p_cond: f64) -> f64 {
    (p_ac_prev + (1.0 - p_ac_prev) * p_cond).clamp(0.0, 1.0)
}

/// Time of closest approach of two constant-velocity points, if they are approaching.
pub fn closest_approach_time(pi: &Point3, vi: &Point3, pj: &Point3, vj: &Point3) -> Option<f64> {
    let d = pi - pj;
    let dv = vi - vj;
    let dv2 = dv.norm_squared();
    if dv2 == 0.0 {
        return None;
    }
    let approach = d.dot(&dv);
    if approach >= 0.0 {
        return None;
    }
    Some(-approach / dv2)
}

/// Full series prediction for one object pair.
pub fn predict_pair(
    obj_i: &TrackedObject,
    obj_j: &TrackedObject,
    cfg: &PredictionConfig,
    kcfg: &KalmanConfig,
) -> Result<PairRisk> {
    if obj_i.id == obj_j.id {
        return Err(Error::InvalidInput(format!("pair needs two distinct objects, got {} twice", obj_i.id)));
    }
    let series = predict_series(&obj_i.belief(), &obj_j.belief(), obj_i.radius, obj_j.radius, cfg, kcfg)?;
    let k_c = series.1.iter().position(|&p| p >= cfg.eta).map(|k| k + 1);
    Ok(PairRisk {
        i: obj_i.id,
        j: obj_j.id,
        role_i: obj_i.role,
        role_j: obj_j.role,
        p_ic_series: series.0,
        p_ac_series: series.1,
        k_c,
        t_c: closest_approach_time(&obj_i.state.p, &obj_i.state.v, &obj_j.state.p, &obj_j.state.v),
    })
}

/// `(p_ic, p_ac)` series from two position+velocity beliefs.
pub fn predict_series(
    bi: &GaussianBelief,
    bj: &GaussianBelief,
    ri: f64,
    rj: f64,
    cfg: &PredictionConfig,
    kcfg: &KalmanConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let steps = cfg.steps();
    let (a, w) = dynamics_for(bi.dim(), kcfg)?;
    let mut ci = ConditionalBelief::new(bi.clone())?;
    let mut cj = ConditionalBelief::new(bj.clone())?;
    let mut p_ic_series = Vec::with_capacity(steps);
    let mut p_ac_series = Vec::with_capacity(steps);
    let mut p_ac = 0.0;
    let mut saturated = false;
    for _ in 0..steps {
        if saturated {
            p_ic_series.push(0.0);
            p_ac_series.push(p_ac);
            continue;
        }
        ci.belief = propagate_once(&ci.belief, &a, &w);
        cj.belief = propagate_once(&cj.belief, &a, &w);
        let p_ic = instantaneous_probability_tol(&ci.position(), &cj.position(), ri, rj, cfg.tol)?;
        p_ac = cumulative_step(p_ac, p_ic);
        p_ic_series.push(p_ic);
        p_ac_series.push(p_ac);
        if p_ic >= CERTAIN_COLLISION || p_ac >= CERTAIN_COLLISION {
            // Every remaining trajectory has collided; p_ac is absorbed.
            saturated = true;
            continue;
        }
        let next_i = collision_free_update(&ci, &cj, ri, rj, p_ic)?;
        let next_j = collision_free_update(&cj, &ci, rj, ri, p_ic)?;
        ci = next_i;
        cj = next_j;
    }
    Ok((p_ic_series, p_ac_series))
}

/// Predicts every pair of non-self objects, ordered by `(i, j)`.
pub fn predict_all(objects: &[TrackedObject], cfg: &PredictionConfig, kcfg: &KalmanConfig) -> Result<Vec<PairRisk>> {
    let external: Vec<&TrackedObject> = objects.iter().filter(|o| o.role != Role::SelfLink).collect();
    let mut pairs = Vec::new();
    for a in 0..external.len() {
        for b in (a + 1)..external.len() {
            let (x, y) = if external[a].id < external[b].id {
                (external[a], external[b])
            } else {
                (external[b], external[a])
            };
            pairs.push((x, y));
        }
    }
    pairs.sort_by_key(|(x, y)| (x.id, y.id));
    pairs.par_iter().map(|(x, y)| predict_pair(x, y, cfg, kcfg)).collect()
}

/// Pairs whose cumulative probability at the threshold time reaches `eta`.
pub fn imminent_pairs(risks: &[PairRisk], cfg: &PredictionConfig) -> BTreeSet<(ObjectId, ObjectId)> {
    risks
        .iter()
        .filter(|r| !r.involves_self())
        .filter(|r| r.p_ac_at_threshold(cfg) >= cfg.eta)
        .map(|r| r.pair())
        .collect()
}

/// The pair with the smallest closest-approach time; pairs that are not
/// approaching rank last and ties go to the lower `(i, j)`.
pub fn select_most_imminent(
    pairs: &BTreeSet<(ObjectId, ObjectId)>,
    states: &BTreeMap<ObjectId, ObjectState>,
) -> Result<(ObjectId, ObjectId)> {
    let key = |&(i, j): &(ObjectId, ObjectId)| -> f64 {
        match (states.get(&i), states.get(&j)) {
            (Some(a), Some(b)) => closest_approach_time(&a.p, &a.v, &b.p, &b.v).unwrap_or(f64::INFINITY),
            _ => f64::INFINITY,
        }
    };
    pairs
        .iter()
        .map(|p| (key(p), *p))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, p)| p)
        .ok_or(Error::NoImminentPair)
}
