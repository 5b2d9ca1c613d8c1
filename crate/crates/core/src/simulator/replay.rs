//! Collision-probability series for one object pair, without a robot.

use std::fmt::Write as _;

use nalgebra::{DVector, Matrix6};
use serde::{Deserialize, Serialize};

use super::{Scenario, World};
use crate::error::{Error, Result};
use crate::prediction::{predict_pair, PairRisk};
use crate::tracking::{ObjectId, ObjectInfo, ObjectState, TrackedObject, Tracker};

fn objects_of(scenario: &Scenario, pair: (ObjectId, ObjectId)) -> Result<(usize, usize)> {
    let find = |id| {
        scenario
            .objects
            .iter()
            .position(|o| o.id == id)
            .ok_or_else(|| Error::Scenario(format!("no object with id {id}")))
    };
    if pair.0 == pair.1 {
        return Err(Error::InvalidInput(format!("pair needs two distinct objects, got {} twice", pair.0)));
    }
    Ok((find(pair.0)?, find(pair.1)?))
}

/// The first two objects of the scenario, ordered by id.
pub fn default_pair(scenario: &Scenario) -> Result<(ObjectId, ObjectId)> {
    let mut ids: Vec<ObjectId> = scenario.objects.iter().map(|o| o.id).collect();
    ids.sort_unstable();
    match ids[..] {
        [a, b, ..] => Ok((a, b)),
        _ => Err(Error::Scenario("need at least two objects".into())),
    }
}

/// Prediction from the pair's scripted start: each object is at its start
/// position with position covariance `Σ_s` and its scripted velocity at
/// `t = 0`, known exactly.
pub fn predict_initial(scenario: &Scenario, pair: (ObjectId, ObjectId)) -> Result<PairRisk> {
    scenario.validate()?;
    let (a, b) = objects_of(scenario, pair)?;
    let kcfg = scenario.kalman();
    let track = |k: usize| {
        let o = &scenario.objects[k];
        let mut cov = Matrix6::zeros();
        cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&kcfg.sigma_s);
        TrackedObject {
            id: o.id,
            radius: o.radius,
            role: o.role,
            state: ObjectState::new(o.start(), o.scripted_velocity(0.0)),
            cov,
            misses: 0,
        }
    };
    predict_pair(&track(a), &track(b), &scenario.prediction_config(), &kcfg)
}

/// One tick of a replayed pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub step: usize,
    pub t: f64,
    /// Cumulative probability at the threshold time.
    pub p_ac_th: f64,
    pub k_c: Option<usize>,
    pub t_c: Option<f64>,
}

/// Re-predicts the pair at every tick from tracked sensor observations while
/// the objects follow their scripts. The robot and contacts are ignored.
pub fn replay_pair(scenario: &Scenario, pair: (ObjectId, ObjectId)) -> Result<Vec<ReplayRow>> {
    scenario.validate()?;
    let (a, b) = objects_of(scenario, pair)?;
    let kcfg = scenario.kalman();
    let pcfg = scenario.prediction_config();
    let infos: Vec<ObjectInfo> = [a, b]
        .iter()
        .map(|&k| {
            let o = &scenario.objects[k];
            ObjectInfo {
                id: o.id,
                radius: o.radius,
                role: o.role,
            }
        })
        .collect();
    let mut world = World::new(scenario, DVector::zeros(0));
    world.objects.retain(|o| o.spec.id == pair.0 || o.spec.id == pair.1);
    let mut tracker = Tracker::new(kcfg.clone());
    let mut rows = Vec::with_capacity(scenario.steps() + 1);
    for step in 0..=scenario.steps() {
        if step > 0 {
            world.step_objects();
        }
        let obs = world.sensor_observe(&kcfg);
        tracker.step(&infos, &obs).map_err(|e| Error::AtStep { step, source: Box::new(e) })?;
        let t = step as f64 * scenario.dt;
        let row = match (tracker.get(pair.0), tracker.get(pair.1)) {
            (Some(x), Some(y)) => {
                let risk = predict_pair(x, y, &pcfg, &kcfg).map_err(|e| Error::AtStep { step, source: Box::new(e) })?;
                ReplayRow {
                    step,
                    t,
                    p_ac_th: risk.p_ac_at_threshold(&pcfg),
                    k_c: risk.k_c,
                    t_c: risk.t_c,
                }
            }
            _ => ReplayRow {
                step,
                t,
                p_ac_th: 0.0,
                k_c: None,
                t_c: None,
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

/// `step,t,p_ic,p_ac,k_c` with one row per predicted step.
pub fn risk_csv(risk: &PairRisk, dt: f64) -> String {
    let mut out = String::from("step,t,p_ic,p_ac,k_c\n");
    let k_c = risk.k_c.map(|k| k.to_string()).unwrap_or_default();
    for (k, (p_ic, p_ac)) in risk.p_ic_series.iter().zip(&risk.p_ac_series).enumerate() {
        let step = k + 1;
        writeln!(out, "{step},{},{p_ic:?},{p_ac:?},{k_c}", step as f64 * dt).unwrap();
    }
    out
}

/// `step,t,p_ac_th,k_c,t_c` with one row per tick.
pub fn replay_csv(rows: &[ReplayRow]) -> String {
    let mut out = String::from("step,t,p_ac_th,k_c,t_c\n");
    for r in rows {
        let k_c = r.k_c.map(|k| k.to_string()).unwrap_or_default();
        let t_c = r.t_c.map(|t| t.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{:?},{k_c},{t_c}", r.step, r.t, r.p_ac_th).unwrap();
    }
    out
}
