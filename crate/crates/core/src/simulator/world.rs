//! Ground-truth scene: scripted objects, the sensor and the robot.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DVector, Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scenario::{ContactRule, ObjectSpec, Scenario};
use crate::geometry::{closest_segment_params, Point3};
use crate::kinematics::{fk_unchecked, RobotModel};
use crate::tracking::{KalmanConfig, ObjectId, Role};

/// What an object touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactTarget {
    Link(usize),
    Object(ObjectId),
}

/// Onset of a contact between an object and a robot link or another object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub t: f64,
    pub object: ObjectId,
    pub other: ContactTarget,
    pub depth: f64,
    /// Unit vector from the other body towards the object.
    pub normal: [f64; 3],
    /// Object velocity once the contact rule has been applied.
    pub velocity_after: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTruth {
    pub spec: ObjectSpec,
    pub p: Point3,
    /// Scripted or post-contact velocity.
    pub v_base: Vector3<f64>,
    /// Accumulated velocity noise.
    pub dv: Vector3<f64>,
    /// Follows its script; cleared by stop and deflect contacts.
    pub scripted: bool,
}

impl ObjectTruth {
    pub fn velocity(&self) -> Vector3<f64> {
        self.v_base + self.dv
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub t: f64,
    pub dt: f64,
    pub objects: Vec<ObjectTruth>,
    pub q: DVector<f64>,
    pub waypoints: VecDeque<DVector<f64>>,
    /// Per-joint speed cap (rad/s).
    pub joint_speed: f64,
    truth_rng: ChaCha8Rng,
    sensor_rng: ChaCha8Rng,
    sqrt_d: Matrix3<f64>,
    sqrt_alpha: Matrix3<f64>,
    active: BTreeSet<(ObjectId, ContactTarget)>,
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clipped.
pub fn psd_sqrt(m: &Matrix3<f64>) -> Matrix3<f64> {
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let s = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    e.eigenvectors * Matrix3::from_diagonal(&s) * e.eigenvectors.transpose()
}

fn gaussian3(rng: &mut ChaCha8Rng, sqrt: &Matrix3<f64>) -> Vector3<f64> {
    let z = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    sqrt * z
}

impl World {
    pub fn new(scenario: &Scenario, q: DVector<f64>) -> Self {
        let kcfg = scenario.kalman();
        let dt2 = scenario.dt * scenario.dt;
        let objects = scenario
            .objects
            .iter()
            .map(|o| ObjectTruth {
                spec: o.clone(),
                p: o.start(),
                v_base: o.scripted_velocity(0.0),
                dv: Vector3::zeros(),
                scripted: true,
            })
            .collect();
        Self {
            t: 0.0,
            dt: scenario.dt,
            objects,
            q,
            waypoints: VecDeque::new(),
            joint_speed: scenario.robot.joint_speed,
            truth_rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            sensor_rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x5eed_5e11_50a5_0001),
            sqrt_d: psd_sqrt(&(kcfg.sigma_d * dt2 * scenario.truth_noise_scale)),
            sqrt_alpha: psd_sqrt(&(kcfg.sigma_alpha * dt2 * scenario.truth_noise_scale)),
            active: BTreeSet::new(),
        }
    }

    pub fn object(&self, id: ObjectId) -> Option<&ObjectTruth> {
        self.objects.iter().find(|o| o.spec.id == id)
    }

    /// Advances objects and robot by one tick and returns contact onsets.
    pub fn step(&mut self, model: &RobotModel) -> Vec<ContactEvent> {
        self.move_objects();
        self.advance_robot(model);
        self.t += self.dt;
        self.resolve_contacts(model)
    }

    /// Advances the objects alone by one tick, ignoring the robot and contacts.
    pub fn step_objects(&mut self) {
        self.move_objects();
        self.t += self.dt;
    }

    fn move_objects(&mut self) {
        let dt = self.dt;
        for o in &mut self.objects {
            let scale = o.spec.noise_scale.sqrt();
            let nv = gaussian3(&mut self.truth_rng, &self.sqrt_alpha) * scale;
            let np = gaussian3(&mut self.truth_rng, &self.sqrt_d) * scale;
            if o.scripted {
                o.v_base = o.spec.scripted_velocity(self.t);
            }
            o.dv += nv;
            o.p += o.velocity() * dt + np;
        }
    }

    fn advance_robot(&mut self, model: &RobotModel) {
        let mut budget = self.joint_speed * self.dt;
        while let Some(target) = self.waypoints.front() {
            let delta = target - &self.q;
            let d = model.max_joint_delta(&delta);
            if d <= budget {
                self.q = target.clone();
                budget -= d;
                self.waypoints.pop_front();
            } else {
                self.q += delta * (budget / d);
                break;
            }
        }
    }

    fn resolve_contacts(&mut self, model: &RobotModel) -> Vec<ContactEvent> {
        let caps = fk_unchecked(model, &self.q).capsules;
        let mut now = BTreeSet::new();
        let mut events = Vec::new();
        for o in &mut self.objects {
            for (l, cap) in caps.iter().enumerate() {
                let s = closest_segment_params(&cap.seg, &crate::geometry::Segment::point(o.p)).0;
                let c = cap.seg.at(s);
                let off = o.p - c;
                let dist = off.norm();
                let depth = o.spec.radius + cap.radius - dist;
                if depth < 0.0 {
                    continue;
                }
                let n = if dist > 1e-12 { off / dist } else { Vector3::z() };
                let key = (o.spec.id, ContactTarget::Link(l));
                let onset = !self.active.contains(&key);
                now.insert(key);
                match o.spec.contact {
                    ContactRule::Pass => {}
                    ContactRule::Stop => {
                        o.v_base = Vector3::zeros();
                        o.dv = Vector3::zeros();
                        o.scripted = false;
                        o.p += n * depth;
                    }
                    ContactRule::Deflect => {
                        if onset {
                            let v = o.velocity();
                            let vn = v.dot(&n);
                            o.v_base = if vn < 0.0 { v - n * (2.0 * vn) } else { v };
                            o.dv = Vector3::zeros();
                            o.scripted = false;
                        }
                        o.p += n * depth;
                    }
                }
                if onset {
                    let v = o.velocity();
                    events.push(ContactEvent {
                        t: self.t,
                        object: o.spec.id,
                        other: ContactTarget::Link(l),
                        depth,
                        normal: [n.x, n.y, n.z],
                        velocity_after: [v.x, v.y, v.z],
                    });
                }
            }
        }
        for a in 0..self.objects.len() {
            for b in a + 1..self.objects.len() {
                let (oa, ob) = (&self.objects[a], &self.objects[b]);
                let off = oa.p - ob.p;
                let dist = off.norm();
                let depth = oa.spec.radius + ob.spec.radius - dist;
                if depth < 0.0 {
                    continue;
                }
                let key = (oa.spec.id, ContactTarget::Object(ob.spec.id));
                if !self.active.contains(&key) {
                    let n = if dist > 1e-12 { off / dist } else { Vector3::z() };
                    let v = oa.velocity();
                    events.push(ContactEvent {
                        t: self.t,
                        object: oa.spec.id,
                        other: ContactTarget::Object(ob.spec.id),
                        depth,
                        normal: [n.x, n.y, n.z],
                        velocity_after: [v.x, v.y, v.z],
                    });
                }
                now.insert(key);
            }
        }
        self.active = now;
        events
    }

    /// True positions plus sensor noise; each object may drop out.
    pub fn sensor_observe(&mut self, cfg: &KalmanConfig) -> BTreeMap<ObjectId, Point3> {
        let sqrt_s = psd_sqrt(&cfg.sigma_s);
        let mut out = BTreeMap::new();
        for o in &self.objects {
            let u: f64 = self.sensor_rng.random();
            let noise = gaussian3(&mut self.sensor_rng, &sqrt_s);
            if u >= o.spec.dropout {
                out.insert(o.spec.id, o.p + noise);
            }
        }
        out
    }

    /// Objects of a role, as (id, position, radius).
    pub fn spheres(&self, role: Role) -> Vec<(ObjectId, Point3, f64)> {
        self.objects
            .iter()
            .filter(|o| o.spec.role == role)
            .map(|o| (o.spec.id, o.p, o.spec.radius))
            .collect()
    }
}
