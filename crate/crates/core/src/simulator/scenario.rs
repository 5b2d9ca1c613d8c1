//! Scenario description files.

use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorConfig;
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::prediction::PredictionConfig;
use crate::tracking::{KalmanConfig, ObjectId, Role, DEFAULT_DT};

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn one() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_joint_speed() -> f64 {
    1.5
}
fn default_budget() -> usize {
    3000
}

/// Diagonal noise levels, one variance per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_d: f64,
    pub sigma_alpha: f64,
    pub sigma_s: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_d: 0.01,
            sigma_alpha: 1.5,
            sigma_s: 0.01,
        }
    }
}

impl NoiseSpec {
    pub fn kalman(&self, dt: f64) -> KalmanConfig {
        KalmanConfig {
            dt,
            sigma_d: Matrix3::identity() * self.sigma_d,
            sigma_alpha: Matrix3::identity() * self.sigma_alpha,
            sigma_s: Matrix3::identity() * self.sigma_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictionSpec {
    pub eta: f64,
    pub t_th: f64,
    pub horizon: f64,
    pub tol: f64,
}

impl Default for PredictionSpec {
    fn default() -> Self {
        let d = PredictionConfig::default();
        Self {
            eta: d.eta,
            t_th: d.t_th,
            horizon: d.horizon,
            tol: d.tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorSpec {
    pub t_caution: f64,
    /// Per-joint tolerance for "at the default posture" (rad).
    pub home_tolerance: f64,
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        Self {
            t_caution: BehaviorConfig::default().t_caution,
            home_tolerance: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerModes {
    Both,
    Constrained,
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    /// Model file, relative to the scenario file.
    pub model: PathBuf,
    #[serde(default)]
    pub home: Option<Vec<f64>>,
    /// Defaults to the end-effector position at home.
    #[serde(default)]
    pub ee_goal: Option<[f64; 3]>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Per-joint speed cap (rad/s).
    #[serde(default = "default_joint_speed")]
    pub joint_speed: f64,
    #[serde(default = "both")]
    pub modes: PlannerModes,
    #[serde(default = "default_budget")]
    pub roadmap_budget: usize,
    #[serde(default)]
    pub roadmap_seed: u64,
    #[serde(default)]
    pub constrained_roadmap: Option<PathBuf>,
    #[serde(default)]
    pub unconstrained_roadmap: Option<PathBuf>,
}

fn both() -> PlannerModes {
    PlannerModes::Both
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactRule {
    /// Velocity zeroed on contact with a robot link.
    Stop,
    /// Velocity reflected about the contact normal; the script is abandoned.
    Deflect,
    /// Contacts are logged only.
    Pass,
}

/// Velocity in effect from time `t` until the next segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSegment {
    pub t: f64,
    pub v: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: ObjectId,
    #[serde(default)]
    pub name: String,
    pub radius: f64,
    pub role: Role,
    pub start: [f64; 3],
    #[serde(default)]
    pub script: Vec<ScriptSegment>,
    #[serde(default = "stop")]
    pub contact: ContactRule,
    /// Probability that an observation is missing at a tick.
    #[serde(default)]
    pub dropout: f64,
    /// Multiplies the scenario's truth process noise for this object.
    #[serde(default = "one")]
    pub noise_scale: f64,
}

fn stop() -> ContactRule {
    ContactRule::Stop
}

impl ObjectSpec {
    pub fn start(&self) -> Point3 {
        Point3::from(self.start)
    }

    /// Scripted velocity at time `t`.
    pub fn scripted_velocity(&self, t: f64) -> Point3 {
        self.script
            .iter()
            .take_while(|s| s.t <= t + 1e-12)
            .last()
            .map(|s| Point3::from(s.v))
            .unwrap_or_else(Point3::zeros)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Assertions {
    /// A robot link touches a hazard before any hazard reaches a protected object.
    pub interception_precedes_person_contact: bool,
    /// No robot link ever touches a protected object.
    pub robot_never_contacts_protected: bool,
    /// `Some(true)`: at least one intervention; `Some(false)`: none.
    pub intervention: Option<bool>,
    /// Expected constrained flag of the first new plan.
    pub first_plan_constrained: Option<bool>,
    /// Name of the link chosen by the first new plan.
    pub first_plan_link: Option<String>,
    /// Modes that must appear in this order in the collapsed mode sequence.
    pub mode_sequence: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    /// Scales the truth process-noise covariance.
    #[serde(default = "one")]
    pub truth_noise_scale: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub prediction: PredictionSpec,
    #[serde(default)]
    pub behavior: BehaviorSpec,
    pub robot: RobotSpec,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub assertions: Assertions,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut s: Scenario = toml::from_str(text)?;
        s.base_dir = base_dir.into();
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, dir)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Scenario(m.to_string()));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return bad("duration must be non-negative");
        }
        if !(self.truth_noise_scale >= 0.0) {
            return bad("truth_noise_scale must be non-negative");
        }
        if !(self.robot.joint_speed > 0.0) || !(self.robot.epsilon > 0.0) {
            return bad("joint_speed and epsilon must be positive");
        }
        let n = &self.noise;
        if !(n.sigma_d >= 0.0 && n.sigma_alpha >= 0.0 && n.sigma_s >= 0.0) {
            return bad("noise variances must be non-negative");
        }
        let mut ids = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(Error::Scenario(format!("duplicate object id {}", o.id)));
            }
            if !(o.radius > 0.0) {
                return Err(Error::Scenario(format!("object {} needs radius > 0", o.id)));
            }
            if !(0.0..=1.0).contains(&o.dropout) || !(o.noise_scale >= 0.0) {
                return Err(Error::Scenario(format!("object {} has invalid dropout or noise_scale", o.id)));
            }
            if o.role == Role::SelfLink {
                return Err(Error::Scenario(format!("object {} cannot use the self role", o.id)));
            }
            if o.script.windows(2).any(|w| w[1].t <= w[0].t) {
                return Err(Error::Scenario(format!("object {} script is not time-ordered", o.id)));
            }
        }
        self.prediction_config().validate()?;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    pub fn kalman(&self) -> KalmanConfig {
        self.noise.kalman(self.dt)
    }

    pub fn prediction_config(&self) -> PredictionConfig {
        PredictionConfig {
            eta: self.prediction.eta,
            t_th: self.prediction.t_th,
            horizon: self.prediction.horizon,
            dt: self.dt,
            tol: self.prediction.tol,
        }
    }

    pub fn behavior_config(&self) -> BehaviorConfig {
        BehaviorConfig {
            eta: self.prediction.eta,
            t_th: self.prediction.t_th,
            t_caution: self.behavior.t_caution,
            dt: self.dt,
        }
    }
}
