//! Deterministic closed-loop simulation of objects, sensor, tracker, agent
//! and robot.
//!
//! Each tick at time `t = k dt` first advances the world from the previous
//! tick (for `k > 0`), then observes, tracks, predicts, steps the agent and
//! issues the robot command. The command takes effect on the next advance.
//!
//! Trace CSV columns, in order:
//!
//! ```text
//! step, t, mode, plan_id, link, decision,
//! q0..q{n-1},
//! per object <id>: true_x/y/z, obs_x/y/z, est_x/y/z, est_vx/vy/vz
//! per object pair <i>_<j> (i < j): p_ac_th, k_c
//! contacts
//! ```
//!
//! Missing values are empty fields. `contacts` lists onsets as
//! `object>link:<l>` or `object>obj:<id>`, separated by `;`.

mod replay;
mod scenario;
mod world;

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use scenario::{
    Assertions, BehaviorSpec, ContactRule, NoiseSpec, ObjectSpec, PlannerModes, PredictionSpec, RobotSpec, Scenario,
    ScriptSegment,
};
pub use replay::{default_pair, predict_initial, replay_csv, replay_pair, risk_csv, ReplayRow};
pub use world::{psd_sqrt, ContactEvent, ContactTarget, ObjectTruth, World};

use crate::behavior::{step_fsm, AgentState, Command, Mode, Pair};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::kinematics::{RobotModel, TaskSpec};
use crate::planning::{decide_and_plan, learn_roadmap, Decision, LearnConfig, ModePlanner, PlanCache, Planner, RoadmapFile, Trajectory};
use crate::prediction::predict_all;
use crate::tracking::{ObjectId, ObjectInfo, ObjectState, Role, Tracker};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: ObjectId,
    pub true_p: Point3,
    pub true_v: Point3,
    pub observed: Option<Point3>,
    pub estimate: Option<ObjectState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: ObjectId,
    pub j: ObjectId,
    pub p_ac_th: Option<f64>,
    pub k_c: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Hold,
    NewPlan,
    Reused,
    Fail,
}

impl DecisionKind {
    fn as_str(&self) -> &'static str {
        match self {
            DecisionKind::Hold => "hold",
            DecisionKind::NewPlan => "new_plan",
            DecisionKind::Reused => "reused",
            DecisionKind::Fail => "fail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub t: f64,
    pub mode: Mode,
    pub plan_id: Option<u64>,
    pub intercepting_link: Option<usize>,
    pub decision: Option<DecisionKind>,
    pub q: Vec<f64>,
    pub objects: Vec<ObjectRecord>,
    pub pairs: Vec<PairRecord>,
    pub contacts: Vec<ContactEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvent {
    pub t: f64,
    pub id: u64,
    pub link: usize,
    pub constrained: bool,
    pub target: Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub ticks: usize,
    pub first_intervention_time: Option<f64>,
    pub interventions: usize,
    pub mode_sequence: Vec<Mode>,
    pub plans: Vec<PlanEvent>,
    pub first_plan_constrained: Option<bool>,
    pub contacts: Vec<ContactEvent>,
    /// First robot-link contact with a hazard.
    pub first_interception_time: Option<f64>,
    /// First hazard contact with a protected object.
    pub first_protected_contact_time: Option<f64>,
    pub robot_protected_contacts: usize,
    /// Smallest true surface gap between any protected object and hazard.
    pub min_protected_hazard_distance: Option<f64>,
    pub joint_limits_respected: bool,
    pub joint_speed_respected: bool,
    pub assertions: BTreeMap<String, bool>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<TraceRecord>,
    pub summary: Summary,
}

impl Planner {
    /// Planner for a scenario's robot, loading roadmap files where given.
    ///
    /// Missing files are built and written when `plan_if_missing` is set;
    /// modes without a file are built in memory.
    pub fn for_scenario(scenario: &Scenario, plan_if_missing: bool) -> Result<Self> {
        let r = &scenario.robot;
        let mut model = RobotModel::load(scenario.resolve(&r.model))?;
        if let Some(home) = &r.home {
            let home = DVector::from_vec(home.clone());
            model.check_limits(&home)?;
            model.home = home;
        }
        let task = match r.ee_goal {
            Some(g) => TaskSpec::new(Point3::from(g), r.epsilon)?,
            None => model.home_task(r.epsilon)?,
        };
        let mode = |constrained: bool, file: &Option<std::path::PathBuf>| -> Result<ModePlanner> {
            let learn = LearnConfig::new(r.roadmap_budget, r.roadmap_seed);
            let Some(file) = file else {
                let (roadmap, volumes) = learn_roadmap(&model, &task, constrained, &learn)?;
                return Ok(ModePlanner { roadmap, volumes });
            };
            let path = scenario.resolve(file);
            if !path.exists() && plan_if_missing {
                let (roadmap, volumes) = learn_roadmap(&model, &task, constrained, &learn)?;
                let f = RoadmapFile {
                    model_hash: model.hash(),
                    learn,
                    task,
                    roadmap,
                    volumes,
                };
                f.save(&path)?;
                return Ok(ModePlanner {
                    roadmap: f.roadmap,
                    volumes: f.volumes,
                });
            }
            let f = RoadmapFile::load(&path)?;
            if f.model_hash != model.hash() {
                return Err(Error::Scenario(format!("{} was built for a different model", path.display())));
            }
            if f.roadmap.constrained != constrained {
                return Err(Error::Scenario(format!("{} holds the wrong roadmap mode", path.display())));
            }
            if constrained && ((f.task.ee_goal - task.ee_goal).norm() > 1e-9 || (f.task.epsilon - task.epsilon).abs() > 1e-12) {
                return Err(Error::Scenario(format!("{} was built for a different task", path.display())));
            }
            Ok(ModePlanner {
                roadmap: f.roadmap,
                volumes: f.volumes,
            })
        };
        let constrained = match r.modes {
            PlannerModes::Unconstrained => None,
            _ => Some(mode(true, &r.constrained_roadmap)?),
        };
        let unconstrained = match r.modes {
            PlannerModes::Constrained => None,
            _ => Some(mode(false, &r.unconstrained_roadmap)?),
        };
        Ok(Planner {
            model,
            task,
            joint_speed: r.joint_speed,
            constrained,
            unconstrained,
        })
    }
}

fn hazard_of(pair: Pair, states: &BTreeMap<ObjectId, ObjectState>, roles: &BTreeMap<ObjectId, Role>) -> ObjectId {
    let protected = |id| roles.get(&id) == Some(&Role::Protected);
    match (protected(pair.0), protected(pair.1)) {
        (true, false) => pair.1,
        (false, true) => pair.0,
        _ => {
            let speed = |id| states.get(&id).map_or(0.0, |s| s.v.norm());
            if speed(pair.1) > speed(pair.0) {
                pair.1
            } else {
                pair.0
            }
        }
    }
}

/// Runs a scenario, building its planner first.
pub fn run(scenario: &Scenario, plan_if_missing: bool) -> Result<RunOutput> {
    let planner = Planner::for_scenario(scenario, plan_if_missing)?;
    run_with_planner(scenario, &planner)
}

/// Runs a scenario against an existing planner for the same robot.
pub fn run_with_planner(scenario: &Scenario, planner: &Planner) -> Result<RunOutput> {
    scenario.validate()?;
    let model = &planner.model;
    let kcfg = scenario.kalman();
    let pcfg = scenario.prediction_config();
    let bcfg = scenario.behavior_config();
    let infos: Vec<ObjectInfo> = scenario
        .objects
        .iter()
        .map(|o| ObjectInfo {
            id: o.id,
            radius: o.radius,
            role: o.role,
        })
        .collect();
    let roles: BTreeMap<ObjectId, Role> = infos.iter().map(|i| (i.id, i.role)).collect();
    let mut ids: Vec<ObjectId> = infos.iter().map(|i| i.id).collect();
    ids.sort_unstable();

    let mut world = World::new(scenario, model.home.clone());
    let mut tracker = Tracker::new(kcfg.clone());
    let mut agent = AgentState::default();
    let mut cache = PlanCache::default();
    let mut records = Vec::new();
    let mut plans = Vec::new();
    // Remaining path of the latched plan while a hold pauses it.
    let mut paused = VecDeque::new();

    for step in 0..=scenario.steps() {
        let at = |e: Error| Error::AtStep { step, source: Box::new(e) };
        let contacts = if step > 0 { world.step(model) } else { Vec::new() };
        let t = step as f64 * scenario.dt;

        let obs = world.sensor_observe(&kcfg);
        tracker.step(&infos, &obs).map_err(at)?;
        let tracked: Vec<_> = tracker.objects.values().cloned().collect();
        let risks = predict_all(&tracked, &pcfg, &kcfg).map_err(at)?;
        let states: BTreeMap<ObjectId, ObjectState> = tracked.iter().map(|o| (o.id, o.state)).collect();

        let at_home = (&world.q - &model.home).amax() <= scenario.behavior.home_tolerance;
        let (mut next, cmd) = step_fsm(&agent, &risks, &states, &bcfg, t, at_home);

        let mut decision = None;
        let mut link = None;
        match cmd {
            Command::Plan(pair) => {
                let hazard = hazard_of(pair, &states, &roles);
                if let Some(h) = tracker.get(hazard) {
                    let t_c = risks.iter().find(|r| r.pair() == pair).and_then(|r| r.t_c);
                    let traj = Trajectory {
                        p_o: h.state.p,
                        v_o: h.state.v,
                        r_o: h.radius,
                        t_d: t_c.filter(|&tc| tc > 0.0).unwrap_or(pcfg.t_th),
                    };
                    let protected: Vec<(Point3, f64)> = tracked
                        .iter()
                        .filter(|o| o.role == Role::Protected && o.id != hazard)
                        .map(|o| (o.state.p, o.radius))
                        .collect();
                    match decide_and_plan(&next, &world.q, &mut cache, planner, &traj, &protected).map_err(at)? {
                        Decision::Hold { link: l } => {
                            if !world.waypoints.is_empty() {
                                paused = std::mem::take(&mut world.waypoints);
                            }
                            decision = Some(DecisionKind::Hold);
                            link = Some(l);
                        }
                        Decision::Plan { plan, reused } => {
                            if next.latched_plan_id != Some(plan.id) {
                                world.waypoints = plan.waypoints.iter().skip(1).cloned().collect();
                                next.latched_plan_id = Some(plan.id);
                                paused.clear();
                            } else if world.waypoints.is_empty() {
                                world.waypoints = std::mem::take(&mut paused);
                            }
                            if !reused {
                                plans.push(PlanEvent {
                                    t,
                                    id: plan.id,
                                    link: plan.intercepting_link,
                                    constrained: plan.constrained,
                                    target: pair,
                                });
                            }
                            decision = Some(if reused { DecisionKind::Reused } else { DecisionKind::NewPlan });
                            link = Some(plan.intercepting_link);
                        }
                        Decision::Fail => decision = Some(DecisionKind::Fail),
                    }
                }
            }
            Command::Hold => {
                world.waypoints.clear();
                paused.clear();
            }
            Command::GoDefault => {
                paused.clear();
                if world.waypoints.back() != Some(&model.home) {
                    world.waypoints = [model.home.clone()].into();
                }
            }
            Command::None => {}
        }
        agent = next;

        let objects = ids
            .iter()
            .map(|&id| {
                let o = world.object(id).expect("scenario object");
                ObjectRecord {
                    id,
                    true_p: o.p,
                    true_v: o.velocity(),
                    observed: obs.get(&id).copied(),
                    estimate: states.get(&id).copied(),
                }
            })
            .collect();
        let mut pairs = Vec::new();
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                let r = risks.iter().find(|r| r.pair() == (i, j));
                pairs.push(PairRecord {
                    i,
                    j,
                    p_ac_th: r.map(|r| r.p_ac_at_threshold(&pcfg)),
                    k_c: r.and_then(|r| r.k_c),
                });
            }
        }
        records.push(TraceRecord {
            step,
            t,
            mode: agent.mode,
            plan_id: agent.latched_plan_id,
            intercepting_link: link,
            decision,
            q: world.q.iter().copied().collect(),
            objects,
            pairs,
            contacts,
        });
    }

    let summary = summarize(scenario, model, &records, plans);
    Ok(RunOutput { records, summary })
}

fn summarize(scenario: &Scenario, model: &RobotModel, records: &[TraceRecord], plans: Vec<PlanEvent>) -> Summary {
    let role = |id: ObjectId| scenario.objects.iter().find(|o| o.id == id).map(|o| o.role);
    let mut mode_sequence: Vec<Mode> = Vec::new();
    let mut interventions = 0;
    let mut first_intervention_time = None;
    for r in records {
        if mode_sequence.last() != Some(&r.mode) {
            if r.mode == Mode::Intervention {
                interventions += 1;
                first_intervention_time.get_or_insert(r.t);
            }
            mode_sequence.push(r.mode);
        }
    }
    let contacts: Vec<ContactEvent> = records.iter().flat_map(|r| r.contacts.iter().copied()).collect();
    let first_interception_time = contacts
        .iter()
        .find(|c| matches!(c.other, ContactTarget::Link(_)) && role(c.object) == Some(Role::Hazard))
        .map(|c| c.t);
    let first_protected_contact_time = contacts
        .iter()
        .find(|c| match c.other {
            ContactTarget::Object(o) => {
                let roles = [role(c.object), role(o)];
                roles.contains(&Some(Role::Hazard)) && roles.contains(&Some(Role::Protected))
            }
            ContactTarget::Link(_) => false,
        })
        .map(|c| c.t);
    let robot_protected_contacts = contacts
        .iter()
        .filter(|c| matches!(c.other, ContactTarget::Link(_)) && role(c.object) == Some(Role::Protected))
        .count();

    let mut min_gap: Option<f64> = None;
    for r in records {
        for a in &r.objects {
            for b in &r.objects {
                if role(a.id) == Some(Role::Protected) && role(b.id) == Some(Role::Hazard) {
                    let ra = scenario.objects.iter().find(|o| o.id == a.id).unwrap().radius;
                    let rb = scenario.objects.iter().find(|o| o.id == b.id).unwrap().radius;
                    let gap = (a.true_p - b.true_p).norm() - ra - rb;
                    min_gap = Some(min_gap.map_or(gap, |m| m.min(gap)));
                }
            }
        }
    }

    let joint_limits_respected = records.iter().all(|r| model.check_limits(&DVector::from_vec(r.q.clone())).is_ok());
    let cap = scenario.robot.joint_speed * scenario.dt * (1.0 + 1e-9) + 1e-12;
    let joint_speed_respected = records.windows(2).all(|w| {
        let dq = DVector::from_vec(w[1].q.clone()) - DVector::from_vec(w[0].q.clone());
        model.max_joint_delta(&dq) <= cap
    });

    let first_plan_constrained = plans.first().map(|p| p.constrained);
    let a = &scenario.assertions;
    let mut assertions = BTreeMap::new();
    if a.interception_precedes_person_contact {
        let ok = match (first_interception_time, first_protected_contact_time) {
            (Some(i), Some(p)) => i < p,
            (Some(_), None) => true,
            (None, _) => false,
        };
        assertions.insert("interception_precedes_person_contact".to_string(), ok);
    }
    if a.robot_never_contacts_protected {
        assertions.insert("robot_never_contacts_protected".to_string(), robot_protected_contacts == 0);
    }
    if let Some(expect) = a.intervention {
        assertions.insert("intervention".to_string(), (interventions > 0) == expect);
    }
    if let Some(expect) = a.first_plan_constrained {
        assertions.insert("first_plan_constrained".to_string(), first_plan_constrained == Some(expect));
    }
    if let Some(name) = &a.first_plan_link {
        let ok = plans.first().is_some_and(|p| model.links[p.link].name == *name);
        assertions.insert("first_plan_link".to_string(), ok);
    }
    if let Some(seq) = &a.mode_sequence {
        let mut it = mode_sequence.iter().map(|m| m.as_str());
        let ok = seq.iter().all(|want| it.any(|m| m.eq_ignore_ascii_case(want)));
        assertions.insert("mode_sequence".to_string(), ok);
    }
    assertions.insert("joint_limits".to_string(), joint_limits_respected);
    assertions.insert("joint_speed".to_string(), joint_speed_respected);
    let passed = assertions.values().all(|&v| v);

    Summary {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        ticks: records.len(),
        first_intervention_time,
        interventions,
        mode_sequence,
        plans,
        first_plan_constrained,
        contacts,
        first_interception_time,
        first_protected_contact_time,
        robot_protected_contacts,
        min_protected_hazard_distance: min_gap,
        joint_limits_respected,
        joint_speed_respected,
        assertions,
        passed,
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trace as CSV text; see the module docs for the columns.
pub fn trace_csv(scenario: &Scenario, records: &[TraceRecord]) -> String {
    let mut ids: Vec<ObjectId> = scenario.objects.iter().map(|o| o.id).collect();
    ids.sort_unstable();
    let dof = records.first().map_or(0, |r| r.q.len());
    let mut head: Vec<String> = ["step", "t", "mode", "plan_id", "link", "decision"].map(String::from).to_vec();
    head.extend((0..dof).map(|k| format!("q{k}")));
    for id in &ids {
        for f in ["true_x", "true_y", "true_z", "obs_x", "obs_y", "obs_z", "est_x", "est_y", "est_z", "est_vx", "est_vy", "est_vz"] {
            head.push(format!("{id}_{f}"));
        }
    }
    for (a, i) in ids.iter().enumerate() {
        for j in &ids[a + 1..] {
            head.push(format!("{i}_{j}_p_ac_th"));
            head.push(format!("{i}_{j}_k_c"));
        }
    }
    head.push("contacts".into());

    let mut out = head.join(",");
    out.push('\n');
    for r in records {
        let mut row: Vec<String> = vec![
            r.step.to_string(),
            r.t.to_string(),
            r.mode.to_string(),
            opt(r.plan_id),
            opt(r.intercepting_link),
            opt(r.decision.map(|d| d.as_str())),
        ];
        row.extend(r.q.iter().map(|x| x.to_string()));
        for o in &r.objects {
            row.extend(o.true_p.iter().map(|x| x.to_string()));
            match o.observed {
                Some(p) => row.extend(p.iter().map(|x| x.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
            match o.estimate {
                Some(s) => {
                    row.extend(s.p.iter().map(|x| x.to_string()));
                    row.extend(s.v.iter().map(|x| x.to_string()));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
        }
        for p in &r.pairs {
            row.push(p.p_ac_th.map(|x| format!("{x:?}")).unwrap_or_default());
            row.push(opt(p.k_c));
        }
        let mut c = String::new();
        for (n, e) in r.contacts.iter().enumerate() {
            if n > 0 {
                c.push(';');
            }
            match e.other {
                ContactTarget::Link(l) => write!(c, "{}>link:{l}", e.object).unwrap(),
                ContactTarget::Object(o) => write!(c, "{}>obj:{o}", e.object).unwrap(),
            }
        }
        row.push(c);
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes `trace.csv` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, scenario: &Scenario, output: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trace.csv"), trace_csv(scenario, &output.records))?;
    let mut json = serde_json::to_string_pretty(&output.summary)?;
    json.push('\n');
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}
