//! Online choice of the intervening link and its roadmap path.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::octree::intercepting_configs;
use super::roadmap::{path_from_tree, segment_feasible, shortcut, shortest_paths, ReachableVolumes, Roadmap, EDGE_SUBSTEPS, STEP};
use crate::behavior::{AgentState, Mode};
use crate::error::Result;
use crate::geometry::{closest_segment_params, segment_segment_distance, Capsule, Point3, Segment};
use crate::kinematics::{fk_unchecked, RobotModel, TaskSpec};

/// Attachment radius around the current configuration, in steps.
pub const ATTACH_STEPS: f64 = 5.0;
/// Nearest nodes tried when nothing lies within the attachment radius.
const ATTACH_FALLBACK: usize = 20;
/// Candidates per link whose shortcut paths are timed.
const TIMED_CANDIDATES: usize = 8;
/// Extra clearance kept between any planned posture and protected bodies (m).
pub const PROTECTED_MARGIN: f64 = 0.05;

/// Predicted straight path of the hazard, `[p_o, p_o + v_o t_d]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub p_o: Point3,
    pub v_o: Vector3<f64>,
    pub r_o: f64,
    pub t_d: f64,
}

impl Trajectory {
    pub fn segment(&self) -> Segment {
        Segment::new(self.p_o, self.p_o + self.v_o * self.t_d)
    }

    pub fn capsule(&self) -> Capsule {
        let s = self.segment();
        Capsule::new(s.a, s.b, self.r_o)
    }

    pub fn hits(&self, link: &Capsule) -> bool {
        segment_segment_distance(&link.seg, &self.segment()) <= self.r_o + link.radius
    }

    /// Time at which the hazard passes closest to `link`.
    pub fn arrival_time(&self, link: &Capsule) -> f64 {
        closest_segment_params(&self.segment(), &link.seg).0 * self.t_d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModePlanner {
    pub roadmap: Roadmap,
    pub volumes: ReachableVolumes,
}

#[derive(Debug, Clone)]
pub struct Planner {
    pub model: RobotModel,
    pub task: TaskSpec,
    /// Per-joint speed used to time candidate paths (rad/s); infinite
    /// disables timing.
    pub joint_speed: f64,
    pub constrained: Option<ModePlanner>,
    pub unconstrained: Option<ModePlanner>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    pub id: u64,
    pub waypoints: Vec<DVector<f64>>,
    pub intercepting_link: usize,
    pub constrained: bool,
    pub target_capsule: Capsule,
    pub target_node: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// The current posture already blocks with this link.
    Hold { link: usize },
    Plan { plan: MotionPlan, reused: bool },
    /// No reachable volume overlaps the trajectory.
    Fail,
}

#[derive(Debug, Clone, Default)]
pub struct PlanCache {
    pub last: Option<MotionPlan>,
    next_id: u64,
}

impl PlanCache {
    fn issue(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }
}

fn clear_of_protected(caps: &[Capsule], protected: &[(Point3, f64)]) -> bool {
    caps.iter()
        .all(|c| protected.iter().all(|(p, r)| c.sphere_clearance(p, *r) > PROTECTED_MARGIN))
}

/// Roadmap node to enter from `q`: the nearest one within reach through a
/// feasible straight segment, else the root posture, else any of the nearest few.
pub fn attach(model: &RobotModel, task: &TaskSpec, roadmap: &Roadmap, q: &DVector<f64>) -> Option<u32> {
    if roadmap.is_empty() {
        return None;
    }
    let gap = STEP / EDGE_SUBSTEPS as f64;
    let ok = |n: u32| segment_feasible(model, q, &roadmap.nodes[n as usize], false, task, gap);
    let order = roadmap.by_distance(q);
    if let Some(&(_, n)) = order.iter().take_while(|(d, _)| *d <= STEP * ATTACH_STEPS).find(|(_, n)| ok(*n)) {
        return Some(n);
    }
    if ok(0) {
        return Some(0);
    }
    order.iter().take(ATTACH_FALLBACK).map(|&(_, n)| n).find(|&n| ok(n))
}

fn plan_in_mode(
    planner: &Planner,
    mode: &ModePlanner,
    links: &[usize],
    robot_q: &DVector<f64>,
    traj: &Trajectory,
    protected: &[(Point3, f64)],
) -> Option<(Vec<DVector<f64>>, usize, u32)> {
    let model = &planner.model;
    let constrained = mode.roadmap.constrained;
    let nodes = &mode.roadmap.nodes;
    let mut attached: Option<(u32, Vec<f64>, Vec<Option<u32>>)> = None;
    let mut fallback: Option<(usize, u32)> = None;
    for &link in links {
        let Some(vol) = mode.volumes.octrees.get(link) else { continue };
        let candidates = intercepting_configs(vol, &traj.p_o, &traj.v_o, traj.r_o, traj.t_d);
        if candidates.is_empty() {
            continue;
        }
        if attached.is_none() {
            let start = attach(model, &planner.task, &mode.roadmap, robot_q)?;
            let (dist, pred) = shortest_paths(&mode.roadmap, start);
            attached = Some((start, dist, pred));
        }
        let (start, dist, pred) = attached.as_ref().unwrap();
        let mut ordered: Vec<u32> = candidates
            .into_iter()
            .filter(|&n| dist[n as usize].is_finite())
            .filter(|&n| clear_of_protected(&fk_unchecked(model, &nodes[n as usize]).capsules, protected))
            .collect();
        ordered.sort_by(|&a, &b| dist[a as usize].total_cmp(&dist[b as usize]).then(a.cmp(&b)));
        for (rank, &n) in ordered.iter().enumerate() {
            let arrive = traj.arrival_time(&fk_unchecked(model, &nodes[n as usize]).capsules[link]);
            let wps = tree_waypoints(robot_q, nodes, pred, *start, n);
            if path_time(planner, &wps) <= arrive {
                return Some((shortcut(model, &planner.task, constrained, &wps), link, n));
            }
            if rank < TIMED_CANDIDATES {
                let short = shortcut(model, &planner.task, constrained, &wps);
                if path_time(planner, &short) <= arrive {
                    return Some((short, link, n));
                }
            }
        }
        if fallback.is_none() {
            fallback = ordered.first().map(|&n| (link, n));
        }
    }
    let (link, target) = fallback?;
    let (start, _, pred) = attached.as_ref().unwrap();
    let wps = tree_waypoints(robot_q, nodes, pred, *start, target);
    Some((shortcut(model, &planner.task, constrained, &wps), link, target))
}

/// `robot_q` followed by the tree path from `start` to `target`.
fn tree_waypoints(robot_q: &DVector<f64>, nodes: &[DVector<f64>], pred: &[Option<u32>], start: u32, target: u32) -> Vec<DVector<f64>> {
    let mut wps = vec![robot_q.clone()];
    for m in path_from_tree(pred, start, target) {
        let q = &nodes[m as usize];
        if (q - wps.last().unwrap()).norm() > 1e-12 {
            wps.push(q.clone());
        }
    }
    wps
}

/// Seconds needed to follow `waypoints` at the planner's joint speed.
fn path_time(planner: &Planner, waypoints: &[DVector<f64>]) -> f64 {
    let d: f64 = waypoints.windows(2).map(|w| planner.model.max_joint_delta(&(&w[1] - &w[0]))).sum();
    d / planner.joint_speed
}

/// Decision policy for the intervening link.
///
/// Holds when the current posture already blocks, reuses the cached plan
/// while its final posture still blocks, and otherwise searches the
/// constrained volumes before the unconstrained ones (only the latter when
/// the end-effector task is already violated), trying the previously used
/// link first. The current posture blocks when the hazard's centre line
/// passes through one of its links; a cached plan stays valid while the hazard
/// capsule still overlaps its link. Within a mode the target is the cheapest posture the robot
/// can reach before the hazard arrives; failing that, the cheapest one.
pub fn decide_and_plan(
    agent: &AgentState,
    robot_q: &DVector<f64>,
    cache: &mut PlanCache,
    planner: &Planner,
    traj: &Trajectory,
    protected: &[(Point3, f64)],
) -> Result<Decision> {
    let model = &planner.model;
    let centre = Trajectory { r_o: 0.0, ..*traj };
    let fk = fk_unchecked(model, robot_q);
    if let Some(link) = fk.capsules.iter().position(|c| centre.hits(c)) {
        return Ok(Decision::Hold { link });
    }

    if agent.mode == Mode::Intervention {
        if let Some(plan) = &cache.last {
            let last = plan.waypoints.last().expect("plans have waypoints");
            if traj.hits(&fk_unchecked(model, last).capsules[plan.intercepting_link]) {
                return Ok(Decision::Plan {
                    plan: plan.clone(),
                    reused: true,
                });
            }
        }
    }

    let mut links: Vec<usize> = (0..model.n_links()).collect();
    if let Some(prev) = cache.last.as_ref().map(|p| p.intercepting_link) {
        links.retain(|&l| l != prev);
        links.insert(0, prev);
    }

    let task_violated = (fk.ee - planner.task.ee_goal).norm() > planner.task.epsilon;
    let mut modes: Vec<(&ModePlanner, bool)> = Vec::new();
    if !task_violated {
        if let Some(c) = &planner.constrained {
            modes.push((c, true));
        }
    }
    if let Some(u) = &planner.unconstrained {
        modes.push((u, false));
    }

    for (mode, constrained) in modes {
        if let Some((waypoints, link, target)) = plan_in_mode(planner, mode, &links, robot_q, &centre, protected) {
            let plan = MotionPlan {
                id: cache.issue(),
                waypoints,
                intercepting_link: link,
                constrained,
                target_capsule: traj.capsule(),
                target_node: target,
            };
            cache.last = Some(plan.clone());
            return Ok(Decision::Plan { plan, reused: false });
        }
    }
    Ok(Decision::Fail)
}
