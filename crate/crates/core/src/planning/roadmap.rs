//! Sampling-based roadmap learning and shortest-path queries.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::octree::{LinkRecord, Octree, OctreeConfig};
use crate::error::{Error, Result};
use crate::kinematics::{
    ee_jacobian, fk_unchecked, is_feasible, null_project, project_displacement, RobotModel, TaskSpec, RANK_TOL,
};

/// Joint-space extension step (rad).
pub const STEP: f64 = 0.05;
/// Edge validation sub-steps per extension step.
pub const EDGE_SUBSTEPS: usize = 5;
/// Neighbour connection radius, in steps.
pub const CONNECT_STEPS: f64 = 3.0;
/// Most neighbours tried per node when connecting.
pub const CONNECT_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    /// Number of roadmap nodes to register.
    pub budget: usize,
    pub seed: u64,
    pub step: f64,
    pub octree: OctreeConfig,
    /// Give up after this many samples per requested node.
    pub max_samples_per_node: usize,
}

impl LearnConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            step: STEP,
            octree: OctreeConfig::default(),
            max_samples_per_node: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roadmap {
    pub constrained: bool,
    pub nodes: Vec<DVector<f64>>,
    /// Undirected edges stored as `(lo, hi)`.
    pub edges: BTreeSet<(u32, u32)>,
    adjacency: Vec<Vec<u32>>,
}

impl Roadmap {
    pub fn new(constrained: bool) -> Self {
        Self {
            constrained,
            nodes: Vec::new(),
            edges: BTreeSet::new(),
            adjacency: Vec::new(),
        }
    }

    pub fn add_node(&mut self, q: DVector<f64>) -> u32 {
        self.nodes.push(q);
        self.adjacency.push(Vec::new());
        (self.nodes.len() - 1) as u32
    }

    pub fn add_edge(&mut self, a: u32, b: u32) {
        if a == b {
            return;
        }
        let key = (a.min(b), a.max(b));
        if self.edges.insert(key) {
            for (x, y) in [(a, b), (b, a)] {
                let adj = &mut self.adjacency[x as usize];
                let at = adj.partition_point(|&n| n < y);
                adj.insert(at, y);
            }
        }
    }

    pub fn neighbors(&self, n: u32) -> &[u32] {
        &self.adjacency[n as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_cost(&self, a: u32, b: u32) -> f64 {
        (&self.nodes[a as usize] - &self.nodes[b as usize]).norm()
    }

    /// Nearest node by joint-space Euclidean distance; ties go to the lower id.
    pub fn nearest(&self, q: &DVector<f64>) -> Option<u32> {
        let mut best: Option<(f64, u32)> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n - q).norm_squared();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i as u32));
            }
        }
        best.map(|(_, i)| i)
    }

    /// Node ids sorted by distance to `q`, ties by id.
    pub fn by_distance(&self, q: &DVector<f64>) -> Vec<(f64, u32)> {
        let mut v: Vec<(f64, u32)> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| ((n - q).norm(), i as u32))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v
    }
}

/// Per-link octrees for one roadmap.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachableVolumes {
    pub octrees: Vec<Octree>,
}

impl ReachableVolumes {
    pub fn new(n_links: usize, config: OctreeConfig) -> Self {
        Self {
            octrees: (0..n_links).map(|_| Octree::new(config)).collect(),
        }
    }

    pub fn register(&mut self, model: &RobotModel, q: &DVector<f64>, id: u32) {
        let fk = fk_unchecked(model, q);
        for (tree, cap) in self.octrees.iter_mut().zip(&fk.capsules) {
            tree.insert(LinkRecord::from_capsule(cap, id));
        }
    }
}

/// Whether the straight joint-space segment stays feasible at samples at most `max_gap` apart.
pub fn segment_feasible(
    model: &RobotModel,
    a: &DVector<f64>,
    b: &DVector<f64>,
    constrained: bool,
    task: &TaskSpec,
    max_gap: f64,
) -> bool {
    let len = (b - a).norm();
    let n = ((len / max_gap).ceil() as usize).max(1);
    (1..=n).all(|k| {
        let t = k as f64 / n as f64;
        is_feasible(model, &(a + (b - a) * t), constrained, task)
    })
}

/// Pulls `q` onto the end-effector goal with Gauss-Newton steps.
pub fn solve_goal(model: &RobotModel, q: &DVector<f64>, task: &TaskSpec) -> Result<DVector<f64>> {
    let mut q = q.clone();
    for _ in 0..50 {
        let err = fk_unchecked(model, &q).ee - task.ee_goal;
        if err.norm() <= task.epsilon / 10.0 {
            return Ok(q);
        }
        let j = ee_jacobian(model, &q).map_err(|_| Error::GoalUnreachable)?;
        let svd = j.svd(true, true);
        let tol = RANK_TOL * svd.singular_values.max();
        let step = svd
            .solve(&DVector::from_column_slice(err.as_slice()), tol)
            .map_err(|_| Error::GoalUnreachable)?;
        q -= step;
    }
    Err(Error::GoalUnreachable)
}

fn sample_configuration(model: &RobotModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let lim = model.coord_limits();
    DVector::from_iterator(model.dof(), lim.iter().map(|l| rng.random_range(l[0]..=l[1])))
}

/// Grows a roadmap from the home posture until it holds `cfg.budget` nodes.
///
/// Each sample extends the nearest node toward it in fixed joint-space
/// steps, stopping at the sample, at the first infeasible step, or when the
/// budget is reached. In constrained mode every step is re-projected onto
/// the end-effector manifold. Every accepted node's link capsules go into the
/// per-link octrees. Finally each node is joined to its nearby neighbours
/// wherever the straight segment is feasible.
pub fn learn_roadmap(model: &RobotModel, task: &TaskSpec, constrained: bool, cfg: &LearnConfig) -> Result<(Roadmap, ReachableVolumes)> {
    if cfg.budget == 0 || !(cfg.step > 0.0) {
        return Err(Error::InvalidInput("budget must be >= 1 and step > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut roadmap = Roadmap::new(constrained);
    let mut volumes = ReachableVolumes::new(model.n_links(), cfg.octree);

    let seed_q = if constrained {
        let q = solve_goal(model, &model.home, task)?;
        if !is_feasible(model, &q, true, task) {
            return Err(Error::GoalUnreachable);
        }
        q
    } else {
        if !is_feasible(model, &model.home, false, task) {
            return Err(Error::InvalidModel("home posture is infeasible".into()));
        }
        model.home.clone()
    };
    let id = roadmap.add_node(seed_q.clone());
    volumes.register(model, &seed_q, id);

    let sub_gap = cfg.step / EDGE_SUBSTEPS as f64;
    let max_samples = cfg.budget.saturating_mul(cfg.max_samples_per_node);
    let mut samples = 0usize;
    while roadmap.len() < cfg.budget && samples < max_samples {
        samples += 1;
        let q_new = sample_configuration(model, &mut rng);
        let near = roadmap.nearest(&q_new).expect("roadmap has a seed node");
        let mut prev_id = near;
        let mut prev = roadmap.nodes[near as usize].clone();

        let raw = &q_new - &prev;
        let n_steps = if constrained {
            match crate::kinematics::constrained_null_basis(model, &prev, task) {
                Ok(basis) => (null_project(&basis, &raw).norm() / cfg.step).floor() as usize,
                Err(_) => continue,
            }
        } else {
            (raw.norm() / cfg.step).floor() as usize
        };
        let fixed_dir = &raw * (cfg.step / raw.norm().max(f64::MIN_POSITIVE));

        for _ in 0..n_steps {
            if roadmap.len() >= cfg.budget {
                break;
            }
            let dq = if constrained {
                let toward = &q_new - &prev;
                let basis = match crate::kinematics::constrained_null_basis(model, &prev, task) {
                    Ok(b) => b,
                    Err(_) => break,
                };
                let lin = null_project(&basis, &toward);
                let norm = lin.norm();
                if norm < 1e-9 {
                    break;
                }
                match project_displacement(model, &prev, &(lin * (cfg.step / norm)), task) {
                    Ok(d) => d,
                    Err(_) => break,
                }
            } else {
                fixed_dir.clone()
            };
            let q = &prev + dq;
            if !is_feasible(model, &q, constrained, task) || !segment_feasible(model, &prev, &q, constrained, task, sub_gap) {
                break;
            }
            let id = roadmap.add_node(q.clone());
            roadmap.add_edge(prev_id, id);
            volumes.register(model, &q, id);
            prev_id = id;
            prev = q;
        }
    }
    connect_neighbors(model, task, &mut roadmap, cfg.step * CONNECT_STEPS, sub_gap);
    for t in &mut volumes.octrees {
        t.canonicalize();
    }
    Ok((roadmap, volumes))
}

/// Adds feasible straight edges from every node to its nearest neighbours
/// within `radius`.
fn connect_neighbors(model: &RobotModel, task: &TaskSpec, roadmap: &mut Roadmap, radius: f64, gap: f64) {
    let n = roadmap.len();
    let dof = model.dof();
    let flat: Vec<f64> = roadmap.nodes.iter().flat_map(|q| q.iter().copied()).collect();
    let r2 = radius * radius;
    for i in 0..n {
        let qi = &flat[i * dof..(i + 1) * dof];
        let mut near: Vec<(f64, u32)> = (i + 1..n)
            .filter_map(|j| {
                let qj = &flat[j * dof..(j + 1) * dof];
                let d2: f64 = qi.iter().zip(qj).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2 <= r2).then_some((d2, j as u32))
            })
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in near.iter().take(CONNECT_NEIGHBORS) {
            let (a, b) = (i as u32, j);
            if roadmap.edges.contains(&(a, b)) {
                continue;
            }
            if segment_feasible(model, &roadmap.nodes[i], &roadmap.nodes[j as usize], roadmap.constrained, task, gap) {
                roadmap.add_edge(a, b);
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: u32,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Uniform-cost search from `from`; returns (cost, predecessor) per node.
pub fn shortest_paths(roadmap: &Roadmap, from: u32) -> (Vec<f64>, Vec<Option<u32>>) {
    let n = roadmap.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[from as usize] = 0.0;
    heap.push(Frontier { cost: 0.0, node: from });
    while let Some(Frontier { cost, node }) = heap.pop() {
        if std::mem::replace(&mut done[node as usize], true) {
            continue;
        }
        for &nb in roadmap.neighbors(node) {
            let c = cost + roadmap.edge_cost(node, nb);
            let cur = dist[nb as usize];
            let better = c < cur || (c == cur && pred[nb as usize].is_some_and(|p| node < p));
            if better && !done[nb as usize] {
                dist[nb as usize] = c;
                pred[nb as usize] = Some(node);
                heap.push(Frontier { cost: c, node: nb });
            }
        }
    }
    (dist, pred)
}

fn unwind(pred: &[Option<u32>], from: u32, to: u32) -> Vec<u32> {
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = pred[cur as usize].expect("reachable node has a predecessor");
        path.push(cur);
    }
    path.reverse();
    path
}

pub fn query_path(roadmap: &Roadmap, from: u32, to: u32) -> Result<Vec<u32>> {
    let n = roadmap.len() as u32;
    if from >= n || to >= n {
        return Err(Error::InvalidInput("node id out of range".into()));
    }
    let (dist, pred) = shortest_paths(roadmap, from);
    if !dist[to as usize].is_finite() {
        return Err(Error::NoRoadmapPath);
    }
    Ok(unwind(&pred, from, to))
}

pub(crate) fn path_from_tree(pred: &[Option<u32>], from: u32, to: u32) -> Vec<u32> {
    unwind(pred, from, to)
}

/// Greedy shortcutting: from each kept waypoint, jump to the farthest of a
/// few probed later waypoints joined by a feasible straight segment.
pub fn shortcut(model: &RobotModel, task: &TaskSpec, constrained: bool, path: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let gap = STEP / EDGE_SUBSTEPS as f64;
    let Some(last) = path.len().checked_sub(1) else { return Vec::new() };
    let mut out = vec![path[0].clone()];
    let mut i = 0;
    while i < last {
        let mut probes = vec![last];
        let mut span = (last - i).next_power_of_two() / 2;
        while span >= 2 {
            if i + span < last {
                probes.push(i + span);
            }
            span /= 2;
        }
        let j = probes
            .into_iter()
            .find(|&j| segment_feasible(model, &path[i], &path[j], constrained, task, gap))
            .unwrap_or(i + 1);
        out.push(path[j].clone());
        i = j;
    }
    out
}

pub fn path_cost(roadmap: &Roadmap, path: &[u32]) -> f64 {
    path.windows(2).map(|w| roadmap.edge_cost(w[0], w[1])).sum()
}
