//! Reachable volumes, roadmaps, and interception planning.

pub mod decide;
pub mod octree;
pub mod persist;
pub mod roadmap;

pub use decide::{attach, decide_and_plan, Decision, ModePlanner, MotionPlan, PlanCache, Planner, Trajectory};
pub use octree::{intercepting_configs, LinkRecord, Octree, OctreeConfig, OctreeNode, MAX_DEPTH};
pub use persist::RoadmapFile;
pub use roadmap::{
    learn_roadmap, path_cost, query_path, segment_feasible, shortcut, shortest_paths, solve_goal, LearnConfig, ReachableVolumes, Roadmap, STEP,
};
