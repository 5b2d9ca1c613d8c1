//! Idle / intervention / caution / return agent state machine.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::prediction::{imminent_pairs, select_most_imminent, PairRisk, PredictionConfig};
use crate::tracking::{ObjectId, ObjectState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Idle,
    Intervention,
    Caution,
    Return,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Idle => "IDLE",
            Mode::Intervention => "INTERVENTION",
            Mode::Caution => "CAUTION",
            Mode::Return => "RETURN",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorConfig {
    pub eta: f64,
    pub t_th: f64,
    /// Dwell time in caution before returning (s).
    pub t_caution: f64,
    pub dt: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            t_th: 4.0,
            t_caution: 1.0,
            dt: crate::tracking::DEFAULT_DT,
        }
    }
}

impl BehaviorConfig {
    fn threshold_config(&self) -> PredictionConfig {
        PredictionConfig {
            eta: self.eta,
            t_th: self.t_th,
            horizon: f64::INFINITY,
            dt: self.dt,
            ..Default::default()
        }
    }
}

pub type Pair = (ObjectId, ObjectId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub mode: Mode,
    pub target_pair: Option<Pair>,
    pub caution_entered_at: Option<f64>,
    pub latched_plan_id: Option<u64>,
}

impl Default for AgentState {
    fn default() -> Self {
        Self {
            mode: Mode::Idle,
            target_pair: None,
            caution_entered_at: None,
            latched_plan_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    None,
    Plan(Pair),
    Hold,
    GoDefault,
}

/// `d . dv >= 0` for the pair; unknown states count as receding.
pub fn is_receding(pair: Pair, states: &BTreeMap<ObjectId, ObjectState>) -> bool {
    match (states.get(&pair.0), states.get(&pair.1)) {
        (Some(a), Some(b)) => (a.p - b.p).dot(&(a.v - b.v)) >= 0.0,
        _ => true,
    }
}

/// One tick of the agent.
///
/// `at_default_posture` is the robot's report that it has reached its
/// default configuration; it only matters in `RETURN`.
pub fn step_fsm(
    state: &AgentState,
    risks: &[PairRisk],
    states: &BTreeMap<ObjectId, ObjectState>,
    cfg: &BehaviorConfig,
    now: f64,
    at_default_posture: bool,
) -> (AgentState, Command) {
    let pcfg = cfg.threshold_config();
    let risks: Vec<PairRisk> = risks.iter().filter(|r| !r.involves_self()).cloned().collect();
    let imminent = imminent_pairs(&risks, &pcfg);
    let pair_above = |pair: Pair| imminent.contains(&pair);

    let intervene = |target: Pair| {
        (
            AgentState {
                mode: Mode::Intervention,
                target_pair: Some(target),
                caution_entered_at: None,
                latched_plan_id: state.latched_plan_id,
            },
            Command::Plan(target),
        )
    };
    let new_target = || select_most_imminent(&imminent, states).ok();

    match state.mode {
        Mode::Idle | Mode::Return => {
            if let Some(target) = new_target() {
                return intervene(target);
            }
            if state.mode == Mode::Return && !at_default_posture {
                return (state.clone(), Command::GoDefault);
            }
            (AgentState::default(), Command::None)
        }
        Mode::Intervention => {
            let target = match state.target_pair {
                Some(t) => t,
                None => return (AgentState::default(), Command::None),
            };
            if imminent.is_empty() && is_receding(target, states) {
                return (
                    AgentState {
                        mode: Mode::Caution,
                        target_pair: Some(target),
                        caution_entered_at: Some(now),
                        latched_plan_id: state.latched_plan_id,
                    },
                    Command::Hold,
                );
            }
            intervene(target)
        }
        Mode::Caution => {
            let target = match state.target_pair {
                Some(t) => t,
                None => return (AgentState::default(), Command::None),
            };
            if pair_above(target) {
                return intervene(target);
            }
            if let Some(other) = new_target() {
                return intervene(other);
            }
            let entered = state.caution_entered_at.unwrap_or(now);
            if now - entered > cfg.t_caution {
                return (
                    AgentState {
                        mode: Mode::Return,
                        target_pair: None,
                        caution_entered_at: None,
                        latched_plan_id: None,
                    },
                    Command::GoDefault,
                );
            }
            (
                AgentState {
                    caution_entered_at: Some(entered),
                    ..state.clone()
                },
                Command::Hold,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::Role;
    use nalgebra::Vector3;

    fn risk(i: ObjectId, j: ObjectId, p: f64) -> PairRisk {
        PairRisk {
            i,
            j,
            role_i: Role::Hazard,
            role_j: Role::Protected,
            p_ic_series: vec![0.0; 200],
            p_ac_series: vec![p; 200],
            k_c: None,
            t_c: None,
        }
    }

    fn states(gap: f64, closing: f64) -> BTreeMap<ObjectId, ObjectState> {
        let mut m = BTreeMap::new();
        m.insert(1, ObjectState::new(Vector3::new(-gap, 0., 0.), Vector3::new(closing, 0., 0.)));
        m.insert(2, ObjectState::new(Vector3::zeros(), Vector3::zeros()));
        m
    }

    #[test]
    fn idle_stays_idle_below_threshold() {
        let cfg = BehaviorConfig::default();
        let (s, c) = step_fsm(&AgentState::default(), &[risk(1, 2, 0.3)], &states(1.0, 1.0), &cfg, 0.0, true);
        assert_eq!(s.mode, Mode::Idle);
        assert_eq!(c, Command::None);
    }

    #[test]
    fn idle_to_intervention() {
        let cfg = BehaviorConfig::default();
        let (s, c) = step_fsm(&AgentState::default(), &[risk(1, 2, 0.7)], &states(1.0, 1.0), &cfg, 0.0, true);
        assert_eq!(s.mode, Mode::Intervention);
        assert_eq!(s.target_pair, Some((1, 2)));
        assert_eq!(c, Command::Plan((1, 2)));
    }

    #[test]
    fn approaching_pair_keeps_intervention() {
        let cfg = BehaviorConfig::default();
        let st = AgentState {
            mode: Mode::Intervention,
            target_pair: Some((1, 2)),
            ..Default::default()
        };
        let (s, _) = step_fsm(&st, &[risk(1, 2, 0.1)], &states(1.0, 1.0), &cfg, 0.0, true);
        assert_eq!(s.mode, Mode::Intervention);
        let (s, c) = step_fsm(&st, &[risk(1, 2, 0.1)], &states(1.0, -1.0), &cfg, 0.0, true);
        assert_eq!(s.mode, Mode::Caution);
        assert_eq!(c, Command::Hold);
        assert_eq!(s.caution_entered_at, Some(0.0));
    }

    #[test]
    fn latching_ignores_more_imminent_pairs() {
        let cfg = BehaviorConfig::default();
        let mut st_map = states(1.0, 1.0);
        st_map.insert(3, ObjectState::new(Vector3::new(0.1, 0., 0.), Vector3::zeros()));
        let st = AgentState {
            mode: Mode::Intervention,
            target_pair: Some((1, 2)),
            ..Default::default()
        };
        let (s, c) = step_fsm(&st, &[risk(1, 2, 0.6), risk(2, 3, 0.99)], &st_map, &cfg, 0.0, true);
        assert_eq!(s.target_pair, Some((1, 2)));
        assert_eq!(c, Command::Plan((1, 2)));
    }

    #[test]
    fn caution_times_out_to_return_then_idle() {
        let cfg = BehaviorConfig::default();
        let st = AgentState {
            mode: Mode::Caution,
            target_pair: Some((1, 2)),
            caution_entered_at: Some(1.0),
            latched_plan_id: Some(4),
        };
        let (s, c) = step_fsm(&st, &[risk(1, 2, 0.1)], &states(1.0, -1.0), &cfg, 1.5, false);
        assert_eq!((s.mode, c), (Mode::Caution, Command::Hold));
        let (s, c) = step_fsm(&st, &[risk(1, 2, 0.1)], &states(1.0, -1.0), &cfg, 2.01, false);
        assert_eq!((s.mode, c), (Mode::Return, Command::GoDefault));
        let (s2, c) = step_fsm(&s, &[risk(1, 2, 0.1)], &states(1.0, -1.0), &cfg, 2.1, false);
        assert_eq!((s2.mode, c), (Mode::Return, Command::GoDefault));
        let (s3, c) = step_fsm(&s2, &[risk(1, 2, 0.1)], &states(1.0, -1.0), &cfg, 2.2, true);
        assert_eq!((s3.mode, c), (Mode::Idle, Command::None));
    }

    #[test]
    fn caution_reenters_intervention() {
        let cfg = BehaviorConfig::default();
        let st = AgentState {
            mode: Mode::Caution,
            target_pair: Some((1, 2)),
            caution_entered_at: Some(1.0),
            latched_plan_id: None,
        };
        let (s, c) = step_fsm(&st, &[risk(1, 2, 0.8)], &states(1.0, 1.0), &cfg, 1.2, false);
        assert_eq!((s.mode, c), (Mode::Intervention, Command::Plan((1, 2))));
    }

    #[test]
    fn self_pairs_are_ignored() {
        let cfg = BehaviorConfig::default();
        let mut r = risk(1, 2, 0.9);
        r.role_j = Role::SelfLink;
        let (s, _) = step_fsm(&AgentState::default(), &[r], &states(1.0, 1.0), &cfg, 0.0, true);
        assert_eq!(s.mode, Mode::Idle);
    }
}
