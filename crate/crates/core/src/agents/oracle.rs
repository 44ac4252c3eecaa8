use crate::environment::{yaw_delta, Action, Observation, Pose};

use super::{Agent, AgentError, PrivilegedState};

/// Shortest-path action: close the larger wrapped gap first, pitch on ties.
pub fn oracle_act(current: Pose, target: Pose) -> Action {
    let dp = target.pitch - current.pitch;
    let dy = yaw_delta(current.yaw, target.yaw);
    if dp == 0 && dy == 0 {
        Action::Stop
    } else if dp.abs() >= dy.abs() {
        if dp > 0 {
            Action::Up
        } else {
            Action::Down
        }
    } else if dy > 0 {
        Action::Right
    } else {
        Action::Left
    }
}

/// Reads the true rotation; evaluation only. Assumes a unit step.
#[derive(Debug, Clone, Default)]
pub struct OracleAgent;

impl Agent for OracleAgent {
    fn name(&self) -> &str {
        "oracle"
    }

    fn reset(&mut self) {}

    fn act(&mut self, _: &Observation, privileged: Option<&PrivilegedState>) -> Result<Action, AgentError> {
        let s = privileged.ok_or(AgentError::MissingPrivilegedState)?;
        Ok(oracle_act(s.pose, s.target))
    }

    fn requires_privileged_state(&self) -> bool {
        true
    }
}
