//! Tick-stamped world events shared by actions, lessons and episode logs.

use serde::{Deserialize, Serialize};

use crate::agents::{ActionCommand, ActionStatus, AgentId, Posture};
use crate::geometry::Vec3;
use crate::language::Utterance;
use crate::world::InstanceId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    /// A recorded protocol request that mutates the session.
    Command { verb: String, body: serde_json::Value },
    ActionStarted { agent: AgentId, command: ActionCommand },
    ActionFinished {
        agent: AgentId,
        status: ActionStatus,
        reason: Option<String>,
        ticks: u32,
    },
    Grab { agent: AgentId, instance: InstanceId },
    Release {
        agent: AgentId,
        instance: InstanceId,
        supported_by: Option<InstanceId>,
        contained_in: Option<InstanceId>,
    },
    Handover { from: AgentId, to: AgentId, instance: InstanceId },
    Arrival { agent: AgentId, position: Vec3 },
    PostureChanged { agent: AgentId, posture: Posture },
    Gaze { agent: AgentId, target: InstanceId },
    Touch { agent: AgentId, instance: InstanceId },
    Rotate { agent: AgentId, instance: InstanceId, yaw: f64 },
    PointAt { agent: AgentId, instance: InstanceId },
    Say { agent: AgentId, utterance: Utterance },
    Contact { a: InstanceId, b: InstanceId },
    Spawn { instance: InstanceId, class_id: String, position: Vec3 },
    Despawn { instance: InstanceId },
    Reset { seed: u64 },
    LessonStarted { concept: String },
    LessonFinished { concept: String, success: bool },
    Interrupted { step: usize, reason: String },
    TaskIssued { task_id: String },
    Verdict { task_id: String, passed: bool, detail: String, ticks_used: u64 },
    StateHash { hash: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn agent(&self) -> Option<AgentId> {
        use EventKind::*;
        match &self.kind {
            ActionStarted { agent, .. }
            | ActionFinished { agent, .. }
            | Grab { agent, .. }
            | Release { agent, .. }
            | Arrival { agent, .. }
            | PostureChanged { agent, .. }
            | Gaze { agent, .. }
            | Touch { agent, .. }
            | Rotate { agent, .. }
            | PointAt { agent, .. }
            | Say { agent, .. } => Some(*agent),
            Handover { from, .. } => Some(*from),
            _ => None,
        }
    }
}
