//! Child and parent avatars and tick-based execution of the primitive
//! action vocabulary.

use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::cmp::Reverse;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Category;
use crate::events::{Event, EventKind};
use crate::geometry::{angle_diff, normalize_angle, snap_yaw, Rect, Vec3};
use crate::kinetics::{self, aabb_at, aabb_of, agent_height};
use crate::language::Utterance;
use crate::rng::SimRng;
use crate::sensors;
use crate::world::{Cell, InstanceId, Scene, CHILD_ID, PARENT_ID, SEPARATION_BUFFER};

pub const TICK_RATE_HZ: u32 = 20;
pub const DT: f64 = 1.0 / TICK_RATE_HZ as f64;
pub const WALK_SPEED: f64 = 1.0;
pub const RUN_SPEED: f64 = 2.0;
pub const CRAWL_SPEED: f64 = 0.4;
/// Radians per second.
pub const TURN_RATE: f64 = PI;
pub const REACH: f64 = 1.0;
pub const HAND_OFFSET: f64 = 0.4;
pub const HAND_HEIGHT_STAND: f64 = 0.8;
pub const HAND_HEIGHT_CRAWL: f64 = 0.3;
pub const ARRIVAL_TOLERANCE: f64 = 0.1;
pub const AGENT_RADIUS: f64 = 0.25;
pub const LOOK_AROUND_TICKS: u32 = 40;
pub const INTERACTION_TICKS: u32 = 5;
pub const DEFAULT_MOTION_TICKS: u32 = 20;
/// Height above a surface from which a carried object is let go.
pub const DROP_HEIGHT: f64 = 0.5;

const REACH_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentId {
    #[serde(alias = "child")]
    Child,
    #[serde(alias = "parent")]
    Parent,
}

impl AgentId {
    pub fn index(self) -> usize {
        match self {
            AgentId::Child => 0,
            AgentId::Parent => 1,
        }
    }

    pub fn instance_id(self) -> InstanceId {
        match self {
            AgentId::Child => CHILD_ID,
            AgentId::Parent => PARENT_ID,
        }
    }

    pub fn from_instance_id(id: InstanceId) -> Option<AgentId> {
        match id {
            CHILD_ID => Some(AgentId::Child),
            PARENT_ID => Some(AgentId::Parent),
            _ => None,
        }
    }

    pub fn other(self) -> AgentId {
        match self {
            AgentId::Child => AgentId::Parent,
            AgentId::Parent => AgentId::Child,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentId::Child => "child",
            AgentId::Parent => "parent",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Posture {
    Stand,
    Crawl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: AgentId,
    pub position: Vec3,
    pub heading: f64,
    pub posture: Posture,
    pub held: Option<InstanceId>,
    pub gaze: Option<InstanceId>,
    pub pointing_at: Option<InstanceId>,
    /// Last instance this agent touched.
    pub touched: Option<InstanceId>,
}

impl AgentState {
    pub fn new(agent_id: AgentId, position: Vec3) -> AgentState {
        AgentState {
            agent_id,
            position,
            heading: 0.0,
            posture: Posture::Stand,
            held: None,
            gaze: None,
            pointing_at: None,
            touched: None,
        }
    }

    pub fn hand_point(&self) -> Vec3 {
        let z = match self.posture {
            Posture::Stand => HAND_HEIGHT_STAND,
            Posture::Crawl => HAND_HEIGHT_CRAWL,
        };
        Vec3::new(
            self.position.x + HAND_OFFSET * self.heading.cos(),
            self.position.y + HAND_OFFSET * self.heading.sin(),
            self.position.z + z,
        )
    }

    pub fn eye_point(&self) -> Vec3 {
        let h = agent_height(self.agent_id, self.posture);
        Vec3::new(self.position.x, self.position.y, self.position.z + 0.9 * h)
    }
}

/// The public action vocabulary shared by both avatars.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionVerb {
    NavigateTo,
    Run,
    Crawl,
    WalkForward,
    WalkBackwards,
    TurnLeft,
    TurnRight,
    Wander,
    Grab,
    LookAt,
    PutBack,
    LookAround,
    Touch,
    Rotate,
}

impl ActionVerb {
    pub const NAVIGATION: [ActionVerb; 8] = [
        ActionVerb::NavigateTo,
        ActionVerb::Run,
        ActionVerb::Crawl,
        ActionVerb::WalkForward,
        ActionVerb::WalkBackwards,
        ActionVerb::TurnLeft,
        ActionVerb::TurnRight,
        ActionVerb::Wander,
    ];
    pub const INTERACTION: [ActionVerb; 6] = [
        ActionVerb::Grab,
        ActionVerb::LookAt,
        ActionVerb::PutBack,
        ActionVerb::LookAround,
        ActionVerb::Touch,
        ActionVerb::Rotate,
    ];
    pub const ALL: [ActionVerb; 14] = [
        ActionVerb::NavigateTo,
        ActionVerb::Run,
        ActionVerb::Crawl,
        ActionVerb::WalkForward,
        ActionVerb::WalkBackwards,
        ActionVerb::TurnLeft,
        ActionVerb::TurnRight,
        ActionVerb::Wander,
        ActionVerb::Grab,
        ActionVerb::LookAt,
        ActionVerb::PutBack,
        ActionVerb::LookAround,
        ActionVerb::Touch,
        ActionVerb::Rotate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionVerb::NavigateTo => "NavigateTo",
            ActionVerb::Run => "Run",
            ActionVerb::Crawl => "Crawl",
            ActionVerb::WalkForward => "WalkForward",
            ActionVerb::WalkBackwards => "WalkBackwards",
            ActionVerb::TurnLeft => "TurnLeft",
            ActionVerb::TurnRight => "TurnRight",
            ActionVerb::Wander => "Wander",
            ActionVerb::Grab => "Grab",
            ActionVerb::LookAt => "LookAt",
            ActionVerb::PutBack => "PutBack",
            ActionVerb::LookAround => "LookAround",
            ActionVerb::Touch => "Touch",
            ActionVerb::Rotate => "Rotate",
        }
    }

    pub fn is_navigation(self) -> bool {
        ActionVerb::NAVIGATION.contains(&self)
    }

    fn target_arity(self) -> Arity {
        use ActionVerb::*;
        match self {
            NavigateTo | Grab | LookAt | Touch | Rotate => Arity::Required,
            Run | Crawl | PutBack => Arity::Optional,
            WalkForward | WalkBackwards | TurnLeft | TurnRight | Wander | LookAround => Arity::Forbidden,
        }
    }
}

// The vocabulary is closed: 8 navigation plus 6 interaction verbs.
const _: () = assert!(ActionVerb::NAVIGATION.len() == 8);
const _: () = assert!(ActionVerb::INTERACTION.len() == 6);
const _: () = assert!(ActionVerb::ALL.len() == ActionVerb::NAVIGATION.len() + ActionVerb::INTERACTION.len());

enum Arity {
    Required,
    Optional,
    Forbidden,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Instance(InstanceId),
    Point([f64; 2]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub verb: ActionVerb,
    #[serde(default)]
    pub target: Option<Target>,
    #[serde(default)]
    pub duration_ticks: Option<u32>,
}

impl ActionCommand {
    pub fn new(verb: ActionVerb) -> ActionCommand {
        ActionCommand { verb, target: None, duration_ticks: None }
    }

    pub fn at(verb: ActionVerb, id: InstanceId) -> ActionCommand {
        ActionCommand { verb, target: Some(Target::Instance(id)), duration_ticks: None }
    }

    pub fn to_point(verb: ActionVerb, p: [f64; 2]) -> ActionCommand {
        ActionCommand { verb, target: Some(Target::Point(p)), duration_ticks: None }
    }

    pub fn for_ticks(mut self, n: u32) -> ActionCommand {
        self.duration_ticks = Some(n);
        self
    }

    pub fn check_arity(&self) -> Result<(), ActionError> {
        if self.duration_ticks == Some(0) {
            return Err(ActionError::BadCommand("duration_ticks must be positive".into()));
        }
        match (self.verb.target_arity(), &self.target) {
            (Arity::Required, None) => {
                Err(ActionError::BadCommand(format!("{} requires a target", self.verb.name())))
            }
            (Arity::Forbidden, Some(_)) => {
                Err(ActionError::BadCommand(format!("{} takes no target", self.verb.name())))
            }
            _ => Ok(()),
        }
    }
}

/// Everything an agent can be asked to do. `PointAt` and `Say` are internal
/// parent-only activities used by lessons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activity {
    Act { command: ActionCommand },
    PointAt { target: InstanceId },
    Say { utterance: Utterance },
}

impl Activity {
    pub fn act(command: ActionCommand) -> Activity {
        Activity::Act { command }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionStatus {
    Succeeded,
    Failed,
    Interrupted,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionError {
    #[error("agent is busy")]
    Busy,
    #[error("target is out of reach")]
    OutOfReach,
    #[error("hand is full")]
    HandFull,
    #[error("hand is empty")]
    HandEmpty,
    #[error("target is not interactable")]
    NotInteractable,
    #[error("unknown target")]
    UnknownTarget,
    #[error("no path to target")]
    Unreachable,
    #[error("blocked")]
    Blocked,
    #[error("no room to place the object")]
    NoRoom,
    #[error("only the parent may do this")]
    NotPermitted,
    #[error("timed out")]
    Timeout,
    #[error("target was removed")]
    TargetRemoved,
    #[error("cancelled")]
    Cancelled,
    #[error("bad command: {0}")]
    BadCommand(String),
}

impl ActionError {
    pub fn code(&self) -> &'static str {
        match self {
            ActionError::Busy => "Busy",
            ActionError::OutOfReach => "OutOfReach",
            ActionError::HandFull => "HandFull",
            ActionError::HandEmpty => "HandEmpty",
            ActionError::NotInteractable => "NotInteractable",
            ActionError::UnknownTarget => "UnknownTarget",
            ActionError::Unreachable => "Unreachable",
            ActionError::Blocked => "Blocked",
            ActionError::NoRoom => "NoRoom",
            ActionError::NotPermitted => "NotPermitted",
            ActionError::Timeout => "Timeout",
            ActionError::TargetRemoved => "TargetRemoved",
            ActionError::Cancelled => "Cancelled",
            ActionError::BadCommand(_) => "BadCommand",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub status: ActionStatus,
    pub reason: Option<String>,
    pub ticks_elapsed: u32,
    pub events: Vec<Event>,
}

impl ActionResult {
    pub fn succeeded(&self) -> bool {
        self.status == ActionStatus::Succeeded
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Progress {
    /// Straight motion along (or against) the heading.
    Move { remaining: u32, speed: f64, backwards: bool },
    Turn { remaining: u32, end: f64, step: f64 },
    /// Waypoint following; `face` is turned toward on arrival.
    Path { waypoints: VecDeque<[f64; 2]>, speed: f64, face: Option<InstanceId>, limit: Option<u32> },
    /// Navigation whose plan is made on the first tick.
    Plan { target: Option<Target>, speed: f64, limit: Option<u32> },
    Sweep { remaining: u32, start: f64, seen: BTreeSet<InstanceId> },
    /// Interaction latched when the countdown reaches zero.
    Wait { remaining: u32 },
    Instant,
}

#[derive(Clone, Debug, PartialEq)]
struct Running {
    activity: Activity,
    progress: Progress,
    ticks: u32,
    events: Vec<Event>,
}

/// In-progress action handles for both agents.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActionSlots {
    slots: [Option<Running>; 2],
}

impl ActionSlots {
    pub fn new() -> ActionSlots {
        ActionSlots::default()
    }

    pub fn is_idle(&self, agent: AgentId) -> bool {
        self.slots[agent.index()].is_none()
    }

    pub fn all_idle(&self) -> bool {
        self.slots.iter().all(|s| s.is_none())
    }

    pub fn current(&self, agent: AgentId) -> Option<&Activity> {
        self.slots[agent.index()].as_ref().map(|r| &r.activity)
    }

    /// Drops the running action, reporting it as interrupted.
    pub fn cancel(&mut self, scene: &mut Scene, agent: AgentId) -> Option<ActionResult> {
        let mut run = self.slots[agent.index()].take()?;
        Some(finish(scene, agent, &mut run, Err(ActionError::Cancelled)))
    }
}

fn reach_distance(scene: &Scene, from: Vec3, target: InstanceId) -> Option<f64> {
    if let Some(agent) = AgentId::from_instance_id(target) {
        let p = scene.agent(agent).position;
        return Some((p.x - from.x).hypot(p.y - from.y));
    }
    scene.footprint(target).map(|r| r.distance_to([from.x, from.y]))
}

pub fn within_reach(scene: &Scene, agent: AgentId, target: InstanceId) -> bool {
    let from = scene.agent(agent).position;
    reach_distance(scene, from, target).is_some_and(|d| d <= REACH + REACH_TOL)
}

fn target_exists(scene: &Scene, id: InstanceId) -> bool {
    AgentId::from_instance_id(id).is_some() || scene.instance(id).is_some()
}

/// Preconditions checked when an action is accepted.
fn check_preconditions(scene: &Scene, agent: AgentId, activity: &Activity) -> Result<(), ActionError> {
    let a = scene.agent(agent);
    match activity {
        Activity::PointAt { target } => {
            if agent != AgentId::Parent {
                return Err(ActionError::NotPermitted);
            }
            if !target_exists(scene, *target) {
                return Err(ActionError::UnknownTarget);
            }
            Ok(())
        }
        Activity::Say { .. } => {
            if agent != AgentId::Parent {
                return Err(ActionError::NotPermitted);
            }
            Ok(())
        }
        Activity::Act { command } => {
            command.check_arity()?;
            if let Some(Target::Instance(id)) = command.target {
                if !target_exists(scene, id) || id == agent.instance_id() {
                    return Err(ActionError::UnknownTarget);
                }
            }
            if let Some(Target::Point(p)) = command.target {
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(ActionError::BadCommand("non-finite point".into()));
                }
            }
            let tid = match command.target {
                Some(Target::Instance(id)) => Some(id),
                _ => None,
            };
            match command.verb {
                ActionVerb::Grab => {
                    let id = tid.expect("arity checked");
                    let inst = scene.instance(id).ok_or(ActionError::NotInteractable)?;
                    let class = scene.class_of(inst);
                    if class.category != Category::Interactable || !class.graspable {
                        return Err(ActionError::NotInteractable);
                    }
                    if a.held.is_some() {
                        return Err(ActionError::HandFull);
                    }
                    if inst.held_by.is_some() {
                        return Err(ActionError::Blocked);
                    }
                    if !within_reach(scene, agent, id) {
                        return Err(ActionError::OutOfReach);
                    }
                    Ok(())
                }
                ActionVerb::Touch => {
                    let id = tid.expect("arity checked");
                    if !within_reach(scene, agent, id) {
                        return Err(ActionError::OutOfReach);
                    }
                    Ok(())
                }
                ActionVerb::Rotate => {
                    let id = tid.expect("arity checked");
                    let inst = scene.instance(id).ok_or(ActionError::NotInteractable)?;
                    if scene.class_of(inst).category != Category::Interactable {
                        return Err(ActionError::NotInteractable);
                    }
                    if a.held != Some(id) && !within_reach(scene, agent, id) {
                        return Err(ActionError::OutOfReach);
                    }
                    Ok(())
                }
                ActionVerb::PutBack => {
                    if a.held.is_none() {
                        return Err(ActionError::HandEmpty);
                    }
                    match command.target {
                        Some(Target::Instance(id)) => {
                            if scene.agent(agent).held == Some(id) {
                                return Err(ActionError::UnknownTarget);
                            }
                            if !within_reach(scene, agent, id) {
                                return Err(ActionError::OutOfReach);
                            }
                            Ok(())
                        }
                        Some(Target::Point(p)) => {
                            let d = (p[0] - a.position.x).hypot(p[1] - a.position.y);
                            if d > REACH + REACH_TOL {
                                return Err(ActionError::OutOfReach);
                            }
                            Ok(())
                        }
                        None => Ok(()),
                    }
                }
                _ => Ok(()),
            }
        }
    }
}

fn initial_progress(scene: &Scene, agent: AgentId, activity: &Activity) -> Progress {
    let command = match activity {
        Activity::Act { command } => command,
        _ => return Progress::Instant,
    };
    let n = command.duration_ticks;
    let quarter_ticks = (FRAC_PI_2 / (TURN_RATE * DT)).round() as u32;
    let heading = scene.agent(agent).heading;
    match command.verb {
        ActionVerb::WalkForward => Progress::Move {
            remaining: n.unwrap_or(DEFAULT_MOTION_TICKS),
            speed: WALK_SPEED,
            backwards: false,
        },
        ActionVerb::WalkBackwards => Progress::Move {
            remaining: n.unwrap_or(DEFAULT_MOTION_TICKS),
            speed: WALK_SPEED,
            backwards: true,
        },
        ActionVerb::Run | ActionVerb::Crawl => {
            let speed = if command.verb == ActionVerb::Run { RUN_SPEED } else { CRAWL_SPEED };
            match command.target {
                Some(t) => Progress::Plan { target: Some(t), speed, limit: n },
                None => Progress::Move { remaining: n.unwrap_or(DEFAULT_MOTION_TICKS), speed, backwards: false },
            }
        }
        ActionVerb::TurnLeft => Progress::Turn {
            remaining: quarter_ticks,
            end: snap_yaw(heading + FRAC_PI_2),
            step: TURN_RATE * DT,
        },
        ActionVerb::TurnRight => Progress::Turn {
            remaining: quarter_ticks,
            end: snap_yaw(heading - FRAC_PI_2),
            step: -TURN_RATE * DT,
        },
        ActionVerb::NavigateTo => Progress::Plan { target: command.target, speed: WALK_SPEED, limit: n },
        ActionVerb::Wander => Progress::Plan { target: None, speed: WALK_SPEED, limit: n },
        ActionVerb::LookAround => Progress::Sweep { remaining: LOOK_AROUND_TICKS, start: heading, seen: BTreeSet::new() },
        ActionVerb::Grab | ActionVerb::LookAt | ActionVerb::PutBack | ActionVerb::Touch | ActionVerb::Rotate => {
            Progress::Wait { remaining: INTERACTION_TICKS }
        }
    }
}

/// Accepts an activity for `agent`. The world is not changed until ticks run.
pub fn begin_action(
    scene: &mut Scene,
    slots: &mut ActionSlots,
    agent: AgentId,
    activity: Activity,
) -> Result<(), ActionError> {
    if !slots.is_idle(agent) {
        return Err(ActionError::Busy);
    }
    check_preconditions(scene, agent, &activity)?;
    let progress = initial_progress(scene, agent, &activity);
    let mut run = Running { activity, progress, ticks: 0, events: Vec::new() };
    if let Activity::Act { command } = &run.activity {
        let kind = EventKind::ActionStarted { agent, command: command.clone() };
        emit(scene, &mut run, kind);
    }
    slots.slots[agent.index()] = Some(run);
    Ok(())
}

fn emit(scene: &mut Scene, run: &mut Running, kind: EventKind) {
    let event = Event { tick: scene.tick, kind };
    run.events.push(event.clone());
    scene.log.push(event);
}

fn finish(scene: &mut Scene, agent: AgentId, run: &mut Running, outcome: Result<(), ActionError>) -> ActionResult {
    let (status, reason) = match &outcome {
        Ok(()) => (ActionStatus::Succeeded, None),
        Err(e @ (ActionError::TargetRemoved | ActionError::Cancelled)) => {
            (ActionStatus::Interrupted, Some(e.code().to_string()))
        }
        Err(e) => (ActionStatus::Failed, Some(e.code().to_string())),
    };
    if let Activity::Act { .. } = run.activity {
        let kind = EventKind::ActionFinished { agent, status, reason: reason.clone(), ticks: run.ticks };
        emit(scene, run, kind);
    }
    ActionResult { status, reason, ticks_elapsed: run.ticks, events: std::mem::take(&mut run.events) }
}

/// Advances the world one tick: child, then parent, then world updates.
/// Returns the results of actions that completed during this tick.
pub fn tick(scene: &mut Scene, slots: &mut ActionSlots) -> Vec<(AgentId, ActionResult)> {
    scene.tick += 1;
    let mut done = Vec::new();
    let log_start = scene.log.len();
    for agent in [AgentId::Child, AgentId::Parent] {
        let Some(mut run) = slots.slots[agent.index()].take() else { continue };
        run.ticks += 1;
        match step(scene, agent, &mut run) {
            Some(outcome) => {
                sync_held(scene, agent);
                let result = finish(scene, agent, &mut run, outcome);
                done.push((agent, result));
            }
            None => {
                sync_held(scene, agent);
                slots.slots[agent.index()] = Some(run);
            }
        }
    }
    let before = scene.log.len();
    kinetics::update_contacts(scene);
    let world: Vec<Event> = scene.log[before..].to_vec();
    if !world.is_empty() {
        for (_, r) in done.iter_mut() {
            r.events.extend(world.iter().cloned());
        }
        for run in slots.slots.iter_mut().flatten() {
            run.events.extend(world.iter().cloned());
        }
    }
    debug_assert!(scene.log[log_start..].iter().all(|e| e.tick == scene.tick));
    done
}

/// Runs ticks until `agent` is idle, up to `max_ticks`.
pub fn run_until_idle(
    scene: &mut Scene,
    slots: &mut ActionSlots,
    agent: AgentId,
    max_ticks: u32,
) -> Option<ActionResult> {
    for _ in 0..max_ticks {
        for (a, r) in tick(scene, slots) {
            if a == agent {
                return Some(r);
            }
        }
    }
    slots.cancel(scene, agent)
}

/// Begins `activity` and ticks until it finishes.
pub fn perform(
    scene: &mut Scene,
    slots: &mut ActionSlots,
    agent: AgentId,
    activity: Activity,
    max_ticks: u32,
) -> Result<ActionResult, ActionError> {
    begin_action(scene, slots, agent, activity)?;
    Ok(run_until_idle(scene, slots, agent, max_ticks).expect("action was running"))
}

fn sync_held(scene: &mut Scene, agent: AgentId) {
    let a = scene.agent(agent).clone();
    if let Some(id) = a.held {
        let hand = a.hand_point();
        if let Some(inst) = scene.instance_mut(id) {
            inst.position = hand;
        }
    }
}

fn target_gone(scene: &Scene, activity: &Activity) -> bool {
    let id = match activity {
        Activity::PointAt { target } => Some(*target),
        Activity::Act { command } => match command.target {
            Some(Target::Instance(id)) => Some(id),
            _ => None,
        },
        Activity::Say { .. } => None,
    };
    id.is_some_and(|id| !target_exists(scene, id))
}

/// One tick of `run`; `Some` when the activity has finished.
fn step(scene: &mut Scene, agent: AgentId, run: &mut Running) -> Option<Result<(), ActionError>> {
    if target_gone(scene, &run.activity) {
        return Some(Err(ActionError::TargetRemoved));
    }
    let activity = run.activity.clone();
    match activity {
        Activity::PointAt { target } => {
            scene.agent_mut(agent).pointing_at = Some(target);
            emit(scene, run, EventKind::PointAt { agent, instance: target });
            Some(Ok(()))
        }
        Activity::Say { utterance } => {
            emit(scene, run, EventKind::Say { agent, utterance });
            Some(Ok(()))
        }
        Activity::Act { command } => step_command(scene, agent, run, &command),
    }
}

fn set_posture(scene: &mut Scene, run: &mut Running, agent: AgentId, posture: Posture) {
    if scene.agent(agent).posture != posture {
        scene.agent_mut(agent).posture = posture;
        emit(scene, run, EventKind::PostureChanged { agent, posture });
    }
}

fn step_command(
    scene: &mut Scene,
    agent: AgentId,
    run: &mut Running,
    command: &ActionCommand,
) -> Option<Result<(), ActionError>> {
    if run.ticks == 1 {
        let posture = match command.verb {
            ActionVerb::Crawl => Some(Posture::Crawl),
            ActionVerb::Run | ActionVerb::WalkForward | ActionVerb::WalkBackwards | ActionVerb::NavigateTo
            | ActionVerb::Wander => Some(Posture::Stand),
            _ => None,
        };
        if let Some(p) = posture {
            set_posture(scene, run, agent, p);
        }
    }
    let mut progress = std::mem::replace(&mut run.progress, Progress::Instant);
    let outcome = match &mut progress {
        Progress::Move { remaining, speed, backwards } => {
            let a = scene.agent(agent);
            let sign = if *backwards { -1.0 } else { 1.0 };
            let d = sign * *speed * DT;
            let next = [a.position.x + d * a.heading.cos(), a.position.y + d * a.heading.sin()];
            if !walkable_step(scene, [a.position.x, a.position.y], next) {
                Some(Err(ActionError::Blocked))
            } else {
                let m = scene.agent_mut(agent);
                m.position.x = next[0];
                m.position.y = next[1];
                *remaining -= 1;
                (*remaining == 0).then_some(Ok(()))
            }
        }
        Progress::Turn { remaining, end, step } => {
            *remaining -= 1;
            let m = scene.agent_mut(agent);
            if *remaining == 0 {
                m.heading = *end;
                Some(Ok(()))
            } else {
                m.heading = normalize_angle(m.heading + *step);
                None
            }
        }
        Progress::Plan { target, speed, limit } => {
            let planned = match target {
                None => plan_wander(scene, agent),
                Some(t) => plan_navigation(scene, agent, *t),
            };
            match planned {
                Err(e) => Some(Err(e)),
                Ok((waypoints, face)) => {
                    let mut p = Progress::Path { waypoints, speed: *speed, face, limit: *limit };
                    let r = follow_path(scene, agent, run, &mut p);
                    progress = p;
                    r
                }
            }
        }
        Progress::Path { .. } => follow_path(scene, agent, run, &mut progress),
        Progress::Sweep { remaining, start, seen } => {
            let k = LOOK_AROUND_TICKS - *remaining + 1;
            *remaining -= 1;
            let slice = TAU / LOOK_AROUND_TICKS as f64;
            let start = *start;
            let eye = scene.agent(agent).eye_point();
            let mut batch: Vec<InstanceId> = Vec::new();
            for id in gaze_candidates(scene, agent) {
                if seen.contains(&id) {
                    continue;
                }
                let c = kinetics::entity_aabb(scene, id).expect("candidate exists").center();
                let bearing = (c.y - eye.y).atan2(c.x - eye.x);
                let rel = normalize_angle(bearing - start);
                let due = ((rel / slice).ceil() as u32).max(1);
                if due <= k {
                    seen.insert(id);
                    if sensors::line_of_sight(scene, eye, id, agent) {
                        batch.push(id);
                    }
                }
            }
            for id in batch {
                scene.agent_mut(agent).gaze = Some(id);
                emit(scene, run, EventKind::Gaze { agent, target: id });
            }
            let m = scene.agent_mut(agent);
            if *remaining == 0 {
                m.heading = snap_yaw(start);
                Some(Ok(()))
            } else {
                m.heading = normalize_angle(start + k as f64 * slice);
                None
            }
        }
        Progress::Wait { remaining } => {
            *remaining -= 1;
            if *remaining == 0 {
                Some(complete_interaction(scene, agent, run, command))
            } else {
                None
            }
        }
        Progress::Instant => Some(Ok(())),
    };
    run.progress = progress;
    outcome
}

fn gaze_candidates(scene: &Scene, agent: AgentId) -> Vec<InstanceId> {
    let mut ids: Vec<InstanceId> = scene
        .instances
        .iter()
        .filter(|i| i.held_by != Some(agent))
        .map(|i| i.instance_id)
        .collect();
    ids.push(agent.other().instance_id());
    ids.sort_unstable();
    ids
}

fn follow_path(
    scene: &mut Scene,
    agent: AgentId,
    run: &mut Running,
    progress: &mut Progress,
) -> Option<Result<(), ActionError>> {
    let Progress::Path { waypoints, speed, face, limit } = progress else { unreachable!() };
    if let Some(l) = limit {
        if run.ticks > *l {
            return Some(Err(ActionError::Timeout));
        }
    }
    let mut budget = *speed * DT;
    // Snap through waypoints already underfoot without spending the tick.
    while let Some(&w) = waypoints.front() {
        let p = scene.agent(agent).position;
        let (dx, dy) = (w[0] - p.x, w[1] - p.y);
        let d = dx.hypot(dy);
        if d <= 1e-12 {
            waypoints.pop_front();
            continue;
        }
        let m = scene.agent_mut(agent);
        m.heading = snap_yaw(dy.atan2(dx));
        if d <= budget {
            m.position.x = w[0];
            m.position.y = w[1];
            waypoints.pop_front();
            budget = 0.0;
        } else {
            m.position.x += dx / d * budget;
            m.position.y += dy / d * budget;
        }
        break;
    }
    let _ = budget;
    if !waypoints.is_empty() {
        return None;
    }
    if let Some(id) = face {
        if let Some(b) = kinetics::entity_aabb(scene, *id) {
            let c = b.center();
            let p = scene.agent(agent).position;
            if (c.x - p.x).hypot(c.y - p.y) > 1e-12 {
                scene.agent_mut(agent).heading = snap_yaw((c.y - p.y).atan2(c.x - p.x));
            }
        }
    }
    let position = scene.agent(agent).position;
    emit(scene, run, EventKind::Arrival { agent, position });
    Some(Ok(()))
}

/// Cells covered by a resting (non-held) object footprint.
pub fn occupancy(scene: &Scene) -> Vec<bool> {
    let grid = &scene.grid;
    let mut occ = vec![false; grid.cell_count()];
    for inst in scene.instances.iter().filter(|i| i.held_by.is_none()) {
        let fp = aabb_of(inst, scene.class_of(inst)).footprint();
        let lo = grid.cell_at([fp.min[0], fp.min[1]]);
        let hi = grid.cell_at([fp.max[0], fp.max[1]]);
        let (Some(lo), Some(hi)) = (lo, hi) else { continue };
        for y in lo.y..=hi.y {
            for x in lo.x..=hi.x {
                let c = Cell::new(x, y);
                if grid.cell_rect(c).overlaps(&fp, 1e-9) {
                    occ[grid.cell_index(c)] = true;
                }
            }
        }
    }
    occ
}

fn walkable_step(scene: &Scene, from: [f64; 2], to: [f64; 2]) -> bool {
    let inner = inset(scene.grid.bounds(), AGENT_RADIUS);
    if !inner.contains(to) {
        return false;
    }
    let (Some(a), Some(b)) = (scene.grid.cell_at(from), scene.grid.cell_at(to)) else { return false };
    a == b || !occupancy(scene)[scene.grid.cell_index(b)]
}

fn inset(r: Rect, m: f64) -> Rect {
    Rect { min: [r.min[0] + m, r.min[1] + m], max: [r.max[0] - m, r.max[1] - m] }
}

/// Multi-goal 4-connected A* with unit steps; ties broken by (f, cell index).
/// Returns the cell sequence from `start` to the reached goal, inclusive.
pub fn astar(width: usize, depth: usize, blocked: &[bool], start: usize, goals: &[usize]) -> Option<Vec<usize>> {
    if goals.is_empty() {
        return None;
    }
    let xy = |i: usize| ((i % width) as i64, (i / width) as i64);
    let goal_xy: Vec<(i64, i64)> = goals.iter().map(|&g| xy(g)).collect();
    let h = |i: usize| {
        let (x, y) = xy(i);
        goal_xy.iter().map(|&(gx, gy)| (gx - x).abs() + (gy - y).abs()).min().unwrap_or(0) as u64
    };
    let n = width * depth;
    let mut g = vec![u64::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[start] = 0;
    open.push(Reverse((h(start), start)));
    while let Some(Reverse((_, cur))) = open.pop() {
        if closed[cur] {
            continue;
        }
        closed[cur] = true;
        if goals.contains(&cur) {
            let mut path = vec![cur];
            let mut c = cur;
            while c != start {
                c = parent[c];
                path.push(c);
            }
            path.reverse();
            return Some(path);
        }
        let (x, y) = xy(cur);
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= width as i64 || ny >= depth as i64 {
                continue;
            }
            let ni = ny as usize * width + nx as usize;
            if blocked[ni] || closed[ni] {
                continue;
            }
            let ng = g[cur] + 1;
            if ng < g[ni] {
                g[ni] = ng;
                parent[ni] = cur;
                open.push(Reverse((ng + h(ni), ni)));
            }
        }
    }
    None
}

type Plan = (VecDeque<[f64; 2]>, Option<InstanceId>);

fn path_to_goals(scene: &Scene, agent: AgentId, goals: &[usize]) -> Result<VecDeque<[f64; 2]>, ActionError> {
    let grid = &scene.grid;
    let p = scene.agent(agent).position;
    let start = grid.cell_at([p.x, p.y]).ok_or(ActionError::Unreachable)?;
    let occ = occupancy(scene);
    let cells = astar(
        grid.width_cells as usize,
        grid.depth_cells as usize,
        &occ,
        grid.cell_index(start),
        goals,
    )
    .ok_or(ActionError::Unreachable)?;
    Ok(cells.into_iter().map(|i| grid.cell_center(grid.cell_from_index(i))).collect())
}

fn plan_navigation(scene: &Scene, agent: AgentId, target: Target) -> Result<Plan, ActionError> {
    let grid = &scene.grid;
    match target {
        Target::Point(p) => {
            let cell = grid.cell_at(p).ok_or(ActionError::Unreachable)?;
            let inner = inset(grid.bounds(), AGENT_RADIUS);
            if !inner.contains(p) {
                return Err(ActionError::Unreachable);
            }
            let me = scene.agent(agent).position;
            let here = grid.cell_at([me.x, me.y]);
            if here == Some(cell) {
                return Ok((VecDeque::from([p]), None));
            }
            if occupancy(scene)[grid.cell_index(cell)] {
                return Err(ActionError::Unreachable);
            }
            let mut w = path_to_goals(scene, agent, &[grid.cell_index(cell)])?;
            w.push_back(p);
            Ok((w, None))
        }
        Target::Instance(id) => {
            if within_reach(scene, agent, id) {
                return Ok((VecDeque::new(), Some(id)));
            }
            let occ = occupancy(scene);
            let other = AgentId::from_instance_id(id);
            let goals: Vec<usize> = grid
                .cells()
                .filter(|c| !occ[grid.cell_index(*c)])
                .filter(|c| {
                    let cc = grid.cell_center(*c);
                    let from = Vec3::new(cc[0], cc[1], 0.0);
                    let ok = reach_distance(scene, from, id).is_some_and(|d| d <= REACH + REACH_TOL);
                    let on_agent = other.is_some_and(|o| {
                        let op = scene.agent(o).position;
                        grid.cell_at([op.x, op.y]) == Some(*c)
                    });
                    ok && !on_agent
                })
                .map(|c| grid.cell_index(c))
                .collect();
            let w = path_to_goals(scene, agent, &goals)?;
            Ok((w, Some(id)))
        }
    }
}

fn plan_wander(scene: &mut Scene, agent: AgentId) -> Result<Plan, ActionError> {
    for _ in 0..8 {
        let cmd = wander_step(scene, agent);
        if let Some(Target::Point(p)) = cmd.target {
            if let Ok(plan) = plan_navigation(scene, agent, Target::Point(p)) {
                return Ok(plan);
            }
        }
    }
    Err(ActionError::Unreachable)
}

/// Picks a seeded waypoint among unoccupied cells and returns the
/// navigation command toward its center.
pub fn wander_step(scene: &mut Scene, agent: AgentId) -> ActionCommand {
    let mut rng = std::mem::replace(&mut scene.rng, SimRng::new(0));
    let cmd = wander_step_with(scene, agent, &mut rng);
    scene.rng = rng;
    cmd
}

pub fn wander_step_with(scene: &Scene, _agent: AgentId, rng: &mut SimRng) -> ActionCommand {
    let occ = occupancy(scene);
    let free: Vec<Cell> = scene.grid.cells().filter(|c| !occ[scene.grid.cell_index(*c)]).collect();
    let cell = if free.is_empty() {
        scene.grid.cell_from_index(rng.index(scene.grid.cell_count()))
    } else {
        free[rng.index(free.len())]
    };
    ActionCommand::to_point(ActionVerb::NavigateTo, scene.grid.cell_center(cell))
}

fn complete_interaction(
    scene: &mut Scene,
    agent: AgentId,
    run: &mut Running,
    command: &ActionCommand,
) -> Result<(), ActionError> {
    // State may have moved on since the action was accepted.
    check_preconditions(scene, agent, &Activity::act(command.clone()))?;
    let tid = match command.target {
        Some(Target::Instance(id)) => Some(id),
        _ => None,
    };
    match command.verb {
        ActionVerb::Grab => {
            let id = tid.expect("arity checked");
            let resting_on = scene
                .instances
                .iter()
                .any(|i| i.supported_by == Some(id) || i.contained_in == Some(id));
            if resting_on {
                return Err(ActionError::Blocked);
            }
            let hand = scene.agent(agent).hand_point();
            let inst = scene.instance_mut(id).expect("checked");
            inst.held_by = Some(agent);
            inst.position = hand;
            inst.supported_by = None;
            inst.contained_in = None;
            scene.agent_mut(agent).held = Some(id);
            emit(scene, run, EventKind::Grab { agent, instance: id });
            kinetics::settle(scene);
            Ok(())
        }
        ActionVerb::LookAt => {
            let id = tid.expect("arity checked");
            scene.agent_mut(agent).gaze = Some(id);
            emit(scene, run, EventKind::Gaze { agent, target: id });
            Ok(())
        }
        ActionVerb::Touch => {
            let id = tid.expect("arity checked");
            scene.agent_mut(agent).touched = Some(id);
            emit(scene, run, EventKind::Touch { agent, instance: id });
            Ok(())
        }
        ActionVerb::Rotate => {
            let id = tid.expect("arity checked");
            rotate_instance(scene, id)?;
            let yaw = scene.instance(id).expect("exists").yaw;
            emit(scene, run, EventKind::Rotate { agent, instance: id, yaw });
            Ok(())
        }
        ActionVerb::PutBack => {
            let held = scene.agent(agent).held.expect("checked");
            match command.target {
                Some(Target::Instance(id)) if AgentId::from_instance_id(id).is_some() => {
                    let to = AgentId::from_instance_id(id).expect("agent id");
                    if scene.agent(to).held.is_some() {
                        return Err(ActionError::HandFull);
                    }
                    scene.agent_mut(agent).held = None;
                    scene.agent_mut(to).held = Some(held);
                    scene.instance_mut(held).expect("held exists").held_by = Some(to);
                    sync_held(scene, to);
                    emit(scene, run, EventKind::Handover { from: agent, to, instance: held });
                    return Ok(());
                }
                Some(Target::Instance(id)) => {
                    let (pos, yaw) = plan_drop_onto(scene, held, id).ok_or(ActionError::NoRoom)?;
                    release_at(scene, agent, held, pos, yaw);
                }
                Some(Target::Point(p)) => {
                    let pos = plan_drop_at_point(scene, agent, held, p)?;
                    let yaw = scene.instance(held).expect("held").yaw;
                    release_at(scene, agent, held, pos, yaw);
                }
                None => {
                    let pos = plan_put_back(scene, held).ok_or(ActionError::NoRoom)?;
                    let yaw = scene.instance(held).expect("held").yaw;
                    release_at(scene, agent, held, pos, yaw);
                }
            }
            let inst = scene.instance(held).expect("held");
            let (supported_by, contained_in) = (inst.supported_by, inst.contained_in);
            emit(
                scene,
                run,
                EventKind::Release { agent, instance: held, supported_by, contained_in },
            );
            Ok(())
        }
        _ => Ok(()),
    }
}

fn rotate_instance(scene: &mut Scene, id: InstanceId) -> Result<(), ActionError> {
    let inst = scene.instance(id).expect("exists").clone();
    let new_yaw = snap_yaw(inst.yaw + FRAC_PI_2);
    if inst.held_by.is_none() {
        if scene.instances.iter().any(|i| i.supported_by == Some(id) || i.contained_in == Some(id)) {
            return Err(ActionError::Blocked);
        }
        let mut trial = scene.clone();
        trial.instance_mut(id).expect("exists").yaw = new_yaw;
        kinetics::settle(&mut trial);
        if !resting_ok(&trial, id) {
            return Err(ActionError::Blocked);
        }
    }
    scene.instance_mut(id).expect("exists").yaw = new_yaw;
    kinetics::settle(scene);
    Ok(())
}

fn release_at(scene: &mut Scene, agent: AgentId, id: InstanceId, pos: Vec3, yaw: f64) {
    scene.agent_mut(agent).held = None;
    let inst = scene.instance_mut(id).expect("held exists");
    inst.held_by = None;
    inst.position = pos;
    inst.yaw = yaw;
    kinetics::settle(scene);
}

/// Whether `id`, after settling, sits legally: inside the room, piercing no
/// solid, and clear of every floor-level neighbour by the separation buffer.
pub fn resting_ok(scene: &Scene, id: InstanceId) -> bool {
    let inst = scene.instance(id).expect("exists");
    let class = scene.class_of(inst);
    let ab = aabb_of(inst, class);
    if !scene.grid.bounds().contains_rect(&ab.footprint(), 1e-9) {
        return false;
    }
    for other in scene.instances.iter().filter(|o| o.instance_id != id && o.held_by.is_none()) {
        let ob = aabb_of(other, scene.class_of(other));
        let related = inst.supported_by == Some(other.instance_id)
            || inst.contained_in == Some(other.instance_id)
            || other.supported_by == Some(id)
            || other.contained_in == Some(id);
        if !related && ab.overlaps(&ob, 1e-9) {
            return false;
        }
        if inst.supported_by.is_none()
            && other.supported_by.is_none()
            && !ab.z_disjoint(&ob)
            && ab.footprint().gap(&ob.footprint()) < SEPARATION_BUFFER - 1e-9
        {
            return false;
        }
    }
    true
}

/// Simulates releasing `held` at `pos`/`yaw`; returns the settled scene.
fn trial_release(scene: &Scene, held: InstanceId, pos: Vec3, yaw: f64) -> Scene {
    let mut trial = scene.clone();
    trial.log.clear();
    for a in &mut trial.agents {
        if a.held == Some(held) {
            a.held = None;
        }
    }
    let inst = trial.instance_mut(held).expect("held exists");
    inst.held_by = None;
    inst.position = pos;
    inst.yaw = yaw;
    kinetics::settle(&mut trial);
    trial
}

/// A spot where `held`, dropped from above, ends up on or in `ground`.
pub fn plan_drop_onto(scene: &Scene, held: InstanceId, ground: InstanceId) -> Option<(Vec3, f64)> {
    let g = scene.instance(ground)?;
    let gclass = scene.class_of(g);
    let class = scene.class_of(scene.instance(held)?).clone();
    let gbox = aabb_of(g, gclass);
    let base_yaw = scene.instance(held)?.yaw;
    let cavity = kinetics::cavity_of(g, gclass);
    let area = cavity.map_or(gbox.footprint(), |c| c.footprint());
    let drop_z = gbox.max.z + DROP_HEIGHT;
    for yaw in [base_yaw, snap_yaw(base_yaw + FRAC_PI_2)] {
        let (hx, hy) = crate::geometry::rotated_half_extents(&class, yaw);
        let (lo_x, hi_x) = (area.min[0] + hx, area.max[0] - hx);
        let (lo_y, hi_y) = (area.min[1] + hy, area.max[1] - hy);
        if lo_x > hi_x + 1e-12 || lo_y > hi_y + 1e-12 {
            continue;
        }
        for (x, y) in candidate_spots(lo_x, hi_x.max(lo_x), lo_y, hi_y.max(lo_y), area.center()) {
            let pos = Vec3::new(x, y, drop_z);
            let trial = trial_release(scene, held, pos, yaw);
            let t = trial.instance(held).expect("held");
            let landed = if cavity.is_some() {
                t.contained_in == Some(ground)
            } else {
                t.supported_by == Some(ground)
            };
            if landed && resting_ok(&trial, held) {
                return Some((pos, yaw));
            }
        }
    }
    None
}

/// Center first, then a 5×5 lattice over the feasible rectangle ordered by
/// distance from the center.
fn candidate_spots(lo_x: f64, hi_x: f64, lo_y: f64, hi_y: f64, center: [f64; 2]) -> Vec<(f64, f64)> {
    let c = (center[0].clamp(lo_x, hi_x), center[1].clamp(lo_y, hi_y));
    let mut out = vec![c];
    let mut lattice = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            let x = lo_x + (hi_x - lo_x) * i as f64 / 4.0;
            let y = lo_y + (hi_y - lo_y) * j as f64 / 4.0;
            lattice.push((x, y));
        }
    }
    lattice.sort_by(|a, b| {
        let da = (a.0 - c.0).hypot(a.1 - c.1);
        let db = (b.0 - c.0).hypot(b.1 - c.1);
        da.total_cmp(&db).then(a.0.total_cmp(&b.0)).then(a.1.total_cmp(&b.1))
    });
    out.extend(lattice);
    out.dedup();
    out
}

/// Release at a floor point: start at hand height and lower below any solid
/// the object would pierce, then let it settle.
fn plan_drop_at_point(scene: &Scene, agent: AgentId, held: InstanceId, p: [f64; 2]) -> Result<Vec3, ActionError> {
    let inst = scene.instance(held).expect("held");
    let class = scene.class_of(inst);
    let h = class.extents[2];
    let mut z = scene.agent(agent).hand_point().z;
    for _ in 0..16 {
        let ab = aabb_at(class, Vec3::new(p[0], p[1], z), inst.yaw);
        let mut lowest: Option<f64> = None;
        for o in scene.instances.iter().filter(|o| o.held_by.is_none()) {
            let ob = aabb_of(o, scene.class_of(o));
            if ab.overlaps(&ob, 1e-9) {
                let below = ob.min.z - h;
                lowest = Some(lowest.map_or(below, |l: f64| l.min(below)));
            }
        }
        match lowest {
            None => {
                let pos = Vec3::new(p[0], p[1], z);
                let trial = trial_release(scene, held, pos, inst.yaw);
                return if resting_ok(&trial, held) { Ok(pos) } else { Err(ActionError::Blocked) };
            }
            Some(l) if l < -1e-9 => return Err(ActionError::Blocked),
            Some(l) => z = l.max(0.0),
        }
    }
    Err(ActionError::Blocked)
}

/// Spawn position if it is still legal, else the nearest legal floor spot
/// along a square spiral of 0.25-unit steps.
pub fn plan_put_back(scene: &Scene, held: InstanceId) -> Option<Vec3> {
    let inst = scene.instance(held)?;
    let s = inst.spawn_position;
    let bounds = scene.grid.bounds();
    let max_ring = ((bounds.max[0] - bounds.min[0]).max(bounds.max[1] - bounds.min[1]) / 0.25).ceil() as i64;
    for (dx, dy) in spiral_offsets(max_ring) {
        let pos = Vec3::new(s.x + 0.25 * dx as f64, s.y + 0.25 * dy as f64, s.z);
        let trial = trial_release(scene, held, pos, inst.yaw);
        let t = trial.instance(held).expect("held");
        if t.position.z == s.z && resting_ok(&trial, held) {
            return Some(pos);
        }
    }
    None
}

/// Lattice offsets ordered by ring, then Euclidean length, then (dy, dx).
pub fn spiral_offsets(max_ring: i64) -> Vec<(i64, i64)> {
    let mut out = vec![(0, 0)];
    for r in 1..=max_ring {
        let mut ring = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs().max(dy.abs()) == r {
                    ring.push((dx, dy));
                }
            }
        }
        ring.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
        out.extend(ring);
    }
    out
}

/// Explicit put-back helper: releases the held object at its spawn spot.
pub fn put_back(scene: &mut Scene, slots: &mut ActionSlots, agent: AgentId) -> Result<ActionResult, ActionError> {
    perform(scene, slots, agent, Activity::act(ActionCommand::new(ActionVerb::PutBack)), 1_000)
}

/// Heading difference helper used by tests and lessons.
pub fn heading_error(a: f64, b: f64) -> f64 {
    angle_diff(a, b).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::world::GridSpec;
    use std::sync::Arc;

    fn room() -> Scene {
        let mut s = Scene::empty(Arc::new(Catalog::desk()), GridSpec::room(10, 10), 5);
        s.agents[0].position = Vec3::new(2.5, 2.5, 0.0);
        s.agents[1].position = Vec3::new(8.5, 8.5, 0.0);
        s
    }

    fn spawn(s: &mut Scene, class_id: &str, x: i64, y: i64) -> InstanceId {
        let c = s.catalog.get(class_id).unwrap().clone();
        s.spawn_object(&c, Cell::new(x, y)).unwrap()
    }

    fn act(s: &mut Scene, slots: &mut ActionSlots, agent: AgentId, cmd: ActionCommand) -> ActionResult {
        perform(s, slots, agent, Activity::act(cmd), 5_000).unwrap()
    }

    #[test]
    fn vocabulary_is_closed() {
        assert_eq!(ActionVerb::ALL.len(), 14);
        for v in ActionVerb::ALL {
            assert!(ActionVerb::NAVIGATION.contains(&v) ^ ActionVerb::INTERACTION.contains(&v));
        }
    }

    #[test]
    fn walk_forward_one_unit() {
        let mut s = room();
        let mut slots = ActionSlots::new();
        let r = act(&mut s, &mut slots, AgentId::Child, ActionCommand::new(ActionVerb::WalkForward));
        assert!(r.succeeded());
        assert_eq!(r.ticks_elapsed, 20);
        assert!((s.agent(AgentId::Child).position.x - 3.5).abs() < 1e-9);
    }

    #[test]
    fn four_left_turns_restore_heading() {
        let mut s = room();
        let mut slots = ActionSlots::new();
        let r = act(&mut s, &mut slots, AgentId::Child, ActionCommand::new(ActionVerb::TurnLeft));
        assert_eq!(r.ticks_elapsed, 10);
        assert_eq!(s.agent(AgentId::Child).heading, FRAC_PI_2);
        for _ in 0..3 {
            act(&mut s, &mut slots, AgentId::Child, ActionCommand::new(ActionVerb::TurnLeft));
        }
        assert_eq!(s.agent(AgentId::Child).heading, 0.0);
    }

    #[test]
    fn grab_preconditions() {
        let mut s = room();
        let mut slots = ActionSlots::new();
        let ball = spawn(&mut s, "red_ball", 3, 2);
        let table = spawn(&mut s, "table", 2, 4);
        // Ball center 1.0 away, footprint edge 0.9.
        begin_action(&mut s, &mut slots, AgentId::Child, Activity::act(ActionCommand::at(ActionVerb::Grab, ball)))
            .unwrap();
        assert_eq!(
            begin_action(&mut s, &mut slots, AgentId::Child, Activity::act(ActionCommand::new(ActionVerb::TurnLeft))),
            Err(ActionError::Busy)
        );
        let r = run_until_idle(&mut s, &mut slots, AgentId::Child, 100).unwrap();
        assert!(r.succeeded());
        assert_eq!(s.instance(ball).unwrap().held_by, Some(AgentId::Child));
        let err = begin_action(
            &mut s,
            &mut slots,
            AgentId::Parent,
            Activity::act(ActionCommand::at(ActionVerb::Grab, table)),
        );
        assert_eq!(err, Err(ActionError::NotInteractable));
    }

    #[test]
    fn put_back_restores_spawn_and_second_is_hand_empty() {
        let mut s = room();
        let mut slots = ActionSlots::new();
        let ball = spawn(&mut s, "red_ball", 3, 2);
        act(&mut s, &mut slots, AgentId::Child, ActionCommand::at(ActionVerb::Grab, ball));
        act(&mut s, &mut slots, AgentId::Child, ActionCommand::to_point(ActionVerb::NavigateTo, [7.5, 7.5]));
        let r = put_back(&mut s, &mut slots, AgentId::Child).unwrap();
        assert!(r.succeeded(), "{r:?}");
        let p = s.instance(ball).unwrap().position;
        assert_eq!((p.x, p.y, p.z), (3.5, 2.5, 0.0));
        assert_eq!(put_back(&mut s, &mut slots, AgentId::Child), Err(ActionError::HandEmpty));
    }

    #[test]
    fn held_object_tracks_hand() {
        let mut s = room();
        let mut slots = ActionSlots::new();
        let ball = spawn(&mut s, "red_ball", 3, 2);
        act(&mut s, &mut slots, AgentId::Child, ActionCommand::at(ActionVerb::Grab, ball));
        begin_action(&mut s, &mut slots, AgentId::Child, Activity::act(ActionCommand::new(ActionVerb::TurnLeft)))
            .unwrap();
        while !slots.is_idle(AgentId::Child) {
            tick(&mut s, &mut slots);
            let hand = s.agent(AgentId::Child).hand_point();
            assert_eq!(s.instance(ball).unwrap().position, hand);
        }
    }

    #[test]
    fn navigate_routes_around_wall() {
        let mut s = room();
        // Wall of shelves along x = 4 from y = 0..7.
        for y in 0..8 {
            let c = s.catalog.get("shelf").unwrap().clone();
            s.insert_instance(&c.class_id, Vec3::new(4.5, y as f64 + 0.5, 0.0), FRAC_PI_2).unwrap();
        }
        kinetics::settle(&mut s);
        let mut slots = ActionSlots::new();
        let r = act(&mut s, &mut slots, AgentId::Child, ActionCommand::to_point(ActionVerb::NavigateTo, [6.3, 2.2]));
        assert!(r.succeeded(), "{r:?}");
        let p = s.agent(AgentId::Child).position;
        assert!((p.x - 6.3).hypot(p.y - 2.2) <= ARRIVAL_TOLERANCE);
        // Detour: at least up to y = 8 and back, 4 cells right.
        assert!(r.ticks_elapsed >= 20 * (6 + 6 + 4));
    }

    #[test]
    fn astar_matches_bfs_length() {
        let (w, d) = (6, 5);
        let mut blocked = vec![false; w * d];
        for y in 0..4 {
            blocked[y * w + 2] = true;
        }
        let path = astar(w, d, &blocked, 0, &[5]).unwrap();
        // BFS oracle.
        let mut dist = vec![usize::MAX; w * d];
        let mut q = VecDeque::from([0usize]);
        dist[0] = 0;
        while let Some(c) = q.pop_front() {
            let (x, y) = ((c % w) as i64, (c / w) as i64);
            for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= d as i64 {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if !blocked[n] && dist[n] == usize::MAX {
                    dist[n] = dist[c] + 1;
                    q.push_back(n);
                }
            }
        }
        assert_eq!(path.len() - 1, dist[5]);
    }

    #[test]
    fn wander_is_seeded_and_covers_cells() {
        let mut a = room();
        let mut b = room();
        let mut seen = BTreeSet::new();
        for _ in 0..100 {
            let ca = wander_step(&mut a, AgentId::Child);
            let cb = wander_step(&mut b, AgentId::Child);
            assert_eq!(ca, cb);
            let Some(Target::Point(p)) = ca.target else { panic!() };
            assert!(a.grid.bounds().contains(p));
            seen.insert(a.grid.cell_at(p).unwrap());
        }
        assert!(seen.len() >= 10);
    }

    #[test]
    fn point_and_say_are_parent_only() {
        let mut s = room();
        let mut slots = ActionSlots::new();
        let ball = spawn(&mut s, "red_ball", 3, 2);
        assert_eq!(
            begin_action(&mut s, &mut slots, AgentId::Child, Activity::PointAt { target: ball }),
            Err(ActionError::NotPermitted)
        );
        let r = perform(&mut s, &mut slots, AgentId::Parent, Activity::PointAt { target: ball }, 5).unwrap();
        assert!(r.succeeded());
        assert_eq!(s.agent(AgentId::Parent).pointing_at, Some(ball));
        assert_eq!(s.agent(AgentId::Child).pointing_at, None);
    }

    #[test]
    fn arity_rules() {
        assert!(ActionCommand::new(ActionVerb::Grab).check_arity().is_err());
        assert!(ActionCommand::at(ActionVerb::TurnLeft, 4).check_arity().is_err());
        assert!(ActionCommand::new(ActionVerb::Run).check_arity().is_ok());
        assert!(ActionCommand::new(ActionVerb::WalkForward).for_ticks(0).check_arity().is_err());
    }

    #[test]
    fn look_around_sweeps_and_restores_heading() {
        let mut s = room();
        let mut slots = ActionSlots::new();
        let ball = spawn(&mut s, "red_ball", 2, 5);
        let r = act(&mut s, &mut slots, AgentId::Child, ActionCommand::new(ActionVerb::LookAround));
        assert_eq!(r.ticks_elapsed, LOOK_AROUND_TICKS);
        assert_eq!(s.agent(AgentId::Child).heading, 0.0);
        assert!(r
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::Gaze { target, .. } if target == ball)));
    }

    #[test]
    fn handover_between_agents() {
        let mut s = room();
        s.agents[1].position = Vec3::new(2.5, 3.5, 0.0);
        let mut slots = ActionSlots::new();
        let ball = spawn(&mut s, "red_ball", 3, 2);
        act(&mut s, &mut slots, AgentId::Child, ActionCommand::at(ActionVerb::Grab, ball));
        let r = act(&mut s, &mut slots, AgentId::Child, ActionCommand::at(ActionVerb::PutBack, PARENT_ID));
        assert!(r.succeeded(), "{r:?}");
        assert_eq!(s.agent(AgentId::Parent).held, Some(ball));
        assert_eq!(s.instance(ball).unwrap().held_by, Some(AgentId::Parent));
        assert_eq!(s.instance(ball).unwrap().position, s.agent(AgentId::Parent).hand_point());
    }
}
