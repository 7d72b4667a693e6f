use std::collections::BTreeMap;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{EpisodeFooter, EpisodeHeader, ProtoError, Push, Verb};
use crate::agents::{self, ActionCommand, ActionSlots, ActionVerb, Activity, AgentId, Target};
use crate::catalog::Catalog;
use crate::events::{Event, EventKind};
use crate::kinetics::{eval_predicate, Relation};
use crate::language::ComplexityLevel;
use crate::lessons::{self, Bindings, ConceptId, LessonScript};
use crate::sensors::{self, CameraSpec, FrameSet};
use crate::tasks::{self, TaskKind, TaskSpec};
use crate::world::{generate_scene, GridSpec, InstanceId, Scene};

/// Largest Step a single request may ask for.
pub const MAX_STEP: u64 = 100_000;
pub const DEFAULT_ACT_MAX_TICKS: u32 = 5_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n")]
    pub n_interactable: usize,
    #[serde(default)]
    pub grid: GridSpec,
}

fn default_n() -> usize {
    10
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { seed: 0, n_interactable: default_n(), grid: GridSpec::default() }
    }
}

#[derive(Clone, Debug)]
struct Subscription {
    frames_every_n_ticks: Option<u64>,
    cameras: Vec<CameraSpec>,
}

/// One isolated simulation: scene, action slots, issued tasks and the
/// episode log.
#[derive(Clone, Debug)]
pub struct Session {
    scene: Scene,
    slots: ActionSlots,
    config: SessionConfig,
    tasks: BTreeMap<String, TaskSpec>,
    episode: Vec<Event>,
    pushed: usize,
    subscription: Option<Subscription>,
    frame_queue: Vec<(u64, Vec<FrameSet>)>,
}

fn parse<T: DeserializeOwned>(payload: &Value) -> Result<T, ProtoError> {
    let v = if payload.is_null() { json!({}) } else { payload.clone() };
    serde_json::from_value(v).map_err(|e| ProtoError::bad_request(format!("payload: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResetPayload {
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActPayload {
    agent: AgentId,
    verb: ActionVerb,
    #[serde(default)]
    target: Option<Target>,
    #[serde(default)]
    duration_ticks: Option<u32>,
    #[serde(default = "yes")]
    wait: bool,
    #[serde(default)]
    max_ticks: Option<u32>,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepPayload {
    #[serde(default)]
    n: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservePayload {
    #[serde(default)]
    cameras: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LessonPayload {
    #[serde(default)]
    concept: Option<ConceptId>,
    #[serde(default)]
    level: Option<ComplexityLevel>,
    #[serde(default)]
    bindings: Option<Bindings>,
    /// Stage the scene first (quantifiers and take_out).
    #[serde(default)]
    arrange: bool,
    #[serde(default)]
    script: Option<LessonScript>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskPayload {
    kind: TaskKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerPayload {
    task_id: String,
    #[serde(default)]
    answer: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredicatePayload {
    relation: Relation,
    a: InstanceId,
    b: InstanceId,
    #[serde(default)]
    observer: Option<AgentId>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SubscribePayload {
    #[serde(default)]
    frames_every_n_ticks: Option<u64>,
}

fn encode_frame(f: &FrameSet) -> Value {
    json!({
        "camera_id": f.camera_id,
        "tick": f.tick,
        "width": f.width,
        "height": f.height,
        "depth": B64.encode(sensors::depth_plane(f)),
        "instance": B64.encode(sensors::instance_plane(f)),
        "normal": B64.encode(sensors::normal_plane(f)),
        "rgb": B64.encode(sensors::rgb_plane(f)),
    })
}

fn ui_cameras(grid: &GridSpec) -> Vec<CameraSpec> {
    sensors::default_cameras(grid)
        .map(|c| c.with_resolution(sensors::UI_RESOLUTION[0], sensors::UI_RESOLUTION[1]))
        .to_vec()
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

impl Session {
    pub fn create(catalog: Arc<Catalog>, config: SessionConfig) -> Result<Session, ProtoError> {
        let mut scene = generate_scene(catalog, config.grid, config.n_interactable, config.seed)?;
        let episode = scene.drain_log();
        let mut s = Session {
            scene,
            slots: ActionSlots::new(),
            config,
            tasks: BTreeMap::new(),
            episode,
            pushed: 0,
            subscription: None,
            frame_queue: Vec::new(),
        };
        let hash = s.scene.state_hash_hex();
        s.record(EventKind::StateHash { hash });
        Ok(s)
    }

    pub fn from_header(catalog: Arc<Catalog>, header: &EpisodeHeader) -> Result<Session, ProtoError> {
        if catalog.version != header.catalog_version {
            return Err(ProtoError::new(
                "CatalogMismatch",
                format!("episode uses catalog {} but {} is loaded", header.catalog_version, catalog.version),
            ));
        }
        let config = SessionConfig { seed: header.seed, n_interactable: header.n_interactable, grid: header.grid };
        Session::create(catalog, config)
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn episode(&self) -> &[Event] {
        &self.episode
    }

    pub fn state_hash_hex(&self) -> String {
        self.scene.state_hash_hex()
    }

    pub fn header(&self) -> EpisodeHeader {
        EpisodeHeader {
            seed: self.config.seed,
            catalog_version: self.scene.catalog.version.clone(),
            grid: self.config.grid,
            n_interactable: self.config.n_interactable,
            start_tick: 0,
        }
    }

    /// Header line, one line per event, footer line.
    pub fn episode_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&json!({ "header": self.header() })).expect("header") + "\n";
        for e in &self.episode {
            out += &serde_json::to_string(e).expect("event");
            out.push('\n');
        }
        let footer = EpisodeFooter { final_hash: self.state_hash_hex() };
        out += &serde_json::to_string(&json!({ "footer": footer })).expect("footer");
        out.push('\n');
        out
    }

    fn record(&mut self, kind: EventKind) {
        self.episode.push(Event { tick: self.scene.tick, kind });
    }

    fn flush_scene_log(&mut self) {
        let drained = self.scene.drain_log();
        self.episode.extend(drained);
    }

    /// Executes one request. Mutating verbs are recorded as a Command event
    /// followed by the events they cause and the resulting state hash.
    pub fn handle(&mut self, verb: Verb, payload: &Value) -> Result<Value, ProtoError> {
        if verb == Verb::CreateSession {
            return Err(ProtoError::new("SessionExists", "this connection already has a session"));
        }
        if !verb.is_recorded() {
            return self.dispatch(verb, payload);
        }
        let body = if payload.is_null() { json!({}) } else { payload.clone() };
        self.record(EventKind::Command { verb: verb.name().to_string(), body });
        let result = self.dispatch(verb, payload);
        self.flush_scene_log();
        let hash = self.scene.state_hash_hex();
        self.record(EventKind::StateHash { hash });
        result
    }

    fn dispatch(&mut self, verb: Verb, payload: &Value) -> Result<Value, ProtoError> {
        match verb {
            Verb::CreateSession => unreachable!("handled by the caller"),
            Verb::Reset => self.reset(parse(payload)?),
            Verb::Act => self.act(parse(payload)?),
            Verb::Step => self.step(parse(payload)?),
            Verb::Observe => self.observe(parse(payload)?),
            Verb::CompileLesson => {
                let script = self.lesson_script(parse(payload)?)?;
                Ok(json!({ "script": script }))
            }
            Verb::RunLesson => self.run_lesson(parse(payload)?),
            Verb::GenerateTask => self.generate_task(parse(payload)?),
            Verb::SubmitAnswer => self.submit(parse(payload)?),
            Verb::QueryPredicate => {
                let p: PredicatePayload = parse(payload)?;
                let value = eval_predicate(&self.scene, p.relation, p.a, p.b, p.observer)?;
                Ok(json!({ "value": value }))
            }
            Verb::GetScene => Ok(json!({
                "tick": self.scene.tick,
                "hash": self.scene.state_hash_hex(),
                "scene": to_value(&self.scene.metadata()),
            })),
            Verb::Subscribe => {
                let p: SubscribePayload = parse(payload)?;
                if p.frames_every_n_ticks == Some(0) {
                    return Err(ProtoError::bad_request("frames_every_n_ticks must be at least 1"));
                }
                self.subscription = Some(Subscription {
                    frames_every_n_ticks: p.frames_every_n_ticks,
                    cameras: ui_cameras(&self.scene.grid),
                });
                self.pushed = self.episode.len();
                Ok(json!({ "subscribed": true }))
            }
        }
    }

    fn reset(&mut self, p: ResetPayload) -> Result<Value, ProtoError> {
        let mut fresh = crate::world::reset(&self.scene, p.seed)?;
        // The session clock keeps running so the episode stays tick-ordered.
        let tick = self.scene.tick;
        fresh.tick = tick;
        for e in &mut fresh.log {
            e.tick = tick;
        }
        self.scene = fresh;
        self.slots = ActionSlots::new();
        self.scene.emit(EventKind::Reset { seed: p.seed });
        Ok(json!({ "tick": tick, "hash": self.scene.state_hash_hex() }))
    }

    fn act(&mut self, p: ActPayload) -> Result<Value, ProtoError> {
        let command = ActionCommand { verb: p.verb, target: p.target, duration_ticks: p.duration_ticks };
        agents::begin_action(&mut self.scene, &mut self.slots, p.agent, Activity::act(command))?;
        if !p.wait {
            return Ok(json!({ "accepted": true, "tick": self.scene.tick }));
        }
        let limit = p.max_ticks.unwrap_or(DEFAULT_ACT_MAX_TICKS);
        let mut finished = None;
        for _ in 0..limit {
            let done = agents::tick(&mut self.scene, &mut self.slots);
            self.capture_if_due();
            if let Some((_, r)) = done.into_iter().find(|(a, _)| *a == p.agent) {
                finished = Some(r);
                break;
            }
        }
        let r = match finished {
            Some(r) => r,
            None => self.slots.cancel(&mut self.scene, p.agent).expect("action was running"),
        };
        Ok(json!({
            "status": r.status,
            "reason": r.reason,
            "ticks_elapsed": r.ticks_elapsed,
            "events": r.events,
        }))
    }

    fn capture_if_due(&mut self) {
        let Some(sub) = &self.subscription else { return };
        let Some(n) = sub.frames_every_n_ticks else { return };
        if self.scene.tick.is_multiple_of(n) {
            let frames = sensors::render_all(&self.scene, &sub.cameras);
            self.frame_queue.push((self.scene.tick, frames));
        }
    }

    fn step(&mut self, p: StepPayload) -> Result<Value, ProtoError> {
        if p.n > MAX_STEP {
            return Err(ProtoError::bad_request(format!("n must be at most {MAX_STEP}")));
        }
        let mut finished = Vec::new();
        for _ in 0..p.n {
            for (agent, r) in agents::tick(&mut self.scene, &mut self.slots) {
                finished.push(json!({
                    "agent": agent,
                    "status": r.status,
                    "reason": r.reason,
                    "ticks_elapsed": r.ticks_elapsed,
                }));
            }
            self.capture_if_due();
        }
        Ok(json!({ "tick": self.scene.tick, "finished": finished }))
    }

    fn observe(&mut self, p: ObservePayload) -> Result<Value, ProtoError> {
        let mut cams = ui_cameras(&self.scene.grid);
        if let Some(ids) = &p.cameras {
            for id in ids {
                if !cams.iter().any(|c| &c.camera_id == id) {
                    return Err(ProtoError::new("UnknownCamera", format!("no camera `{id}`")));
                }
            }
            cams.retain(|c| ids.contains(&c.camera_id));
        }
        let frames = sensors::render_all(&self.scene, &cams);
        Ok(json!({ "tick": self.scene.tick, "frames": frames.iter().map(encode_frame).collect::<Vec<_>>() }))
    }

    fn lesson_script(&mut self, p: LessonPayload) -> Result<LessonScript, ProtoError> {
        if let Some(script) = p.script {
            return Ok(script);
        }
        let concept = p.concept.ok_or_else(|| ProtoError::bad_request("concept or script is required"))?;
        let level = p.level.unwrap_or(ComplexityLevel::L2);
        let mut bindings = p.bindings;
        if p.arrange {
            let mut rng = self.scene.rng.clone();
            let staged = match concept {
                ConceptId::Only | ConceptId::All => lessons::arrange_quantifier_scene(&mut self.scene, &concept, &mut rng)?,
                ConceptId::TakeOut => lessons::stage_contained(&mut self.scene, &mut rng)?,
                _ => return Err(ProtoError::bad_request(format!("{concept} needs no arrangement"))),
            };
            self.scene.rng = rng;
            bindings = Some(staged);
        }
        match bindings {
            Some(b) => Ok(lessons::compile_lesson(&self.scene, &concept, &b, level)?),
            None => {
                let mut rng = self.scene.rng.clone();
                let script = lessons::plan_lesson(&self.scene, &concept, level, &mut rng, AgentId::Parent, 50);
                self.scene.rng = rng;
                Ok(script?)
            }
        }
    }

    fn run_lesson(&mut self, p: LessonPayload) -> Result<Value, ProtoError> {
        if !self.slots.all_idle() {
            return Err(ProtoError::new("Busy", "an action is still running"));
        }
        let script = self.lesson_script(p)?;
        let out = lessons::run_lesson(&mut self.scene, &script);
        let utterances: Vec<Value> = out
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Say { utterance, .. } => Some(to_value(utterance)),
                _ => None,
            })
            .collect();
        Ok(json!({
            "success": out.success,
            "ticks": out.ticks,
            "utterances": utterances,
            "script": script,
        }))
    }

    fn generate_task(&mut self, p: TaskPayload) -> Result<Value, ProtoError> {
        let mut rng = self.scene.rng.clone();
        let task = tasks::generate_task(&self.scene, p.kind, &mut rng);
        self.scene.rng = rng;
        let task = task?;
        self.scene.emit(EventKind::TaskIssued { task_id: task.task_id.clone() });
        let v = to_value(&task);
        self.tasks.insert(task.task_id.clone(), task);
        Ok(json!({ "task": v }))
    }

    fn submit(&mut self, p: AnswerPayload) -> Result<Value, ProtoError> {
        let task = self
            .tasks
            .get(&p.task_id)
            .ok_or_else(|| ProtoError::new("UnknownTask", format!("no task `{}`", p.task_id)))?;
        let verdict = match task.kind {
            TaskKind::Demonstrate => tasks::evaluate_demonstration(task, &self.scene)?,
            _ => {
                let answer = p.answer.ok_or_else(|| ProtoError::bad_request("answer is required"))?;
                tasks::grade_answer(task, &answer)?
            }
        };
        self.scene.emit(EventKind::Verdict {
            task_id: verdict.task_id.clone(),
            passed: verdict.passed,
            detail: verdict.detail.clone(),
            ticks_used: verdict.ticks_used,
        });
        Ok(to_value(&verdict))
    }

    /// Pending push messages for a subscribed connection.
    pub fn take_pushes(&mut self) -> Vec<Push> {
        if self.subscription.is_none() {
            self.frame_queue.clear();
            return Vec::new();
        }
        let mut out = Vec::new();
        if self.pushed < self.episode.len() {
            out.push(Push::Events { events: self.episode[self.pushed..].to_vec() });
            self.pushed = self.episode.len();
        }
        for (tick, frames) in self.frame_queue.drain(..) {
            out.push(Push::Frames { tick, frames: frames.iter().map(encode_frame).collect() });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(seed: u64) -> Session {
        Session::create(Arc::new(Catalog::desk()), SessionConfig { seed, ..SessionConfig::default() }).unwrap()
    }

    #[test]
    fn step_zero_is_noop() {
        let mut s = session(1);
        let before = s.state_hash_hex();
        let r = s.handle(Verb::Step, &json!({ "n": 0 })).unwrap();
        assert_eq!(r["tick"], 0);
        assert_eq!(s.state_hash_hex(), before);
    }

    #[test]
    fn bad_payload_is_bad_request() {
        let mut s = session(1);
        let e = s.handle(Verb::Step, &json!({ "n": "many" })).unwrap_err();
        assert_eq!(e.code, "BadRequest");
        let e = s.handle(Verb::Act, &json!({ "agent": "child", "verb": "Fly" })).unwrap_err();
        assert_eq!(e.code, "BadRequest");
    }

    #[test]
    fn predicate_passthrough() {
        let mut s = session(3);
        let ids = s.scene().ids();
        let (a, b) = (ids[0], ids[1]);
        for r in [Relation::On, Relation::In, Relation::Under, Relation::Near, Relation::Touching] {
            let v = s.handle(Verb::QueryPredicate, &json!({ "relation": r, "a": a, "b": b })).unwrap();
            assert_eq!(v["value"], eval_predicate(s.scene(), r, a, b, None).unwrap());
        }
        let e = s.handle(Verb::QueryPredicate, &json!({ "relation": "On", "a": a, "b": a })).unwrap_err();
        assert_eq!(e.code, "IdenticalOperands");
    }

    #[test]
    fn reset_keeps_clock_and_orders_events() {
        let mut s = session(2);
        s.handle(Verb::Step, &json!({ "n": 7 })).unwrap();
        s.handle(Verb::Reset, &json!({ "seed": 9 })).unwrap();
        assert_eq!(s.scene().tick, 7);
        assert_eq!(s.scene().seed, 9);
        assert!(s.episode().windows(2).all(|w| w[0].tick <= w[1].tick));
    }

    #[test]
    fn subscribe_pushes_events_and_frames() {
        let mut s = session(4);
        s.handle(Verb::Subscribe, &json!({ "frames_every_n_ticks": 2 })).unwrap();
        s.handle(Verb::Step, &json!({ "n": 2 })).unwrap();
        let pushes = s.take_pushes();
        assert!(matches!(pushes[0], Push::Events { .. }));
        let frames = pushes.iter().find_map(|p| match p {
            Push::Frames { tick, frames } => Some((*tick, frames.len())),
            _ => None,
        });
        assert_eq!(frames, Some((2, 4)));
        assert!(s.take_pushes().is_empty());
    }
}
