//! Teacher demonstrations: compiles a concept plus bindings into a primitive
//! action plan with pointing and synchronized speech, and runs it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::agents::{
    self, begin_action, tick, ActionCommand, ActionError, ActionSlots, ActionStatus, ActionVerb, Activity, AgentId,
    REACH,
};
use crate::catalog::{Category, ClassFilter, Color};
use crate::events::{Event, EventKind};
use crate::geometry::{angle_diff, snap_yaw};
use crate::kinetics::{self, eval_predicate, Relation};
use crate::language::{self, realize, ComplexityLevel, LanguageError};
use crate::rng::SimRng;
use crate::world::{Cell, InstanceId, Scene};

pub const LESSONS_JSON: &str = include_str!("../data/lessons.json");

/// Ticks any single step may take before the lesson is interrupted.
pub const STEP_TICK_LIMIT: u32 = 5_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeWord {
    Big,
    Small,
}

impl SizeWord {
    pub fn name(self) -> &'static str {
        match self {
            SizeWord::Big => "big",
            SizeWord::Small => "small",
        }
    }
}

/// Desk-scale concept inventory.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConceptId {
    On,
    In,
    Under,
    Near,
    PutOn,
    PutIn,
    TakeOut,
    Give,
    Touch,
    Rotate,
    Color(Color),
    Size(SizeWord),
    /// A catalog class id.
    Noun(String),
    The,
    A,
    Only,
    All,
}

impl ConceptId {
    pub fn family(&self) -> &'static str {
        match self {
            ConceptId::On => "on",
            ConceptId::In => "in",
            ConceptId::Under => "under",
            ConceptId::Near => "near",
            ConceptId::PutOn => "put_on",
            ConceptId::PutIn => "put_in",
            ConceptId::TakeOut => "take_out",
            ConceptId::Give => "give",
            ConceptId::Touch => "touch",
            ConceptId::Rotate => "rotate",
            ConceptId::Color(_) => "color",
            ConceptId::Size(_) => "size",
            ConceptId::Noun(_) => "noun",
            ConceptId::The => "the",
            ConceptId::A => "a",
            ConceptId::Only => "only",
            ConceptId::All => "all",
        }
    }

    /// Word substituted for `{head}` in templates.
    pub fn head(&self) -> String {
        match self {
            ConceptId::Color(c) => c.name().to_string(),
            ConceptId::Size(s) => s.name().to_string(),
            ConceptId::Noun(class_id) => crate::catalog::noun_of_class_id(class_id),
            other => other.family().to_string(),
        }
    }

    /// Every concept for a catalog: fixed families, the palette, both sizes
    /// and one noun per class.
    pub fn inventory(catalog: &crate::catalog::Catalog) -> Vec<ConceptId> {
        let mut out = vec![
            ConceptId::On,
            ConceptId::In,
            ConceptId::Under,
            ConceptId::Near,
            ConceptId::PutOn,
            ConceptId::PutIn,
            ConceptId::TakeOut,
            ConceptId::Give,
            ConceptId::Touch,
            ConceptId::Rotate,
        ];
        out.extend(Color::ALL.iter().map(|c| ConceptId::Color(*c)));
        out.push(ConceptId::Size(SizeWord::Big));
        out.push(ConceptId::Size(SizeWord::Small));
        out.extend(catalog.classes.iter().map(|c| ConceptId::Noun(c.class_id.clone())));
        out.extend([ConceptId::The, ConceptId::A, ConceptId::Only, ConceptId::All]);
        out
    }

    /// Concepts demonstrated by moving objects.
    pub fn motion() -> Vec<ConceptId> {
        vec![
            ConceptId::On,
            ConceptId::In,
            ConceptId::Under,
            ConceptId::Near,
            ConceptId::PutOn,
            ConceptId::PutIn,
            ConceptId::TakeOut,
            ConceptId::Give,
            ConceptId::Touch,
            ConceptId::Rotate,
        ]
    }

    pub fn relation(&self) -> Option<Relation> {
        match self {
            ConceptId::On | ConceptId::PutOn => Some(Relation::On),
            ConceptId::In | ConceptId::PutIn | ConceptId::TakeOut => Some(Relation::In),
            ConceptId::Under => Some(Relation::Under),
            ConceptId::Near => Some(Relation::Near),
            _ => None,
        }
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConceptId::Color(c) => write!(f, "color:{}", c.name()),
            ConceptId::Size(s) => write!(f, "size:{}", s.name()),
            ConceptId::Noun(n) => write!(f, "noun:{n}"),
            other => f.write_str(other.family()),
        }
    }
}

impl FromStr for ConceptId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(c) = s.strip_prefix("color:") {
            return Color::from_str(c).map(ConceptId::Color).map_err(|_| format!("unknown color `{c}`"));
        }
        if let Some(z) = s.strip_prefix("size:") {
            return match z {
                "big" => Ok(ConceptId::Size(SizeWord::Big)),
                "small" => Ok(ConceptId::Size(SizeWord::Small)),
                _ => Err(format!("unknown size `{z}`")),
            };
        }
        if let Some(n) = s.strip_prefix("noun:") {
            if n.is_empty() {
                return Err("empty noun concept".into());
            }
            return Ok(ConceptId::Noun(n.to_string()));
        }
        Ok(match s {
            "on" => ConceptId::On,
            "in" => ConceptId::In,
            "under" => ConceptId::Under,
            "near" => ConceptId::Near,
            "put_on" => ConceptId::PutOn,
            "put_in" => ConceptId::PutIn,
            "take_out" => ConceptId::TakeOut,
            "give" => ConceptId::Give,
            "touch" => ConceptId::Touch,
            "rotate" => ConceptId::Rotate,
            "the" => ConceptId::The,
            "a" => ConceptId::A,
            "only" => ConceptId::Only,
            "all" => ConceptId::All,
            _ => return Err(format!("unknown concept `{s}`")),
        })
    }
}

impl Serialize for ConceptId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ConceptId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ConceptId::from_str(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    PlaceOn,
    PlaceIn,
    PlaceUnder,
    PlaceNear,
    TakeOut,
    Give,
    Touch,
    Rotate,
    /// Point and speak only.
    Show,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureRole {
    Graspable,
    Interactable,
    Instance,
    Color,
    Size,
    Class,
    Unique,
    Shared,
    Group,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundRole {
    Surface,
    Container,
    Clearance,
    Instance,
    Agent,
    Related,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostKind {
    On,
    In,
    Under,
    Near,
    NotIn,
    HeldBy,
    Touched,
    Yaw,
    Relation,
    Only,
    All,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptEntry {
    pub family: String,
    pub plan: PlanKind,
    pub degenerate: bool,
    pub figure: FigureRole,
    pub ground: GroundRole,
    pub postcondition: PostKind,
    pub utterances: BTreeMap<ComplexityLevel, Vec<String>>,
    pub tasks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTemplate {
    pub id: String,
    pub kind: crate::tasks::TaskKind,
    pub family: String,
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    pub version: String,
    pub plurals: BTreeMap<String, String>,
    pub concepts: Vec<ConceptEntry>,
    pub tasks: Vec<TaskTemplate>,
}

impl Registry {
    pub fn from_json(text: &str) -> Result<Registry, String> {
        let r: Registry = serde_json::from_str(text).map_err(|e| e.to_string())?;
        for c in &r.concepts {
            for level in ComplexityLevel::ALL {
                if c.utterances.get(&level).is_none_or(|v| v.is_empty()) {
                    return Err(format!("concept {} lacks a {level} template", c.family));
                }
            }
            if c.tasks.is_empty() {
                return Err(format!("concept {} has no task template", c.family));
            }
            for t in &c.tasks {
                if r.task(t).is_none() {
                    return Err(format!("concept {} names unknown task template {t}", c.family));
                }
            }
        }
        Ok(r)
    }

    pub fn entry(&self, concept: &ConceptId) -> Option<&ConceptEntry> {
        self.concepts.iter().find(|c| c.family == concept.family())
    }

    pub fn task(&self, id: &str) -> Option<&TaskTemplate> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

/// The bundled registry.
pub fn registry() -> &'static Registry {
    static REG: OnceLock<Registry> = OnceLock::new();
    REG.get_or_init(|| Registry::from_json(LESSONS_JSON).expect("bundled lesson registry is valid"))
}

/// Role assignment for a lesson or task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bindings {
    #[serde(default)]
    pub figure: Option<InstanceId>,
    #[serde(default)]
    pub ground: Option<InstanceId>,
    #[serde(default)]
    pub distractors: Vec<InstanceId>,
    #[serde(default)]
    pub group: Vec<InstanceId>,
    #[serde(default)]
    pub relation: Option<Relation>,
    #[serde(default)]
    pub actor: Option<AgentId>,
}

/// A checkable end-state condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "goal", rename_all = "snake_case")]
pub enum Goal {
    Relation { relation: Relation, figure: InstanceId, ground: InstanceId, holds: bool },
    HeldBy { figure: InstanceId, agent: AgentId },
    Touched { agent: AgentId, figure: InstanceId },
    Yaw { figure: InstanceId, yaw: f64 },
}

impl Goal {
    pub fn holds(&self, scene: &Scene) -> bool {
        match *self {
            Goal::Relation { relation, figure, ground, holds } => {
                eval_predicate(scene, relation, figure, ground, None).is_ok_and(|v| v == holds)
            }
            Goal::HeldBy { figure, agent } => scene.instance(figure).is_some_and(|i| i.held_by == Some(agent)),
            Goal::Touched { agent, figure } => scene.agent(agent).touched == Some(figure),
            Goal::Yaw { figure, yaw } => scene
                .instance(figure)
                .is_some_and(|i| i.held_by.is_none() && angle_diff(i.yaw, yaw).abs() < 1e-9),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LessonStep {
    pub actor: AgentId,
    pub activity: Activity,
    pub sync_tag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LessonScript {
    pub concept: ConceptId,
    pub bindings: Bindings,
    pub level: ComplexityLevel,
    pub actor: AgentId,
    pub steps: Vec<LessonStep>,
    pub postconditions: Vec<Goal>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LessonError {
    #[error("bad binding: {0}")]
    BadBinding(String),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("insufficient objects: {0}")]
    InsufficientObjects(String),
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error(transparent)]
    Language(#[from] LanguageError),
}

impl LessonError {
    pub fn code(&self) -> &'static str {
        match self {
            LessonError::BadBinding(_) => "BadBinding",
            LessonError::Unreachable(_) => "Unreachable",
            LessonError::InsufficientObjects(_) => "InsufficientObjects",
            LessonError::UnknownConcept(_) => "UnknownConcept",
            LessonError::Language(e) => e.code(),
        }
    }
}

fn bad(msg: impl Into<String>) -> LessonError {
    LessonError::BadBinding(msg.into())
}

fn entry_for(concept: &ConceptId) -> Result<&'static ConceptEntry, LessonError> {
    registry()
        .entry(concept)
        .ok_or_else(|| LessonError::UnknownConcept(concept.to_string()))
}

/// Whether `id` has something resting on or in it.
fn is_loaded(scene: &Scene, id: InstanceId) -> bool {
    scene.instances.iter().any(|i| i.supported_by == Some(id) || i.contained_in == Some(id))
}

fn shares_noun_color(scene: &Scene, id: InstanceId) -> usize {
    let c = scene.class_by_id(id).expect("exists");
    let (noun, color) = (c.noun(), c.color);
    scene
        .instances
        .iter()
        .filter(|i| {
            let k = scene.class_of(i);
            k.noun() == noun && k.color == color
        })
        .count()
}

/// Relations a determiner lesson may describe, in preference order.
const DESCRIBABLE: [Relation; 4] = [Relation::On, Relation::In, Relation::Under, Relation::Near];

fn first_relation(scene: &Scene, figure: InstanceId, ground: InstanceId) -> Option<Relation> {
    DESCRIBABLE
        .into_iter()
        .find(|r| eval_predicate(scene, *r, figure, ground, None).unwrap_or(false))
}

fn check_figure(scene: &Scene, concept: &ConceptId, role: FigureRole, b: &Bindings, actor: AgentId) -> Result<(), LessonError> {
    if role == FigureRole::Group {
        if b.group.is_empty() {
            return Err(bad("group is empty"));
        }
        for &g in &b.group {
            scene.instance(g).ok_or_else(|| bad(format!("unknown group member {g}")))?;
        }
        return Ok(());
    }
    let f = b.figure.ok_or_else(|| bad("figure is required"))?;
    let inst = scene.instance(f).ok_or_else(|| bad(format!("unknown figure {f}")))?;
    let class = scene.class_of(inst);
    if let Some(h) = inst.held_by {
        if h != actor {
            return Err(bad("figure is held by the other agent"));
        }
    }
    match role {
        FigureRole::Graspable => {
            if class.category != Category::Interactable || !class.graspable {
                return Err(bad(format!("figure {} is not graspable", class.class_id)));
            }
        }
        FigureRole::Interactable => {
            if class.category != Category::Interactable {
                return Err(bad(format!("figure {} is static", class.class_id)));
            }
        }
        FigureRole::Instance | FigureRole::Group => {}
        FigureRole::Color => {
            if let ConceptId::Color(c) = concept {
                if class.color != *c {
                    return Err(bad("figure color does not match"));
                }
            }
        }
        FigureRole::Size => {
            if let ConceptId::Size(s) = concept {
                if class.is_big() != (*s == SizeWord::Big) {
                    return Err(bad("figure size does not match"));
                }
            }
        }
        FigureRole::Class => {
            if let ConceptId::Noun(n) = concept {
                if &class.class_id != n {
                    return Err(bad("figure class does not match"));
                }
            }
        }
        FigureRole::Unique => {
            if shares_noun_color(scene, f) != 1 {
                return Err(bad("figure is not uniquely described"));
            }
        }
        FigureRole::Shared => {
            if shares_noun_color(scene, f) < 2 {
                return Err(bad("figure is uniquely described"));
            }
        }
    }
    Ok(())
}

fn check_ground(scene: &Scene, role: GroundRole, b: &Bindings, actor: AgentId) -> Result<(), LessonError> {
    if role == GroundRole::None {
        return Ok(());
    }
    let g = b.ground.ok_or_else(|| bad("ground is required"))?;
    if Some(g) == b.figure {
        return Err(bad("figure and ground are the same"));
    }
    if role == GroundRole::Agent {
        let to = AgentId::from_instance_id(g).ok_or_else(|| bad("ground must be an agent"))?;
        if to == actor {
            return Err(bad("cannot give to oneself"));
        }
        if scene.agent(to).held.is_some() {
            return Err(bad("recipient hand is full"));
        }
        return Ok(());
    }
    let inst = scene.instance(g).ok_or_else(|| bad(format!("unknown ground {g}")))?;
    let class = scene.class_of(inst);
    if inst.held_by.is_some() {
        return Err(bad("ground is held"));
    }
    match role {
        GroundRole::Surface if !class.is_surface => Err(bad(format!("{} is not a surface", class.class_id))),
        GroundRole::Container if !class.is_container => Err(bad(format!("{} is not a container", class.class_id))),
        GroundRole::Clearance if class.clearance <= 0.0 => Err(bad(format!("nothing fits under {}", class.class_id))),
        GroundRole::Related => {
            let f = b.figure.ok_or_else(|| bad("figure is required"))?;
            match b.relation {
                Some(r) if eval_predicate(scene, r, f, g, None).unwrap_or(false) => Ok(()),
                Some(_) => Err(bad("stated relation does not hold")),
                None => Err(bad("relation is required")),
            }
        }
        _ => Ok(()),
    }
}

pub fn postconditions(kind: PostKind, b: &Bindings, actor: AgentId, scene: &Scene) -> Vec<Goal> {
    let fg = || (b.figure.unwrap_or(0), b.ground.unwrap_or(0));
    let rel = |relation, holds| {
        let (figure, ground) = fg();
        Goal::Relation { relation, figure, ground, holds }
    };
    match kind {
        PostKind::On => vec![rel(Relation::On, true)],
        PostKind::In => vec![rel(Relation::In, true)],
        PostKind::Under => vec![rel(Relation::Under, true)],
        PostKind::Near => vec![rel(Relation::Near, true)],
        PostKind::NotIn => vec![rel(Relation::In, false)],
        PostKind::HeldBy => vec![Goal::HeldBy {
            figure: fg().0,
            agent: AgentId::from_instance_id(fg().1).unwrap_or(actor.other()),
        }],
        PostKind::Touched => vec![Goal::Touched { agent: actor, figure: fg().0 }],
        PostKind::Yaw => {
            let yaw = scene.instance(fg().0).map_or(0.0, |i| snap_yaw(i.yaw + std::f64::consts::FRAC_PI_2));
            vec![Goal::Yaw { figure: fg().0, yaw }]
        }
        PostKind::Relation => b.relation.map(|r| vec![rel(r, true)]).unwrap_or_default(),
        PostKind::Only => {
            let mut g = vec![rel(Relation::In, true)];
            let ground = fg().1;
            g.extend(b.distractors.iter().map(|&d| Goal::Relation {
                relation: Relation::In,
                figure: d,
                ground,
                holds: false,
            }));
            g
        }
        PostKind::All => {
            let ground = fg().1;
            b.group
                .iter()
                .map(|&f| Goal::Relation { relation: Relation::In, figure: f, ground, holds: true })
                .collect()
        }
        PostKind::None => Vec::new(),
    }
}

/// Validates bindings against the concept's role signature.
pub fn check_bindings(scene: &Scene, concept: &ConceptId, b: &Bindings, actor: AgentId) -> Result<(), LessonError> {
    let entry = entry_for(concept)?;
    check_figure(scene, concept, entry.figure, b, actor)?;
    check_ground(scene, entry.ground, b, actor)?;
    if concept == &ConceptId::TakeOut {
        let f = b.figure.expect("checked");
        let g = b.ground.expect("checked");
        if !eval_predicate(scene, Relation::In, f, g, None).unwrap_or(false) {
            return Err(bad("figure is not in the container"));
        }
    }
    if matches!(concept, ConceptId::Only) && b.distractors.is_empty() {
        return Err(bad("only needs distractors"));
    }
    Ok(())
}

/// Closed-loop compiler state: the plan is simulated on a scene copy.
struct Sim {
    scene: Scene,
    slots: ActionSlots,
    actor: AgentId,
    steps: Vec<LessonStep>,
}

impl Sim {
    fn run(&mut self, activity: Activity, tag: &str) -> Result<(), LessonError> {
        let actor = self.actor;
        begin_action(&mut self.scene, &mut self.slots, actor, activity.clone()).map_err(|e| map_action_error(e, tag))?;
        let result = agents::run_until_idle(&mut self.scene, &mut self.slots, actor, STEP_TICK_LIMIT)
            .expect("action was running");
        if result.status != ActionStatus::Succeeded {
            let reason = result.reason.unwrap_or_default();
            return Err(if reason == "Unreachable" {
                LessonError::Unreachable(format!("{tag}: no path"))
            } else {
                bad(format!("{tag}: {reason}"))
            });
        }
        self.steps.push(LessonStep { actor, activity, sync_tag: tag.to_string() });
        Ok(())
    }

    fn act(&mut self, cmd: ActionCommand, tag: &str) -> Result<(), LessonError> {
        self.run(Activity::act(cmd), tag)
    }

    fn fetch(&mut self, figure: InstanceId) -> Result<(), LessonError> {
        if self.scene.agent(self.actor).held == Some(figure) {
            return Ok(());
        }
        if self.scene.agent(self.actor).held.is_some() {
            return Err(bad("actor already holds something else"));
        }
        self.act(ActionCommand::at(ActionVerb::NavigateTo, figure), "approach_figure")?;
        self.act(ActionCommand::at(ActionVerb::Grab, figure), "grab")
    }
}

fn map_action_error(e: ActionError, tag: &str) -> LessonError {
    match e {
        ActionError::Unreachable => LessonError::Unreachable(tag.to_string()),
        other => bad(format!("{tag}: {}", other.code())),
    }
}

/// Release points near `ground` on the floor, one per side, each leaving
/// exactly the separation buffer plus a hair.
fn near_spots(scene: &Scene, figure: InstanceId, ground: InstanceId) -> Vec<[f64; 2]> {
    let Some(gfp) = scene.footprint(ground) else { return Vec::new() };
    let class = scene.class_by_id(figure).expect("figure exists");
    let yaw = scene.instance(figure).expect("figure exists").yaw;
    let (hx, hy) = crate::geometry::rotated_half_extents(class, yaw);
    let c = gfp.center();
    let gap = crate::world::SEPARATION_BUFFER + 1e-6;
    vec![
        [gfp.max[0] + gap + hx, c[1]],
        [gfp.min[0] - gap - hx, c[1]],
        [c[0], gfp.max[1] + gap + hy],
        [c[0], gfp.min[1] - gap - hy],
    ]
}

/// Compiles a lesson with the parent as teacher.
pub fn compile_lesson(
    scene: &Scene,
    concept: &ConceptId,
    bindings: &Bindings,
    level: ComplexityLevel,
) -> Result<LessonScript, LessonError> {
    compile_for(scene, concept, bindings, level, AgentId::Parent)
}

/// Compiles a plan for `actor`. The parent also points and speaks; any other
/// actor gets only the motion steps.
pub fn compile_for(
    scene: &Scene,
    concept: &ConceptId,
    bindings: &Bindings,
    level: ComplexityLevel,
    actor: AgentId,
) -> Result<LessonScript, LessonError> {
    let entry = entry_for(concept)?;
    let mut b = bindings.clone();
    b.actor = Some(actor);
    check_bindings(scene, concept, &b, actor)?;
    let teacher = actor == AgentId::Parent;
    if entry.plan == PlanKind::Show && !teacher {
        return Err(bad("declarative concepts are shown by the parent"));
    }
    let goals = postconditions(entry.postcondition, &b, actor, scene);
    let mut sim = Sim { scene: scene.clone(), slots: ActionSlots::new(), actor, steps: Vec::new() };
    sim.scene.log.clear();

    let already = entry.degenerate && !goals.is_empty() && goals.iter().all(|g| g.holds(&sim.scene));
    let pointee = b.figure.or_else(|| b.group.first().copied());
    if teacher {
        if let Some(f) = pointee {
            sim.run(Activity::PointAt { target: f }, "point")?;
        }
    }
    if !already {
        let figure = b.figure;
        let ground = b.ground;
        match entry.plan {
            PlanKind::PlaceOn | PlanKind::PlaceIn => {
                let (f, g) = (figure.expect("checked"), ground.expect("checked"));
                sim.fetch(f)?;
                sim.act(ActionCommand::at(ActionVerb::NavigateTo, g), "approach_ground")?;
                if agents::plan_drop_onto(&sim.scene, f, g).is_none() {
                    return Err(bad("no room on the ground"));
                }
                sim.act(ActionCommand::at(ActionVerb::PutBack, g), "release")?;
            }
            PlanKind::PlaceUnder => {
                let (f, g) = (figure.expect("checked"), ground.expect("checked"));
                sim.fetch(f)?;
                sim.act(ActionCommand::at(ActionVerb::NavigateTo, g), "approach_ground")?;
                sim.act(ActionCommand::new(ActionVerb::Crawl).for_ticks(1), "crouch")?;
                let is_under = |s: &Scene| eval_predicate(s, Relation::Under, f, g, None).unwrap_or(false);
                let spot = match choose_release_spot(&sim, f, under_spots(&sim.scene, g, actor), is_under) {
                    Some(p) => p,
                    None => {
                        // Out of reach from here: try each side of the ground.
                        let gfp = sim.scene.footprint(g).expect("ground exists");
                        let c = gfp.center();
                        let off = 0.5 * REACH;
                        let sides = [
                            [gfp.max[0] + off, c[1]],
                            [gfp.min[0] - off, c[1]],
                            [c[0], gfp.max[1] + off],
                            [c[0], gfp.min[1] - off],
                        ];
                        let mut chosen = None;
                        for side in sides {
                            let mut trial =
                                Sim { scene: sim.scene.clone(), slots: ActionSlots::new(), actor, steps: Vec::new() };
                            if trial.act(ActionCommand::to_point(ActionVerb::NavigateTo, side), "x").is_err() {
                                continue;
                            }
                            if trial.act(ActionCommand::new(ActionVerb::Crawl).for_ticks(1), "x").is_err() {
                                continue;
                            }
                            if let Some(p) = choose_release_spot(&trial, f, under_spots(&trial.scene, g, actor), is_under) {
                                chosen = Some((side, p));
                                break;
                            }
                        }
                        let (side, p) = chosen.ok_or_else(|| bad("no reachable spot under the ground"))?;
                        sim.act(ActionCommand::to_point(ActionVerb::NavigateTo, side), "approach_spot")?;
                        sim.act(ActionCommand::new(ActionVerb::Crawl).for_ticks(1), "crouch")?;
                        p
                    }
                };
                sim.act(ActionCommand::to_point(ActionVerb::PutBack, spot), "release")?;
            }
            PlanKind::PlaceNear => {
                let (f, g) = (figure.expect("checked"), ground.expect("checked"));
                sim.fetch(f)?;
                sim.act(ActionCommand::at(ActionVerb::NavigateTo, g), "approach_ground")?;
                let spot = choose_release_spot(&sim, f, near_spots(&sim.scene, f, g), |s| {
                    eval_predicate(s, Relation::Near, f, g, None).unwrap_or(false)
                        && s.instance(f).is_some_and(|i| i.supported_by.is_none())
                });
                let spot = match spot {
                    Some(p) => p,
                    None => {
                        // Walk to the best side first, then release there.
                        let spots = near_spots(&sim.scene, f, g);
                        let mut chosen = None;
                        for p in spots {
                            let mut trial = Sim {
                                scene: sim.scene.clone(),
                                slots: ActionSlots::new(),
                                actor,
                                steps: Vec::new(),
                            };
                            if trial.act(ActionCommand::to_point(ActionVerb::NavigateTo, p), "x").is_err() {
                                continue;
                            }
                            let ok = choose_release_spot(&trial, f, vec![p], |s| {
                                eval_predicate(s, Relation::Near, f, g, None).unwrap_or(false)
                            });
                            if ok.is_some() {
                                chosen = Some(p);
                                break;
                            }
                        }
                        let p = chosen.ok_or_else(|| bad("no free spot near the ground"))?;
                        sim.act(ActionCommand::to_point(ActionVerb::NavigateTo, p), "approach_spot")?;
                        p
                    }
                };
                sim.act(ActionCommand::to_point(ActionVerb::PutBack, spot), "release")?;
            }
            PlanKind::TakeOut => {
                let (f, g) = (figure.expect("checked"), ground.expect("checked"));
                sim.fetch(f)?;
                let spots = floor_spots_within_reach(&sim.scene, actor);
                let spot = choose_release_spot(&sim, f, spots, |s| {
                    !eval_predicate(s, Relation::In, f, g, None).unwrap_or(true)
                        && s.instance(f).is_some_and(|i| i.supported_by.is_none())
                })
                .ok_or_else(|| bad("no free floor cell within reach"))?;
                sim.act(ActionCommand::to_point(ActionVerb::PutBack, spot), "release")?;
            }
            PlanKind::Give => {
                let (f, g) = (figure.expect("checked"), ground.expect("checked"));
                sim.fetch(f)?;
                sim.act(ActionCommand::at(ActionVerb::NavigateTo, g), "approach_recipient")?;
                sim.act(ActionCommand::at(ActionVerb::PutBack, g), "hand_over")?;
            }
            PlanKind::Touch => {
                let f = figure.expect("checked");
                sim.act(ActionCommand::at(ActionVerb::NavigateTo, f), "approach_figure")?;
                sim.act(ActionCommand::at(ActionVerb::Touch, f), "touch")?;
            }
            PlanKind::Rotate => {
                let f = figure.expect("checked");
                if sim.scene.agent(actor).held != Some(f) {
                    sim.act(ActionCommand::at(ActionVerb::NavigateTo, f), "approach_figure")?;
                }
                sim.act(ActionCommand::at(ActionVerb::Rotate, f), "rotate")?;
            }
            PlanKind::Show => {}
        }
    }
    if !goals.iter().all(|g| g.holds(&sim.scene)) {
        return Err(bad("postcondition not reached"));
    }
    if teacher {
        let utterance = realize(concept, &b, level, &sim.scene)?;
        sim.run(Activity::Say { utterance }, "say")?;
    }
    Ok(LessonScript { concept: concept.clone(), bindings: b, level, actor, steps: sim.steps, postconditions: goals })
}

/// First spot where releasing the held `figure` is accepted and `ok` holds
/// in the settled result.
fn choose_release_spot(
    sim: &Sim,
    figure: InstanceId,
    spots: Vec<[f64; 2]>,
    ok: impl Fn(&Scene) -> bool,
) -> Option<[f64; 2]> {
    let actor = sim.actor;
    let me = sim.scene.agent(actor).position;
    for p in spots {
        if (p[0] - me.x).hypot(p[1] - me.y) > REACH + 1e-9 {
            continue;
        }
        let mut trial = sim.scene.clone();
        let mut slots = ActionSlots::new();
        let cmd = ActionCommand::to_point(ActionVerb::PutBack, p);
        let Ok(r) = agents::perform(&mut trial, &mut slots, actor, Activity::act(cmd), STEP_TICK_LIMIT) else {
            continue;
        };
        if r.succeeded() && trial.instance(figure).is_some_and(|i| i.held_by.is_none()) && ok(&trial) {
            return Some(p);
        }
    }
    None
}

/// Release points inside the ground footprint: the center first, then a
/// 0.05 lattice nearest the agent first.
fn under_spots(scene: &Scene, ground: InstanceId, agent: AgentId) -> Vec<[f64; 2]> {
    let Some(fp) = scene.footprint(ground) else { return Vec::new() };
    let me = scene.agent(agent).position;
    const STEP: f64 = 0.05;
    let inset = 0.5 * STEP;
    let nx = ((fp.max[0] - fp.min[0] - 2.0 * inset) / STEP).floor().max(0.0) as usize;
    let ny = ((fp.max[1] - fp.min[1] - 2.0 * inset) / STEP).floor().max(0.0) as usize;
    let mut pts: Vec<(f64, usize, [f64; 2])> = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let p = [fp.min[0] + inset + i as f64 * STEP, fp.min[1] + inset + j as f64 * STEP];
            pts.push(((p[0] - me.x).hypot(p[1] - me.y), pts.len(), p));
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = vec![fp.center()];
    out.extend(pts.into_iter().map(|(_, _, p)| p));
    out
}

/// Centers of unoccupied cells within reach of the agent, nearest first,
/// skipping cells where an agent stands.
fn floor_spots_within_reach(scene: &Scene, agent: AgentId) -> Vec<[f64; 2]> {
    let occ = agents::occupancy(scene);
    let me = scene.agent(agent).position;
    let agent_cells: Vec<Option<Cell>> = scene
        .agents
        .iter()
        .map(|a| scene.grid.cell_at([a.position.x, a.position.y]))
        .collect();
    let mut cells: Vec<(f64, usize, [f64; 2])> = scene
        .grid
        .cells()
        .filter(|c| !occ[scene.grid.cell_index(*c)] && !agent_cells.contains(&Some(*c)))
        .map(|c| {
            let p = scene.grid.cell_center(c);
            ((p[0] - me.x).hypot(p[1] - me.y), scene.grid.cell_index(c), p)
        })
        .filter(|(d, _, _)| *d <= REACH + 1e-9)
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cells.into_iter().map(|(_, _, p)| p).collect()
}

/// Candidate bindings for a concept, in a deterministic order.
pub fn candidate_bindings(scene: &Scene, concept: &ConceptId, actor: AgentId) -> Vec<Bindings> {
    let Ok(entry) = entry_for(concept) else { return Vec::new() };
    let resting: Vec<InstanceId> = scene
        .instances
        .iter()
        .filter(|i| i.held_by.is_none())
        .map(|i| i.instance_id)
        .collect();
    let figures: Vec<InstanceId> = resting
        .iter()
        .copied()
        .filter(|&f| !is_loaded(scene, f))
        .filter(|&f| {
            let b = Bindings { figure: Some(f), ..Bindings::default() };
            check_figure(scene, concept, entry.figure, &b, actor).is_ok()
        })
        .collect();
    let mut out = Vec::new();
    match entry.ground {
        GroundRole::None => {
            out.extend(figures.iter().map(|&f| Bindings { figure: Some(f), ..Bindings::default() }));
        }
        GroundRole::Agent => {
            let to = actor.other().instance_id();
            out.extend(figures.iter().map(|&f| Bindings { figure: Some(f), ground: Some(to), ..Bindings::default() }));
        }
        GroundRole::Related => {
            for &f in &figures {
                for &g in &resting {
                    if g == f {
                        continue;
                    }
                    if let Some(r) = first_relation(scene, f, g) {
                        out.push(Bindings { figure: Some(f), ground: Some(g), relation: Some(r), ..Bindings::default() });
                    }
                }
            }
        }
        role => {
            for &f in &figures {
                for &g in &resting {
                    let b = Bindings { figure: Some(f), ground: Some(g), ..Bindings::default() };
                    if check_ground(scene, role, &b, actor).is_ok() && check_bindings(scene, concept, &b, actor).is_ok() {
                        out.push(b);
                    }
                }
            }
        }
    }
    out
}

/// Picks bindings in seeded order and returns the first that compiles.
pub fn plan_lesson(
    scene: &Scene,
    concept: &ConceptId,
    level: ComplexityLevel,
    rng: &mut SimRng,
    actor: AgentId,
    max_tries: usize,
) -> Result<LessonScript, LessonError> {
    let mut cands = candidate_bindings(scene, concept, actor);
    if cands.is_empty() {
        return Err(LessonError::InsufficientObjects(format!("no bindings for {concept}")));
    }
    rng.shuffle(&mut cands);
    let mut last = None;
    for b in cands.into_iter().take(max_tries) {
        match compile_for(scene, concept, &b, level, actor) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one candidate was tried"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LessonOutcome {
    pub success: bool,
    pub events: Vec<Event>,
    pub ticks: u64,
}

/// Executes a script one tick at a time so callers can interleave other
/// operations (operator interference, frame capture).
#[derive(Clone, Debug)]
pub struct LessonRunner {
    script: LessonScript,
    next: usize,
    slots: ActionSlots,
    started_at: u64,
    log_start: usize,
    step_ticks: u32,
    finished: Option<bool>,
}

impl LessonRunner {
    pub fn start(scene: &mut Scene, script: LessonScript) -> LessonRunner {
        let log_start = scene.log.len();
        scene.emit(EventKind::LessonStarted { concept: script.concept.to_string() });
        let mut r = LessonRunner {
            script,
            next: 0,
            slots: ActionSlots::new(),
            started_at: scene.tick,
            log_start,
            step_ticks: 0,
            finished: None,
        };
        r.begin_next(scene);
        r
    }

    pub fn finished(&self) -> Option<bool> {
        self.finished
    }

    pub fn script(&self) -> &LessonScript {
        &self.script
    }

    fn interrupt(&mut self, scene: &mut Scene, reason: String) {
        scene.emit(EventKind::Interrupted { step: self.next.saturating_sub(1), reason });
        self.finish(scene, false);
    }

    fn finish(&mut self, scene: &mut Scene, ok: bool) {
        let success = ok && self.script.postconditions.iter().all(|g| g.holds(scene));
        scene.emit(EventKind::LessonFinished { concept: self.script.concept.to_string(), success });
        self.finished = Some(success);
    }

    /// Begins the next step, or finishes when none remain.
    fn begin_next(&mut self, scene: &mut Scene) {
        if self.finished.is_some() {
            return;
        }
        let Some(step) = self.script.steps.get(self.next).cloned() else {
            self.finish(scene, true);
            return;
        };
        self.next += 1;
        self.step_ticks = 0;
        if let Err(e) = begin_action(scene, &mut self.slots, step.actor, step.activity) {
            self.interrupt(scene, e.code().to_string());
        }
    }

    /// Advances one tick; returns the success flag once finished.
    pub fn tick(&mut self, scene: &mut Scene) -> Option<bool> {
        if self.finished.is_some() {
            return self.finished;
        }
        self.step_ticks += 1;
        let done = tick(scene, &mut self.slots);
        for (_, result) in done {
            if result.status != ActionStatus::Succeeded {
                self.interrupt(scene, result.reason.unwrap_or_else(|| "Failed".into()));
                return self.finished;
            }
            self.begin_next(scene);
        }
        if self.finished.is_none() && self.step_ticks >= STEP_TICK_LIMIT {
            self.interrupt(scene, "Timeout".into());
        }
        self.finished
    }

    pub fn outcome(&self, scene: &Scene) -> LessonOutcome {
        LessonOutcome {
            success: self.finished.unwrap_or(false),
            events: scene.log[self.log_start.min(scene.log.len())..].to_vec(),
            ticks: scene.tick - self.started_at,
        }
    }
}

pub fn run_lesson(scene: &mut Scene, script: &LessonScript) -> LessonOutcome {
    let mut runner = LessonRunner::start(scene, script.clone());
    while runner.tick(scene).is_none() {}
    runner.outcome(scene)
}

/// Drops an object straight into a container without an agent.
fn stage_into(scene: &mut Scene, figure: InstanceId, container: InstanceId) -> Result<(), LessonError> {
    let (pos, yaw) = agents::plan_drop_onto(scene, figure, container)
        .ok_or_else(|| LessonError::InsufficientObjects("container is full".into()))?;
    let inst = scene.instance_mut(figure).expect("exists");
    inst.position = pos;
    inst.yaw = yaw;
    kinetics::settle(scene);
    if scene.instance(figure).and_then(|i| i.contained_in) != Some(container) {
        return Err(LessonError::InsufficientObjects("object did not land in the container".into()));
    }
    Ok(())
}

/// Spawns `class_id` at a seeded free cell.
fn spawn_somewhere(scene: &mut Scene, class_id: &str, rng: &mut SimRng) -> Result<InstanceId, LessonError> {
    let class = scene
        .catalog
        .get(class_id)
        .cloned()
        .ok_or_else(|| LessonError::InsufficientObjects(format!("no class {class_id}")))?;
    let mut free = scene.free_cells();
    for a in &scene.agents {
        let c = scene.grid.cell_at([a.position.x, a.position.y]);
        free.retain(|f| Some(*f) != c);
    }
    for _ in 0..crate::world::MAX_PLACEMENT_ATTEMPTS {
        if free.is_empty() {
            break;
        }
        let cell = free.remove(rng.index(free.len()));
        if let Ok(id) = scene.spawn_object(&class, cell) {
            return Ok(id);
        }
    }
    Err(LessonError::InsufficientObjects(format!("no free cell for {class_id}")))
}

/// Puts one graspable figure into an empty container for concepts that
/// need a staged precondition (take_out). Returns the bindings.
pub fn stage_contained(scene: &mut Scene, rng: &mut SimRng) -> Result<Bindings, LessonError> {
    let containers = empty_containers(scene);
    let figures: Vec<InstanceId> = scene
        .instances
        .iter()
        .filter(|i| i.held_by.is_none() && i.supported_by.is_none() && !is_loaded(scene, i.instance_id))
        .filter(|i| {
            let c = scene.class_of(i);
            c.graspable && !c.is_container
        })
        .map(|i| i.instance_id)
        .collect();
    let mut pairs: Vec<(InstanceId, InstanceId)> = figures
        .iter()
        .flat_map(|&f| containers.iter().map(move |&c| (f, c)))
        .collect();
    rng.shuffle(&mut pairs);
    for (f, c) in pairs {
        let mut trial = scene.clone();
        if stage_into(&mut trial, f, c).is_ok() {
            *scene = trial;
            return Ok(Bindings { figure: Some(f), ground: Some(c), ..Bindings::default() });
        }
    }
    Err(LessonError::InsufficientObjects("no figure fits an empty container".into()))
}

fn empty_containers(scene: &Scene) -> Vec<InstanceId> {
    scene
        .instances
        .iter()
        .filter(|i| i.held_by.is_none() && scene.class_of(i).is_container && !is_loaded(scene, i.instance_id))
        .map(|i| i.instance_id)
        .collect()
}

/// Groups of graspable classes sharing a noun, keyed by noun.
fn noun_groups(scene: &Scene) -> BTreeMap<String, Vec<String>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in &scene.catalog.classes {
        if c.graspable && !c.is_container {
            groups.entry(c.noun()).or_default().push(c.class_id.clone());
        }
    }
    groups
}

fn ensure_container(scene: &mut Scene, rng: &mut SimRng) -> Result<InstanceId, LessonError> {
    if let Some(&c) = empty_containers(scene).first() {
        return Ok(c);
    }
    let class = scene
        .catalog
        .sample_class(rng, ClassFilter::Container)
        .map_err(|_| LessonError::InsufficientObjects("catalog has no container".into()))?
        .class_id
        .clone();
    spawn_somewhere(scene, &class, rng)
}

/// Stages a scene for `only` or `all` and returns the bindings.
///
/// only: exactly one figure of a chosen color inside an empty container and
/// at least two same-noun distractors of another color outside it.
/// all: every instance of a chosen noun inside one container.
pub fn arrange_quantifier_scene(
    scene: &mut Scene,
    concept: &ConceptId,
    rng: &mut SimRng,
) -> Result<Bindings, LessonError> {
    if !scene.catalog.classes.iter().any(|c| c.is_container) {
        return Err(LessonError::InsufficientObjects("catalog has no container".into()));
    }
    let groups = noun_groups(scene);
    match concept {
        ConceptId::Only => {
            let mut options: Vec<(String, String)> = Vec::new();
            for classes in groups.values().filter(|v| v.len() >= 2) {
                for f in classes {
                    for d in classes {
                        if f != d {
                            options.push((f.clone(), d.clone()));
                        }
                    }
                }
            }
            if options.is_empty() {
                return Err(LessonError::InsufficientObjects("no noun comes in two colors".into()));
            }
            rng.shuffle(&mut options);
            for (fclass, dclass) in options {
                let mut trial = scene.clone();
                if let Ok(b) = stage_only(&mut trial, &fclass, &dclass, rng) {
                    *scene = trial;
                    return Ok(b);
                }
            }
            Err(LessonError::InsufficientObjects("could not stage only".into()))
        }
        ConceptId::All => {
            let mut nouns: Vec<String> = groups.keys().cloned().collect();
            rng.shuffle(&mut nouns);
            for noun in nouns {
                let mut trial = scene.clone();
                if let Ok(b) = stage_all(&mut trial, &groups[&noun], rng) {
                    *scene = trial;
                    return Ok(b);
                }
            }
            Err(LessonError::InsufficientObjects("could not stage all".into()))
        }
        other => Err(bad(format!("{other} is not a quantifier"))),
    }
}

fn instances_of(scene: &Scene, class_id: &str) -> Vec<InstanceId> {
    scene.instances.iter().filter(|i| i.class_id == class_id).map(|i| i.instance_id).collect()
}

fn stage_only(scene: &mut Scene, fclass: &str, dclass: &str, rng: &mut SimRng) -> Result<Bindings, LessonError> {
    let existing = instances_of(scene, fclass);
    let figure = match existing.as_slice() {
        [] => spawn_somewhere(scene, fclass, rng)?,
        [one] if scene.instance(*one).is_some_and(|i| i.held_by.is_none()) && !is_loaded(scene, *one) => *one,
        _ => return Err(bad("figure color is not unique")),
    };
    while instances_of(scene, dclass).len() < 2 {
        spawn_somewhere(scene, dclass, rng)?;
    }
    let distractors = instances_of(scene, dclass);
    if distractors.iter().any(|&d| scene.instance(d).is_some_and(|i| i.held_by.is_some())) {
        return Err(bad("a distractor is held"));
    }
    let container = ensure_container(scene, rng)?;
    if distractors.iter().any(|&d| scene.instance(d).and_then(|i| i.contained_in) == Some(container)) {
        return Err(bad("distractor already in the container"));
    }
    stage_into(scene, figure, container)?;
    let b = Bindings { figure: Some(figure), ground: Some(container), distractors, ..Bindings::default() };
    let goals = postconditions(PostKind::Only, &b, AgentId::Parent, scene);
    if !goals.iter().all(|g| g.holds(scene)) {
        return Err(bad("staging did not satisfy only"));
    }
    Ok(b)
}

fn stage_all(scene: &mut Scene, classes: &[String], rng: &mut SimRng) -> Result<Bindings, LessonError> {
    let noun = scene.catalog.get(&classes[0]).expect("class exists").noun();
    let of_noun = |s: &Scene| -> Vec<InstanceId> {
        s.instances
            .iter()
            .filter(|i| s.class_of(i).noun() == noun)
            .map(|i| i.instance_id)
            .collect()
    };
    while of_noun(scene).len() < 2 {
        let class = classes[rng.index(classes.len())].clone();
        spawn_somewhere(scene, &class, rng)?;
    }
    let group = of_noun(scene);
    if group.iter().any(|&g| {
        scene.instance(g).is_some_and(|i| i.held_by.is_some() || i.supported_by.is_some()) || is_loaded(scene, g)
    }) {
        return Err(bad("a group member is held, stacked or loaded"));
    }
    let container = ensure_container(scene, rng)?;
    for &g in &group {
        stage_into(scene, g, container)?;
    }
    let b = Bindings { figure: group.first().copied(), ground: Some(container), group, ..Bindings::default() };
    let goals = postconditions(PostKind::All, &b, AgentId::Parent, scene);
    if !goals.iter().all(|g| g.holds(scene)) {
        return Err(bad("staging did not satisfy all"));
    }
    Ok(b)
}

/// Checks an utterance against the live scene: every reference resolves to a
/// set containing its instance, and singular definites to exactly it.
pub fn utterance_grounded(scene: &Scene, u: &language::Utterance) -> bool {
    u.references.iter().all(|r| {
        let phrase = u.span_text(r);
        match language::resolve_reference(&phrase, scene, None) {
            Ok(set) => {
                set.contains(&r.instance_id)
                    && (!language::is_definite_singular(&phrase, scene) || set.len() == 1)
            }
            Err(_) => false,
        }
    })
}
