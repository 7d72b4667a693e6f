//! Evaluation tasks: demonstrate, forced-choice questions and
//! fill-in-the-blank, with keys computed from the spatial predicates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentId;
use crate::kinetics::{eval_predicate, Relation};
use crate::language::{self, fill_template, ComplexityLevel, LanguageError, Utterance};
use crate::lessons::{self, candidate_bindings, compile_for, registry, Bindings, ConceptId, Goal, SizeWord};
use crate::catalog::Color;
use crate::rng::SimRng;
use crate::world::{InstanceId, Scene};

/// Default demonstration budget: 60 s at 20 Hz.
pub const DEFAULT_TIME_BUDGET_TICKS: u64 = 1_200;
pub const BLANK: &str = "___";
/// Bindings tried per concept before moving on.
const DEMO_TRIES_PER_CONCEPT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    Demonstrate,
    QA,
    FillInBlank,
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "demonstrate" | "demo" => Ok(TaskKind::Demonstrate),
            "qa" => Ok(TaskKind::QA),
            "fillinblank" | "fill" | "fill_in_blank" => Ok(TaskKind::FillInBlank),
            _ => Err(format!("unknown task kind `{s}`")),
        }
    }
}

/// Accepted answers, kept apart from the task sent to agents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub task_id: String,
    pub accepted: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub prompt: Utterance,
    pub target_predicate: Option<Goal>,
    pub choices: Option<Vec<String>>,
    pub time_budget_ticks: u64,
    pub seed: u64,
    /// Template id from the lesson registry.
    pub template: String,
    pub bindings: Bindings,
    pub issued_tick: u64,
    /// Instance the question points at when the prompt says "it".
    pub focus: Option<InstanceId>,
    #[serde(skip)]
    key: Option<AnswerKey>,
}

impl TaskSpec {
    pub fn key(&self) -> Option<&AnswerKey> {
        self.key.as_ref()
    }

    /// Re-attaches a key loaded from a key file.
    pub fn with_key(mut self, key: AnswerKey) -> Result<TaskSpec, TaskError> {
        if key.task_id != self.task_id {
            return Err(TaskError::MissingKey(self.task_id.clone()));
        }
        self.key = Some(key);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let ok = match self.kind {
            TaskKind::Demonstrate => self.target_predicate.is_some(),
            TaskKind::QA => self.choices.as_ref().is_some_and(|c| !c.is_empty()),
            TaskKind::FillInBlank => self.prompt.text.matches(BLANK).count() == 1,
        };
        if ok && self.time_budget_ticks > 0 {
            Ok(())
        } else {
            Err(TaskError::Invalid(self.task_id.clone()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub task_id: String,
    pub passed: bool,
    pub detail: String,
    pub ticks_used: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("no viable {0:?} task in this scene")]
    NoViableTask(TaskKind),
    #[error("task kind {got:?} cannot be graded this way")]
    KindMismatch { got: TaskKind },
    #[error("no answer key for task {0}")]
    MissingKey(String),
    #[error("malformed task {0}")]
    Invalid(String),
    #[error(transparent)]
    Language(#[from] LanguageError),
}

impl TaskError {
    pub fn code(&self) -> &'static str {
        match self {
            TaskError::NoViableTask(_) => "NoViableTask",
            TaskError::KindMismatch { .. } => "KindMismatch",
            TaskError::MissingKey(_) => "MissingKey",
            TaskError::Invalid(_) => "InvalidTask",
            TaskError::Language(e) => e.code(),
        }
    }
}

/// Relations asked about in questions, in preference order for keys.
pub const ASKED_RELATIONS: [Relation; 4] = [Relation::On, Relation::In, Relation::Under, Relation::Near];

fn holds(scene: &Scene, r: Relation, a: InstanceId, b: InstanceId) -> bool {
    eval_predicate(scene, r, a, b, None).unwrap_or(false)
}

fn unique(scene: &Scene, id: InstanceId) -> bool {
    language::choose_determiner(scene, id) == "the"
}

fn resting(scene: &Scene) -> Vec<InstanceId> {
    scene.instances.iter().filter(|i| i.held_by.is_none()).map(|i| i.instance_id).collect()
}

/// Everything generation needs before the prompt is realized.
struct Draft {
    template: &'static str,
    concept: ConceptId,
    bindings: Bindings,
    extra: BTreeMap<String, String>,
    choices: Option<Vec<String>>,
    accepted: Vec<String>,
    target: Option<Goal>,
    focus: Option<InstanceId>,
}

impl Draft {
    fn new(template: &'static str, concept: ConceptId, bindings: Bindings) -> Draft {
        Draft {
            template,
            concept,
            bindings,
            extra: BTreeMap::new(),
            choices: None,
            accepted: Vec::new(),
            target: None,
            focus: None,
        }
    }

    /// Two shuffled choices, one of them the key.
    fn forced_choice(mut self, key: String, distractor: String, rng: &mut SimRng) -> Draft {
        let mut choices = vec![key.clone(), distractor];
        rng.shuffle(&mut choices);
        for (k, c) in choices.iter().enumerate() {
            self.extra.insert(format!("choice{k}"), c.clone());
        }
        self.choices = Some(choices);
        self.accepted = vec![key];
        self
    }

    fn yes_no(mut self, yes: bool) -> Draft {
        self.choices = Some(vec!["yes".into(), "no".into()]);
        self.accepted = vec![if yes { "yes" } else { "no" }.into()];
        self
    }
}

fn pairs(scene: &Scene, rng: &mut SimRng) -> Vec<(InstanceId, InstanceId)> {
    let ids = resting(scene);
    let mut out: Vec<(InstanceId, InstanceId)> =
        ids.iter().flat_map(|&a| ids.iter().filter(move |&&b| b != a).map(move |&b| (a, b))).collect();
    rng.shuffle(&mut out);
    out
}

fn concept_of(r: Relation) -> ConceptId {
    match r {
        Relation::On => ConceptId::On,
        Relation::In => ConceptId::In,
        Relation::Under => ConceptId::Under,
        _ => ConceptId::Near,
    }
}

fn draft_qa_relation(scene: &Scene, rng: &mut SimRng) -> Option<Draft> {
    for (f, g) in pairs(scene, rng) {
        if !unique(scene, f) || !unique(scene, g) {
            continue;
        }
        let truth: Vec<(Relation, bool)> = ASKED_RELATIONS.iter().map(|&r| (r, holds(scene, r, f, g))).collect();
        let Some(&(key, _)) = truth.iter().find(|(_, t)| *t) else { continue };
        let falses: Vec<Relation> = truth.iter().filter(|(_, t)| !t).map(|(r, _)| *r).collect();
        if falses.is_empty() {
            continue;
        }
        let distractor = falses[rng.index(falses.len())];
        let b = Bindings { figure: Some(f), ground: Some(g), relation: Some(key), ..Bindings::default() };
        return Some(Draft::new("qa_relation", concept_of(key), b).forced_choice(
            key.phrase().into(),
            distractor.phrase().into(),
            rng,
        ));
    }
    None
}

fn draft_fill_relation(scene: &Scene, rng: &mut SimRng) -> Option<Draft> {
    for (f, g) in pairs(scene, rng) {
        if !unique(scene, f) || !unique(scene, g) {
            continue;
        }
        let keys: Vec<Relation> = ASKED_RELATIONS.iter().copied().filter(|&r| holds(scene, r, f, g)).collect();
        if keys.is_empty() || keys.len() == ASKED_RELATIONS.len() {
            continue;
        }
        let b = Bindings { figure: Some(f), ground: Some(g), relation: Some(keys[0]), ..Bindings::default() };
        let mut d = Draft::new("fill_relation", concept_of(keys[0]), b);
        d.accepted = keys.iter().map(|r| r.phrase().to_string()).collect();
        return Some(d);
    }
    None
}

fn shuffled_ids(scene: &Scene, rng: &mut SimRng) -> Vec<InstanceId> {
    let mut ids = resting(scene);
    rng.shuffle(&mut ids);
    ids
}

fn draft_qa_color(scene: &Scene, rng: &mut SimRng) -> Option<Draft> {
    for f in shuffled_ids(scene, rng) {
        let class = scene.class_by_id(f)?;
        let noun = class.noun();
        if scene.instances.iter().filter(|i| scene.class_of(i).noun() == noun).count() != 1 {
            continue;
        }
        let others: Vec<Color> = Color::ALL.iter().copied().filter(|c| *c != class.color).collect();
        let distractor = others[rng.index(others.len())];
        let b = Bindings { figure: Some(f), ..Bindings::default() };
        return Some(Draft::new("qa_color", ConceptId::Color(class.color), b).forced_choice(
            class.color.name().into(),
            distractor.name().into(),
            rng,
        ));
    }
    None
}

fn draft_qa_size(scene: &Scene, rng: &mut SimRng) -> Option<Draft> {
    for f in shuffled_ids(scene, rng) {
        if !unique(scene, f) {
            continue;
        }
        let big = scene.class_by_id(f)?.is_big();
        let (key, other) = if big { (SizeWord::Big, SizeWord::Small) } else { (SizeWord::Small, SizeWord::Big) };
        let b = Bindings { figure: Some(f), ..Bindings::default() };
        return Some(Draft::new("qa_size", ConceptId::Size(key), b).forced_choice(
            key.name().into(),
            other.name().into(),
            rng,
        ));
    }
    None
}

fn draft_qa_noun(scene: &Scene, rng: &mut SimRng) -> Option<Draft> {
    let nouns = scene.catalog.nouns();
    let f = *shuffled_ids(scene, rng).first()?;
    let class = scene.class_by_id(f)?;
    let noun = class.noun();
    let others: Vec<&String> = nouns.iter().filter(|n| **n != noun).collect();
    if others.is_empty() {
        return None;
    }
    let distractor = others[rng.index(others.len())].clone();
    let b = Bindings { figure: Some(f), ..Bindings::default() };
    let mut d = Draft::new("qa_noun", ConceptId::Noun(class.class_id.clone()), b).forced_choice(noun, distractor, rng);
    d.focus = Some(f);
    Some(d)
}

fn draft_fill_determiner(scene: &Scene, rng: &mut SimRng) -> Option<Draft> {
    for (f, g) in pairs(scene, rng) {
        if !unique(scene, g) {
            continue;
        }
        let Some(r) = ASKED_RELATIONS.iter().copied().find(|&r| holds(scene, r, f, g)) else { continue };
        let det = language::choose_determiner(scene, f);
        let concept = if det == "the" { ConceptId::The } else { ConceptId::A };
        let b = Bindings { figure: Some(f), ground: Some(g), relation: Some(r), ..Bindings::default() };
        let mut d = Draft::new("fill_determiner", concept, b);
        d.accepted = vec![det.to_string()];
        return Some(d);
    }
    None
}

/// Same-noun instances other than `f` that are in `g`.
fn others_in(scene: &Scene, f: InstanceId, g: InstanceId) -> Vec<InstanceId> {
    let noun = scene.noun_of(f);
    scene
        .instances
        .iter()
        .filter(|i| i.instance_id != f && i.instance_id != g && scene.noun_of(i.instance_id) == noun)
        .map(|i| i.instance_id)
        .filter(|&x| holds(scene, Relation::In, x, g))
        .collect()
}

fn containers(scene: &Scene) -> Vec<InstanceId> {
    scene
        .instances
        .iter()
        .filter(|i| i.held_by.is_none() && scene.class_of(i).is_container)
        .map(|i| i.instance_id)
        .collect()
}

fn draft_qa_only(scene: &Scene, rng: &mut SimRng) -> Option<Draft> {
    let mut cands: Vec<(InstanceId, InstanceId)> = Vec::new();
    for g in containers(scene) {
        for i in &scene.instances {
            if i.instance_id != g && holds(scene, Relation::In, i.instance_id, g) && unique(scene, i.instance_id) {
                cands.push((i.instance_id, g));
            }
        }
    }
    if cands.is_empty() {
        return None;
    }
    let (f, g) = cands[rng.index(cands.len())];
    if !unique(scene, g) {
        return None;
    }
    let yes = others_in(scene, f, g).is_empty();
    let noun = scene.noun_of(f);
    let distractors: Vec<InstanceId> = scene
        .instances
        .iter()
        .filter(|i| i.instance_id != f && scene.noun_of(i.instance_id) == noun)
        .map(|i| i.instance_id)
        .collect();
    let b = Bindings { figure: Some(f), ground: Some(g), distractors, ..Bindings::default() };
    Some(Draft::new("qa_only", ConceptId::Only, b).yes_no(yes))
}

fn draft_qa_all(scene: &Scene, rng: &mut SimRng) -> Option<Draft> {
    let mut by_noun: BTreeMap<String, Vec<InstanceId>> = BTreeMap::new();
    for i in &scene.instances {
        by_noun.entry(scene.class_of(i).noun()).or_default().push(i.instance_id);
    }
    let mut cands: Vec<(Vec<InstanceId>, InstanceId)> = Vec::new();
    for g in containers(scene) {
        if !unique(scene, g) {
            continue;
        }
        for group in by_noun.values() {
            if group.len() >= 2 && !group.contains(&g) && group.iter().any(|&x| holds(scene, Relation::In, x, g)) {
                cands.push((group.clone(), g));
            }
        }
    }
    if cands.is_empty() {
        return None;
    }
    let (group, g) = cands.swap_remove(rng.index(cands.len()));
    let yes = group.iter().all(|&x| holds(scene, Relation::In, x, g));
    let b = Bindings { figure: group.first().copied(), ground: Some(g), group, ..Bindings::default() };
    Some(Draft::new("qa_all", ConceptId::All, b).yes_no(yes))
}

fn demo_template(concept: &ConceptId) -> Option<&'static str> {
    registry()
        .entry(concept)?
        .tasks
        .iter()
        .find(|t| t.starts_with("demo_"))
        .map(|s| s.as_str())
}

fn draft_demonstrate(scene: &Scene, rng: &mut SimRng) -> Option<Draft> {
    let mut concepts = ConceptId::motion();
    rng.shuffle(&mut concepts);
    for concept in concepts {
        let template = demo_template(&concept)?;
        let entry = registry().entry(&concept)?;
        let mut cands = candidate_bindings(scene, &concept, AgentId::Child);
        rng.shuffle(&mut cands);
        for mut b in cands.into_iter().take(DEMO_TRIES_PER_CONCEPT) {
            b.actor = Some(AgentId::Child);
            let goals = lessons::postconditions(entry.postcondition, &b, AgentId::Child, scene);
            let [goal] = goals.as_slice() else { continue };
            if goal.holds(scene) {
                continue;
            }
            if compile_for(scene, &concept, &b, ComplexityLevel::L2, AgentId::Child).is_err() {
                continue;
            }
            let mut d = Draft::new(template, concept, b);
            d.target = Some(goal.clone());
            return Some(d);
        }
    }
    None
}

type Drafter = fn(&Scene, &mut SimRng) -> Option<Draft>;

fn drafters(kind: TaskKind) -> Vec<Drafter> {
    match kind {
        TaskKind::Demonstrate => vec![draft_demonstrate],
        TaskKind::QA => vec![draft_qa_relation, draft_qa_color, draft_qa_size, draft_qa_noun, draft_qa_only, draft_qa_all],
        TaskKind::FillInBlank => vec![draft_fill_relation, draft_fill_determiner],
    }
}

/// Generates one task of `kind` for the current scene. Deterministic in the
/// scene state and `rng`.
pub fn generate_task(scene: &Scene, kind: TaskKind, rng: &mut SimRng) -> Result<TaskSpec, TaskError> {
    let task_id = format!("t{:016x}", rng.next_u64());
    let mut order = drafters(kind);
    rng.shuffle(&mut order);
    let draft = order
        .into_iter()
        .find_map(|d| d(scene, rng))
        .ok_or(TaskError::NoViableTask(kind))?;
    let template = registry().task(draft.template).expect("template exists");
    let (text, references) =
        fill_template(&template.prompt, scene, &draft.bindings, &draft.concept.head(), &draft.extra)?;
    let prompt = Utterance { text, level: ComplexityLevel::L2, references, concept: draft.concept.clone() };
    let key = AnswerKey { task_id: task_id.clone(), accepted: draft.accepted };
    let task = TaskSpec {
        task_id,
        kind,
        prompt,
        target_predicate: draft.target,
        choices: draft.choices,
        time_budget_ticks: DEFAULT_TIME_BUDGET_TICKS,
        seed: scene.seed,
        template: draft.template.to_string(),
        bindings: draft.bindings,
        issued_tick: scene.tick,
        focus: draft.focus,
        key: if kind == TaskKind::Demonstrate { None } else { Some(key) },
    };
    task.validate()?;
    Ok(task)
}

/// Judges the end state of a demonstration.
pub fn evaluate_demonstration(task: &TaskSpec, final_scene: &Scene) -> Result<Verdict, TaskError> {
    if task.kind != TaskKind::Demonstrate {
        return Err(TaskError::KindMismatch { got: task.kind });
    }
    let goal = task.target_predicate.as_ref().ok_or_else(|| TaskError::Invalid(task.task_id.clone()))?;
    let ticks = final_scene.tick.saturating_sub(task.issued_tick);
    let (passed, detail, ticks_used) = if ticks > task.time_budget_ticks {
        (false, "timeout".to_string(), task.time_budget_ticks)
    } else if goal.holds(final_scene) {
        (true, "target holds".to_string(), ticks)
    } else {
        (false, "target does not hold".to_string(), ticks)
    };
    Ok(Verdict { task_id: task.task_id.clone(), passed, detail, ticks_used })
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Grades a forced-choice or fill-in answer against the sealed key.
pub fn grade_answer(task: &TaskSpec, answer: &str) -> Result<Verdict, TaskError> {
    if task.kind == TaskKind::Demonstrate {
        return Err(TaskError::KindMismatch { got: task.kind });
    }
    let key = task.key.as_ref().ok_or_else(|| TaskError::MissingKey(task.task_id.clone()))?;
    let given = normalize(answer);
    let passed = key.accepted.iter().any(|k| normalize(k) == given);
    let detail = if passed { "correct".to_string() } else { format!("`{}` is not accepted", answer.trim()) };
    Ok(Verdict { task_id: task.task_id.clone(), passed, detail, ticks_used: 0 })
}

/// One TaskSpec per line; keys are never included.
pub fn tasks_to_jsonl(tasks: &[TaskSpec]) -> String {
    tasks.iter().map(|t| serde_json::to_string(t).expect("task serializes") + "\n").collect()
}

pub fn keys_to_jsonl(tasks: &[TaskSpec]) -> String {
    tasks
        .iter()
        .filter_map(|t| t.key.as_ref())
        .map(|k| serde_json::to_string(k).expect("key serializes") + "\n")
        .collect()
}

/// Parses a task file and joins keys by task id.
pub fn load_tasks(tasks_jsonl: &str, keys_jsonl: Option<&str>) -> Result<Vec<TaskSpec>, String> {
    let mut keys: BTreeMap<String, AnswerKey> = BTreeMap::new();
    if let Some(text) = keys_jsonl {
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let k: AnswerKey = serde_json::from_str(line).map_err(|e| format!("key line {}: {e}", n + 1))?;
            keys.insert(k.task_id.clone(), k);
        }
    }
    let mut out = Vec::new();
    for (n, line) in tasks_jsonl.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut t: TaskSpec = serde_json::from_str(line).map_err(|e| format!("task line {}: {e}", n + 1))?;
        t.validate().map_err(|e| format!("task line {}: {e}", n + 1))?;
        t.key = keys.remove(&t.task_id);
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::geometry::Vec3;
    use crate::kinetics::settle;
    use crate::world::{generate_scene, Cell, GridSpec};
    use std::sync::Arc;

    fn room() -> Scene {
        let mut s = Scene::empty(Arc::new(Catalog::desk()), GridSpec::room(10, 10), 3);
        s.agents[0].position = Vec3::new(0.5, 0.5, 0.0);
        s.agents[1].position = Vec3::new(9.5, 0.5, 0.0);
        s
    }

    fn car_on_table() -> (Scene, InstanceId, InstanceId) {
        let mut s = room();
        let table = s.spawn_object(&s.catalog.get("table").unwrap().clone(), Cell::new(5, 5)).unwrap();
        let car = s.insert_instance("toy_car", Vec3::new(5.5, 5.5, 2.0), 0.0).unwrap();
        settle(&mut s);
        (s, car, table)
    }

    #[test]
    fn qa_on_table_matches_example_shape() {
        let (s, car, table) = car_on_table();
        let mut found = false;
        for seed in 0..40 {
            let mut rng = SimRng::new(seed);
            let Some(d) = draft_qa_relation(&s, &mut rng) else { continue };
            if d.bindings.figure == Some(car) && d.bindings.ground == Some(table) {
                assert_eq!(d.accepted, vec!["on".to_string()]);
                let choices = d.choices.clone().unwrap();
                assert!(choices.contains(&"on".to_string()));
                let (text, _) =
                    fill_template("Is {figure} {choice0} {ground} or {choice1} it?", &s, &d.bindings, "", &d.extra).unwrap();
                assert!(text.starts_with("Is the toy car "), "{text}");
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn fill_under_rejects_on() {
        let mut s = room();
        let table = s.spawn_object(&s.catalog.get("table").unwrap().clone(), Cell::new(5, 5)).unwrap();
        let car = s.insert_instance("toy_car", Vec3::new(5.5, 5.5, 0.0), 0.0).unwrap();
        settle(&mut s);
        assert!(holds(&s, Relation::Under, car, table));
        let b = Bindings { figure: Some(car), ground: Some(table), ..Bindings::default() };
        let (text, _) = fill_template("{Figure} is ___ {ground}.", &s, &b, "", &BTreeMap::new()).unwrap();
        assert_eq!(text, "The toy car is ___ the table.");
        let mut rng = SimRng::new(1);
        let task = loop {
            let t = generate_task(&s, TaskKind::FillInBlank, &mut rng).unwrap();
            if t.template == "fill_relation" && t.bindings.figure == Some(car) {
                break t;
            }
        };
        assert!(task.key().unwrap().accepted.contains(&"under".to_string()));
        assert!(!grade_answer(&task, "on").unwrap().passed);
        assert!(grade_answer(&task, " UNDER ").unwrap().passed);
    }

    #[test]
    fn grading_normalizes_and_checks_kind() {
        let (s, _, _) = car_on_table();
        let mut rng = SimRng::new(2);
        let t = generate_task(&s, TaskKind::QA, &mut rng).unwrap();
        let key = t.key().unwrap().accepted[0].clone();
        assert!(grade_answer(&t, &format!("{} ", key.to_uppercase())).unwrap().passed);
        let mut demo = t.clone();
        demo.kind = TaskKind::Demonstrate;
        assert!(matches!(grade_answer(&demo, "on"), Err(TaskError::KindMismatch { .. })));
        assert!(matches!(evaluate_demonstration(&t, &s), Err(TaskError::KindMismatch { .. })));
    }

    #[test]
    fn demonstration_budget_and_untouched() {
        let s = generate_scene(Arc::new(Catalog::desk()), GridSpec::room(10, 10), 8, 11).unwrap();
        let mut rng = SimRng::new(5);
        let task = generate_task(&s, TaskKind::Demonstrate, &mut rng).unwrap();
        assert!(task.key().is_none());
        let v = evaluate_demonstration(&task, &s).unwrap();
        assert!(!v.passed);
        let mut late = s.clone();
        late.tick += task.time_budget_ticks + 1;
        let v = evaluate_demonstration(&task, &late).unwrap();
        assert_eq!((v.passed, v.detail.as_str(), v.ticks_used), (false, "timeout", task.time_budget_ticks));
    }

    #[test]
    fn determinism_and_jsonl_roundtrip() {
        let s = generate_scene(Arc::new(Catalog::desk()), GridSpec::room(10, 10), 10, 7).unwrap();
        let a: Vec<TaskSpec> = {
            let mut rng = SimRng::new(3);
            (0..6).filter_map(|k| generate_task(&s, [TaskKind::QA, TaskKind::FillInBlank][k % 2], &mut rng).ok()).collect()
        };
        let b: Vec<TaskSpec> = {
            let mut rng = SimRng::new(3);
            (0..6).filter_map(|k| generate_task(&s, [TaskKind::QA, TaskKind::FillInBlank][k % 2], &mut rng).ok()).collect()
        };
        assert_eq!(a, b);
        assert!(a.len() >= 3);
        let text = tasks_to_jsonl(&a);
        assert!(!text.contains("accepted"));
        let loaded = load_tasks(&text, Some(&keys_to_jsonl(&a))).unwrap();
        assert_eq!(loaded, a);
        assert_eq!(loaded[0].key(), a[0].key());
    }

    #[test]
    fn empty_room_has_no_qa() {
        let s = room();
        assert_eq!(generate_task(&s, TaskKind::QA, &mut SimRng::new(1)), Err(TaskError::NoViableTask(TaskKind::QA)));
    }
}
