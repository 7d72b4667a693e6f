//! Template-based grounded utterances at three complexity levels, and
//! noun-phrase reference resolution back to scene objects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentId;
use crate::catalog::Color;
use crate::lessons::{registry, Bindings, ConceptId};
use crate::world::{InstanceId, Scene, CHILD_ID, PARENT_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComplexityLevel {
    /// Single word.
    L0,
    /// Two-word telegraphic.
    L1,
    /// Full sentence.
    L2,
}

impl ComplexityLevel {
    pub const ALL: [ComplexityLevel; 3] = [ComplexityLevel::L0, ComplexityLevel::L1, ComplexityLevel::L2];
}

impl fmt::Display for ComplexityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComplexityLevel::L0 => "L0",
            ComplexityLevel::L1 => "L1",
            ComplexityLevel::L2 => "L2",
        })
    }
}

impl FromStr for ComplexityLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "L0" | "0" => Ok(ComplexityLevel::L0),
            "L1" | "1" => Ok(ComplexityLevel::L1),
            "L2" | "2" => Ok(ComplexityLevel::L2),
            _ => Err(format!("unknown level `{s}`")),
        }
    }
}

/// A noun phrase occurrence: half-open character offsets into the text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub span: [usize; 2],
    pub instance_id: InstanceId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub level: ComplexityLevel,
    pub references: Vec<Reference>,
    pub concept: ConceptId,
}

impl Utterance {
    /// The referenced substring.
    pub fn span_text(&self, r: &Reference) -> String {
        self.text.chars().skip(r.span[0]).take(r.span[1] - r.span[0]).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LanguageError {
    #[error("missing binding `{0}`")]
    MissingBinding(&'static str),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("template error: {0}")]
    Template(String),
    #[error("unparseable phrase `{0}`")]
    UnparseablePhrase(String),
    #[error("unknown noun `{0}`")]
    UnknownNoun(String),
    #[error("unknown color `{0}`")]
    UnknownColor(String),
}

impl LanguageError {
    pub fn code(&self) -> &'static str {
        match self {
            LanguageError::MissingBinding(_) => "MissingBinding",
            LanguageError::UnknownInstance(_) => "UnknownInstance",
            LanguageError::Template(_) => "Template",
            LanguageError::UnparseablePhrase(_) => "UnparseablePhrase",
            LanguageError::UnknownNoun(_) => "UnknownNoun",
            LanguageError::UnknownColor(_) => "UnknownColor",
        }
    }
}

/// Words of the closed class allowed in full sentences.
pub const CLOSED_CLASS: [&str; 12] = ["the", "a", "is", "are", "on", "in", "under", "near", "not", "only", "all", "and"];

pub fn plural(noun: &str) -> String {
    match registry().plurals.get(noun) {
        Some(p) => p.clone(),
        None => format!("{noun}s"),
    }
}

fn agent_noun(id: InstanceId) -> Option<&'static str> {
    AgentId::from_instance_id(id).map(|a| a.name())
}

fn noun_color(scene: &Scene, id: InstanceId) -> Option<(String, Color)> {
    let class = scene.class_by_id(id)?;
    Some((class.noun(), class.color))
}

/// "the" when (noun, color) singles the instance out in the scene, else "a".
pub fn choose_determiner(scene: &Scene, id: InstanceId) -> &'static str {
    if agent_noun(id).is_some() {
        return "the";
    }
    let Some(key) = noun_color(scene, id) else { return "a" };
    let same = scene
        .instances
        .iter()
        .filter(|i| noun_color(scene, i.instance_id).as_ref() == Some(&key))
        .count();
    if same == 1 {
        "the"
    } else {
        "a"
    }
}

/// Whether another instance shares the noun but has a different color.
pub fn color_needed(scene: &Scene, id: InstanceId) -> bool {
    let Some((noun, color)) = noun_color(scene, id) else { return false };
    scene.instances.iter().any(|i| {
        noun_color(scene, i.instance_id).is_some_and(|(n, c)| n == noun && c != color)
    })
}

/// Noun with its color word when the color is needed to tell it apart.
pub fn modified_noun(scene: &Scene, id: InstanceId) -> Result<String, LanguageError> {
    if let Some(n) = agent_noun(id) {
        return Ok(n.to_string());
    }
    let (noun, color) = noun_color(scene, id).ok_or(LanguageError::UnknownInstance(id))?;
    Ok(if color_needed(scene, id) { format!("{} {noun}", color.name()) } else { noun })
}

/// `[determiner] [color] noun`, lower case.
pub fn noun_phrase(scene: &Scene, id: InstanceId) -> Result<String, LanguageError> {
    Ok(format!("{} {}", choose_determiner(scene, id), modified_noun(scene, id)?))
}

/// Definite plural for a set of same-noun instances: "the balls", or
/// "the green balls" when they share a color that needs stating.
pub fn plural_phrase(scene: &Scene, ids: &[InstanceId]) -> Result<String, LanguageError> {
    let first = *ids.first().ok_or(LanguageError::MissingBinding("group"))?;
    let (noun, color) = noun_color(scene, first).ok_or(LanguageError::UnknownInstance(first))?;
    let mut same_color = true;
    for &id in ids {
        let (n, c) = noun_color(scene, id).ok_or(LanguageError::UnknownInstance(id))?;
        if n != noun {
            return Err(LanguageError::Template("plural group mixes nouns".into()));
        }
        same_color &= c == color;
    }
    let with_color = same_color && color_needed(scene, first);
    Ok(if with_color {
        format!("the {} {}", color.name(), plural(&noun))
    } else {
        format!("the {}", plural(&noun))
    })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Incrementally built text with reference spans.
struct Builder {
    text: String,
    chars: usize,
    references: Vec<Reference>,
}

impl Builder {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn push_ref(&mut self, s: &str, ids: &[InstanceId]) {
        let start = self.chars;
        self.push(s);
        for &id in ids {
            if agent_noun(id).is_none() {
                self.references.push(Reference { span: [start, self.chars], instance_id: id });
            }
        }
    }
}

/// Fills a template. Placeholders: `{figure}` `{ground}` (noun phrases,
/// capitalized as `{Figure}`), `{figure.noun}`, `{figure.color}`,
/// `{figure.size}`, `{figure.bare}` (determiner and noun without color),
/// `{figure.nodet}` (noun phrase without determiner), `{figures}`,
/// `{group.plural}`, `{distractors}`, `{rel}`, `{actor}`, `{head}`, and any
/// key of `extra`.
pub fn fill_template(
    template: &str,
    scene: &Scene,
    bindings: &Bindings,
    head: &str,
    extra: &BTreeMap<String, String>,
) -> Result<(String, Vec<Reference>), LanguageError> {
    let mut b = Builder { text: String::new(), chars: 0, references: Vec::new() };
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        b.push(&rest[..open]);
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| LanguageError::Template(format!("unclosed placeholder in `{template}`")))?
            + open;
        let key = &rest[open + 1..close];
        rest = &rest[close + 1..];
        let cap = key.chars().next().is_some_and(|c| c.is_ascii_uppercase());
        let lower = key.to_ascii_lowercase();
        let fix = |s: String| if cap { capitalize(&s) } else { s };
        let figure = || bindings.figure.ok_or(LanguageError::MissingBinding("figure"));
        match lower.as_str() {
            "figure" | "ground" => {
                let id = if lower == "figure" {
                    figure()?
                } else {
                    bindings.ground.ok_or(LanguageError::MissingBinding("ground"))?
                };
                b.push_ref(&fix(noun_phrase(scene, id)?), &[id]);
            }
            "figure.noun" | "ground.noun" => {
                let id = if lower == "figure.noun" {
                    figure()?
                } else {
                    bindings.ground.ok_or(LanguageError::MissingBinding("ground"))?
                };
                let noun = match agent_noun(id) {
                    Some(n) => n.to_string(),
                    None => noun_color(scene, id).ok_or(LanguageError::UnknownInstance(id))?.0,
                };
                b.push_ref(&fix(noun), &[id]);
            }
            "figure.color" => {
                let id = figure()?;
                let (_, c) = noun_color(scene, id).ok_or(LanguageError::UnknownInstance(id))?;
                b.push(&fix(c.name().to_string()));
            }
            "figure.size" => {
                let id = figure()?;
                let class = scene.class_by_id(id).ok_or(LanguageError::UnknownInstance(id))?;
                b.push(&fix(if class.is_big() { "big" } else { "small" }.to_string()));
            }
            "figure.bare" => {
                let id = figure()?;
                let (noun, _) = noun_color(scene, id).ok_or(LanguageError::UnknownInstance(id))?;
                let unique = scene
                    .instances
                    .iter()
                    .filter(|i| noun_color(scene, i.instance_id).is_some_and(|(n, _)| n == noun))
                    .count()
                    == 1;
                let det = if unique { "the" } else { "a" };
                b.push_ref(&fix(format!("{det} {noun}")), &[id]);
            }
            "figure.nodet" => {
                let id = figure()?;
                b.push_ref(&fix(modified_noun(scene, id)?), &[id]);
            }
            "figures" => {
                let ids = &bindings.group;
                b.push_ref(&fix(plural_phrase(scene, ids)?), ids);
            }
            "group.plural" => {
                let first = *bindings.group.first().ok_or(LanguageError::MissingBinding("group"))?;
                let (noun, _) = noun_color(scene, first).ok_or(LanguageError::UnknownInstance(first))?;
                b.push_ref(&fix(plural(&noun)), &bindings.group);
            }
            "distractors" => {
                let ids = &bindings.distractors;
                if ids.is_empty() {
                    return Err(LanguageError::MissingBinding("distractors"));
                }
                b.push_ref(&fix(plural_phrase(scene, ids)?), ids);
            }
            "rel" => {
                let r = bindings.relation.ok_or(LanguageError::MissingBinding("relation"))?;
                b.push(&fix(r.phrase().to_string()));
            }
            "actor" => {
                let a = bindings.actor.unwrap_or(AgentId::Parent);
                b.push(&fix(format!("the {}", a.name())));
            }
            "head" => b.push(&fix(head.to_string())),
            other => match extra.get(other) {
                Some(v) => b.push(&fix(v.clone())),
                None => return Err(LanguageError::Template(format!("unknown placeholder `{key}`"))),
            },
        }
    }
    b.push(rest);
    Ok((b.text, b.references))
}

/// Instantiates the concept's first template at `level`.
pub fn realize(
    concept: &ConceptId,
    bindings: &Bindings,
    level: ComplexityLevel,
    scene: &Scene,
) -> Result<Utterance, LanguageError> {
    let entry = registry()
        .entry(concept)
        .ok_or_else(|| LanguageError::Template(format!("no templates for {concept}")))?;
    let template = entry
        .utterances
        .get(&level)
        .and_then(|v| v.first())
        .ok_or_else(|| LanguageError::Template(format!("{concept} has no {level} template")))?;
    let (text, references) = fill_template(template, scene, bindings, &concept.head(), &BTreeMap::new())?;
    Ok(Utterance { text, level, references, concept: concept.clone() })
}

/// Parsed noun-phrase constraints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NounPhrase {
    pub determiner: Option<String>,
    pub color: Option<Color>,
    pub noun: String,
    pub plural: bool,
}

/// Nouns known to the scene's catalog plus the two agents.
fn lexicon(scene: &Scene) -> Vec<String> {
    let mut nouns: BTreeSet<String> = scene.catalog.nouns().into_iter().collect();
    nouns.insert("child".into());
    nouns.insert("parent".into());
    nouns.into_iter().collect()
}

pub fn parse_noun_phrase(phrase: &str, scene: &Scene) -> Result<NounPhrase, LanguageError> {
    let cleaned: String = phrase
        .trim()
        .trim_end_matches(['.', '!', '?', ','])
        .to_lowercase();
    let mut tokens: Vec<&str> = cleaned.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(LanguageError::UnparseablePhrase(phrase.to_string()));
    }
    let mut determiner = None;
    if tokens.len() >= 2 && tokens[0] == "all" && tokens[1] == "the" {
        determiner = Some("all the".to_string());
        tokens.drain(..2);
    } else if matches!(tokens[0], "the" | "a" | "an" | "all") {
        determiner = Some(tokens[0].to_string());
        tokens.remove(0);
    }
    if tokens.is_empty() {
        return Err(LanguageError::UnparseablePhrase(phrase.to_string()));
    }
    let nouns = lexicon(scene);
    let mut found: Option<(usize, String, bool)> = None;
    for k in (1..=tokens.len().min(3)).rev() {
        let cand = tokens[tokens.len() - k..].join(" ");
        if nouns.contains(&cand) {
            found = Some((k, cand, false));
            break;
        }
        if let Some(n) = nouns.iter().find(|n| plural(n) == cand) {
            found = Some((k, n.clone(), true));
            break;
        }
    }
    let Some((k, noun, is_plural)) = found else {
        return Err(LanguageError::UnknownNoun(tokens[tokens.len() - 1].to_string()));
    };
    let prefix = &tokens[..tokens.len() - k];
    let color = match prefix {
        [] => None,
        [c] => Some(Color::from_str(c).map_err(|_| LanguageError::UnknownColor(c.to_string()))?),
        _ => return Err(LanguageError::UnparseablePhrase(phrase.to_string())),
    };
    Ok(NounPhrase { determiner, color, noun, plural: is_plural })
}

/// Every instance matching the phrase's noun and color. A definite phrase
/// with several matches still returns them all.
pub fn resolve_reference(
    phrase: &str,
    scene: &Scene,
    _observer: Option<AgentId>,
) -> Result<BTreeSet<InstanceId>, LanguageError> {
    let np = parse_noun_phrase(phrase, scene)?;
    match np.noun.as_str() {
        "child" if scene.catalog.get("child").is_none() => return Ok(BTreeSet::from([CHILD_ID])),
        "parent" if scene.catalog.get("parent").is_none() => return Ok(BTreeSet::from([PARENT_ID])),
        _ => {}
    }
    Ok(scene
        .instances
        .iter()
        .filter(|i| {
            let class = scene.class_of(i);
            class.noun() == np.noun && np.color.is_none_or(|c| class.color == c)
        })
        .map(|i| i.instance_id)
        .collect())
}

/// Whether a phrase is a singular definite description.
pub fn is_definite_singular(phrase: &str, scene: &Scene) -> bool {
    parse_noun_phrase(phrase, scene)
        .map(|np| np.determiner.as_deref() == Some("the") && !np.plural)
        .unwrap_or(false)
}

/// Lower-case word tokens of a sentence, punctuation stripped.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || c == ',' || c == '.' || c == '?' || c == '!')
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::geometry::Vec3;
    use crate::world::GridSpec;
    use std::sync::Arc;

    fn scene_with(classes: &[&str]) -> (Scene, Vec<InstanceId>) {
        let mut s = Scene::empty(Arc::new(Catalog::desk()), GridSpec::room(10, 10), 1);
        let ids = classes
            .iter()
            .enumerate()
            .map(|(k, c)| s.insert_instance(c, Vec3::new(0.5 + k as f64, 0.5, 0.0), 0.0).unwrap())
            .collect();
        (s, ids)
    }

    #[test]
    fn determiner_follows_uniqueness() {
        let (s, ids) = scene_with(&["red_ball"]);
        assert_eq!(choose_determiner(&s, ids[0]), "the");
        let (s, ids) = scene_with(&["red_ball", "red_ball"]);
        assert_eq!(choose_determiner(&s, ids[0]), "a");
        let (s, ids) = scene_with(&["red_ball", "green_ball", "green_ball"]);
        assert_eq!(choose_determiner(&s, ids[0]), "the");
        assert_eq!(noun_phrase(&s, ids[0]).unwrap(), "the red ball");
        assert_eq!(noun_phrase(&s, ids[1]).unwrap(), "a green ball");
    }

    #[test]
    fn color_is_omitted_when_noun_is_unambiguous() {
        let (s, ids) = scene_with(&["cup", "table"]);
        assert_eq!(noun_phrase(&s, ids[0]).unwrap(), "the cup");
    }

    #[test]
    fn on_levels() {
        let (s, ids) = scene_with(&["cup", "table"]);
        let b = Bindings { figure: Some(ids[0]), ground: Some(ids[1]), ..Bindings::default() };
        let on = ConceptId::On;
        assert_eq!(realize(&on, &b, ComplexityLevel::L0, &s).unwrap().text, "on");
        assert_eq!(realize(&on, &b, ComplexityLevel::L1, &s).unwrap().text, "cup on");
        let u = realize(&on, &b, ComplexityLevel::L2, &s).unwrap();
        assert_eq!(u.text, "The cup is on the table.");
        assert_eq!(u.references[0], Reference { span: [0, 7], instance_id: ids[0] });
        assert_eq!(u.span_text(&u.references[1]), "the table");
    }

    #[test]
    fn only_sentence() {
        let (s, ids) = scene_with(&["red_ball", "box", "green_ball", "green_ball"]);
        let b = Bindings {
            figure: Some(ids[0]),
            ground: Some(ids[1]),
            distractors: vec![ids[2], ids[3]],
            ..Bindings::default()
        };
        let u = realize(&ConceptId::Only, &b, ComplexityLevel::L2, &s).unwrap();
        assert_eq!(u.text, "Only the red ball is in the box, not the green balls.");
    }

    #[test]
    fn resolve_examples() {
        let (s, ids) = scene_with(&["red_ball", "green_ball", "blue_ball", "toy_car"]);
        assert_eq!(resolve_reference("the red ball", &s, None).unwrap(), BTreeSet::from([ids[0]]));
        assert_eq!(resolve_reference("a ball", &s, None).unwrap().len(), 3);
        assert_eq!(
            resolve_reference("the glorping ball", &s, None),
            Err(LanguageError::UnknownColor("glorping".into()))
        );
        assert_eq!(
            resolve_reference("the red zorp", &s, None),
            Err(LanguageError::UnknownNoun("zorp".into()))
        );
        assert!(matches!(resolve_reference("", &s, None), Err(LanguageError::UnparseablePhrase(_))));
        assert_eq!(resolve_reference("The toy car", &s, None).unwrap(), BTreeSet::from([ids[3]]));
        assert_eq!(resolve_reference("the balls", &s, None).unwrap().len(), 3);
    }

    #[test]
    fn irregular_plural_from_registry() {
        assert_eq!(plural("box"), "boxes");
        assert_eq!(plural("shelf"), "shelves");
        assert_eq!(plural("cup"), "cups");
    }
}
