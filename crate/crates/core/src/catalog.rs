//! Object-asset catalog: per-class primitive geometry, category and semantic
//! attributes.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

/// The desk-scale catalog shipped with the crate.
pub const DESK_CATALOG_JSON: &str = include_str!("../data/desk_catalog.json");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("schema error in class `{class_id}`, field `{field}`: {reason}")]
    Schema {
        class_id: String,
        field: &'static str,
        reason: String,
    },
    #[error("catalog io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("no class matches the filter")]
    EmptyFilter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Static,
    Interactable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Box,
    Sphere,
    Cylinder,
    OpenBox,
}

/// Closed 12-color palette; language templates rely on this vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Orange,
    Purple,
    Pink,
    Brown,
    Black,
    White,
    Gray,
    Cyan,
}

impl Color {
    pub const ALL: [Color; 12] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Orange,
        Color::Purple,
        Color::Pink,
        Color::Brown,
        Color::Black,
        Color::White,
        Color::Gray,
        Color::Cyan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Orange => "orange",
            Color::Purple => "purple",
            Color::Pink => "pink",
            Color::Brown => "brown",
            Color::Black => "black",
            Color::White => "white",
            Color::Gray => "gray",
            Color::Cyan => "cyan",
        }
    }

    /// Linear RGB albedo.
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [0.80, 0.05, 0.05],
            Color::Green => [0.05, 0.60, 0.10],
            Color::Blue => [0.05, 0.15, 0.80],
            Color::Yellow => [0.90, 0.80, 0.05],
            Color::Orange => [0.90, 0.40, 0.05],
            Color::Purple => [0.45, 0.10, 0.60],
            Color::Pink => [0.95, 0.45, 0.60],
            Color::Brown => [0.40, 0.22, 0.10],
            Color::Black => [0.03, 0.03, 0.03],
            Color::White => [0.92, 0.92, 0.92],
            Color::Gray => [0.45, 0.45, 0.45],
            Color::Cyan => [0.05, 0.75, 0.80],
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Color {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Color::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown color `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectClass {
    pub class_id: String,
    pub category: Category,
    pub shape: Shape,
    /// Full size along local x, y, z in units.
    pub extents: [f64; 3],
    pub color: Color,
    pub mass: f64,
    pub graspable: bool,
    pub is_container: bool,
    pub is_surface: bool,
    /// Open space below the solid top (tables, chairs). Zero for solid objects.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub clearance: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl ObjectClass {
    /// The spoken noun: the class id without a leading palette color, with
    /// underscores as spaces (`red_ball` -> `ball`, `toy_car` -> `toy car`).
    pub fn noun(&self) -> String {
        noun_of_class_id(&self.class_id)
    }

    /// Largest extent of at least half a unit counts as big.
    pub fn is_big(&self) -> bool {
        self.extents.iter().copied().fold(0.0, f64::max) >= 0.5
    }

    pub fn height(&self) -> f64 {
        self.extents[2]
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let fail = |field: &'static str, reason: &str| CatalogError::Schema {
            class_id: self.class_id.clone(),
            field,
            reason: reason.to_string(),
        };
        if self.class_id.trim().is_empty() {
            return Err(fail("class_id", "must be non-empty"));
        }
        if self.extents.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(fail("extents", "all extents must be positive"));
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(fail("mass", "must be positive"));
        }
        if self.category == Category::Static && self.graspable {
            return Err(fail("graspable", "Static classes cannot be graspable"));
        }
        if self.is_container && self.shape != Shape::OpenBox {
            return Err(fail("is_container", "containers must have shape OpenBox"));
        }
        match self.shape {
            Shape::Sphere if !(self.extents[0] == self.extents[1] && self.extents[1] == self.extents[2]) => {
                return Err(fail("extents", "Sphere extents must be equal"));
            }
            Shape::Cylinder if self.extents[0] != self.extents[1] => {
                return Err(fail("extents", "Cylinder x and y extents must be equal"));
            }
            _ => {}
        }
        if !(self.clearance.is_finite() && self.clearance >= 0.0) {
            return Err(fail("clearance", "must be non-negative"));
        }
        if self.clearance > 0.0 && (self.shape != Shape::Box || self.clearance >= self.extents[2]) {
            return Err(fail("clearance", "only Box classes may have clearance, below their height"));
        }
        Ok(())
    }
}

pub fn noun_of_class_id(class_id: &str) -> String {
    let stripped = Color::ALL
        .iter()
        .find_map(|c| class_id.strip_prefix(c.name()).and_then(|r| r.strip_prefix('_')))
        .unwrap_or(class_id);
    stripped.replace('_', " ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub version: String,
    pub classes: Vec<ObjectClass>,
}

/// Predicate used by [`Catalog::sample_class`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassFilter {
    Any,
    Category(Category),
    Graspable,
    Container,
    Surface,
}

impl ClassFilter {
    pub fn matches(self, class: &ObjectClass) -> bool {
        match self {
            ClassFilter::Any => true,
            ClassFilter::Category(c) => class.category == c,
            ClassFilter::Graspable => class.graspable,
            ClassFilter::Container => class.is_container,
            ClassFilter::Surface => class.is_surface,
        }
    }
}

impl Catalog {
    /// The bundled 24-class desk catalog.
    pub fn desk() -> Catalog {
        Catalog::from_json(DESK_CATALOG_JSON).expect("bundled desk catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Catalog, CatalogError> {
        let catalog: Catalog =
            serde_json::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    /// Checks every class invariant and id uniqueness.
    ///
    /// The lesson-role requirement (a surface, a graspable and a container
    /// class) is checked separately by [`Catalog::supports_lessons`] so that
    /// partial catalogs can still be loaded and inspected.
    pub fn validate(&self) -> Result<(), CatalogError> {
        let mut seen = HashSet::new();
        for class in &self.classes {
            class.validate()?;
            if !seen.insert(class.class_id.as_str()) {
                return Err(CatalogError::Schema {
                    class_id: class.class_id.clone(),
                    field: "class_id",
                    reason: "duplicate class_id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn supports_lessons(&self) -> bool {
        let has = |f: &dyn Fn(&ObjectClass) -> bool| self.classes.iter().any(f);
        has(&|c| c.category == Category::Static && c.is_surface)
            && has(&|c| c.category == Category::Interactable && c.graspable)
            && has(&|c| c.is_container)
    }

    pub fn get(&self, class_id: &str) -> Option<&ObjectClass> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    /// (static, interactable) class counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let statics = self
            .classes
            .iter()
            .filter(|c| c.category == Category::Static)
            .count();
        (statics, self.classes.len() - statics)
    }

    /// Uniform choice among matching classes. Always consumes exactly one
    /// 64-bit draw, even when nothing matches.
    pub fn sample_class(
        &self,
        rng: &mut SimRng,
        filter: ClassFilter,
    ) -> Result<&ObjectClass, CatalogError> {
        let draw = rng.next_u64();
        let matching: Vec<&ObjectClass> =
            self.classes.iter().filter(|c| filter.matches(c)).collect();
        if matching.is_empty() {
            return Err(CatalogError::EmptyFilter);
        }
        let idx = ((u128::from(draw) * matching.len() as u128) >> 64) as usize;
        Ok(matching[idx])
    }

    pub fn nouns(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.classes {
            let n = c.noun();
            if !out.contains(&n) {
                out.push(n);
            }
        }
        out
    }
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let text = std::fs::read_to_string(path)?;
    Catalog::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball() -> ObjectClass {
        ObjectClass {
            class_id: "red_ball".into(),
            category: Category::Interactable,
            shape: Shape::Sphere,
            extents: [0.2, 0.2, 0.2],
            color: Color::Red,
            mass: 0.1,
            graspable: true,
            is_container: false,
            is_surface: false,
            clearance: 0.0,
        }
    }

    #[test]
    fn desk_catalog_counts() {
        let desk = Catalog::desk();
        assert_eq!(desk.classes.len(), 24);
        assert_eq!(desk.class_counts(), (6, 18));
        assert!(desk.supports_lessons());
    }

    #[test]
    fn empty_catalog_counts() {
        let c = Catalog { version: "0".into(), classes: vec![] };
        assert_eq!(c.class_counts(), (0, 0));
    }

    #[test]
    fn static_graspable_is_rejected() {
        let mut c = ball();
        c.category = Category::Static;
        let cat = Catalog { version: "x".into(), classes: vec![c] };
        match cat.validate() {
            Err(CatalogError::Schema { class_id, field, .. }) => {
                assert_eq!(class_id, "red_ball");
                assert_eq!(field, "graspable");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn container_requires_open_box() {
        let mut c = ball();
        c.is_container = true;
        let cat = Catalog { version: "x".into(), classes: vec![c] };
        assert!(matches!(cat.validate(), Err(CatalogError::Schema { field: "is_container", .. })));
    }

    #[test]
    fn unknown_fields_and_colors_are_rejected() {
        let text = r#"{"version":"1","classes":[{"class_id":"a","category":"Interactable","shape":"Box",
            "extents":[1,1,1],"color":"red","mass":1,"graspable":true,"is_container":false,
            "is_surface":false,"wings":2}]}"#;
        assert!(matches!(Catalog::from_json(text), Err(CatalogError::Parse(_))));
        let text = text.replace(r#","wings":2"#, "").replace("\"red\"", "\"glorp\"");
        assert!(matches!(Catalog::from_json(&text), Err(CatalogError::Parse(_))));
    }

    #[test]
    fn sample_interactable_from_desk() {
        let desk = Catalog::desk();
        let mut rng = SimRng::new(3);
        for _ in 0..50 {
            let c = desk
                .sample_class(&mut rng, ClassFilter::Category(Category::Interactable))
                .unwrap();
            assert_eq!(c.category, Category::Interactable);
        }
    }

    #[test]
    fn single_match_is_forced() {
        let cat = Catalog { version: "x".into(), classes: vec![ball()] };
        for seed in 0..10 {
            let mut rng = SimRng::new(seed);
            assert_eq!(cat.sample_class(&mut rng, ClassFilter::Any).unwrap().class_id, "red_ball");
        }
    }

    #[test]
    fn empty_filter_consumes_a_draw() {
        let cat = Catalog { version: "x".into(), classes: vec![ball()] };
        let mut a = SimRng::new(5);
        let mut b = SimRng::new(5);
        assert!(matches!(
            cat.sample_class(&mut a, ClassFilter::Container),
            Err(CatalogError::EmptyFilter)
        ));
        cat.sample_class(&mut b, ClassFilter::Any).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nouns_strip_color_prefix() {
        assert_eq!(noun_of_class_id("red_ball"), "ball");
        assert_eq!(noun_of_class_id("toy_car"), "toy car");
        assert_eq!(noun_of_class_id("box_lid"), "box lid");
    }
}
