//! Quasi-static physics: bounds, gravity settling, support and containment,
//! contacts, and the spatial predicate evaluator.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentId, Posture, AGENT_RADIUS};
use crate::catalog::ObjectClass;
use crate::geometry::{rotated_half_extents, Aabb, Rect, Vec3};
use crate::world::{InstanceId, ObjectInstance, Scene};

pub const CONTACT_EPSILON: f64 = 1e-3;
/// Near holds within this multiple of the summed footprint radii.
pub const NEAR_FACTOR: f64 = 1.5;
/// Container wall thickness as a fraction of each extent.
pub const WALL_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    On,
    In,
    Under,
    Near,
    Touching,
    LeftOf,
    RightOf,
    Behind,
    InFrontOf,
}

impl Relation {
    pub const ALL: [Relation; 9] = [
        Relation::On,
        Relation::In,
        Relation::Under,
        Relation::Near,
        Relation::Touching,
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Behind,
        Relation::InFrontOf,
    ];

    pub fn needs_observer(self) -> bool {
        matches!(self, Relation::LeftOf | Relation::RightOf | Relation::Behind | Relation::InFrontOf)
    }

    /// Surface preposition used in utterances.
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::On => "on",
            Relation::In => "in",
            Relation::Under => "under",
            Relation::Near => "near",
            Relation::Touching => "touching",
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Behind => "behind",
            Relation::InFrontOf => "in front of",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PredicateError {
    #[error("predicate operands are the same instance {0}")]
    IdenticalOperands(InstanceId),
    #[error("relation {0:?} needs an observer")]
    MissingObserver(Relation),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
}

impl PredicateError {
    pub fn code(&self) -> &'static str {
        match self {
            PredicateError::IdenticalOperands(_) => "IdenticalOperands",
            PredicateError::MissingObserver(_) => "MissingObserver",
            PredicateError::UnknownInstance(_) => "UnknownInstance",
        }
    }
}

/// Bounds of `class` placed at `position` with `yaw`. The vertical range is
/// the solid body, so a table's legs-only clearance lies below `min.z`.
pub fn aabb_at(class: &ObjectClass, position: Vec3, yaw: f64) -> Aabb {
    let (hx, hy) = rotated_half_extents(class, yaw);
    Aabb::new(
        Vec3::new(position.x - hx, position.y - hy, position.z + class.clearance),
        Vec3::new(position.x + hx, position.y + hy, position.z + class.extents[2]),
    )
}

pub fn aabb_of(instance: &ObjectInstance, class: &ObjectClass) -> Aabb {
    aabb_at(class, instance.position, instance.yaw)
}

/// Inner cavity of an open box: 10% walls on each side, 10% floor.
pub fn cavity_of(instance: &ObjectInstance, class: &ObjectClass) -> Option<Aabb> {
    if !class.is_container {
        return None;
    }
    let outer = aabb_of(instance, class);
    let wx = WALL_FRACTION * (outer.max.x - outer.min.x);
    let wy = WALL_FRACTION * (outer.max.y - outer.min.y);
    Some(Aabb::new(
        Vec3::new(outer.min.x + wx, outer.min.y + wy, instance.position.z + WALL_FRACTION * class.extents[2]),
        Vec3::new(outer.max.x - wx, outer.max.y - wy, outer.max.z),
    ))
}

pub fn agent_height(agent: AgentId, posture: Posture) -> f64 {
    match (agent, posture) {
        (_, Posture::Crawl) => 0.5,
        (AgentId::Child, Posture::Stand) => 1.0,
        (AgentId::Parent, Posture::Stand) => 1.7,
    }
}

/// Bounds of an object instance or an agent body.
pub fn entity_aabb(scene: &Scene, id: InstanceId) -> Option<Aabb> {
    if let Some(agent) = AgentId::from_instance_id(id) {
        let a = scene.agent(agent);
        let h = agent_height(agent, a.posture);
        return Some(Aabb::new(
            Vec3::new(a.position.x - AGENT_RADIUS, a.position.y - AGENT_RADIUS, a.position.z),
            Vec3::new(a.position.x + AGENT_RADIUS, a.position.y + AGENT_RADIUS, a.position.z + h),
        ));
    }
    scene.aabb(id)
}

/// Height something with footprint `fp` comes to rest at when it lands on `s`.
fn support_height(scene: &Scene, s: &ObjectInstance, fp: &Rect) -> f64 {
    let class = scene.class_of(s);
    if let Some(cav) = cavity_of(s, class) {
        if cav.footprint().contains_rect(fp, 1e-9) {
            return cav.min.z;
        }
    }
    aabb_of(s, class).max.z
}

/// Drops every non-held instance onto the highest surface below its
/// footprint, then recomputes `supported_by` and `contained_in`.
pub fn settle(scene: &mut Scene) {
    let mut order: Vec<(f64, InstanceId)> = scene
        .instances
        .iter()
        .filter(|i| i.held_by.is_none())
        .map(|i| (i.position.z, i.instance_id))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut settled: Vec<InstanceId> = Vec::with_capacity(order.len());
    for &(z, id) in &order {
        let inst = scene.instance(id).expect("listed instance").clone();
        let fp = scene.aabb(id).expect("listed instance").footprint();
        let mut best: Option<(f64, InstanceId)> = None;
        for &sid in &settled {
            let s = scene.instance(sid).expect("settled instance");
            let sfp = aabb_of(s, scene.class_of(s)).footprint();
            if !fp.overlaps(&sfp, 1e-9) {
                continue;
            }
            let h = support_height(scene, s, &fp);
            if h > z + 1e-9 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bh, bid)) => h > bh || (h == bh && sid < bid),
            };
            if better {
                best = Some((h, sid));
            }
        }
        let (h, support) = match best {
            Some((h, sid)) => (h, Some(sid)),
            None => (0.0, None),
        };
        let m = scene.instance_mut(id).expect("listed instance");
        m.position.z = h.min(inst.position.z);
        m.supported_by = support;
        settled.push(id);
    }

    for inst in &mut scene.instances {
        if inst.held_by.is_some() {
            inst.supported_by = None;
            inst.contained_in = None;
        }
    }
    let containers: Vec<(InstanceId, Aabb)> = scene
        .instances
        .iter()
        .filter(|i| i.held_by.is_none())
        .filter_map(|i| cavity_of(i, scene.class_of(i)).map(|c| (i.instance_id, c)))
        .collect();
    let centers: Vec<(InstanceId, Option<Vec3>)> = scene
        .instances
        .iter()
        .map(|i| {
            let c = (i.held_by.is_none()).then(|| aabb_of(i, scene.class_of(i)).center());
            (i.instance_id, c)
        })
        .collect();
    for (id, center) in centers {
        let inside = center.and_then(|c| {
            containers
                .iter()
                .find(|(cid, cav)| *cid != id && cav.contains_point(c))
                .map(|(cid, _)| *cid)
        });
        scene.instance_mut(id).expect("instance").contained_in = inside;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    Floor,
    Instance(InstanceId),
}

/// Resting support of every non-held instance.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportGraph {
    pub edges: BTreeMap<InstanceId, Support>,
}

impl SupportGraph {
    pub fn of(scene: &Scene) -> SupportGraph {
        let edges = scene
            .instances
            .iter()
            .filter(|i| i.held_by.is_none())
            .map(|i| {
                let s = i.supported_by.map_or(Support::Floor, Support::Instance);
                (i.instance_id, s)
            })
            .collect();
        SupportGraph { edges }
    }

    /// Every chain of supports reaches the floor.
    pub fn is_acyclic(&self) -> bool {
        for &start in self.edges.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = start;
            loop {
                if !seen.insert(cur) {
                    return false;
                }
                match self.edges.get(&cur) {
                    Some(Support::Instance(next)) => cur = *next,
                    Some(Support::Floor) => break,
                    // Supported by something no longer resting: a dangling edge.
                    None => return false,
                }
            }
        }
        true
    }
}

/// Unordered pairs `(low, high)` of instances whose bounds are within the
/// contact epsilon.
pub fn contacts(scene: &Scene) -> BTreeSet<(InstanceId, InstanceId)> {
    let boxes: Vec<(InstanceId, Aabb)> = scene
        .instances
        .iter()
        .map(|i| (i.instance_id, aabb_of(i, scene.class_of(i))))
        .collect();
    let mut out = BTreeSet::new();
    for (k, (a, ba)) in boxes.iter().enumerate() {
        for (b, bb) in &boxes[k + 1..] {
            if ba.distance(bb) <= CONTACT_EPSILON {
                out.insert((*a.min(b), *a.max(b)));
            }
        }
    }
    out
}

/// Recomputes contacts and emits an event for every newly formed pair.
pub fn update_contacts(scene: &mut Scene) {
    let now = contacts(scene);
    let fresh: Vec<_> = now.difference(&scene.contacts).copied().collect();
    for (a, b) in fresh {
        scene.emit(crate::events::EventKind::Contact { a, b });
    }
    scene.contacts = now;
}

pub fn eval_predicate(
    scene: &Scene,
    rel: Relation,
    a: InstanceId,
    b: InstanceId,
    observer: Option<AgentId>,
) -> Result<bool, PredicateError> {
    if a == b {
        return Err(PredicateError::IdenticalOperands(a));
    }
    let ba = entity_aabb(scene, a).ok_or(PredicateError::UnknownInstance(a))?;
    let bb = entity_aabb(scene, b).ok_or(PredicateError::UnknownInstance(b))?;
    if rel.needs_observer() && observer.is_none() {
        return Err(PredicateError::MissingObserver(rel));
    }
    let ia = scene.instance(a);
    let ib = scene.instance(b);
    Ok(match rel {
        Relation::On => {
            let supported = ia.is_some_and(|i| i.supported_by == Some(b));
            let c = ba.center();
            supported
                && (ba.min.z - bb.max.z).abs() <= CONTACT_EPSILON
                && bb.footprint().contains([c.x, c.y])
        }
        Relation::In => match (ia, ib) {
            (Some(_), Some(ib)) => cavity_of(ib, scene.class_of(ib))
                .is_some_and(|cav| cav.contains_point(ba.center())),
            _ => false,
        },
        Relation::Under => {
            ba.max.z <= bb.min.z + CONTACT_EPSILON && ba.footprint().overlaps(&bb.footprint(), 0.0)
        }
        Relation::Near => {
            let (ca, cb) = (ba.center(), bb.center());
            let d = (ca.x - cb.x).hypot(ca.y - cb.y);
            let r = ba.footprint().half_diagonal() + bb.footprint().half_diagonal();
            d <= NEAR_FACTOR * r
        }
        Relation::Touching => ba.distance(&bb) <= CONTACT_EPSILON,
        Relation::LeftOf | Relation::RightOf | Relation::Behind | Relation::InFrontOf => {
            let obs = scene.agent(observer.expect("checked above"));
            let (c, s) = (obs.heading.cos(), obs.heading.sin());
            let d = ba.center() - bb.center();
            let forward = d.x * c + d.y * s;
            let left = -d.x * s + d.y * c;
            match rel {
                Relation::LeftOf => left > CONTACT_EPSILON,
                Relation::RightOf => left < -CONTACT_EPSILON,
                Relation::Behind => forward > CONTACT_EPSILON,
                _ => forward < -CONTACT_EPSILON,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, Category, Color, Shape};
    use crate::world::{Cell, GridSpec};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
    use std::sync::Arc;

    fn class(shape: Shape, extents: [f64; 3]) -> ObjectClass {
        ObjectClass {
            class_id: "thing".into(),
            category: Category::Interactable,
            shape,
            extents,
            color: Color::Red,
            mass: 1.0,
            graspable: true,
            is_container: false,
            is_surface: true,
            clearance: 0.0,
        }
    }

    fn inst(position: Vec3, yaw: f64) -> ObjectInstance {
        ObjectInstance {
            instance_id: 4,
            class_id: "thing".into(),
            position,
            yaw,
            held_by: None,
            spawn_position: position,
            supported_by: None,
            contained_in: None,
        }
    }

    #[test]
    fn unit_box_bounds() {
        let c = class(Shape::Box, [1.0, 1.0, 1.0]);
        let a = aabb_of(&inst(Vec3::ZERO, 0.0), &c);
        assert_eq!(a.min, Vec3::new(-0.5, -0.5, 0.0));
        assert_eq!(a.max, Vec3::new(0.5, 0.5, 1.0));
        assert_eq!(aabb_of(&inst(Vec3::ZERO, FRAC_PI_2), &c), a);
    }

    #[test]
    fn diagonal_box_bounds_match_rotated_corners() {
        let c = class(Shape::Box, [2.0, 1.0, 1.0]);
        let a = aabb_of(&inst(Vec3::ZERO, FRAC_PI_4), &c);
        // Oracle: rotate the four corners and take the max.
        let (co, si) = (FRAC_PI_4.cos(), FRAC_PI_4.sin());
        let mut mx: f64 = 0.0;
        for (x, y) in [(1.0, 0.5), (1.0, -0.5), (-1.0, 0.5), (-1.0, -0.5)] {
            mx = mx.max((co * x - si * y).abs());
        }
        assert!((a.max.x - mx).abs() < 1e-12);
        assert!((a.max.x - 3.0 / (2.0 * 2f64.sqrt())).abs() < 1e-12);
    }

    fn scene() -> Scene {
        Scene::empty(Arc::new(Catalog::desk()), GridSpec::room(10, 10), 1)
    }

    fn drop(scene: &mut Scene, class_id: &str, x: f64, y: f64, z: f64) -> InstanceId {
        let id = scene.insert_instance(class_id, Vec3::new(x, y, z), 0.0).unwrap();
        settle(scene);
        id
    }

    #[test]
    fn ball_dropped_on_table() {
        let mut s = scene();
        let table = drop(&mut s, "table", 5.5, 5.5, 0.0);
        let ball = drop(&mut s, "red_ball", 5.5, 5.5, 2.6);
        let b = s.instance(ball).unwrap();
        assert_eq!(b.position.z, 0.6);
        assert_eq!(b.supported_by, Some(table));
        assert!(eval_predicate(&s, Relation::On, ball, table, None).unwrap());
        assert!(!eval_predicate(&s, Relation::Under, ball, table, None).unwrap());
        assert!(eval_predicate(&s, Relation::Touching, ball, table, None).unwrap());
    }

    #[test]
    fn ball_dropped_into_box_cavity() {
        let mut s = scene();
        let bx = drop(&mut s, "box", 2.5, 2.5, 0.0);
        let ball = drop(&mut s, "blue_ball", 2.5, 2.5, 1.0);
        let b = s.instance(ball).unwrap();
        assert!((b.position.z - 0.03).abs() < 1e-12);
        assert_eq!(b.contained_in, Some(bx));
        assert!(eval_predicate(&s, Relation::In, ball, bx, None).unwrap());
        assert!(eval_predicate(&s, Relation::Near, ball, bx, None).unwrap());
        assert!(!eval_predicate(&s, Relation::On, ball, bx, None).unwrap());
    }

    #[test]
    fn ball_under_table_clearance() {
        let mut s = scene();
        let table = drop(&mut s, "table", 5.5, 5.5, 0.0);
        let ball = drop(&mut s, "red_ball", 5.5, 5.5, 0.3);
        assert_eq!(s.instance(ball).unwrap().position.z, 0.0);
        assert_eq!(s.instance(ball).unwrap().supported_by, None);
        assert!(eval_predicate(&s, Relation::Under, ball, table, None).unwrap());
        assert!(!eval_predicate(&s, Relation::On, ball, table, None).unwrap());
    }

    #[test]
    fn settle_is_idempotent() {
        let mut s = scene();
        drop(&mut s, "table", 5.5, 5.5, 0.0);
        drop(&mut s, "red_block", 5.5, 5.5, 3.0);
        drop(&mut s, "blue_block", 5.5, 5.5, 4.0);
        let once = s.metadata_json();
        settle(&mut s);
        assert_eq!(s.metadata_json(), once);
        assert!(SupportGraph::of(&s).is_acyclic());
    }

    #[test]
    fn predicate_errors() {
        let mut s = scene();
        let a = drop(&mut s, "red_ball", 2.5, 2.5, 0.0);
        let b = drop(&mut s, "cup", 5.5, 2.5, 0.0);
        assert_eq!(
            eval_predicate(&s, Relation::On, a, a, None),
            Err(PredicateError::IdenticalOperands(a))
        );
        assert_eq!(
            eval_predicate(&s, Relation::LeftOf, a, b, None),
            Err(PredicateError::MissingObserver(Relation::LeftOf))
        );
        assert_eq!(
            eval_predicate(&s, Relation::On, a, 99, None),
            Err(PredicateError::UnknownInstance(99))
        );
    }

    #[test]
    fn contacts_of_stack_and_spaced_objects() {
        let mut s = scene();
        assert!(contacts(&s).is_empty());
        let a = drop(&mut s, "red_block", 2.5, 2.5, 0.0);
        let b = drop(&mut s, "blue_block", 2.5, 2.5, 1.0);
        let far = s.catalog.get("green_block").unwrap().clone();
        s.spawn_object(&far, Cell::new(3, 2)).unwrap();
        let c = contacts(&s);
        assert_eq!(c, BTreeSet::from([(a, b)]));
    }

    #[test]
    fn observer_frame_relations() {
        let mut s = scene();
        let a = drop(&mut s, "red_ball", 2.5, 5.5, 0.0);
        let b = drop(&mut s, "cup", 4.5, 5.5, 0.0);
        // Child faces +x by default: a is closer, so in front of b.
        assert!(eval_predicate(&s, Relation::InFrontOf, a, b, Some(AgentId::Child)).unwrap());
        s.agent_mut(AgentId::Child).heading = FRAC_PI_2;
        // Facing +y, left is -x.
        assert!(eval_predicate(&s, Relation::LeftOf, a, b, Some(AgentId::Child)).unwrap());
        assert!(eval_predicate(&s, Relation::RightOf, b, a, Some(AgentId::Child)).unwrap());
    }
}
