//! Scene state: floor grid, seeded spawning under the separation buffer,
//! instance poses and the metadata document.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentId, AgentState};
use crate::catalog::{Catalog, Category, ClassFilter, ObjectClass};
use crate::events::{Event, EventKind};
use crate::geometry::{normalize_angle, rotated_half_extents, Aabb, Rect, Vec3};
use crate::hash::{fnv1a64, hex64};
use crate::kinetics;
use crate::rng::SimRng;

pub type InstanceId = u32;

pub const BACKGROUND_ID: InstanceId = 0;
pub const FLOOR_ID: InstanceId = 1;
pub const CHILD_ID: InstanceId = 2;
pub const PARENT_ID: InstanceId = 3;
pub const FIRST_INSTANCE_ID: InstanceId = 4;

/// Minimum horizontal clearance between object footprints at spawn.
pub const SEPARATION_BUFFER: f64 = 0.5;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 64;

/// Furniture placed by [`generate_scene`] when the catalog has it.
pub const FURNITURE: [&str; 3] = ["table", "shelf", "toy_chest"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("placement exhausted after {attempts} attempts for object #{index}")]
    PlacementExhausted { index: usize, attempts: usize },
    #[error("cell ({x}, {y}) is occupied by instance {by}")]
    Occupied { x: i64, y: i64, by: InstanceId },
    #[error("cell ({x}, {y}) is outside the grid")]
    OutOfGrid { x: i64, y: i64 },
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("metadata error: {0}")]
    Metadata(String),
}

impl WorldError {
    pub fn code(&self) -> &'static str {
        match self {
            WorldError::BadGrid(_) => "BadGrid",
            WorldError::PlacementExhausted { .. } => "PlacementExhausted",
            WorldError::Occupied { .. } => "Occupied",
            WorldError::OutOfGrid { .. } => "OutOfGrid",
            WorldError::UnknownInstance(_) => "UnknownInstance",
            WorldError::UnknownClass(_) => "UnknownClass",
            WorldError::Metadata(_) => "Metadata",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width_cells: u32,
    pub depth_cells: u32,
    pub cell_size: f64,
    pub origin: [f64; 2],
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::room(10, 10)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i64,
    pub y: i64,
}

impl Cell {
    pub fn new(x: i64, y: i64) -> Cell {
        Cell { x, y }
    }
}

impl GridSpec {
    /// Unit cells with the origin at (0, 0).
    pub fn room(width_cells: u32, depth_cells: u32) -> GridSpec {
        GridSpec { width_cells, depth_cells, cell_size: 1.0, origin: [0.0, 0.0] }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.width_cells == 0 || self.depth_cells == 0 {
            return Err(WorldError::BadGrid("grid must have at least one cell".into()));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(WorldError::BadGrid("cell_size must be positive".into()));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(WorldError::BadGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.width_cells as usize * self.depth_cells as usize
    }

    pub fn bounds(&self) -> Rect {
        Rect {
            min: self.origin,
            max: [
                self.origin[0] + self.width_cells as f64 * self.cell_size,
                self.origin[1] + self.depth_cells as f64 * self.cell_size,
            ],
        }
    }

    pub fn center(&self) -> [f64; 2] {
        self.bounds().center()
    }

    pub fn contains_cell(&self, cell: Cell) -> bool {
        cell.x >= 0 && cell.y >= 0 && cell.x < self.width_cells as i64 && cell.y < self.depth_cells as i64
    }

    pub fn cell_center(&self, cell: Cell) -> [f64; 2] {
        [
            self.origin[0] + (cell.x as f64 + 0.5) * self.cell_size,
            self.origin[1] + (cell.y as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn cell_rect(&self, cell: Cell) -> Rect {
        let x0 = self.origin[0] + cell.x as f64 * self.cell_size;
        let y0 = self.origin[1] + cell.y as f64 * self.cell_size;
        Rect { min: [x0, y0], max: [x0 + self.cell_size, y0 + self.cell_size] }
    }

    pub fn cell_at(&self, p: [f64; 2]) -> Option<Cell> {
        let cx = ((p[0] - self.origin[0]) / self.cell_size).floor() as i64;
        let cy = ((p[1] - self.origin[1]) / self.cell_size).floor() as i64;
        // Points on the far wall belong to the last cell.
        let cx = if cx == self.width_cells as i64 && p[0] <= self.bounds().max[0] { cx - 1 } else { cx };
        let cy = if cy == self.depth_cells as i64 && p[1] <= self.bounds().max[1] { cy - 1 } else { cy };
        let cell = Cell::new(cx, cy);
        self.contains_cell(cell).then_some(cell)
    }

    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.y as usize * self.width_cells as usize + cell.x as usize
    }

    pub fn cell_from_index(&self, idx: usize) -> Cell {
        let w = self.width_cells as usize;
        Cell::new((idx % w) as i64, (idx / w) as i64)
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cell_count()).map(|i| self.cell_from_index(i))
    }

    /// Border cells, clockwise from the origin corner.
    pub fn perimeter_cells(&self) -> Vec<Cell> {
        let (w, d) = (self.width_cells as i64, self.depth_cells as i64);
        let mut out = Vec::new();
        for x in 0..w {
            out.push(Cell::new(x, 0));
        }
        for y in 1..d {
            out.push(Cell::new(w - 1, y));
        }
        if d > 1 {
            for x in (0..w - 1).rev() {
                out.push(Cell::new(x, d - 1));
            }
        }
        if w > 1 {
            for y in (1..d - 1).rev() {
                out.push(Cell::new(0, y));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub instance_id: InstanceId,
    pub class_id: String,
    pub position: Vec3,
    pub yaw: f64,
    pub held_by: Option<AgentId>,
    pub spawn_position: Vec3,
    pub supported_by: Option<InstanceId>,
    pub contained_in: Option<InstanceId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub catalog: Arc<Catalog>,
    pub grid: GridSpec,
    /// Sorted by instance id.
    pub instances: Vec<ObjectInstance>,
    pub seed: u64,
    pub tick: u64,
    pub rng: SimRng,
    pub agents: [AgentState; 2],
    pub n_interactable: usize,
    pub next_id: InstanceId,
    /// Events produced since the last drain, in emission order.
    pub log: Vec<Event>,
    /// Contact pairs as of the last world update.
    pub contacts: BTreeSet<(InstanceId, InstanceId)>,
}

impl Scene {
    /// A room with no objects and both agents at the first free cells.
    pub fn empty(catalog: Arc<Catalog>, grid: GridSpec, seed: u64) -> Scene {
        let c0 = grid.cell_center(Cell::new(0, 0));
        let c1 = grid.cell_center(Cell::new((grid.width_cells as i64 - 1).min(1), 0));
        Scene {
            catalog,
            grid,
            instances: Vec::new(),
            seed,
            tick: 0,
            rng: SimRng::new(seed),
            agents: [
                AgentState::new(AgentId::Child, Vec3::new(c0[0], c0[1], 0.0)),
                AgentState::new(AgentId::Parent, Vec3::new(c1[0], c1[1], 0.0)),
            ],
            n_interactable: 0,
            next_id: FIRST_INSTANCE_ID,
            log: Vec::new(),
            contacts: BTreeSet::new(),
        }
    }

    pub fn emit(&mut self, kind: EventKind) {
        self.log.push(Event { tick: self.tick, kind });
    }

    pub fn drain_log(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.log)
    }

    pub fn instance(&self, id: InstanceId) -> Option<&ObjectInstance> {
        self.instances
            .binary_search_by_key(&id, |i| i.instance_id)
            .ok()
            .map(|k| &self.instances[k])
    }

    pub fn instance_mut(&mut self, id: InstanceId) -> Option<&mut ObjectInstance> {
        self.instances
            .binary_search_by_key(&id, |i| i.instance_id)
            .ok()
            .map(move |k| &mut self.instances[k])
    }

    pub fn class_of(&self, inst: &ObjectInstance) -> &ObjectClass {
        self.catalog
            .get(&inst.class_id)
            .expect("instance class resolves in the session catalog")
    }

    pub fn class_by_id(&self, id: InstanceId) -> Option<&ObjectClass> {
        self.instance(id).map(|i| self.class_of(i))
    }

    pub fn agent(&self, id: AgentId) -> &AgentState {
        &self.agents[id.index()]
    }

    pub fn agent_mut(&mut self, id: AgentId) -> &mut AgentState {
        &mut self.agents[id.index()]
    }

    pub fn aabb(&self, id: InstanceId) -> Option<Aabb> {
        self.instance(id).map(|i| kinetics::aabb_of(i, self.class_of(i)))
    }

    pub fn footprint(&self, id: InstanceId) -> Option<Rect> {
        self.aabb(id).map(|a| a.footprint())
    }

    pub fn noun_of(&self, id: InstanceId) -> Option<String> {
        self.class_by_id(id).map(|c| c.noun())
    }

    pub fn ids(&self) -> Vec<InstanceId> {
        self.instances.iter().map(|i| i.instance_id).collect()
    }

    /// First instance (by id) whose footprint breaks the separation buffer
    /// around `class` at `position`/`yaw`. Purely horizontal: a slot under a
    /// table top counts as taken.
    pub fn separation_conflict(
        &self,
        class: &ObjectClass,
        position: Vec3,
        yaw: f64,
        ignore: &[InstanceId],
    ) -> Option<InstanceId> {
        let fp = kinetics::aabb_at(class, position, yaw).footprint();
        self.instances
            .iter()
            .filter(|o| o.held_by.is_none() && !ignore.contains(&o.instance_id))
            .find(|o| {
                let other = kinetics::aabb_of(o, self.class_of(o));
                fp.gap(&other.footprint()) < SEPARATION_BUFFER - 1e-9
            })
            .map(|o| o.instance_id)
    }

    pub fn footprint_in_room(&self, class: &ObjectClass, position: Vec3, yaw: f64) -> bool {
        let (hx, hy) = rotated_half_extents(class, yaw);
        let fp = Rect {
            min: [position.x - hx, position.y - hy],
            max: [position.x + hx, position.y + hy],
        };
        self.grid.bounds().contains_rect(&fp, 1e-9)
    }

    /// Inserts an instance without any placement checks.
    pub fn insert_instance(&mut self, class_id: &str, position: Vec3, yaw: f64) -> Result<InstanceId, WorldError> {
        if self.catalog.get(class_id).is_none() {
            return Err(WorldError::UnknownClass(class_id.to_string()));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.instances.push(ObjectInstance {
            instance_id: id,
            class_id: class_id.to_string(),
            position,
            yaw: normalize_angle(yaw),
            held_by: None,
            spawn_position: position,
            supported_by: None,
            contained_in: None,
        });
        self.emit(EventKind::Spawn { instance: id, class_id: class_id.to_string(), position });
        Ok(id)
    }

    /// Spawns `class` resting on the floor at the center of `cell`.
    pub fn spawn_object(&mut self, class: &ObjectClass, cell: Cell) -> Result<InstanceId, WorldError> {
        self.spawn_object_with_yaw(class, cell, 0.0)
    }

    pub fn spawn_object_with_yaw(
        &mut self,
        class: &ObjectClass,
        cell: Cell,
        yaw: f64,
    ) -> Result<InstanceId, WorldError> {
        if !self.grid.contains_cell(cell) {
            return Err(WorldError::OutOfGrid { x: cell.x, y: cell.y });
        }
        if self.catalog.get(&class.class_id).is_none() {
            return Err(WorldError::UnknownClass(class.class_id.clone()));
        }
        let c = self.grid.cell_center(cell);
        let position = Vec3::new(c[0], c[1], 0.0);
        if !self.footprint_in_room(class, position, yaw) {
            return Err(WorldError::OutOfGrid { x: cell.x, y: cell.y });
        }
        if let Some(by) = self.separation_conflict(class, position, yaw, &[]) {
            return Err(WorldError::Occupied { x: cell.x, y: cell.y, by });
        }
        let id = self.insert_instance(&class.class_id, position, yaw)?;
        kinetics::settle(self);
        Ok(id)
    }

    /// Operator removal of an instance; anything resting on it falls.
    pub fn remove_instance(&mut self, id: InstanceId) -> Result<(), WorldError> {
        let k = self
            .instances
            .binary_search_by_key(&id, |i| i.instance_id)
            .map_err(|_| WorldError::UnknownInstance(id))?;
        let removed = self.instances.remove(k);
        if let Some(agent) = removed.held_by {
            self.agent_mut(agent).held = None;
        }
        for a in &mut self.agents {
            if a.gaze == Some(id) {
                a.gaze = None;
            }
            if a.pointing_at == Some(id) {
                a.pointing_at = None;
            }
            if a.touched == Some(id) {
                a.touched = None;
            }
        }
        self.emit(EventKind::Despawn { instance: id });
        kinetics::settle(self);
        Ok(())
    }

    /// Free cells: inside the room and not overlapped by any non-held footprint.
    pub fn free_cells(&self) -> Vec<Cell> {
        let fps: Vec<Rect> = self
            .instances
            .iter()
            .filter(|i| i.held_by.is_none())
            .map(|i| kinetics::aabb_of(i, self.class_of(i)).footprint())
            .collect();
        self.grid
            .cells()
            .filter(|c| {
                let r = self.grid.cell_rect(*c);
                fps.iter().all(|f| !f.overlaps(&r, 1e-9))
            })
            .collect()
    }

    pub fn metadata(&self) -> SceneMetadata {
        SceneMetadata {
            seed: self.seed,
            tick: self.tick,
            grid: self.grid,
            catalog_version: self.catalog.version.clone(),
            n_interactable: self.n_interactable,
            next_id: self.next_id,
            rng: self.rng.clone(),
            agents: self.agents.to_vec(),
            instances: self
                .instances
                .iter()
                .map(|i| InstanceRecord {
                    instance_id: i.instance_id,
                    class_id: i.class_id.clone(),
                    category: self.class_of(i).category,
                    position: i.position,
                    yaw: i.yaw,
                    held_by: i.held_by,
                    spawn_position: i.spawn_position,
                    supported_by: i.supported_by,
                    contained_in: i.contained_in,
                })
                .collect(),
        }
    }

    /// Canonical sorted-key JSON of [`Scene::metadata`].
    pub fn metadata_json(&self) -> String {
        self.metadata().to_canonical_json()
    }

    /// FNV-1a 64 over the canonical metadata document.
    pub fn state_hash(&self) -> u64 {
        fnv1a64(self.metadata_json().as_bytes())
    }

    pub fn state_hash_hex(&self) -> String {
        hex64(self.state_hash())
    }

    pub fn from_metadata(doc: &SceneMetadata, catalog: Arc<Catalog>) -> Result<Scene, WorldError> {
        doc.grid.validate()?;
        if doc.catalog_version != catalog.version {
            return Err(WorldError::Metadata(format!(
                "catalog version mismatch: document {} vs catalog {}",
                doc.catalog_version, catalog.version
            )));
        }
        let agents: [AgentState; 2] = doc
            .agents
            .clone()
            .try_into()
            .map_err(|_| WorldError::Metadata("expected exactly two agents".into()))?;
        if agents[0].agent_id != AgentId::Child || agents[1].agent_id != AgentId::Parent {
            return Err(WorldError::Metadata("agents must be [Child, Parent]".into()));
        }
        let mut instances = Vec::with_capacity(doc.instances.len());
        for r in &doc.instances {
            let class = catalog
                .get(&r.class_id)
                .ok_or_else(|| WorldError::UnknownClass(r.class_id.clone()))?;
            if class.category != r.category {
                return Err(WorldError::Metadata(format!("category mismatch for {}", r.instance_id)));
            }
            instances.push(ObjectInstance {
                instance_id: r.instance_id,
                class_id: r.class_id.clone(),
                position: r.position,
                yaw: r.yaw,
                held_by: r.held_by,
                spawn_position: r.spawn_position,
                supported_by: r.supported_by,
                contained_in: r.contained_in,
            });
        }
        instances.sort_by_key(|i| i.instance_id);
        if instances.windows(2).any(|w| w[0].instance_id == w[1].instance_id) {
            return Err(WorldError::Metadata("duplicate instance_id".into()));
        }
        let mut scene = Scene {
            catalog,
            grid: doc.grid,
            instances,
            seed: doc.seed,
            tick: doc.tick,
            rng: doc.rng.clone(),
            agents,
            n_interactable: doc.n_interactable,
            next_id: doc.next_id,
            log: Vec::new(),
            contacts: BTreeSet::new(),
        };
        scene.contacts = kinetics::contacts(&scene);
        Ok(scene)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: InstanceId,
    pub class_id: String,
    pub category: Category,
    pub position: Vec3,
    pub yaw: f64,
    pub held_by: Option<AgentId>,
    pub spawn_position: Vec3,
    pub supported_by: Option<InstanceId>,
    pub contained_in: Option<InstanceId>,
}

/// The logged scene document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub seed: u64,
    pub tick: u64,
    pub grid: GridSpec,
    pub catalog_version: String,
    pub n_interactable: usize,
    pub next_id: InstanceId,
    pub rng: SimRng,
    pub agents: Vec<AgentState>,
    pub instances: Vec<InstanceRecord>,
}

impl SceneMetadata {
    /// JSON with object keys sorted at every level.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("metadata serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn from_json(text: &str) -> Result<SceneMetadata, WorldError> {
        serde_json::from_str(text).map_err(|e| WorldError::Metadata(e.to_string()))
    }
}

/// Free-function form of [`Scene::metadata`].
pub fn scene_metadata(scene: &Scene) -> SceneMetadata {
    scene.metadata()
}

/// Builds a scene: fixed furniture on seed-permuted perimeter cells, then
/// `n_interactable` sampled interactables at rejection-sampled cells, then
/// both agents on free cells.
pub fn generate_scene(
    catalog: Arc<Catalog>,
    grid: GridSpec,
    n_interactable: usize,
    seed: u64,
) -> Result<Scene, WorldError> {
    grid.validate()?;
    let furniture: Vec<ObjectClass> = FURNITURE
        .iter()
        .filter_map(|id| catalog.get(id).cloned())
        .collect();
    if grid.cell_count() < furniture.len() + n_interactable + 2 {
        return Err(WorldError::BadGrid(format!(
            "{} cells cannot hold {} objects and two agents",
            grid.cell_count(),
            furniture.len() + n_interactable
        )));
    }
    let mut scene = Scene::empty(catalog.clone(), grid, seed);
    scene.n_interactable = n_interactable;

    let mut perimeter = grid.perimeter_cells();
    scene.rng.shuffle(&mut perimeter);
    for class in &furniture {
        let cell = perimeter
            .iter()
            .copied()
            .find(|c| {
                let p = grid.cell_center(*c);
                let pos = Vec3::new(p[0], p[1], 0.0);
                scene.footprint_in_room(class, pos, 0.0)
                    && scene.separation_conflict(class, pos, 0.0, &[]).is_none()
            })
            .ok_or(WorldError::PlacementExhausted { index: 0, attempts: perimeter.len() })?;
        let p = grid.cell_center(cell);
        scene.insert_instance(&class.class_id, Vec3::new(p[0], p[1], 0.0), 0.0)?;
    }

    for index in 0..n_interactable {
        let class = catalog
            .sample_class(&mut scene.rng, ClassFilter::Category(Category::Interactable))
            .map_err(|_| WorldError::BadGrid("catalog has no interactable classes".into()))?
            .clone();
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cell = grid.cell_from_index(scene.rng.index(grid.cell_count()));
            let yaw = scene.rng.index(4) as f64 * std::f64::consts::FRAC_PI_2;
            let p = grid.cell_center(cell);
            let pos = Vec3::new(p[0], p[1], 0.0);
            if scene.footprint_in_room(&class, pos, yaw)
                && scene.separation_conflict(&class, pos, yaw, &[]).is_none()
            {
                scene.insert_instance(&class.class_id, pos, yaw)?;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(WorldError::PlacementExhausted { index, attempts: MAX_PLACEMENT_ATTEMPTS });
        }
    }

    let mut free = scene.free_cells();
    if free.len() < 2 {
        return Err(WorldError::BadGrid("no free cells left for the agents".into()));
    }
    for agent in [AgentId::Child, AgentId::Parent] {
        let cell = free.remove(scene.rng.index(free.len()));
        let p = grid.cell_center(cell);
        scene.agent_mut(agent).position = Vec3::new(p[0], p[1], 0.0);
    }
    kinetics::settle(&mut scene);
    scene.contacts = kinetics::contacts(&scene);
    Ok(scene)
}

/// Regenerates with the scene's catalog, grid and object count under a new seed.
pub fn reset(scene: &Scene, seed: u64) -> Result<Scene, WorldError> {
    generate_scene(scene.catalog.clone(), scene.grid, scene.n_interactable, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> Arc<Catalog> {
        Arc::new(Catalog::desk())
    }

    #[test]
    fn generate_places_requested_objects() {
        let scene = generate_scene(desk(), GridSpec::room(10, 10), 10, 7).unwrap();
        let interactables = scene
            .instances
            .iter()
            .filter(|i| scene.class_of(i).category == Category::Interactable)
            .count();
        assert_eq!(interactables, 10);
        assert_eq!(scene.instances.len(), 13);
    }

    #[test]
    fn zero_objects_leaves_only_furniture() {
        let scene = generate_scene(desk(), GridSpec::room(10, 10), 0, 3).unwrap();
        assert!(scene
            .instances
            .iter()
            .all(|i| scene.class_of(i).category == Category::Static));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(desk(), GridSpec::room(10, 10), 10, 42).unwrap();
        let b = generate_scene(desk(), GridSpec::room(10, 10), 10, 42).unwrap();
        assert_eq!(a.metadata_json(), b.metadata_json());
    }

    #[test]
    fn reset_matches_generate_and_new_seed_differs() {
        let a = generate_scene(desk(), GridSpec::room(10, 10), 5, 7).unwrap();
        let r = reset(&a, 7).unwrap();
        assert_eq!(a.metadata_json(), r.metadata_json());
        let b = reset(&a, 8).unwrap();
        let pa: Vec<_> = a.instances.iter().map(|i| i.position).collect();
        let pb: Vec<_> = b.instances.iter().map(|i| i.position).collect();
        assert_ne!(pa, pb);
    }

    #[test]
    fn spawn_lands_on_cell_center() {
        let mut scene = Scene::empty(desk(), GridSpec::room(10, 10), 0);
        let ball = scene.catalog.get("red_ball").unwrap().clone();
        let id = scene.spawn_object(&ball, Cell::new(3, 4)).unwrap();
        let inst = scene.instance(id).unwrap();
        assert_eq!((inst.position.x, inst.position.y, inst.position.z), (3.5, 4.5, 0.0));
    }

    #[test]
    fn spawn_too_close_is_occupied() {
        let grid = GridSpec { width_cells: 20, depth_cells: 20, cell_size: 0.5, origin: [0.0, 0.0] };
        let mut scene = Scene::empty(desk(), grid, 0);
        let ball = scene.catalog.get("red_ball").unwrap().clone();
        let first = scene.spawn_object(&ball, Cell::new(4, 4)).unwrap();
        // Cell centers 0.5 apart: footprint gap 0.3.
        let err = scene.spawn_object(&ball, Cell::new(5, 4)).unwrap_err();
        assert_eq!(err, WorldError::Occupied { x: 5, y: 4, by: first });
    }

    #[test]
    fn spawn_outside_grid() {
        let mut scene = Scene::empty(desk(), GridSpec::room(10, 10), 0);
        let ball = scene.catalog.get("red_ball").unwrap().clone();
        assert_eq!(
            scene.spawn_object(&ball, Cell::new(-1, 0)),
            Err(WorldError::OutOfGrid { x: -1, y: 0 })
        );
    }

    #[test]
    fn bad_grid_is_rejected() {
        let grid = GridSpec { width_cells: 0, depth_cells: 3, cell_size: 1.0, origin: [0.0, 0.0] };
        assert!(matches!(generate_scene(desk(), grid, 0, 1), Err(WorldError::BadGrid(_))));
        assert!(matches!(
            generate_scene(desk(), GridSpec::room(3, 3), 10, 1),
            Err(WorldError::BadGrid(_))
        ));
    }

    #[test]
    fn metadata_round_trips_byte_identically() {
        let scene = generate_scene(desk(), GridSpec::room(10, 10), 10, 11).unwrap();
        let text = scene.metadata_json();
        let doc = SceneMetadata::from_json(&text).unwrap();
        let back = Scene::from_metadata(&doc, scene.catalog.clone()).unwrap();
        assert_eq!(back.metadata_json(), text);
        assert_eq!(doc.instances.len(), scene.instances.len());
    }

    #[test]
    fn perimeter_has_every_border_cell_once() {
        let grid = GridSpec::room(10, 10);
        let p = grid.perimeter_cells();
        assert_eq!(p.len(), 36);
        let set: BTreeSet<_> = p.iter().collect();
        assert_eq!(set.len(), 36);
    }
}
