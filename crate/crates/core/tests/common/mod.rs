//! Helpers shared by the integration and acceptance targets. Oracles here
//! recompute geometry from catalog data instead of calling library bounds.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_4;
use std::sync::Arc;

use abcde::catalog::{Catalog, Category, Shape};
use abcde::geometry::Vec3;
use abcde::kinetics::{settle, Relation};
use abcde::rng::SimRng;
use abcde::world::{generate_scene, GridSpec, InstanceId, Scene};
use serde_json::{json, Value};

pub const EPS: f64 = 1e-3;
pub const NEAR_FACTOR: f64 = 1.5;
pub const WALL: f64 = 0.1;
pub const MC_SAMPLES: usize = 10_000;

pub fn desk() -> Arc<Catalog> {
    Arc::new(Catalog::desk())
}

pub fn room() -> GridSpec {
    GridSpec::room(10, 10)
}

/// Builds a catalog document with the requested category counts. Every
/// class is valid; shapes and flags cycle so the file exercises each rule.
pub fn synthetic_catalog(n_static: usize, n_interactable: usize) -> Value {
    let mut classes = Vec::new();
    let colors = ["red", "green", "blue", "yellow", "white", "black"];
    for k in 0..n_static + n_interactable {
        let is_static = k < n_static;
        let variant = k % 4;
        let (shape, extents, container) = match variant {
            0 => ("Box", [0.4 + 0.01 * (k % 7) as f64, 0.3, 0.2], false),
            1 => ("Sphere", [0.2, 0.2, 0.2], false),
            2 => ("Cylinder", [0.25, 0.25, 0.3], false),
            _ => ("OpenBox", [0.5, 0.4, 0.3], true),
        };
        classes.push(json!({
            "class_id": format!("asset_{k:03}"),
            "category": if is_static { "Static" } else { "Interactable" },
            "shape": shape,
            "extents": extents,
            "color": colors[k % colors.len()],
            "mass": 0.5 + (k % 5) as f64,
            "graspable": !is_static,
            "is_container": container,
            "is_surface": variant == 0,
        }));
    }
    json!({ "version": format!("synthetic-{n_static}-{n_interactable}"), "classes": classes })
}

/// Axis-aligned bounds recomputed from the class and the instance pose:
/// rotate the four footprint corners (boxes) or use the radius (round
/// shapes); the solid starts above any clearance.
pub fn oracle_bounds(scene: &Scene, id: InstanceId) -> ([f64; 3], [f64; 3]) {
    let inst = scene.instance(id).expect("instance exists");
    let class = scene.catalog.get(&inst.class_id).expect("class exists");
    let (hx, hy) = (class.extents[0] / 2.0, class.extents[1] / 2.0);
    let (ex, ey) = match class.shape {
        Shape::Sphere | Shape::Cylinder => (hx, hy),
        Shape::Box | Shape::OpenBox => {
            let (c, s) = (inst.yaw.cos(), inst.yaw.sin());
            let mut ex: f64 = 0.0;
            let mut ey: f64 = 0.0;
            for (x, y) in [(hx, hy), (hx, -hy), (-hx, hy), (-hx, -hy)] {
                ex = ex.max((c * x - s * y).abs());
                ey = ey.max((s * x + c * y).abs());
            }
            (ex, ey)
        }
    };
    let p = inst.position;
    (
        [p.x - ex, p.y - ey, p.z + class.clearance],
        [p.x + ex, p.y + ey, p.z + class.extents[2]],
    )
}

/// Set-level summary of a sampled object volume.
#[derive(Clone, Debug)]
pub struct SampledVolume {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub centroid: [f64; 3],
    pub container: bool,
}

impl SampledVolume {
    pub fn sample(bounds: ([f64; 3], [f64; 3]), container: bool, rng: &mut SimRng) -> SampledVolume {
        let (lo_b, hi_b) = bounds;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut sum = [0.0; 3];
        for _ in 0..MC_SAMPLES {
            for k in 0..3 {
                let v = rng.range(lo_b[k], hi_b[k]);
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
                sum[k] += v;
            }
        }
        let n = MC_SAMPLES as f64;
        SampledVolume { lo, hi, centroid: [sum[0] / n, sum[1] / n, sum[2] / n], container }
    }

    /// The exact set summary, without sampling.
    pub fn exact(bounds: ([f64; 3], [f64; 3]), container: bool) -> SampledVolume {
        let (lo, hi) = bounds;
        let centroid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
        SampledVolume { lo, hi, centroid, container }
    }

    fn footprint_radius(&self) -> f64 {
        0.5 * (self.hi[0] - self.lo[0]).hypot(self.hi[1] - self.lo[1])
    }

    fn cavity(&self) -> ([f64; 3], [f64; 3]) {
        let wx = WALL * (self.hi[0] - self.lo[0]);
        let wy = WALL * (self.hi[1] - self.lo[1]);
        let floor = self.lo[2] + WALL * (self.hi[2] - self.lo[2]);
        ([self.lo[0] + wx, self.lo[1] + wy, floor], [self.hi[0] - wx, self.hi[1] - wy, self.hi[2]])
    }
}

/// The predicate definitions applied to sampled sets.
pub fn oracle_predicate(
    rel: Relation,
    a: &SampledVolume,
    b: &SampledVolume,
    a_supported_by_b: bool,
) -> bool {
    match rel {
        Relation::On => {
            let c = a.centroid;
            a_supported_by_b
                && (a.lo[2] - b.hi[2]).abs() <= EPS
                && c[0] >= b.lo[0]
                && c[0] <= b.hi[0]
                && c[1] >= b.lo[1]
                && c[1] <= b.hi[1]
        }
        Relation::In => {
            if !b.container {
                return false;
            }
            let (lo, hi) = b.cavity();
            (0..3).all(|k| a.centroid[k] >= lo[k] && a.centroid[k] <= hi[k])
        }
        Relation::Under => {
            a.hi[2] <= b.lo[2] + EPS && (0..2).all(|k| a.lo[k] < b.hi[k] && b.lo[k] < a.hi[k])
        }
        Relation::Near => {
            let d = (a.centroid[0] - b.centroid[0]).hypot(a.centroid[1] - b.centroid[1]);
            d <= NEAR_FACTOR * (a.footprint_radius() + b.footprint_radius())
        }
        Relation::Touching => {
            let gap2: f64 = (0..3)
                .map(|k| {
                    let g = (a.lo[k] - b.hi[k]).max(b.lo[k] - a.hi[k]).max(0.0);
                    g * g
                })
                .sum();
            gap2.sqrt() <= EPS
        }
        _ => unreachable!("observer-free relations only"),
    }
}

/// Relation between two objects from the exact oracle volumes.
pub fn exact_relation(scene: &Scene, rel: Relation, a: InstanceId, b: InstanceId) -> bool {
    let vol = |id| {
        let class = scene.class_by_id(id).expect("class exists");
        SampledVolume::exact(oracle_bounds(scene, id), class.is_container)
    };
    let supported = scene.instance(a).and_then(|i| i.supported_by) == Some(b);
    oracle_predicate(rel, &vol(a), &vol(b), supported)
}

/// A generated scene with extra objects dropped onto furniture, onto other
/// objects and under the table, then settled, so that every relation occurs.
pub fn perturbed_scene(seed: u64) -> Scene {
    let mut scene = generate_scene(desk(), room(), 10, seed).expect("scene generates");
    let mut rng = SimRng::derived(seed, 0x000a_11ce);
    let small: Vec<String> = scene
        .catalog
        .classes
        .iter()
        .filter(|c| c.category == Category::Interactable && c.extents[0] <= 0.3 && c.extents[1] <= 0.3)
        .map(|c| c.class_id.clone())
        .collect();
    let furniture: Vec<(InstanceId, Vec3, [f64; 2])> = scene
        .instances
        .iter()
        .filter(|i| scene.catalog.get(&i.class_id).unwrap().category == Category::Static)
        .map(|i| {
            let c = scene.catalog.get(&i.class_id).unwrap();
            (i.instance_id, i.position, [c.extents[0], c.extents[1]])
        })
        .collect();
    for (_, pos, ext) in &furniture {
        let class = &small[rng.index(small.len())];
        let x = pos.x + rng.range(-0.25, 0.25) * ext[0];
        let y = pos.y + rng.range(-0.25, 0.25) * ext[1];
        let yaw = rng.index(8) as f64 * FRAC_PI_4;
        scene.insert_instance(class, Vec3::new(x, y, 2.5), yaw).unwrap();
    }
    if let Some(table) = scene.instances.iter().find(|i| i.class_id == "table").map(|i| i.position) {
        scene.insert_instance("red_ball", Vec3::new(table.x, table.y, 0.0), 0.0).unwrap();
    }
    let surfaces: Vec<Vec3> = scene
        .instances
        .iter()
        .filter(|i| {
            let c = scene.catalog.get(&i.class_id).unwrap();
            c.category == Category::Interactable && c.is_surface && i.position.z == 0.0
        })
        .map(|i| i.position)
        .collect();
    if !surfaces.is_empty() {
        let p = surfaces[rng.index(surfaces.len())];
        let class = &small[rng.index(small.len())];
        scene.insert_instance(class, Vec3::new(p.x, p.y, 3.0), 0.0).unwrap();
    }
    settle(&mut scene);
    scene
}

/// A room holding one unit cube centered over the origin, agents moved far
/// away, for renderer checks.
pub fn unit_cube_scene() -> Scene {
    let mut doc: Value = serde_json::from_str(abcde::catalog::DESK_CATALOG_JSON).unwrap();
    doc["classes"].as_array_mut().unwrap().push(json!({
        "class_id": "unit_cube",
        "category": "Interactable",
        "shape": "Box",
        "extents": [1.0, 1.0, 1.0],
        "color": "white",
        "mass": 1.0,
        "graspable": true,
        "is_container": false,
        "is_surface": true,
    }));
    let catalog = Catalog::from_json(&doc.to_string()).unwrap();
    let mut scene = Scene::empty(Arc::new(catalog), room(), 0);
    scene.insert_instance("unit_cube", Vec3::new(0.0, 0.0, 0.0), 0.0).unwrap();
    for a in &mut scene.agents {
        a.position = Vec3::new(9.5, 9.5, 0.0);
    }
    scene
}

/// Instances other than the reserved ids, in id order.
pub fn object_ids(scene: &Scene) -> Vec<InstanceId> {
    scene.instances.iter().map(|i| i.instance_id).collect()
}
