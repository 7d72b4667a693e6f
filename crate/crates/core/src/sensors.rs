//! Ray-cast observations from stationary cameras: planar depth, instance
//! ids, surface normals and flat-shaded RGB.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentId, AGENT_RADIUS};
use crate::geometry::{class_parts, Aabb, Primitive, Vec3};
use crate::kinetics::agent_height;
use crate::world::{GridSpec, InstanceId, Scene, BACKGROUND_ID, FLOOR_ID};

pub const DEFAULT_RESOLUTION: [u32; 2] = [64, 64];
pub const UI_RESOLUTION: [u32; 2] = [256, 256];
pub const CAMERA_HEIGHT: f64 = 3.0;
pub const DEFAULT_FOV_DEG: f64 = 90.0;
pub const MAX_RESOLUTION: u32 = 1024;
/// Magic prefix of raw float plane dumps.
pub const DUMP_MAGIC: &[u8; 8] = b"ABCDEFRM";
pub const AMBIENT: f64 = 0.2;

const FLOOR_RGB: [f64; 3] = [0.6, 0.6, 0.6];
const CHILD_RGB: [f64; 3] = [0.95, 0.75, 0.55];
const PARENT_RGB: [f64; 3] = [0.35, 0.45, 0.75];

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub camera_id: String,
    pub position: Vec3,
    pub look_at: Vec3,
    /// Degrees.
    pub vertical_fov: f64,
    /// (width, height) in pixels.
    pub resolution: [u32; 2],
}

impl CameraSpec {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.vertical_fov > 10.0 && self.vertical_fov < 170.0) {
            return Err(SensorError::InvalidCamera(format!("fov {} outside (10, 170)", self.vertical_fov)));
        }
        let [w, h] = self.resolution;
        if w == 0 || h == 0 || w > MAX_RESOLUTION || h > MAX_RESOLUTION {
            return Err(SensorError::InvalidCamera(format!("resolution {w}x{h}")));
        }
        if (self.look_at - self.position).length() == 0.0 {
            return Err(SensorError::InvalidCamera("look_at equals position".into()));
        }
        Ok(())
    }

    pub fn with_resolution(mut self, w: u32, h: u32) -> CameraSpec {
        self.resolution = [w, h];
        self
    }

    /// Orthonormal forward/right/up basis.
    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let f = (self.look_at - self.position).normalized();
        let mut right = f.cross(Vec3::new(0.0, 0.0, 1.0));
        if right.length() < 1e-12 {
            right = f.cross(Vec3::new(0.0, 1.0, 0.0));
        }
        let right = right.normalized();
        let up = right.cross(f);
        (f, right, up)
    }

    /// Primary ray for pixel (col, row), row 0 at the top. The forward
    /// component of the returned direction is exactly 1, so the ray
    /// parameter of a hit is its planar depth.
    pub fn ray(&self, col: u32, row: u32) -> Vec3 {
        let (f, right, up) = self.basis();
        self.ray_with(f, right, up, col, row)
    }

    fn ray_with(&self, f: Vec3, right: Vec3, up: Vec3, col: u32, row: u32) -> Vec3 {
        let [w, h] = self.resolution;
        let (w, h) = (w as f64, h as f64);
        let tan = (0.5 * self.vertical_fov.to_radians()).tan();
        let u = ((2 * col + 1) as f64 - w) / w * tan * (w / h);
        let v = (h - (2 * row + 1) as f64) / h * tan;
        f + right * u + up * v
    }

    /// Pixel containing the projection of `p`, if it is in front and inside the image.
    pub fn project(&self, p: Vec3) -> Option<(u32, u32)> {
        let (f, right, up) = self.basis();
        let d = p - self.position;
        let z = d.dot(f);
        if z <= 0.0 {
            return None;
        }
        let [w, h] = self.resolution;
        let tan = (0.5 * self.vertical_fov.to_radians()).tan();
        let aspect = w as f64 / h as f64;
        let u = d.dot(right) / z / (tan * aspect);
        let v = d.dot(up) / z / tan;
        if u.abs() >= 1.0 || v.abs() >= 1.0 {
            return None;
        }
        let col = ((u + 1.0) * 0.5 * w as f64).floor() as u32;
        let row = ((1.0 - v) * 0.5 * h as f64).floor() as u32;
        Some((col.min(w - 1), row.min(h - 1)))
    }
}

/// Four corner cameras at height 3 aimed at the room center, half a unit up.
pub fn default_cameras(grid: &GridSpec) -> [CameraSpec; 4] {
    let b = grid.bounds();
    let c = grid.center();
    let look_at = Vec3::new(c[0], c[1], 0.5);
    let corners = [
        ("cam_sw", b.min[0], b.min[1]),
        ("cam_se", b.max[0], b.min[1]),
        ("cam_ne", b.max[0], b.max[1]),
        ("cam_nw", b.min[0], b.max[1]),
    ];
    corners.map(|(id, x, y)| CameraSpec {
        camera_id: id.to_string(),
        position: Vec3::new(x, y, CAMERA_HEIGHT),
        look_at,
        vertical_fov: DEFAULT_FOV_DEG,
        resolution: DEFAULT_RESOLUTION,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSet {
    pub tick: u64,
    pub camera_id: String,
    pub width: u32,
    pub height: u32,
    /// Planar depth along the optical axis; +inf on miss.
    pub depth: Vec<f32>,
    pub instance: Vec<u32>,
    pub normal: Vec<[f32; 3]>,
    pub rgb: Vec<[f32; 3]>,
}

impl FrameSet {
    pub fn index(&self, col: u32, row: u32) -> usize {
        (row * self.width + col) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Direction toward the light; normalized before use.
    pub light: Vec3,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { light: Vec3::new(1.0, 1.0, 2.0) }
    }
}

#[derive(Clone, Copy, Debug)]
struct Solid {
    id: InstanceId,
    prim: Primitive,
    bounds: Aabb,
    rgb: [f64; 3],
}

#[derive(Clone, Debug)]
struct SceneGeometry {
    solids: Vec<Solid>,
    floor: Option<(f64, f64, f64, f64)>,
}

fn scene_geometry(scene: &Scene) -> SceneGeometry {
    let mut solids = Vec::new();
    for inst in &scene.instances {
        let class = scene.class_of(inst);
        for prim in class_parts(class, inst.position, inst.yaw) {
            solids.push(Solid { id: inst.instance_id, prim, bounds: prim.bounds(), rgb: class.color.rgb() });
        }
    }
    for agent in [AgentId::Child, AgentId::Parent] {
        let a = scene.agent(agent);
        let prim = Primitive::Cylinder {
            base: a.position,
            radius: AGENT_RADIUS,
            height: agent_height(agent, a.posture),
        };
        let rgb = if agent == AgentId::Child { CHILD_RGB } else { PARENT_RGB };
        solids.push(Solid { id: agent.instance_id(), prim, bounds: prim.bounds(), rgb });
    }
    let b = scene.grid.bounds();
    SceneGeometry { solids, floor: Some((b.min[0], b.min[1], b.max[0], b.max[1])) }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct RayHit {
    t: f64,
    id: InstanceId,
    normal: Vec3,
    rgb: [f64; 3],
}

impl SceneGeometry {
    /// Nearest hit with t in (t_min, t_max); ties go to the first solid in
    /// (instance id, part) order, the floor last.
    fn cast(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64, skip: &[InstanceId]) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for s in &self.solids {
            if skip.contains(&s.id) {
                continue;
            }
            let limit = best.map_or(t_max, |b| b.t);
            match s.bounds.ray_interval(origin, dir) {
                Some((t0, t1)) if t1 > t_min && t0 < limit => {}
                _ => continue,
            }
            if let Some(h) = s.prim.intersect(origin, dir, t_min) {
                if h.t < limit {
                    best = Some(RayHit { t: h.t, id: s.id, normal: h.normal, rgb: s.rgb });
                }
            }
        }
        if let (Some((x0, y0, x1, y1)), false) = (self.floor, skip.contains(&FLOOR_ID)) {
            if dir.z < 0.0 && origin.z > 0.0 {
                let t = -origin.z / dir.z;
                let limit = best.map_or(t_max, |b| b.t);
                let p = origin + dir * t;
                if t > t_min && t < limit && p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1 {
                    best = Some(RayHit { t, id: FLOOR_ID, normal: Vec3::new(0.0, 0.0, 1.0), rgb: FLOOR_RGB });
                }
            }
        }
        best
    }
}

/// Whether the segment from `from` to the center of `target` reaches the
/// target before any other solid. The looking agent and what it holds are
/// transparent to itself.
pub fn line_of_sight(scene: &Scene, from: Vec3, target: InstanceId, agent: AgentId) -> bool {
    let Some(bounds) = crate::kinetics::entity_aabb(scene, target) else { return false };
    let geo = scene_geometry(scene);
    let mut skip = vec![agent.instance_id()];
    if let Some(h) = scene.agent(agent).held {
        if h == target {
            return true;
        }
        skip.push(h);
    }
    let dir = bounds.center() - from;
    match geo.cast(from, dir, 1e-9, 1.0, &skip) {
        None => true,
        Some(hit) => hit.id == target,
    }
}

fn shade(hit: &RayHit, light: Vec3) -> [f32; 3] {
    let lambert = hit.normal.dot(light).max(0.0);
    let k = AMBIENT + (1.0 - AMBIENT) * lambert;
    hit.rgb.map(|c| (c * k) as f32)
}

/// Depth, instance, normal and color of one pixel.
type Pixel = (f32, u32, [f32; 3], [f32; 3]);

fn render_geometry(geo: &SceneGeometry, tick: u64, camera: &CameraSpec, opts: &RenderOptions) -> FrameSet {
    let [w, h] = camera.resolution;
    let (f, right, up) = camera.basis();
    let light = opts.light.normalized();
    let rows: Vec<Vec<Pixel>> = (0..h)
        .into_par_iter()
        .map(|row| {
            (0..w)
                .map(|col| {
                    let dir = camera.ray_with(f, right, up, col, row);
                    match geo.cast(camera.position, dir, 0.0, f64::INFINITY, &[]) {
                        Some(hit) => {
                            let n = hit.normal.normalized();
                            let hit = RayHit { normal: n, ..hit };
                            (hit.t as f32, hit.id, [n.x as f32, n.y as f32, n.z as f32], shade(&hit, light))
                        }
                        None => (f32::INFINITY, BACKGROUND_ID, [0.0; 3], [0.0; 3]),
                    }
                })
                .collect()
        })
        .collect();
    let n = (w * h) as usize;
    let mut frame = FrameSet {
        tick,
        camera_id: camera.camera_id.clone(),
        width: w,
        height: h,
        depth: Vec::with_capacity(n),
        instance: Vec::with_capacity(n),
        normal: Vec::with_capacity(n),
        rgb: Vec::with_capacity(n),
    };
    for (d, id, nrm, rgb) in rows.into_iter().flatten() {
        frame.depth.push(d);
        frame.instance.push(id);
        frame.normal.push(nrm);
        frame.rgb.push(rgb);
    }
    frame
}

pub fn render(scene: &Scene, camera: &CameraSpec) -> FrameSet {
    render_with(scene, camera, &RenderOptions::default())
}

pub fn render_with(scene: &Scene, camera: &CameraSpec, opts: &RenderOptions) -> FrameSet {
    render_geometry(&scene_geometry(scene), scene.tick, camera, opts)
}

/// Renders several cameras against one geometry snapshot.
pub fn render_all(scene: &Scene, cameras: &[CameraSpec]) -> Vec<FrameSet> {
    let geo = scene_geometry(scene);
    let opts = RenderOptions::default();
    cameras.par_iter().map(|c| render_geometry(&geo, scene.tick, c, &opts)).collect()
}

/// Renders on the current thread only; used to check that parallel output
/// is identical.
pub fn render_sequential(scene: &Scene, camera: &CameraSpec) -> FrameSet {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("single-thread pool");
    pool.install(|| render(scene, camera))
}

/// Capture cadence: a batch for every camera whenever the tick is a
/// multiple of `every_n_ticks`.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureSchedule {
    pub every_n_ticks: u64,
    pub cameras: Vec<CameraSpec>,
}

impl CaptureSchedule {
    pub fn new(every_n_ticks: u64, cameras: Vec<CameraSpec>) -> Result<CaptureSchedule, SensorError> {
        if every_n_ticks == 0 {
            return Err(SensorError::InvalidCamera("capture interval must be at least 1".into()));
        }
        for c in &cameras {
            c.validate()?;
        }
        Ok(CaptureSchedule { every_n_ticks, cameras })
    }

    pub fn due(&self, tick: u64) -> bool {
        tick.is_multiple_of(self.every_n_ticks)
    }

    pub fn capture(&self, scene: &Scene) -> Vec<FrameSet> {
        render_all(scene, &self.cameras)
    }
}

/// Advances `ticks` world ticks, handing every scheduled batch to `sink`
/// before the next tick runs.
pub fn run_with_capture(
    scene: &mut Scene,
    slots: &mut crate::agents::ActionSlots,
    ticks: u64,
    schedule: &CaptureSchedule,
    mut sink: impl FnMut(Vec<FrameSet>),
) {
    for _ in 0..ticks {
        crate::agents::tick(scene, slots);
        if schedule.due(scene.tick) {
            sink(schedule.capture(scene));
        }
    }
}

/// Raw little-endian float32 planes: magic, then u32 width, height and
/// channel count, then the samples row-major and channel-interleaved.
pub fn encode_raw_f32(width: u32, height: u32, channels: u32, data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + data.len() * 4);
    out.extend_from_slice(DUMP_MAGIC);
    for v in [width, height, channels] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_raw_f32`]: (width, height, channels, samples).
pub fn decode_raw_f32(bytes: &[u8]) -> Option<(u32, u32, u32, Vec<f32>)> {
    if bytes.len() < 20 || &bytes[..8] != DUMP_MAGIC {
        return None;
    }
    let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let (w, h, c) = (u(8), u(12), u(16));
    let n = (w as usize) * (h as usize) * (c as usize);
    let body = &bytes[20..];
    if body.len() != n * 4 {
        return None;
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Some((w, h, c, data))
}

pub fn depth_plane(frame: &FrameSet) -> Vec<u8> {
    encode_raw_f32(frame.width, frame.height, 1, &frame.depth)
}

pub fn normal_plane(frame: &FrameSet) -> Vec<u8> {
    let flat: Vec<f32> = frame.normal.iter().flatten().copied().collect();
    encode_raw_f32(frame.width, frame.height, 3, &flat)
}

pub fn rgb_plane(frame: &FrameSet) -> Vec<u8> {
    let flat: Vec<f32> = frame.rgb.iter().flatten().copied().collect();
    encode_raw_f32(frame.width, frame.height, 3, &flat)
}

pub fn instance_plane(frame: &FrameSet) -> Vec<u8> {
    let flat: Vec<f32> = frame.instance.iter().map(|&i| i as f32).collect();
    encode_raw_f32(frame.width, frame.height, 1, &flat)
}

fn to_srgb8(c: f32) -> u8 {
    let c = c.clamp(0.0, 1.0);
    let s = if c <= 0.003_130_8 { 12.92 * c } else { 1.055 * c.powf(1.0 / 2.4) - 0.055 };
    (s * 255.0).round() as u8
}

/// Writes `<camera>_<tick>_{rgb.png,instance.png,depth.f32,normal.f32}`.
pub fn dump_frame(dir: &Path, frame: &FrameSet) -> Result<Vec<PathBuf>, SensorError> {
    fs::create_dir_all(dir)?;
    let stem = format!("{}_{:06}", frame.camera_id, frame.tick);
    let mut written = Vec::new();

    let rgb: Vec<u8> = frame.rgb.iter().flat_map(|p| p.map(to_srgb8)).collect();
    let img = image::RgbImage::from_raw(frame.width, frame.height, rgb).expect("buffer size matches");
    let p = dir.join(format!("{stem}_rgb.png"));
    img.save(&p)?;
    written.push(p);

    let ids: Vec<u16> = frame.instance.iter().map(|&i| i.min(u16::MAX as u32) as u16).collect();
    let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(frame.width, frame.height, ids).expect("buffer size matches");
    let p = dir.join(format!("{stem}_instance.png"));
    img.save(&p)?;
    written.push(p);

    for (name, bytes) in [("depth", depth_plane(frame)), ("normal", normal_plane(frame))] {
        let p = dir.join(format!("{stem}_{name}.f32"));
        fs::File::create(&p)?.write_all(&bytes)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::world::{generate_scene, Cell};
    use std::sync::Arc;

    fn desk() -> Arc<Catalog> {
        Arc::new(Catalog::desk())
    }

    #[test]
    fn corner_cameras() {
        let cams = default_cameras(&GridSpec::room(10, 10));
        let pos: Vec<[f64; 3]> = cams.iter().map(|c| c.position.to_array()).collect();
        assert_eq!(pos, vec![[0.0, 0.0, 3.0], [10.0, 0.0, 3.0], [10.0, 10.0, 3.0], [0.0, 10.0, 3.0]]);
        for c in &cams {
            assert_eq!(c.look_at, Vec3::new(5.0, 5.0, 0.5));
            c.validate().unwrap();
        }
    }

    #[test]
    fn every_cell_center_is_visible() {
        for (w, d) in [(10, 10), (6, 12), (3, 3)] {
            let grid = GridSpec::room(w, d);
            let cams = default_cameras(&grid);
            for cell in grid.cells() {
                let c = grid.cell_center(cell);
                let p = Vec3::new(c[0], c[1], 0.0);
                assert!(cams.iter().any(|cam| cam.project(p).is_some()), "{w}x{d} cell {cell:?} unseen");
            }
        }
    }

    #[test]
    fn cameras_rotate_onto_each_other() {
        let grid = GridSpec::room(10, 10);
        let cams = default_cameras(&grid);
        let rot = |p: Vec3| Vec3::new(10.0 - p.y, p.x, p.z);
        for (k, c) in cams.iter().enumerate() {
            let next = &cams[(k + 1) % 4];
            assert_eq!(rot(c.position), next.position);
            assert_eq!(rot(c.look_at), next.look_at);
        }
    }

    #[test]
    fn empty_room_sees_only_floor_and_background() {
        let mut s = Scene::empty(desk(), GridSpec::room(10, 10), 1);
        // Agents outside the view for this check.
        s.agents[0].position = Vec3::new(100.0, 100.0, 0.0);
        s.agents[1].position = Vec3::new(100.0, 101.0, 0.0);
        for cam in default_cameras(&s.grid) {
            let f = render(&s, &cam);
            assert!(f.instance.iter().all(|&i| i == BACKGROUND_ID || i == FLOOR_ID));
            assert!(f.instance.contains(&FLOOR_ID));
        }
    }

    #[test]
    fn raw_roundtrip_and_header() {
        let bytes = encode_raw_f32(2, 1, 1, &[1.5, f32::INFINITY]);
        assert_eq!(&bytes[..8], b"ABCDEFRM");
        let (w, h, c, d) = decode_raw_f32(&bytes).unwrap();
        assert_eq!((w, h, c), (2, 1, 1));
        assert_eq!(d[0], 1.5);
        assert!(d[1].is_infinite());
        assert!(decode_raw_f32(&bytes[..bytes.len() - 1]).is_none());
    }

    #[test]
    fn invalid_cameras_rejected() {
        let mut c = default_cameras(&GridSpec::room(4, 4))[0].clone();
        c.vertical_fov = 10.0;
        assert!(c.validate().is_err());
        c.vertical_fov = 60.0;
        c.resolution = [2048, 8];
        assert!(c.validate().is_err());
    }

    #[test]
    fn line_of_sight_blocked_by_shelf() {
        let mut s = Scene::empty(desk(), GridSpec::room(10, 10), 1);
        let ball = s.spawn_object(&s.catalog.get("red_ball").unwrap().clone(), Cell::new(5, 5)).unwrap();
        s.agents[0].position = Vec3::new(1.5, 5.5, 0.0);
        let eye = s.agents[0].eye_point();
        assert!(line_of_sight(&s, eye, ball, AgentId::Child));
        s.spawn_object(&s.catalog.get("shelf").unwrap().clone(), Cell::new(3, 5)).unwrap();
        assert!(!line_of_sight(&s, eye, ball, AgentId::Child));
    }

    #[test]
    fn parallel_matches_sequential() {
        let s = generate_scene(desk(), GridSpec::room(10, 10), 10, 5).unwrap();
        let cam = &default_cameras(&s.grid)[2];
        assert_eq!(render(&s, cam), render_sequential(&s, cam));
    }

    #[test]
    fn capture_every_tick() {
        let mut s = generate_scene(desk(), GridSpec::room(6, 6), 3, 2).unwrap();
        let cams = default_cameras(&s.grid).map(|c| c.with_resolution(8, 8)).to_vec();
        let sched = CaptureSchedule::new(1, cams).unwrap();
        let mut batches = Vec::new();
        run_with_capture(&mut s, &mut crate::agents::ActionSlots::new(), 10, &sched, |b| batches.push(b));
        assert_eq!(batches.len(), 10);
        assert!(batches.iter().all(|b| b.len() == 4));
        assert_eq!(batches[3][0].tick, 4);
        assert!(CaptureSchedule::new(0, vec![]).is_err());
    }
}
