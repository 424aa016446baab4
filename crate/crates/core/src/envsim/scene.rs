use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pose::AgentPose;
use super::render::{render, CameraConfig};
use super::{EnvError, UNLABELED};

/// Class id of the floor. Object classes are `1..class_count`.
pub const FLOOR_CLASS: u8 = 0;
pub const ROOM_HEIGHT: f64 = 3.0;
const RESAMPLE_BUDGET: u64 = 100;
const MIN_VISIBLE_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Box,
    Cylinder,
    Sphere,
    Panel,
}

impl Shape {
    pub fn tag(self) -> &'static str {
        match self {
            Shape::Box => "box",
            Shape::Cylinder => "cylinder",
            Shape::Sphere => "sphere",
            Shape::Panel => "panel",
        }
    }
}

/// An object resting in the room. `center` is the geometric center;
/// `half` holds half-extents along the object's local x/y/z axes (for
/// cylinders and spheres `half[0]` is the radius). `yaw` rotates about z.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub class_id: u8,
    pub shape: Shape,
    pub center: [f64; 3],
    pub yaw_deg: f64,
    pub half: [f64; 3],
    pub albedo: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Floor extents along x and y; the floor spans `[0, room[0]] x [0, room[1]]`.
    pub room: [f64; 2],
    pub objects: Vec<SceneObject>,
    pub class_count: usize,
    pub root: AgentPose,
}

impl SceneSpec {
    pub fn objects_inside_room(&self) -> bool {
        self.objects.iter().all(|o| {
            let r = o.half[0].hypot(o.half[1]);
            o.center[0] - r >= -1e-9
                && o.center[0] + r <= self.room[0] + 1e-9
                && o.center[1] - r >= -1e-9
                && o.center[1] + r <= self.room[1] + 1e-9
                && o.center[2] - o.half[2] >= -1e-9
                && o.center[2] + o.half[2] <= ROOM_HEIGHT + 1e-9
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub room_min: f64,
    pub room_max: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub class_count: usize,
    pub camera_height: f64,
    pub camera: CameraConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            room_min: 4.0,
            room_max: 6.0,
            objects_min: 6,
            objects_max: 10,
            class_count: 8,
            camera_height: 0.88,
            camera: CameraConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.class_count < 2 || self.class_count > 255 {
            return bad("class_count must be in [2, 255]");
        }
        if !(self.room_min > 1.0 && self.room_min <= self.room_max) {
            return bad("room size range must satisfy 1 < room_min <= room_max");
        }
        if self.objects_min > self.objects_max {
            return bad("objects_min > objects_max");
        }
        if !(self.camera_height > 0.0 && self.camera_height < ROOM_HEIGHT) {
            return bad("camera_height must lie inside the room");
        }
        self.camera.validate()
    }
}

/// Canonical appearance of an object class. Classes `k` and `k + 4` share a
/// base colour and differ only in shape, so colour alone is ambiguous.
pub fn class_style(class_id: u8) -> (Shape, [f64; 3]) {
    const PALETTE: [[f64; 3]; 4] = [[0.80, 0.22, 0.18], [0.20, 0.40, 0.85], [0.25, 0.70, 0.30], [0.85, 0.75, 0.20]];
    const SHAPES: [Shape; 4] = [Shape::Box, Shape::Cylinder, Shape::Sphere, Shape::Panel];
    let k = class_id.saturating_sub(1) as usize;
    let hue = k % 4;
    let shape = SHAPES[(k + k / 4) % 4];
    let tint = (k / 8) as f64 * 0.15;
    let base = PALETTE[hue];
    (shape, [(base[0] - tint).max(0.05), (base[1] + tint).min(0.95), (base[2] - tint * 0.5).max(0.05)])
}

pub fn floor_albedo() -> [f64; 3] {
    [0.55, 0.50, 0.45]
}

fn sample_object(rng: &mut ChaCha8Rng, class_id: u8, room: [f64; 2]) -> SceneObject {
    let (shape, base) = class_style(class_id);
    let jitter = |rng: &mut ChaCha8Rng, v: f64| (v + rng.gen_range(-0.06..0.06)).clamp(0.02, 0.98);
    let albedo = [jitter(rng, base[0]), jitter(rng, base[1]), jitter(rng, base[2])];
    let half: [f64; 3] = match shape {
        Shape::Box => [rng.gen_range(0.2..0.45), rng.gen_range(0.2..0.45), rng.gen_range(0.2..0.5)],
        Shape::Cylinder => {
            let r = rng.gen_range(0.15..0.3);
            [r, r, rng.gen_range(0.35..0.7)]
        }
        Shape::Sphere => {
            let r = rng.gen_range(0.2..0.4);
            [r, r, r]
        }
        Shape::Panel => [0.03, rng.gen_range(0.35..0.7), rng.gen_range(0.4..0.8)],
    };
    let reach = half[0].hypot(half[1]);
    let center = [
        rng.gen_range(reach..room[0] - reach),
        rng.gen_range(reach..room[1] - reach),
        match shape {
            Shape::Panel => half[2] + rng.gen_range(0.0..0.6),
            _ => half[2],
        },
    ];
    let yaw_deg = match shape {
        Shape::Cylinder | Shape::Sphere => 0.0,
        _ => rng.gen_range(0..12) as f64 * 15.0,
    };
    SceneObject { class_id, shape, center, yaw_deg, half, albedo }
}

fn sample_root(rng: &mut ChaCha8Rng, room: [f64; 2], height: f64) -> AgentPose {
    let x = rng.gen_range(0.5..room[0] - 0.5);
    let y = rng.gen_range(0.5..room[1] - 0.5);
    let to_center = (room[1] / 2.0 - y).atan2(room[0] / 2.0 - x).to_degrees();
    // integral yaw keeps turn actions exactly invertible
    let yaw = (to_center + rng.gen_range(-20.0..20.0)).round();
    AgentPose::new([x, y, height], yaw, 0.0)
}

/// The root camera, and every pose one backward step away, stays outside
/// each object's bounding cylinder with some margin.
fn camera_clear(scene: &SceneSpec) -> bool {
    let p = scene.root.position;
    scene.objects.iter().all(|o| {
        let reach = o.half[0].hypot(o.half[1]);
        (p[0] - o.center[0]).hypot(p[1] - o.center[1]) > reach + 0.3 + super::DEFAULT_BACKWARD_STEP
    })
}

/// Number of distinct labelled classes visible from `pose`.
pub fn visible_classes(scene: &SceneSpec, pose: &AgentPose, camera: &CameraConfig) -> usize {
    let frame = render(scene, pose, camera);
    let mut seen = [false; 256];
    for &l in &frame.mask.labels {
        if l != UNLABELED {
            seen[l as usize] = true;
        }
    }
    seen.iter().filter(|&&s| s).count()
}

/// Deterministic procedural scene; resamples until at least three classes
/// are visible from the root pose.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<SceneSpec, EnvError> {
    config.validate()?;
    for attempt in 0..RESAMPLE_BUDGET {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let room = [rng.gen_range(config.room_min..=config.room_max), rng.gen_range(config.room_min..=config.room_max)];
        let count = rng.gen_range(config.objects_min..=config.objects_max);
        let objects = (0..count)
            .map(|_| {
                let class_id = rng.gen_range(1..config.class_count) as u8;
                sample_object(&mut rng, class_id, room)
            })
            .collect();
        let root = sample_root(&mut rng, room, config.camera_height);
        let scene = SceneSpec { seed, room, objects, class_count: config.class_count, root };
        if camera_clear(&scene) && visible_classes(&scene, &scene.root, &config.camera) >= MIN_VISIBLE_CLASSES {
            return Ok(scene);
        }
    }
    Err(EnvError::ResampleBudget { seed, attempts: RESAMPLE_BUDGET })
}

/// A scene where an object of a class that appears nowhere else sits just
/// outside the root view, so that turning towards it (one specific action)
/// reveals it. Returns the scene and the revealing action.
pub fn generate_occlusion_scene(seed: u64, config: &SceneConfig) -> Result<(SceneSpec, super::Action), EnvError> {
    use super::Action;
    config.validate()?;
    let half_fov = config.camera.hfov_deg / 2.0;
    for attempt in 0..RESAMPLE_BUDGET {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0cc1);
        rng.set_stream(attempt);
        let room = [config.room_max, config.room_max];
        let hidden_class = rng.gen_range(1..config.class_count) as u8;
        let reveal = if rng.gen_bool(0.5) { Action::TurnLeft } else { Action::TurnRight };
        let root = AgentPose::new([0.8, room[1] / 2.0, config.camera_height], 0.0, 0.0);

        // visible clutter in front of the camera, never of the hidden class
        let count = rng.gen_range(config.objects_min..=config.objects_max).max(2);
        let mut objects = Vec::with_capacity(count + 1);
        while objects.len() < count {
            let class_id = rng.gen_range(1..config.class_count) as u8;
            if class_id == hidden_class {
                continue;
            }
            let mut o = sample_object(&mut rng, class_id, room);
            let dist = rng.gen_range(1.8..room[0] - 1.2);
            let bearing = rng.gen_range(-0.7..0.7) * half_fov;
            o.center[0] = root.position[0] + dist * bearing.to_radians().cos();
            o.center[1] = root.position[1] + dist * bearing.to_radians().sin();
            objects.push(o);
        }

        // hidden object: its near edge pokes into the root view, its bulk only
        // enters the view after one 30° turn towards it
        let mut hidden = sample_object(&mut rng, hidden_class, room);
        let side = if reveal == Action::TurnLeft { 1.0 } else { -1.0 };
        let dist = rng.gen_range(1.8..2.4);
        let bearing = side * (half_fov + rng.gen_range(8.0..12.0));
        hidden.center[0] = root.position[0] + dist * bearing.to_radians().cos();
        hidden.center[1] = root.position[1] + dist * bearing.to_radians().sin();
        objects.push(hidden);

        let scene = SceneSpec { seed, room, objects, class_count: config.class_count, root };
        if !scene.objects_inside_room() || !camera_clear(&scene) {
            continue;
        }
        if visible_classes(&scene, &scene.root, &config.camera) < MIN_VISIBLE_CLASSES {
            continue;
        }
        // exactly one action must reveal the hidden class in substantial area
        let area = |pose: &AgentPose| {
            let f = render(&scene, pose, &config.camera);
            f.mask.labels.iter().filter(|&&l| l == hidden_class).count()
        };
        let root_area = area(&root);
        let min_reveal = config.camera.width * config.camera.height / 40;
        let revealing: Vec<Action> = Action::ALL
            .iter()
            .copied()
            .filter(|a| {
                let a_area = area(&super::apply(*a, &root, super::DEFAULT_BACKWARD_STEP));
                a_area >= min_reveal && a_area > 2 * root_area
            })
            .collect();
        if revealing == [reveal] {
            return Ok((scene, reveal));
        }
    }
    Err(EnvError::ResampleBudget { seed, attempts: RESAMPLE_BUDGET })
}
