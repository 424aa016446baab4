//! Deterministic CPU ray caster over analytic primitives.

use super::pose::AgentPose;
use super::scene::{floor_albedo, SceneObject, SceneSpec, Shape, FLOOR_CLASS};
use super::{EnvError, UNLABELED};

#[derive(Clone, Debug, PartialEq)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig { width: 64, height: 64, hfov_deg: 42.0 }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.width == 0 || self.height == 0 {
            return Err(EnvError::Config("camera size must be positive".into()));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(EnvError::Config("hfov must be in (0, 180)".into()));
        }
        Ok(())
    }

    /// World-space ray direction (not normalized) through pixel `(row, col)`.
    pub fn ray_dir(&self, pose: &AgentPose, row: usize, col: usize) -> [f64; 3] {
        let (f, r, u) = basis(pose);
        let tan = (self.hfov_deg.to_radians() / 2.0).tan();
        let sx = ((col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * tan;
        let sy = (1.0 - (row as f64 + 0.5) / self.height as f64 * 2.0) * tan * self.height as f64 / self.width as f64;
        [f[0] + sx * r[0] + sy * u[0], f[1] + sx * r[1] + sy * u[1], f[2] + sx * r[2] + sy * u[2]]
    }
}

/// Camera frame: forward, right, up.
pub fn basis(pose: &AgentPose) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let f = pose.forward();
    let y = pose.yaw.to_radians();
    let r = [y.sin(), -y.cos(), 0.0];
    let u = cross(r, f);
    (f, r, u)
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<u8>,
}

impl Image {
    /// Planar `[3, H, W]` values scaled to `[0, 1]`.
    pub fn to_chw(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                out[c * n + i] = self.rgb[i * 3 + c] as f64 / 255.0;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    /// Class id per pixel; [`UNLABELED`] for background.
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub image: Image,
    pub mask: Mask,
}

pub(crate) struct Hit {
    pub t: f64,
    pub normal: [f64; 3],
}

const EPS: f64 = 1e-9;

/// Rotates a world vector into an object's yaw frame.
fn to_local(v: [f64; 3], yaw_deg: f64) -> [f64; 3] {
    let (s, c) = yaw_deg.to_radians().sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1], v[2]]
}

fn to_world(v: [f64; 3], yaw_deg: f64) -> [f64; 3] {
    let (s, c) = yaw_deg.to_radians().sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

fn intersect_box(o: [f64; 3], d: [f64; 3], obj: &SceneObject) -> Option<Hit> {
    let lo = to_local([o[0] - obj.center[0], o[1] - obj.center[1], o[2] - obj.center[2]], obj.yaw_deg);
    let ld = to_local(d, obj.yaw_deg);
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    let mut sign = 1.0;
    for a in 0..3 {
        if ld[a].abs() < 1e-15 {
            if lo[a].abs() > obj.half[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / ld[a];
        let (mut ta, mut tb) = ((-obj.half[a] - lo[a]) * inv, (obj.half[a] - lo[a]) * inv);
        let mut s = -1.0;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
            s = 1.0;
        }
        if ta > t0 {
            t0 = ta;
            axis = a;
            sign = s;
        }
        t1 = t1.min(tb);
    }
    if t0 > t1 || t0 <= EPS {
        return None;
    }
    let mut n = [0.0; 3];
    n[axis] = sign;
    Some(Hit { t: t0, normal: to_world(n, obj.yaw_deg) })
}

fn intersect_sphere(o: [f64; 3], d: [f64; 3], obj: &SceneObject) -> Option<Hit> {
    let oc = [o[0] - obj.center[0], o[1] - obj.center[1], o[2] - obj.center[2]];
    let r = obj.half[0];
    let a = dot(d, d);
    let b = 2.0 * dot(oc, d);
    let c = dot(oc, oc) - r * r;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / (2.0 * a);
    if t <= EPS {
        return None;
    }
    let p = [oc[0] + t * d[0], oc[1] + t * d[1], oc[2] + t * d[2]];
    Some(Hit { t, normal: [p[0] / r, p[1] / r, p[2] / r] })
}

fn intersect_cylinder(o: [f64; 3], d: [f64; 3], obj: &SceneObject) -> Option<Hit> {
    let r = obj.half[0];
    let (zlo, zhi) = (obj.center[2] - obj.half[2], obj.center[2] + obj.half[2]);
    let (ox, oy) = (o[0] - obj.center[0], o[1] - obj.center[1]);
    let mut best: Option<Hit> = None;
    let a = d[0] * d[0] + d[1] * d[1];
    if a > 1e-15 {
        let b = 2.0 * (ox * d[0] + oy * d[1]);
        let c = ox * ox + oy * oy - r * r;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / (2.0 * a);
            let z = o[2] + t * d[2];
            if t > EPS && z >= zlo && z <= zhi {
                let (px, py) = (ox + t * d[0], oy + t * d[1]);
                best = Some(Hit { t, normal: [px / r, py / r, 0.0] });
            }
        }
    }
    if d[2].abs() > 1e-15 {
        for (zc, nz) in [(zhi, 1.0), (zlo, -1.0)] {
            let t = (zc - o[2]) / d[2];
            if t <= EPS || best.as_ref().is_some_and(|h| h.t <= t) {
                continue;
            }
            let (px, py) = (ox + t * d[0], oy + t * d[1]);
            if px * px + py * py <= r * r {
                best = Some(Hit { t, normal: [0.0, 0.0, nz] });
            }
        }
    }
    best
}

pub(crate) fn intersect(o: [f64; 3], d: [f64; 3], obj: &SceneObject) -> Option<Hit> {
    match obj.shape {
        Shape::Box | Shape::Panel => intersect_box(o, d, obj),
        Shape::Sphere => intersect_sphere(o, d, obj),
        Shape::Cylinder => intersect_cylinder(o, d, obj),
    }
}

fn light_dir() -> [f64; 3] {
    let l = [0.4, 0.3, 0.85];
    let n = dot(l, l).sqrt();
    [l[0] / n, l[1] / n, l[2] / n]
}

fn shade(albedo: [f64; 3], normal: [f64; 3], d: [f64; 3]) -> [u8; 3] {
    let mut n = normal;
    // light the face that points at the camera
    if dot(n, d) > 0.0 {
        n = [-n[0], -n[1], -n[2]];
    }
    let lambert = dot(n, light_dir()).max(0.0);
    let k = 0.35 + 0.65 * lambert;
    let q = |v: f64| ((v * k).clamp(0.0, 1.0) * 255.0).round() as u8;
    [q(albedo[0]), q(albedo[1]), q(albedo[2])]
}

/// Label and colour seen along one ray.
pub(crate) fn trace(scene: &SceneSpec, o: [f64; 3], d: [f64; 3]) -> (u8, [u8; 3]) {
    let mut best_t = f64::INFINITY;
    let mut result = (UNLABELED, [0u8; 3]);
    for obj in &scene.objects {
        if let Some(h) = intersect(o, d, obj) {
            if h.t < best_t {
                best_t = h.t;
                result = (obj.class_id, shade(obj.albedo, h.normal, d));
            }
        }
    }
    if d[2] < -1e-15 {
        let t = -o[2] / d[2];
        if t > EPS && t < best_t {
            let (x, y) = (o[0] + t * d[0], o[1] + t * d[1]);
            if x >= 0.0 && x <= scene.room[0] && y >= 0.0 && y <= scene.room[1] {
                let checker = ((x / 0.5).floor() as i64 + (y / 0.5).floor() as i64).rem_euclid(2);
                let base = floor_albedo();
                let f = if checker == 0 { 1.0 } else { 0.82 };
                let albedo = [base[0] * f, base[1] * f, base[2] * f];
                result = (FLOOR_CLASS, shade(albedo, [0.0, 0.0, 1.0], d));
            }
        }
    }
    result
}

/// Renders the RGB image and per-pixel class mask seen from `pose`.
pub fn render(scene: &SceneSpec, pose: &AgentPose, camera: &CameraConfig) -> Frame {
    let (w, h) = (camera.width, camera.height);
    let mut rgb = vec![0u8; w * h * 3];
    let mut labels = vec![UNLABELED; w * h];
    for row in 0..h {
        for col in 0..w {
            let d = camera.ray_dir(pose, row, col);
            let (label, color) = trace(scene, pose.position, d);
            let i = row * w + col;
            labels[i] = label;
            rgb[i * 3..i * 3 + 3].copy_from_slice(&color);
        }
    }
    Frame { image: Image { width: w, height: h, rgb }, mask: Mask { width: w, height: h, labels } }
}
