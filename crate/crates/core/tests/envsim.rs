//! Scene rendering checked against a separately written ray caster.
//!
//! The oracle below shares no code with the library renderer: boxes are
//! clipped against their six world-space face planes, cylinders are the
//! intersection of an infinite tube with a z-slab, spheres use the
//! geometric closest-approach construction.

use adaptseg::envsim::{
    generate_dataset, generate_scene, render, validate_dataset, AgentPose, CameraConfig, DatasetConfig, SceneConfig,
    SceneObject, SceneSpec, Shape, FLOOR_CLASS, UNLABELED,
};

type V = [f64; 3];

fn add(a: V, b: V) -> V {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn mul(a: V, s: f64) -> V {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: V, b: V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Rotation about z by `deg`.
fn rot_z(v: V, deg: f64) -> V {
    let (s, c) = deg.to_radians().sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Rotation about y by `deg` (positive tilts +x towards +z).
fn tilt(v: V, deg: f64) -> V {
    let (s, c) = deg.to_radians().sin_cos();
    [c * v[0] - s * v[2], v[1], s * v[0] + c * v[2]]
}

fn pixel_ray(pose: &AgentPose, cam: &CameraConfig, row: usize, col: usize) -> V {
    let f = rot_z(tilt([1.0, 0.0, 0.0], pose.pitch), pose.yaw);
    let r = rot_z([0.0, -1.0, 0.0], pose.yaw);
    let u = rot_z(tilt([0.0, 0.0, 1.0], pose.pitch), pose.yaw);
    let half_w = (cam.hfov_deg / 2.0).to_radians().tan();
    let half_h = half_w * cam.height as f64 / cam.width as f64;
    let x = -half_w + 2.0 * half_w * (col as f64 + 0.5) / cam.width as f64;
    let y = half_h - 2.0 * half_h * (row as f64 + 0.5) / cam.height as f64;
    add(f, add(mul(r, x), mul(u, y)))
}

/// Clips the ray against half-spaces `n·p <= h`; returns the entry parameter.
fn clip(o: V, d: V, planes: &[(V, f64)]) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for &(n, h) in planes {
        let denom = dot(n, d);
        let dist = h - dot(n, o);
        if denom.abs() < 1e-15 {
            if dist < 0.0 {
                return None;
            }
            continue;
        }
        let t = dist / denom;
        if denom < 0.0 {
            lo = lo.max(t);
        } else {
            hi = hi.min(t);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

fn oracle_hit(o: V, d: V, obj: &SceneObject) -> Option<f64> {
    let entry = match obj.shape {
        Shape::Box | Shape::Panel => {
            let mut planes = Vec::new();
            for axis in 0..3 {
                let mut e = [0.0; 3];
                e[axis] = 1.0;
                let n = rot_z(e, obj.yaw_deg);
                let c = dot(n, obj.center);
                planes.push((n, c + obj.half[axis]));
                planes.push((mul(n, -1.0), -(c - obj.half[axis])));
            }
            clip(o, d, &planes)?.0
        }
        Shape::Sphere => {
            let r = obj.half[0];
            let len = dot(d, d).sqrt();
            let dn = mul(d, 1.0 / len);
            let to_c = sub(obj.center, o);
            let along = dot(to_c, dn);
            let perp2 = dot(to_c, to_c) - along * along;
            if perp2 > r * r {
                return None;
            }
            (along - (r * r - perp2).sqrt()) / len
        }
        Shape::Cylinder => {
            let slab =
                [([0.0, 0.0, 1.0], obj.center[2] + obj.half[2]), ([0.0, 0.0, -1.0], -(obj.center[2] - obj.half[2]))];
            let (s_lo, s_hi) = clip(o, d, &slab)?;
            let (px, py) = (o[0] - obj.center[0], o[1] - obj.center[1]);
            let a = d[0] * d[0] + d[1] * d[1];
            let r2 = obj.half[0] * obj.half[0];
            let (c_lo, c_hi) = if a < 1e-15 {
                if px * px + py * py > r2 {
                    return None;
                }
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                let b = px * d[0] + py * d[1];
                let disc = b * b - a * (px * px + py * py - r2);
                if disc < 0.0 {
                    return None;
                }
                ((-b - disc.sqrt()) / a, (-b + disc.sqrt()) / a)
            };
            let (lo, hi) = (s_lo.max(c_lo), s_hi.min(c_hi));
            if lo > hi {
                return None;
            }
            lo
        }
    };
    (entry > 1e-9).then_some(entry)
}

fn oracle_label(scene: &SceneSpec, o: V, d: V) -> u8 {
    let mut best = (f64::INFINITY, UNLABELED);
    for obj in &scene.objects {
        if let Some(t) = oracle_hit(o, d, obj) {
            if t < best.0 {
                best = (t, obj.class_id);
            }
        }
    }
    if d[2] < 0.0 {
        let t = -o[2] / d[2];
        let p = add(o, mul(d, t));
        if t < best.0 && (0.0..=scene.room[0]).contains(&p[0]) && (0.0..=scene.room[1]).contains(&p[1]) {
            best = (t, FLOOR_CLASS);
        }
    }
    best.1
}

fn oracle_mask(scene: &SceneSpec, pose: &AgentPose, cam: &CameraConfig) -> Vec<u8> {
    let mut out = Vec::with_capacity(cam.width * cam.height);
    for row in 0..cam.height {
        for col in 0..cam.width {
            out.push(oracle_label(scene, pose.position, pixel_ray(pose, cam, row, col)));
        }
    }
    out
}

fn histogram(labels: &[u8]) -> [usize; 256] {
    let mut h = [0; 256];
    for &l in labels {
        h[l as usize] += 1;
    }
    h
}

#[test]
fn mask_matches_independent_ray_caster() {
    let cfg = SceneConfig::default();
    for seed in 0..25 {
        let scene = generate_scene(seed, &cfg).unwrap();
        for pitch in [-30.0, 0.0, 30.0] {
            let pose = AgentPose::new(scene.root.position, scene.root.yaw, pitch);
            let rendered = render(&scene, &pose, &cfg.camera);
            let oracle = oracle_mask(&scene, &pose, &cfg.camera);
            assert_eq!(histogram(&rendered.mask.labels), histogram(&oracle), "seed {seed} pitch {pitch}");
        }
    }
}

#[test]
fn hundred_scenes_show_three_classes() {
    let cfg = SceneConfig::default();
    for seed in 0..100 {
        let scene = generate_scene(seed, &cfg).unwrap();
        let h = histogram(&oracle_mask(&scene, &scene.root, &cfg.camera));
        let classes = (0..scene.class_count).filter(|&c| h[c] > 0).count();
        assert!(classes >= 3, "seed {seed}: {classes} classes visible");
        assert_eq!(h.iter().sum::<usize>(), 64 * 64);
        assert!(h[scene.class_count..255].iter().all(|&n| n == 0));
    }
}

#[test]
fn four_by_three_camera_matches_oracle() {
    let cfg = SceneConfig { camera: CameraConfig { width: 80, height: 60, hfov_deg: 42.0 }, ..SceneConfig::default() };
    let scene = generate_scene(11, &cfg).unwrap();
    let f = render(&scene, &scene.root, &cfg.camera);
    assert_eq!(f.mask.labels, oracle_mask(&scene, &scene.root, &cfg.camera));
}

#[test]
fn full_size_split_generates_and_validates() {
    let cfg = DatasetConfig { seed: 1, train_points: 1160, val_points: 144, test_points: 0, ..Default::default() };
    let ds = generate_dataset(&cfg).unwrap();
    assert_eq!(ds.points.len(), 1304);
    assert!(ds.points.iter().all(|p| p.tree.nodes.len() == 6));
    validate_dataset(&ds).unwrap();
}
