//! Action-tree datasets on disk.
//!
//! Layout: `manifest.txt`, `images/<point>_<node>.ppm`, `masks/<point>_<node>.pgm`.
//! Manifest body lines carry, in order:
//! `point_id split node_id parent_id action_tag yaw pitch x y z image_path mask_path`
//! with `-` for the root's parent and action. Header lines start with `#`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::pose::{Action, AgentPose};
use super::render::{render, CameraConfig, Frame, Image, Mask};
use super::scene::{generate_occlusion_scene, generate_scene, SceneConfig, SceneSpec};
use super::tree::{build_point, ActionTreePoint, TreeNode};
use super::EnvError;

const FORMAT_LINE: &str = "# adaptseg-dataset 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Split::ALL.iter().copied().find(|x| x.tag() == s).ok_or_else(|| format!("unknown split {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// Random clutter.
    Standard,
    /// One hidden object revealed by exactly one action.
    Occlusion,
}

impl SceneKind {
    pub fn tag(self) -> &'static str {
        match self {
            SceneKind::Standard => "standard",
            SceneKind::Occlusion => "occlusion",
        }
    }
}

impl FromStr for SceneKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(SceneKind::Standard),
            "occlusion" => Ok(SceneKind::Occlusion),
            _ => Err(format!("unknown scene kind {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub kind: SceneKind,
    pub depth: usize,
    pub backward_step: f64,
    pub train_points: usize,
    pub val_points: usize,
    pub test_points: usize,
    pub scene: SceneConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            kind: SceneKind::Standard,
            depth: 1,
            backward_step: super::DEFAULT_BACKWARD_STEP,
            train_points: 128,
            val_points: 16,
            test_points: 16,
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPoint {
    pub split: Split,
    pub tree: ActionTreePoint,
    /// Action that reveals the hidden object (occlusion scenes only).
    pub reveal: Option<Action>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub points: Vec<DatasetPoint>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetPoint> {
        self.points.iter().filter(move |p| p.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn class_count(&self) -> usize {
        self.config.scene.class_count
    }
}

/// Scene seed for a point: a SplitMix64 mix of the dataset seed and point id.
pub fn scene_seed(dataset_seed: u64, point_id: usize) -> u64 {
    let mut z = dataset_seed.wrapping_add((point_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn make_scene(kind: SceneKind, seed: u64, config: &SceneConfig) -> Result<(SceneSpec, Option<Action>), EnvError> {
    match kind {
        SceneKind::Standard => Ok((generate_scene(seed, config)?, None)),
        SceneKind::Occlusion => {
            let (s, a) = generate_occlusion_scene(seed, config)?;
            Ok((s, Some(a)))
        }
    }
}

/// Generates every point of every split. Point ids run train, then val, then test.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset, EnvError> {
    config.scene.validate()?;
    let mut plan = Vec::new();
    for (split, n) in
        [(Split::Train, config.train_points), (Split::Val, config.val_points), (Split::Test, config.test_points)]
    {
        for _ in 0..n {
            plan.push((plan.len(), split));
        }
    }
    let points = plan
        .par_iter()
        .map(|&(id, split)| {
            let (scene, reveal) = make_scene(config.kind, scene_seed(config.seed, id), &config.scene)?;
            let tree = build_point(id, &scene, &scene.root, config.depth, &config.scene.camera, config.backward_step)?;
            Ok(DatasetPoint { split, tree, reveal })
        })
        .collect::<Result<Vec<_>, EnvError>>()?;
    Ok(Dataset { config: config.clone(), points })
}

fn meta_line(c: &DatasetConfig) -> String {
    let s = &c.scene;
    format!(
        "# meta seed={} kind={} depth={} backward_step={} train_points={} val_points={} test_points={} \
         class_count={} room_min={} room_max={} objects_min={} objects_max={} camera_height={} \
         width={} height={} hfov={}",
        c.seed,
        c.kind.tag(),
        c.depth,
        c.backward_step,
        c.train_points,
        c.val_points,
        c.test_points,
        s.class_count,
        s.room_min,
        s.room_max,
        s.objects_min,
        s.objects_max,
        s.camera_height,
        s.camera.width,
        s.camera.height,
        s.camera.hfov_deg,
    )
}

fn parse_meta(line: &str, path: &Path) -> Result<DatasetConfig, EnvError> {
    let bad = |reason: String| EnvError::Manifest { path: path.to_path_buf(), line: 2, reason };
    let mut c = DatasetConfig::default();
    for tok in line.trim_start_matches("# meta").split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad(format!("malformed token {tok:?}")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number for {k}: {v:?}")));
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad integer for {k}: {v:?}")));
        match k {
            "seed" => c.seed = v.parse().map_err(|_| bad(format!("bad seed {v:?}")))?,
            "kind" => c.kind = v.parse().map_err(bad)?,
            "depth" => c.depth = int(v)?,
            "backward_step" => c.backward_step = num(v)?,
            "train_points" => c.train_points = int(v)?,
            "val_points" => c.val_points = int(v)?,
            "test_points" => c.test_points = int(v)?,
            "class_count" => c.scene.class_count = int(v)?,
            "room_min" => c.scene.room_min = num(v)?,
            "room_max" => c.scene.room_max = num(v)?,
            "objects_min" => c.scene.objects_min = int(v)?,
            "objects_max" => c.scene.objects_max = int(v)?,
            "camera_height" => c.scene.camera_height = num(v)?,
            "width" => c.scene.camera.width = int(v)?,
            "height" => c.scene.camera.height = int(v)?,
            "hfov" => c.scene.camera.hfov_deg = num(v)?,
            _ => return Err(bad(format!("unknown meta key {k:?}"))),
        }
    }
    Ok(c)
}

fn write_pnm(path: &Path, magic: &str, width: usize, height: usize, bytes: &[u8]) -> Result<(), EnvError> {
    let mut buf = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(bytes);
    fs::write(path, buf).map_err(|e| EnvError::io(path, e))
}

fn read_pnm(path: &Path, magic: &str) -> Result<(usize, usize, Vec<u8>), EnvError> {
    let raw = fs::read(path).map_err(|e| EnvError::io(path, e))?;
    let bad = |reason: &str| EnvError::Image { path: path.to_path_buf(), reason: reason.to_string() };
    // header: magic, width, height, maxval separated by single whitespace runs
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&raw[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != magic {
        return Err(bad("wrong magic number"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("maxval must be 255"));
    }
    let channels = if magic == "P6" { 3 } else { 1 };
    let body = raw.get(pos..).unwrap_or_default();
    if body.len() != w * h * channels {
        return Err(bad("pixel data length does not match header"));
    }
    Ok((w, h, body.to_vec()))
}

fn image_rel(point: usize, node: usize) -> String {
    format!("images/{point}_{node}.ppm")
}

fn mask_rel(point: usize, node: usize) -> String {
    format!("masks/{point}_{node}.pgm")
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), EnvError> {
    for sub in ["images", "masks"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| EnvError::io(&dir.join(sub), e))?;
    }
    let mut manifest = String::new();
    manifest.push_str(FORMAT_LINE);
    manifest.push('\n');
    manifest.push_str(&meta_line(&dataset.config));
    manifest.push('\n');
    for p in &dataset.points {
        let reveal = p.reveal.map(|a| a.tag()).unwrap_or("-");
        manifest.push_str(&format!("# scene {} {} {}\n", p.tree.point_id, p.tree.scene_seed, reveal));
    }
    for p in &dataset.points {
        let id = p.tree.point_id;
        for n in &p.tree.nodes {
            let (img, msk) = (image_rel(id, n.id), mask_rel(id, n.id));
            let f = &n.frame;
            write_pnm(&dir.join(&img), "P6", f.image.width, f.image.height, &f.image.rgb)?;
            write_pnm(&dir.join(&msk), "P5", f.mask.width, f.mask.height, &f.mask.labels)?;
            let parent = n.parent.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
            let action = n.action.map(|a| a.tag()).unwrap_or("-");
            let [x, y, z] = n.pose.position;
            manifest.push_str(&format!(
                "{id} {} {} {parent} {action} {} {} {x} {y} {z} {img} {msk}\n",
                p.split, n.id, n.pose.yaw, n.pose.pitch
            ));
        }
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| EnvError::io(&path, e))
}

struct Row {
    point: usize,
    split: Split,
    node: usize,
    parent: Option<usize>,
    action: Option<Action>,
    pose: AgentPose,
    image: String,
    mask: String,
}

fn parse_row(line: &str, lineno: usize, path: &Path) -> Result<Row, EnvError> {
    let bad = |reason: String| EnvError::Manifest { path: path.to_path_buf(), line: lineno, reason };
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 12 {
        return Err(bad(format!("expected 12 fields, found {}", f.len())));
    }
    let int = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(format!("bad {what} {s:?}")));
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(format!("bad {what} {s:?}")));
    let opt = |s: &str| s != "-";
    let pose = AgentPose {
        position: [num(f[7], "x")?, num(f[8], "y")?, num(f[9], "z")?],
        yaw: num(f[5], "yaw")?,
        pitch: num(f[6], "pitch")?,
    };
    if !pose.is_valid() {
        return Err(bad(format!("invalid pose {pose:?}")));
    }
    Ok(Row {
        point: int(f[0], "point id")?,
        split: f[1].parse().map_err(bad)?,
        node: int(f[2], "node id")?,
        parent: if opt(f[3]) { Some(int(f[3], "parent id")?) } else { None },
        action: if opt(f[4]) { Some(f[4].parse().map_err(bad)?) } else { None },
        pose,
        image: f[10].to_string(),
        mask: f[11].to_string(),
    })
}

/// Reads and validates a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<Dataset, EnvError> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| EnvError::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, reason: String| EnvError::Manifest { path: path.clone(), line, reason };
    match lines.next() {
        Some((_, l)) if l == FORMAT_LINE => {}
        _ => return Err(bad(1, "missing format line".into())),
    }
    let config = match lines.next() {
        Some((_, l)) if l.starts_with("# meta") => parse_meta(l, &path)?,
        _ => return Err(bad(2, "missing meta line".into())),
    };
    let mut seeds: Vec<(usize, u64, Option<Action>)> = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if let Some(rest) = line.strip_prefix("# scene ") {
            let f: Vec<&str> = rest.split_whitespace().collect();
            let parsed = (|| {
                let reveal = match *f.get(2)? {
                    "-" => None,
                    t => Some(t.parse().ok()?),
                };
                Some((f[0].parse().ok()?, f[1].parse().ok()?, reveal))
            })();
            seeds.push(parsed.ok_or_else(|| bad(lineno, format!("malformed scene line {line:?}")))?);
        } else if line.starts_with('#') || line.trim().is_empty() {
            continue;
        } else {
            rows.push((lineno, parse_row(line, lineno, &path)?));
        }
    }

    let mut points: Vec<DatasetPoint> = Vec::new();
    for (lineno, row) in rows {
        let fresh = points.last().is_none_or(|p| p.tree.point_id != row.point);
        if fresh {
            let (seed, reveal) = seeds
                .iter()
                .find(|s| s.0 == row.point)
                .map(|s| (s.1, s.2))
                .ok_or_else(|| bad(lineno, format!("no scene line for point {}", row.point)))?;
            points.push(DatasetPoint {
                split: row.split,
                tree: ActionTreePoint { point_id: row.point, scene_seed: seed, nodes: vec![] },
                reveal,
            });
        }
        let p = points.last_mut().unwrap();
        if p.split != row.split {
            return Err(bad(lineno, format!("point {} changes split", row.point)));
        }
        if row.node != p.tree.nodes.len() {
            return Err(bad(lineno, format!("node ids must be consecutive, got {}", row.node)));
        }
        let load = |rel: &str, magic: &str| read_pnm(&dir.join(rel), magic);
        let (iw, ih, rgb) = load(&row.image, "P6")?;
        let (mw, mh, labels) = load(&row.mask, "P5")?;
        if (iw, ih) != (mw, mh) {
            return Err(EnvError::Image {
                path: dir.join(&row.mask),
                reason: format!("mask is {mw}x{mh} but image is {iw}x{ih}"),
            });
        }
        let depth = match row.parent {
            Some(par) => {
                let parent = p.tree.nodes.get_mut(par).ok_or_else(|| bad(lineno, format!("unknown parent {par}")))?;
                let action = row.action.ok_or_else(|| bad(lineno, "child without action".into()))?;
                if parent.children.len() != action.index() {
                    return Err(bad(lineno, "children must be listed in action order".into()));
                }
                parent.children.push(row.node);
                parent.depth + 1
            }
            None => 0,
        };
        p.tree.nodes.push(TreeNode {
            id: row.node,
            parent: row.parent,
            action: row.action,
            depth,
            pose: row.pose,
            frame: Frame { image: Image { width: iw, height: ih, rgb }, mask: Mask { width: mw, height: mh, labels } },
            children: vec![],
        });
    }
    let ds = Dataset { config, points };
    validate_dataset(&ds).map_err(|(line, reason)| bad(line, reason))?;
    Ok(ds)
}

/// Structural checks: pose algebra, frame sizes, label range, split sizes.
/// Errors carry a best-effort manifest line number (0 when not applicable).
pub fn validate_dataset(ds: &Dataset) -> Result<(), (usize, String)> {
    let cam = &ds.config.scene.camera;
    for p in &ds.points {
        p.tree
            .validate(ds.config.backward_step, ds.class_count())
            .map_err(|e| (0, format!("point {}: {e}", p.tree.point_id)))?;
        let f = &p.tree.root().frame;
        if (f.image.width, f.image.height) != (cam.width, cam.height) {
            return Err((0, format!("point {}: frame size differs from camera config", p.tree.point_id)));
        }
    }
    for (split, want) in [
        (Split::Train, ds.config.train_points),
        (Split::Val, ds.config.val_points),
        (Split::Test, ds.config.test_points),
    ] {
        if ds.count(split) != want {
            return Err((0, format!("split {split} has {} points, header says {want}", ds.count(split))));
        }
    }
    Ok(())
}

/// Re-renders every stored frame from its scene seed and pose; returns the
/// ids of points whose frames differ.
pub fn verify_frames(ds: &Dataset) -> Result<Vec<usize>, EnvError> {
    let cam: &CameraConfig = &ds.config.scene.camera;
    let bad: Vec<Option<usize>> = ds
        .points
        .par_iter()
        .map(|p| {
            let (scene, _) = make_scene(ds.config.kind, p.tree.scene_seed, &ds.config.scene)?;
            let ok = p.tree.nodes.iter().all(|n| render(&scene, &n.pose, cam) == n.frame);
            Ok(if ok { None } else { Some(p.tree.point_id) })
        })
        .collect::<Result<_, EnvError>>()?;
    Ok(bad.into_iter().flatten().collect())
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.txt")
}
