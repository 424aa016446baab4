//! Procedural indoor scenes, a pinhole ray caster, and action-tree datasets.

use std::path::{Path, PathBuf};

use thiserror::Error;

mod dataset;
pub mod pose;
mod render;
mod scene;
mod tree;

pub use dataset::{
    generate_dataset, make_scene, manifest_path, read_dataset, scene_seed, validate_dataset, verify_frames,
    write_dataset, Dataset, DatasetConfig, DatasetPoint, SceneKind, Split,
};
pub use pose::{apply, Action, AgentPose, DEFAULT_BACKWARD_STEP, PITCH_LIMIT_DEG, ROTATION_DEG};
pub use render::{render, CameraConfig, Frame, Image, Mask};
pub use scene::{
    class_style, generate_occlusion_scene, generate_scene, visible_classes, SceneConfig, SceneObject, SceneSpec, Shape,
    FLOOR_CLASS, ROOM_HEIGHT,
};
pub use tree::{build_point, ActionTreePoint, FrameSequence, TreeNode, MAX_TREE_DEPTH};

/// Mask value for pixels that belong to no class.
pub const UNLABELED: u8 = 255;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scene seed {seed}: no valid layout after {attempts} attempts")]
    ResampleBudget { seed: u64, attempts: u64 },
    #[error("point {point} has depth {depth}, sequence needs {requested} steps")]
    TreeTooShallow { point: usize, depth: usize, requested: usize },
    #[error("{}:{line}: {reason}", path.display())]
    Manifest { path: PathBuf, line: usize, reason: String },
    #[error("{}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl EnvError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EnvError::Io { path: path.to_path_buf(), source }
    }
}
