use super::pose::{apply, Action, AgentPose};
use super::render::{render, CameraConfig, Frame};
use super::scene::SceneSpec;
use super::EnvError;

pub const MAX_TREE_DEPTH: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub action: Option<Action>,
    pub depth: usize,
    pub pose: AgentPose,
    pub frame: Frame,
    /// Child node ids indexed by [`Action::index`]; empty at the deepest level.
    pub children: Vec<usize>,
}

/// Root frame plus every frame reachable through up to `depth` actions.
/// Nodes are stored breadth-first; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionTreePoint {
    pub point_id: usize,
    pub scene_seed: u64,
    pub nodes: Vec<TreeNode>,
}

impl ActionTreePoint {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn child(&self, node: usize, action: Action) -> Option<usize> {
        self.nodes[node].children.get(action.index()).copied()
    }

    /// Follows `actions` from the root; `None` if the tree is too shallow.
    pub fn follow(&self, actions: &[Action]) -> Option<usize> {
        actions.iter().try_fold(0, |node, &a| self.child(node, a))
    }

    pub fn sequence(&self, actions: &[Action]) -> Result<FrameSequence, EnvError> {
        let mut frames = vec![self.root().frame.clone()];
        let mut node = 0;
        for &a in actions {
            node = self.child(node, a).ok_or(EnvError::TreeTooShallow {
                point: self.point_id,
                depth: self.depth(),
                requested: actions.len(),
            })?;
            frames.push(self.nodes[node].frame.clone());
        }
        Ok(FrameSequence { frames, actions: actions.to_vec() })
    }

    /// Checks every structural invariant; `backward_step` must match the one
    /// used to build the tree.
    pub fn validate(&self, backward_step: f64, class_count: usize) -> Result<(), String> {
        let root = self.nodes.first().ok_or("empty tree")?;
        if root.parent.is_some() || root.action.is_some() {
            return Err("node 0 must be the root".into());
        }
        let (w, h) = (root.frame.image.width, root.frame.image.height);
        for n in &self.nodes {
            let f = &n.frame;
            if f.image.width != w || f.image.height != h || f.mask.width != w || f.mask.height != h {
                return Err(format!("node {}: frame size mismatch", n.id));
            }
            if f.image.rgb.len() != w * h * 3 || f.mask.labels.len() != w * h {
                return Err(format!("node {}: buffer size mismatch", n.id));
            }
            if let Some(bad) = f.mask.labels.iter().find(|&&l| l != super::UNLABELED && l as usize >= class_count) {
                return Err(format!("node {}: label {bad} out of range", n.id));
            }
            if let (Some(p), Some(a)) = (n.parent, n.action) {
                let parent = self.nodes.get(p).ok_or(format!("node {}: missing parent {p}", n.id))?;
                let expected = apply(a, &parent.pose, backward_step);
                if expected != n.pose {
                    return Err(format!("node {}: pose differs from {a} applied to parent {p}", n.id));
                }
            } else if n.id != 0 {
                return Err(format!("node {}: non-root node without parent/action", n.id));
            }
        }
        Ok(())
    }
}

/// Frames along one path of the action tree; frame 0 is the scored frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub actions: Vec<Action>,
}

impl FrameSequence {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

pub fn build_point(
    point_id: usize,
    scene: &SceneSpec,
    root_pose: &AgentPose,
    depth: usize,
    camera: &CameraConfig,
    backward_step: f64,
) -> Result<ActionTreePoint, EnvError> {
    if !(1..=MAX_TREE_DEPTH).contains(&depth) {
        return Err(EnvError::Config(format!("tree depth {depth} not in 1..={MAX_TREE_DEPTH}")));
    }
    let mut nodes = vec![TreeNode {
        id: 0,
        parent: None,
        action: None,
        depth: 0,
        pose: *root_pose,
        frame: render(scene, root_pose, camera),
        children: vec![],
    }];
    let mut level = vec![0usize];
    for d in 1..=depth {
        let mut next = Vec::with_capacity(level.len() * Action::ALL.len());
        for &parent in &level {
            for a in Action::ALL {
                let pose = apply(a, &nodes[parent].pose, backward_step);
                let id = nodes.len();
                nodes.push(TreeNode {
                    id,
                    parent: Some(parent),
                    action: Some(a),
                    depth: d,
                    pose,
                    frame: render(scene, &pose, camera),
                    children: vec![],
                });
                nodes[parent].children.push(id);
                next.push(id);
            }
        }
        level = next;
    }
    Ok(ActionTreePoint { point_id, scene_seed: scene.seed, nodes })
}
